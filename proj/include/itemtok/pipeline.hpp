#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "itemtok/eval.hpp"
#include "itemtok/refine.hpp"

namespace itemtok {

struct RunConfig {
  std::uint64_t seed = 1;

  std::string interactions;  // empty: synthetic planted-structure data
  std::string items;
  std::size_t synth_users = 500;
  std::size_t synth_items = 100;
  std::size_t synth_clusters = 10;

  std::string initializer = "cid";  // rqvae | rqvae+letter | cid
  std::size_t embed_dim = kDefaultEmbedDim;
  std::size_t rqvae_levels = 3;
  std::size_t rqvae_codebook = 8;
  std::size_t rqvae_latent = 8;
  std::size_t rqvae_hidden = 32;
  std::size_t rqvae_epochs = 300;
  std::size_t rqvae_batch = 64;
  double rqvae_lr = 1e-3;
  double rqvae_cf_weight = 0.1;   // used by rqvae+letter only
  double rqvae_div_weight = 0.1;  // used by rqvae+letter only
  std::size_t cid_branching = 8;
  std::size_t cid_threshold = 8;
  std::size_t cid_depth_cap = 8;

  std::size_t model_layers = 2;
  std::size_t model_heads = 4;
  std::size_t model_dim = 64;
  std::size_t model_context = 128;
  double train_lr = 1e-3;
  std::size_t train_batch = 32;
  double train_weight_decay = 0.0;
  std::size_t warmup_epochs = 20;
  std::size_t iteration_epochs = 10;
  std::string train_select = "valid";  // valid | last
  std::size_t align_epochs = 20;

  std::size_t iterations = 1;
  std::size_t candidates = 20;
  std::string assign_order = "perplexity";  // perplexity | item_id
  std::size_t infer_beam = 10;
  std::vector<std::size_t> eval_ks{5, 10};

  std::string output_dir = "run";

  /// Throws ConfigError for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();
  static std::string describe(const std::string& key);

  /// Throws ConfigError when values are out of range or inconsistent.
  void validate() const;
  /// Canonical `key=value` text over every key except output_dir.
  std::string canonical() const;
  /// 16 hex digits of FNV-1a over canonical().
  std::string hash() const;
};

/// `key=value` lines; `#` starts a comment.
void apply_config_file(RunConfig& config, const std::filesystem::path& path);
/// ITEMTOK_<KEY> overrides, with the key upper-cased and '.' replaced by '_'.
void apply_environment(RunConfig& config, const std::function<const char*(const char*)>& getenv_fn);

ModelConfig model_config(const RunConfig& config);
RefineConfig refine_config(const RunConfig& config);
TrainOptions warmup_options(const RunConfig& config);

/// File layout of one run directory.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.txt"; }
  std::filesystem::path interactions() const { return root / "interactions.tsv"; }
  std::filesystem::path items() const { return root / "items.tsv"; }
  std::filesystem::path embeddings() const { return root / "embeddings.tsv"; }
  std::filesystem::path init_report() const { return root / "init_report.txt"; }
  std::filesystem::path cid_tree() const { return root / "cid_tree.txt"; }
  std::filesystem::path train_report() const { return root / "train_report.txt"; }
  std::filesystem::path map(std::size_t i) const { return root / ("map_" + std::to_string(i) + ".tsv"); }
  std::filesystem::path model(std::size_t i) const { return root / ("model_" + std::to_string(i) + ".bin"); }
  std::filesystem::path refine_report(std::size_t i) const { return root / ("refine_" + std::to_string(i) + ".txt"); }
  std::filesystem::path candidates(std::size_t i) const { return root / ("candidates_" + std::to_string(i) + ".tsv"); }
  std::filesystem::path predictions(std::size_t i) const { return root / ("predictions_" + std::to_string(i) + ".tsv"); }
  std::filesystem::path metrics(std::size_t i) const { return root / ("metrics_" + std::to_string(i) + ".txt"); }
};

/// Sidecar `<file>.hash` holding the config hash of a file without a header.
void write_stamp(const std::filesystem::path& file, const std::string& config_hash);
/// Throws IntegrityError when the stamp is missing or differs.
void check_stamp(const std::filesystem::path& file, const std::string& config_hash);

struct LoadedData {
  Dataset dataset;
  SplitDataset split;
};

/// Dataset persisted by cmd_init, after its stamp is checked.
LoadedData load_run_data(const RunConfig& config);

/// Validation examples used for next-item checkpoint selection, empty when
/// train.select is last.
std::span<const Example> selection_examples(const RunConfig& config, const LoadedData& data);

/// Sequences with their validation and test items removed.
std::vector<InteractionSequence> training_sequences(const std::vector<InteractionSequence>& sequences);

using Log = std::function<void(const std::string&)>;

/// Dataset, embeddings and the collision-free initial map (map_0).
IdentifierMap cmd_init(const RunConfig& config, const Log& log = {});
/// Warm-up next-item training on map_0 (model_0).
void cmd_train(const RunConfig& config, const Log& log = {});
/// Refinement iterations 1..n, resuming after the last finished one.
void cmd_refine(const RunConfig& config, const Log& log = {});
/// Trie-constrained recommendations for the test split with model_i/map_i;
/// `iteration` defaults to config.iterations.
std::vector<UserPrediction> cmd_infer(const RunConfig& config, std::optional<std::size_t> iteration = {},
                                      const Log& log = {});
MetricReport cmd_eval(const RunConfig& config, std::optional<std::size_t> iteration = {}, const Log& log = {});
/// Comparison table over `runs` given as `dir` or `dir:iteration`.
void cmd_report(const std::vector<std::string>& runs, std::ostream& out);

}  // namespace itemtok
