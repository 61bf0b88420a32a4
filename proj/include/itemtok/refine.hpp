#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "itemtok/corpus.hpp"
#include "itemtok/decode.hpp"
#include "itemtok/identifier.hpp"
#include "itemtok/seqmodel.hpp"
#include "itemtok/transformer.hpp"

namespace itemtok {

/// Adds the vocabulary of `map` and `catalog` to the model and embeds new rows.
void prepare_model(SequenceModel& model, const Catalog& catalog, const IdentifierMap& map, std::uint64_t seed);

/// Next-item training with a fresh template draw for every example each epoch.
/// With `valid` examples the epoch with the lowest mean validation nll is kept.
TrainHistory train_rec(SequenceModel& model, const Catalog& catalog, std::span<const Example> examples,
                       const IdentifierMap& map, const TrainOptions& options,
                       std::span<const Example> valid = {});

struct AlignResult {
  SequenceModel model;
  TrainHistory history;
};

/// Fine-tunes a copy of `model` on the shuffled ITEM2ID + ID2ITEM mixture.
AlignResult align_finetune(const SequenceModel& model, const Catalog& catalog, const IdentifierMap& map,
                           const TrainOptions& options);

struct Candidate {
  ItemIdentifier identifier;
  double perplexity = 0.0;
};

/// The `k` best well-formed identifiers for an ITEM2ID prompt of `item`,
/// found by beam search of width max(k, beam_width).
std::vector<Candidate> generate_candidates(const SequenceModel& model, const Item& item,
                                           const LevelGrammar& grammar, std::size_t k,
                                           std::size_t beam_width = 0);

struct Assignment {
  IdentifierMap map;
  std::set<ItemId> unresolved;
  std::map<ItemId, int> rank;  // 1-based rank used; 1 for unresolved items too
};

/// Greedy first-available assignment scanning items in `order`.
Assignment assign_diverse(const std::map<ItemId, std::vector<ItemIdentifier>>& candidates,
                          std::span<const ItemId> order);

/// Every item takes its top-ranked candidate.
IdentifierMap assign_greedy(const std::map<ItemId, std::vector<ItemIdentifier>>& candidates);

/// Within each group sharing an identifier, the lowest item id keeps it and
/// the j-th other member gets one extra token <level base_length, label j>.
IdentifierMap collision_avoidance(const IdentifierMap& map);

/// Fraction of items whose identifier differs between the two maps.
double adjustment_ratio(const IdentifierMap& before, const IdentifierMap& after);

/// Fraction of items whose identifier is shared with another item.
double collision_rate(const IdentifierMap& map);

enum class AssignOrder { kPerplexity, kItemId };

struct RefineConfig {
  std::size_t iterations = 1;
  std::size_t first_iteration = 1;  // index of the first iteration run, for resuming
  std::size_t candidates = 20;
  std::size_t beam_width = 0;  // 0: same as candidates
  AssignOrder order = AssignOrder::kPerplexity;
  TrainOptions rec;
  TrainOptions align;
  std::vector<Example> valid;  // next-item checkpoint selection; empty keeps the last epoch
  std::uint64_t seed = 0;
  Exec exec = default_exec();
};

struct IterationReport {
  std::size_t iteration = 0;  // 1-based
  std::vector<double> align_loss;          // mean pair nll per epoch
  std::vector<double> align_item2id_loss;  // ITEM2ID share of the same
  std::map<ItemId, std::vector<Candidate>> candidates;
  std::map<ItemId, int> rank;
  std::vector<ItemId> order;
  std::size_t unresolved = 0;
  double greedy_collision_rate = 0.0;
  double pre_ca_collision_rate = 0.0;
  std::size_t pre_ca_collisions = 0;   // items in colliding groups
  std::size_t post_ca_collisions = 0;
  std::size_t disambiguated = 0;       // items that received an extra token
  double adjustment_ratio = 0.0;
  std::vector<double> rec_loss;
  std::vector<double> rec_valid_loss;
  std::size_t rec_best_epoch = 0;
};

/// Machine-readable key=value summary (no candidate lists).
void write_iteration_report(const std::filesystem::path& path, const IterationReport& report,
                            const std::string& config_hash);
/// Ranked candidate lists with the rank each item ended up using.
void write_candidates(const std::filesystem::path& path, const IterationReport& report);

struct RefinementState {
  SequenceModel model;
  IdentifierMap map;
};

using IterationObserver =
    std::function<void(const IterationReport&, const SequenceModel&, const IdentifierMap&)>;

/// Alignment → regeneration → assignment → collision avoidance → next-item
/// training, repeated `config.iterations` times starting from an already
/// trained model, numbered from `config.first_iteration`. The next-item step
/// always continues from the model of the previous iteration, never from its
/// aligned copy.
RefinementState run_refinement(SequenceModel model, IdentifierMap map, const Catalog& catalog,
                               std::span<const Example> train, const RefineConfig& config,
                               std::vector<IterationReport>* reports = nullptr,
                               const IterationObserver& observer = {});

/// Warm-up next-item training on `map` followed by run_refinement.
RefinementState train_and_refine(SequenceModel model, IdentifierMap map, const Catalog& catalog,
                                 std::span<const Example> train, std::size_t warmup_epochs,
                                 const RefineConfig& config, std::vector<IterationReport>* reports = nullptr);

}  // namespace itemtok
