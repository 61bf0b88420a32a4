#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "itemtok/embed.hpp"
#include "itemtok/identifier.hpp"
#include "itemtok/kmeans.hpp"
#include "itemtok/rng.hpp"

namespace itemtok {

struct RqvaeConfig {
  std::size_t input_dim = kDefaultEmbedDim;
  std::size_t hidden = 32;
  std::size_t latent = 8;
  std::size_t levels = 3;
  std::size_t codebook = 8;
  std::size_t epochs = 300;
  std::size_t batch = 64;
  double lr = 1e-3;
  double commit_weight = 1.0;
  double cf_weight = 0.0;   // collaborative regularizer, off in plain mode
  double div_weight = 0.0;  // diversity regularizer, off in plain mode
  std::size_t div_clusters = 4;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

/// L codebooks of N codewords of dimension d, stored level-major.
struct CodebookStack {
  std::size_t levels = 0;
  std::size_t size = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  std::span<const double> codeword(std::size_t level, std::size_t k) const {
    return {values.data() + (level * size + k) * dim, dim};
  }
};

struct QuantizationResult {
  std::vector<int> codes;                     // one per level
  std::vector<std::vector<double>> residuals; // r_1 = z, ..., r_{L+1}
  std::vector<double> quantized;              // sum of selected codewords
};

/// Residual quantization: at each level pick the nearest codeword to the
/// current residual (lowest index on ties) and subtract it.
QuantizationResult quantize(std::span<const double> z, const CodebookStack& codebooks);

/// ‖x − decoded‖².
double reconstruction_loss(std::span<const double> x, std::span<const double> decoded);

/// Σ_l ‖sg(r_l) − e_l‖² + ‖r_l − sg(e_l)‖². Both terms have the same value;
/// they differ only in where gradients flow.
double commitment_loss(std::span<const std::vector<double>> residuals,
                       std::span<const std::vector<double>> codewords);

/// InfoNCE between quantized latents and collaborative vectors: row i of the
/// logit matrix ⟨ẑ_i, h_j⟩/τ is soft-maxed and the diagonal entry scored.
/// `grad_quantized`, when given, receives ∂loss/∂ẑ (B × d).
double collaborative_loss(std::span<const std::vector<double>> quantized,
                          std::span<const std::vector<double>> cf, double temperature,
                          std::vector<std::vector<double>>* grad_quantized = nullptr);

/// Contrastive codeword spreading: anchor i is pulled toward positives[i]
/// (a codeword from the same cluster) and pushed from every other anchor.
/// Gradients, when requested, are written per anchor and per positive.
double diversity_loss(std::span<const std::vector<double>> anchors,
                      std::span<const std::vector<double>> positives, double temperature,
                      std::vector<std::vector<double>>* grad_anchors = nullptr,
                      std::vector<std::vector<double>>* grad_positives = nullptr);

/// For each anchor code, a random other member of its cluster, or the code
/// itself when its cluster is a singleton (counted in `singletons`).
std::vector<int> sample_positives(std::span<const int> codes, std::span<const std::size_t> clusters,
                                  Rng& rng, std::size_t* singletons = nullptr);

/// Encoder/decoder MLPs (one tanh hidden layer each) plus codebooks, all in
/// one flat parameter vector.
class RqvaeModel {
 public:
  RqvaeModel() = default;
  RqvaeModel(const RqvaeConfig& config, std::uint64_t seed);

  const RqvaeConfig& config() const { return config_; }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  std::vector<double> encode(std::span<const double> x) const;
  std::vector<double> decode(std::span<const double> z) const;
  CodebookStack codebooks() const;
  std::span<double> codeword(std::size_t level, std::size_t k);
  std::span<const double> codeword(std::size_t level, std::size_t k) const;
  std::size_t codebook_offset() const { return cb_; }

  /// Codes of one input under the current parameters.
  std::vector<int> codes(std::span<const double> x) const;

  void save(const std::filesystem::path& path) const;
  static RqvaeModel load(const std::filesystem::path& path);
  bool operator==(const RqvaeModel& other) const { return params_ == other.params_; }

 private:
  friend struct RqvaeBackprop;
  void layout();

  RqvaeConfig config_;
  std::vector<double> params_;
  std::size_t ew1_ = 0, eb1_ = 0, ew2_ = 0, eb2_ = 0;
  std::size_t dw1_ = 0, db1_ = 0, dw2_ = 0, db2_ = 0;
  std::size_t cb_ = 0;
};

struct RqvaeData {
  std::vector<Point> x;           // semantic embeddings
  std::vector<CfEmbedding> cf;    // empty unless the collaborative term is on
};

/// Codes and sampled positives for one mini-batch, fixed before the loss is
/// evaluated.
struct BatchPlan {
  std::vector<std::size_t> items;
  std::vector<std::vector<int>> codes;      // [batch][level]
  std::vector<std::vector<int>> positives;  // [batch][level]; empty without diversity
};

struct LossTerms {
  double recon = 0.0;
  double commit = 0.0;
  double cf = 0.0;
  double div = 0.0;
  double total = 0.0;
};

/// Quantizes the batch with `frozen` and samples diversity positives from
/// per-level codeword clusters (`clusters[level][k]`; empty disables).
BatchPlan plan_batch(const RqvaeModel& frozen, const RqvaeData& data, std::span<const std::size_t> items,
                     const std::vector<std::vector<std::size_t>>& clusters, Rng& rng);

/// Batch-mean loss of `model`, with every stop-gradient operand (codes, the
/// straight-through offset, commitment targets, earlier-level codewords in the
/// residual chain) taken from `frozen`. With model == frozen this is the
/// training objective; `grad`, when non-empty, receives ∂loss/∂params of
/// `model`, which equals the exact derivative of this function.
LossTerms batch_loss(const RqvaeModel& model, const RqvaeModel& frozen, const RqvaeData& data,
                     const BatchPlan& plan, std::span<double> grad = {});

/// Per-level balanced k-means clustering of codewords used by the diversity term.
std::vector<std::vector<std::size_t>> cluster_codewords(const RqvaeModel& model, std::uint64_t seed);

struct RqvaeTrainResult {
  RqvaeModel model;
  IdentifierMap map;                 // may contain collisions
  std::vector<LossTerms> curve;      // full-data loss after init, then after each epoch
  std::size_t reseeded = 0;          // dead codewords replaced
  std::size_t singleton_positives = 0;
};

/// Adam training with codebooks initialized by k-means on the first batch's
/// residuals and dead codewords reseeded from batch residuals after each
/// epoch. Throws NumericError on a non-finite loss.
RqvaeTrainResult train_rqvae(std::span<const ItemId> ids, const RqvaeData& data,
                             const RqvaeConfig& config);

/// Map whose entry for ids[i] is the code sequence of data.x[i].
IdentifierMap rqvae_identifiers(const RqvaeModel& model, std::span<const ItemId> ids,
                                std::span<const Point> x);

}  // namespace itemtok
