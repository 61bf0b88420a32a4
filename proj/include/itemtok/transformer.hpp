#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "itemtok/scorer.hpp"
#include "itemtok/vocab.hpp"

namespace itemtok {

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t dim = 64;
  std::size_t context = 128;
  std::size_t ff_mult = 4;

  bool operator==(const ModelConfig&) const = default;
};

/// Adam moments, grown together with the embedding table.
struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
};

/// Decoder-only pre-LayerNorm transformer with learned positions, GELU MLPs
/// and an output projection tied to the token embeddings. All parameters live
/// in one flat buffer; the token embedding table sits at its end so new
/// vocabulary rows can be appended in place.
class SequenceModel final : public Scorer {
 public:
  SequenceModel(const ModelConfig& config, TokenVocabulary vocab, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const TokenVocabulary& vocab() const { return vocab_; }
  /// Adds a token to the vocabulary; call sync_vocabulary() before use.
  TokenId add_token(std::string_view token) { return vocab_.add(token); }
  TokenVocabulary& mutable_vocab() { return vocab_; }

  /// Appends embedding rows for tokens added since the last sync, drawn from
  /// N(0, 0.02²) with the given seed. Returns the number of rows added.
  std::size_t sync_vocabulary(std::uint64_t seed);

  std::size_t vocab_size() const override { return embedded_tokens_; }
  std::size_t param_count() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  OptimizerState& optimizer() { return optimizer_; }
  const OptimizerState& optimizer() const { return optimizer_; }

  /// Offset of the token embedding table inside params().
  std::size_t token_embedding_offset() const { return tok_offset_; }

  /// Logits at the given positions of a full causal forward pass, row-major
  /// positions.size() × vocab_size().
  std::vector<double> logits(std::span<const TokenId> tokens,
                             std::span<const std::size_t> positions) const;

  /// Negative log-likelihood of tokens[response_begin..] given the preceding
  /// tokens. When `grad` is non-empty, `scale` × ∂nll/∂params is added to it.
  double nll(std::span<const TokenId> tokens, std::size_t response_begin,
             std::span<double> grad = {}, double scale = 1.0) const;

  std::unique_ptr<DecodeSession> open(std::span<const TokenId> prompt) const override;

  void save(const std::filesystem::path& path) const;
  static SequenceModel load(const std::filesystem::path& path);

  bool operator==(const SequenceModel& other) const;

 private:
  struct LayerOffsets {
    std::size_t ln1_g, ln1_b, wqkv, bqkv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  friend class TransformerSession;
  friend struct ForwardPass;

  SequenceModel() = default;
  void compute_layout();

  ModelConfig config_;
  TokenVocabulary vocab_;
  std::size_t embedded_tokens_ = 0;
  std::vector<double> params_;
  OptimizerState optimizer_;
  std::size_t pos_offset_ = 0;
  std::vector<LayerOffsets> layers_;
  std::size_t lnf_g_ = 0, lnf_b_ = 0;
  std::size_t tok_offset_ = 0;
};

}  // namespace itemtok
