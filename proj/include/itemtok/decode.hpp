#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "itemtok/corpus.hpp"
#include "itemtok/identifier.hpp"
#include "itemtok/parallel.hpp"
#include "itemtok/scorer.hpp"
#include "itemtok/vocab.hpp"

namespace itemtok {

/// Decides which tokens may extend a partial response.
class PrefixConstraint {
 public:
  virtual ~PrefixConstraint() = default;
  /// Allowed next tokens in ascending id order; empty for dead ends.
  virtual std::vector<TokenId> allowed(std::span<const TokenId> prefix) const = 0;
  virtual bool complete(std::span<const TokenId> prefix) const = 0;
};

/// Prefix tree over identifier token paths, each terminated by <eos>.
class TrieIndex final : public PrefixConstraint {
 public:
  /// Throws IntegrityError when two items share an identifier.
  static TrieIndex build(const IdentifierMap& map, const TokenVocabulary& vocab);

  std::vector<TokenId> allowed(std::span<const TokenId> prefix) const override;
  bool complete(std::span<const TokenId> prefix) const override;
  /// Item at the end of a complete path.
  std::optional<ItemId> item(std::span<const TokenId> path) const;

  std::size_t item_count() const { return items_; }
  std::size_t node_count() const { return nodes_.size(); }
  /// Every root-to-terminal path with its item, in token order.
  std::vector<std::pair<std::vector<TokenId>, ItemId>> paths() const;

 private:
  struct Node {
    std::map<TokenId, std::size_t> children;
    std::optional<ItemId> item;
  };
  std::optional<std::size_t> walk(std::span<const TokenId> prefix) const;

  std::vector<Node> nodes_{Node{}};
  std::size_t items_ = 0;
};

/// Well-formed identifiers of a fixed length: position l draws from
/// `levels[l]`, followed by <eos>.
class LevelGrammar final : public PrefixConstraint {
 public:
  LevelGrammar(std::vector<std::vector<TokenId>> levels, TokenId eos);
  /// Alphabet of each of the first map.base_length positions, as used by the map.
  static LevelGrammar from_map(const IdentifierMap& map, const TokenVocabulary& vocab);

  std::vector<TokenId> allowed(std::span<const TokenId> prefix) const override;
  bool complete(std::span<const TokenId> prefix) const override;
  std::size_t length() const { return levels_.size(); }

 private:
  std::vector<std::vector<TokenId>> levels_;
  TokenId eos_;
};

struct Hypothesis {
  std::vector<TokenId> tokens;  // includes the closing <eos>
  double log_prob = 0.0;        // summed raw log-softmax over the full vocabulary
  double perplexity = 0.0;      // exp(−log_prob / |tokens|)
};

/// Beam search under a prefix constraint. Expansion keeps the `width` best
/// extensions by summed log-probability; completed sequences are collected
/// and ranked by perplexity ascending, ties by token ids lexicographically.
std::vector<Hypothesis> beam_search(const Scorer& scorer, std::span<const TokenId> prompt,
                                    const PrefixConstraint& constraint, std::size_t width);

/// Summed log-probability of `response` following `prompt`.
double sequence_log_prob(const Scorer& scorer, std::span<const TokenId> prompt,
                         std::span<const TokenId> response);

struct RankedItem {
  ItemId item = 0;
  double perplexity = 0.0;
};

std::vector<RankedItem> constrained_beam_search(const Scorer& scorer, std::span<const TokenId> prompt,
                                                const TrieIndex& trie, std::size_t width);

struct UserPrediction {
  UserId user = 0;
  ItemId truth = 0;
  std::vector<RankedItem> ranked;
};

/// Trie-constrained recommendations for every example; each prompt uses a
/// template drawn from a stream seeded by (seed, user).
std::vector<UserPrediction> recommend(const Scorer& scorer, const TokenVocabulary& vocab,
                                      const IdentifierMap& map, const TrieIndex& trie,
                                      std::span<const Example> examples, std::size_t width,
                                      std::uint64_t seed, Exec exec = default_exec());

/// `user<TAB>rank<TAB>item<TAB>perplexity`, preceded by `# config_hash=` and
/// `# truth user<TAB>item` lines.
void write_predictions(const std::filesystem::path& path, std::span<const UserPrediction> predictions,
                       const std::string& config_hash);
std::vector<UserPrediction> read_predictions(const std::filesystem::path& path,
                                             std::string* config_hash = nullptr);

}  // namespace itemtok
