#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "itemtok/identifier.hpp"

namespace itemtok {

using TokenId = std::int32_t;

inline constexpr int kNumRecTemplates = 15;

namespace tokens {
inline constexpr std::string_view kEos = "<eos>";
inline constexpr std::string_view kItem2IdOpen = "<i2id_open>";
inline constexpr std::string_view kItem2IdClose = "<i2id_close>";
inline constexpr std::string_view kId2ItemOpen = "<id2i_open>";
inline constexpr std::string_view kId2ItemClose = "<id2i_close>";
/// Opening/closing control tokens of recommendation template `t` in [1, 15].
std::string rec_open(int t);
std::string rec_close(int t);
}  // namespace tokens

/// Bidirectional token ↔ id table. Ids are dense, issued in insertion order
/// and never reused.
class TokenVocabulary {
 public:
  /// Vocabulary holding <eos> and all template/control tokens.
  static TokenVocabulary with_control_tokens();

  TokenId add(std::string_view token);
  std::optional<TokenId> find(std::string_view token) const;
  /// Throws ArgumentError for unknown tokens.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const { return find(token).has_value(); }

  TokenId eos() const { return id(tokens::kEos); }

  /// Adds the identifier's tokens (if new) and returns their ids in order.
  std::vector<TokenId> add_identifier(const ItemIdentifier& identifier);
  std::vector<TokenId> encode(const ItemIdentifier& identifier) const;
  std::vector<TokenId> encode_words(const std::vector<std::string>& words) const;

  bool operator==(const TokenVocabulary& other) const { return tokens_ == other.tokens_; }

  void save(const std::filesystem::path& path) const;
  static TokenVocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

}  // namespace itemtok
