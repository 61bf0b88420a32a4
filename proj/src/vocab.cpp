#include "itemtok/vocab.hpp"

#include <fstream>

#include "itemtok/error.hpp"

namespace itemtok {

namespace tokens {
std::string rec_open(int t) { return "<rec" + std::to_string(t) + "_open>"; }
std::string rec_close(int t) { return "<rec" + std::to_string(t) + "_close>"; }
}  // namespace tokens

TokenVocabulary TokenVocabulary::with_control_tokens() {
  TokenVocabulary v;
  v.add(tokens::kEos);
  for (int t = 1; t <= kNumRecTemplates; ++t) {
    v.add(tokens::rec_open(t));
    v.add(tokens::rec_close(t));
  }
  v.add(tokens::kItem2IdOpen);
  v.add(tokens::kItem2IdClose);
  v.add(tokens::kId2ItemOpen);
  v.add(tokens::kId2ItemClose);
  return v;
}

TokenId TokenVocabulary::add(std::string_view token) {
  if (token.empty()) throw ArgumentError("empty token");
  if (auto existing = find(token)) return *existing;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.emplace_back(token);
  ids_.emplace(tokens_.back(), id);
  return id;
}

std::optional<TokenId> TokenVocabulary::find(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

TokenId TokenVocabulary::id(std::string_view token) const {
  if (auto found = find(token)) return *found;
  throw ArgumentError("token not in vocabulary: '" + std::string(token) + "'");
}

const std::string& TokenVocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw ArgumentError("token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> TokenVocabulary::add_identifier(const ItemIdentifier& identifier) {
  std::vector<TokenId> out;
  for (const auto& t : identifier) out.push_back(add(t.str()));
  return out;
}

std::vector<TokenId> TokenVocabulary::encode(const ItemIdentifier& identifier) const {
  std::vector<TokenId> out;
  out.reserve(identifier.size());
  for (const auto& t : identifier) out.push_back(id(t.str()));
  return out;
}

std::vector<TokenId> TokenVocabulary::encode_words(const std::vector<std::string>& words) const {
  std::vector<TokenId> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id(w));
  return out;
}

void TokenVocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
}

TokenVocabulary TokenVocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open " + path.string());
  TokenVocabulary v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw ParseError(path.string(), lineno, "missing tab");
    std::size_t id = 0;
    try {
      id = std::stoul(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw ParseError(path.string(), lineno, "bad token id");
    }
    if (id != v.size()) throw ParseError(path.string(), lineno, "token ids must be dense and ordered");
    const std::string tok = line.substr(0, tab);
    if (v.contains(tok)) throw ParseError(path.string(), lineno, "duplicate token '" + tok + "'");
    v.add(tok);
  }
  return v;
}

}  // namespace itemtok
