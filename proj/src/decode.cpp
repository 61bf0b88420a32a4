#include "itemtok/decode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "itemtok/error.hpp"
#include "itemtok/rng.hpp"
#include "itemtok/seqmodel.hpp"

namespace itemtok {

// ---------------------------------------------------------------------------
// Trie

TrieIndex TrieIndex::build(const IdentifierMap& map, const TokenVocabulary& vocab) {
  if (!map.injective()) throw IntegrityError("identifier map is not injective; run collision avoidance first");
  TrieIndex t;
  const TokenId eos = vocab.eos();
  for (const auto& [item, ident] : map.entries) {
    auto path = vocab.encode(ident);
    path.push_back(eos);
    std::size_t node = 0;
    for (TokenId tok : path) {
      auto it = t.nodes_[node].children.find(tok);
      if (it == t.nodes_[node].children.end()) {
        t.nodes_.push_back({});
        it = t.nodes_[node].children.emplace(tok, t.nodes_.size() - 1).first;
      }
      node = it->second;
    }
    t.nodes_[node].item = item;
    ++t.items_;
  }
  return t;
}

std::optional<std::size_t> TrieIndex::walk(std::span<const TokenId> prefix) const {
  std::size_t node = 0;
  for (TokenId tok : prefix) {
    const auto it = nodes_[node].children.find(tok);
    if (it == nodes_[node].children.end()) return std::nullopt;
    node = it->second;
  }
  return node;
}

std::vector<TokenId> TrieIndex::allowed(std::span<const TokenId> prefix) const {
  std::vector<TokenId> out;
  if (const auto node = walk(prefix))
    for (const auto& [tok, child] : nodes_[*node].children) out.push_back(tok);
  return out;
}

bool TrieIndex::complete(std::span<const TokenId> prefix) const {
  const auto node = walk(prefix);
  return node && nodes_[*node].item.has_value();
}

std::optional<ItemId> TrieIndex::item(std::span<const TokenId> path) const {
  const auto node = walk(path);
  if (!node) return std::nullopt;
  return nodes_[*node].item;
}

std::vector<std::pair<std::vector<TokenId>, ItemId>> TrieIndex::paths() const {
  std::vector<std::pair<std::vector<TokenId>, ItemId>> out;
  std::vector<TokenId> path;
  auto rec = [&](auto&& self, std::size_t node) -> void {
    if (nodes_[node].item) out.emplace_back(path, *nodes_[node].item);
    for (const auto& [tok, child] : nodes_[node].children) {
      path.push_back(tok);
      self(self, child);
      path.pop_back();
    }
  };
  rec(rec, 0);
  return out;
}

// ---------------------------------------------------------------------------
// Level grammar

LevelGrammar::LevelGrammar(std::vector<std::vector<TokenId>> levels, TokenId eos)
    : levels_(std::move(levels)), eos_(eos) {
  for (auto& l : levels_) {
    std::sort(l.begin(), l.end());
    l.erase(std::unique(l.begin(), l.end()), l.end());
  }
}

LevelGrammar LevelGrammar::from_map(const IdentifierMap& map, const TokenVocabulary& vocab) {
  std::vector<std::vector<TokenId>> levels(map.base_length);
  for (const auto& [item, ident] : map.entries)
    for (std::size_t l = 0; l < std::min(map.base_length, ident.size()); ++l)
      levels[l].push_back(vocab.id(ident[l].str()));
  return LevelGrammar(std::move(levels), vocab.eos());
}

std::vector<TokenId> LevelGrammar::allowed(std::span<const TokenId> prefix) const {
  if (prefix.size() < levels_.size()) return levels_[prefix.size()];
  if (prefix.size() == levels_.size()) return {eos_};
  return {};
}

bool LevelGrammar::complete(std::span<const TokenId> prefix) const {
  return prefix.size() == levels_.size() + 1 && prefix.back() == eos_;
}

// ---------------------------------------------------------------------------
// Beam search

namespace {

struct Beam {
  std::vector<TokenId> tokens;
  double log_prob = 0.0;
  std::unique_ptr<DecodeSession> session;
};

struct Candidate {
  std::size_t beam;
  TokenId token;
  double log_prob;
};

bool hypothesis_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.perplexity != b.perplexity) return a.perplexity < b.perplexity;
  return a.tokens < b.tokens;
}

}  // namespace

std::vector<Hypothesis> beam_search(const Scorer& scorer, std::span<const TokenId> prompt,
                                    const PrefixConstraint& constraint, std::size_t width) {
  if (width == 0) throw ArgumentError("beam width must be >= 1");
  if (prompt.empty()) throw ArgumentError("beam search needs a non-empty prompt");
  std::vector<Beam> beams;
  beams.push_back({{}, 0.0, scorer.open(prompt)});
  std::vector<Hypothesis> finished;
  std::vector<Candidate> cands;
  while (!beams.empty()) {
    cands.clear();
    for (std::size_t b = 0; b < beams.size(); ++b) {
      const auto allowed = constraint.allowed(beams[b].tokens);
      if (allowed.empty()) continue;
      const auto lp = beams[b].session->log_probs();
      for (TokenId t : allowed) {
        if (t < 0 || static_cast<std::size_t>(t) >= lp.size())
          throw ArgumentError("constraint allows token " + std::to_string(t) + " outside the scorer vocabulary");
        cands.push_back({b, t, beams[b].log_prob + lp[static_cast<std::size_t>(t)]});
      }
    }
    const auto before = [&](const Candidate& x, const Candidate& y) {
      if (x.log_prob != y.log_prob) return x.log_prob > y.log_prob;
      const auto& tx = beams[x.beam].tokens;
      const auto& ty = beams[y.beam].tokens;
      if (tx != ty) return tx < ty;
      return x.token < y.token;
    };
    const std::size_t keep = std::min(width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), before);
    std::vector<Beam> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const auto& cand = cands[c];
      std::vector<TokenId> tokens = beams[cand.beam].tokens;
      tokens.push_back(cand.token);
      if (constraint.complete(tokens)) {
        const double ppl = std::exp(-cand.log_prob / static_cast<double>(tokens.size()));
        finished.push_back({std::move(tokens), cand.log_prob, ppl});
        continue;
      }
      auto session = beams[cand.beam].session->clone();
      session->push(cand.token);
      next.push_back({std::move(tokens), cand.log_prob, std::move(session)});
    }
    beams = std::move(next);
  }
  std::sort(finished.begin(), finished.end(), hypothesis_before);
  if (finished.size() > width) finished.resize(width);
  return finished;
}

double sequence_log_prob(const Scorer& scorer, std::span<const TokenId> prompt, std::span<const TokenId> response) {
  auto session = scorer.open(prompt);
  double total = 0.0;
  for (TokenId t : response) {
    total += session->log_probs()[static_cast<std::size_t>(t)];
    session->push(t);
  }
  return total;
}

std::vector<RankedItem> constrained_beam_search(const Scorer& scorer, std::span<const TokenId> prompt,
                                                const TrieIndex& trie, std::size_t width) {
  std::vector<RankedItem> out;
  for (const auto& h : beam_search(scorer, prompt, trie, width)) {
    const auto item = trie.item(h.tokens);
    if (!item) throw IntegrityError("beam search produced a path outside the trie");
    out.push_back({*item, h.perplexity});
  }
  return out;
}

std::vector<UserPrediction> recommend(const Scorer& scorer, const TokenVocabulary& vocab, const IdentifierMap& map,
                                      const TrieIndex& trie, std::span<const Example> examples, std::size_t width,
                                      std::uint64_t seed, Exec exec) {
  std::vector<UserPrediction> out(examples.size());
  parallel_for(exec, examples.size(), [&](std::size_t i) {
    const auto& ex = examples[i];
    std::vector<ItemIdentifier> history;
    for (ItemId id : ex.history) history.push_back(map.at(id));
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(ex.user)));
    const auto prompt = build_rec_prompt(vocab, history, rng);
    out[i] = {ex.user, ex.target, constrained_beam_search(scorer, prompt.instruction, trie, width)};
  });
  return out;
}

// ---------------------------------------------------------------------------
// Prediction files

void write_predictions(const std::filesystem::path& path, std::span<const UserPrediction> predictions,
                       const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << "# config_hash=" << config_hash << '\n';
  for (const auto& p : predictions) out << "# truth " << p.user << '\t' << p.truth << '\n';
  out << std::setprecision(17);
  for (const auto& p : predictions)
    for (std::size_t r = 0; r < p.ranked.size(); ++r)
      out << p.user << '\t' << r + 1 << '\t' << p.ranked[r].item << '\t' << p.ranked[r].perplexity << '\n';
}

std::vector<UserPrediction> read_predictions(const std::filesystem::path& path, std::string* config_hash) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open " + path.string());
  std::vector<UserPrediction> out;
  std::map<UserId, std::size_t> index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.rfind("# config_hash=", 0) == 0) {
      if (config_hash) *config_hash = line.substr(14);
      continue;
    }
    if (line.rfind("# truth ", 0) == 0) {
      std::istringstream ss(line.substr(8));
      UserPrediction p;
      if (!(ss >> p.user >> p.truth)) throw ParseError(path.string(), lineno, "bad truth line");
      if (index.count(p.user)) throw ParseError(path.string(), lineno, "duplicate user");
      index[p.user] = out.size();
      out.push_back(p);
      continue;
    }
    if (line[0] == '#') continue;
    std::istringstream ss(line);
    UserId user = 0;
    std::size_t rank = 0;
    RankedItem r;
    if (!(ss >> user >> rank >> r.item >> r.perplexity)) throw ParseError(path.string(), lineno, "expected 4 fields");
    const auto it = index.find(user);
    if (it == index.end()) throw ParseError(path.string(), lineno, "prediction for a user without a truth line");
    auto& ranked = out[it->second].ranked;
    if (rank != ranked.size() + 1) throw ParseError(path.string(), lineno, "ranks must be consecutive from 1");
    ranked.push_back(r);
  }
  return out;
}

}  // namespace itemtok
