#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "itemtok/decode.hpp"
#include "itemtok/error.hpp"
#include "itemtok/refine.hpp"
#include "itemtok/rng.hpp"
#include "itemtok/transformer.hpp"

using namespace itemtok;

namespace {

/// Pseudo-random next-token distribution keyed on the whole prefix.
class HashScorer final : public Scorer {
 public:
  HashScorer(std::size_t vocab, std::uint64_t seed) : vocab_(vocab), seed_(seed) {}
  std::size_t vocab_size() const override { return vocab_; }
  std::unique_ptr<DecodeSession> open(std::span<const TokenId> prompt) const override {
    return std::make_unique<Session>(*this, std::vector<TokenId>(prompt.begin(), prompt.end()));
  }

 private:
  class Session final : public DecodeSession {
   public:
    Session(const HashScorer& owner, std::vector<TokenId> tokens) : owner_(owner), tokens_(std::move(tokens)) { refresh(); }
    std::unique_ptr<DecodeSession> clone() const override { return std::make_unique<Session>(*this); }
    void push(TokenId t) override {
      tokens_.push_back(t);
      refresh();
    }
    std::span<const double> log_probs() const override { return lp_; }

   private:
    void refresh() {
      std::uint64_t h = owner_.seed_;
      for (TokenId t : tokens_) h = derive_seed(h, static_cast<std::uint64_t>(t));
      Rng rng(h);
      lp_.resize(owner_.vocab_);
      double mx = -1e300;
      for (auto& v : lp_) {
        v = 3.0 * rng.normal(1.0);
        mx = std::max(mx, v);
      }
      double z = 0.0;
      for (double v : lp_) z += std::exp(v - mx);
      for (auto& v : lp_) v -= mx + std::log(z);
    }
    const HashScorer& owner_;
    std::vector<TokenId> tokens_;
    std::vector<double> lp_;
  };
  std::size_t vocab_;
  std::uint64_t seed_;
};

/// Distribution that depends only on how many tokens follow the prompt, so
/// beam search of any width is exact.
class PositionScorer final : public Scorer {
 public:
  PositionScorer(std::size_t vocab, std::uint64_t seed) : inner_(vocab, seed) {}
  std::size_t vocab_size() const override { return inner_.vocab_size(); }
  std::unique_ptr<DecodeSession> open(std::span<const TokenId>) const override {
    return std::make_unique<Session>(inner_, 0);
  }

 private:
  class Session final : public DecodeSession {
   public:
    Session(const HashScorer& inner, std::size_t step) : inner_(inner), step_(step) { refresh(); }
    std::unique_ptr<DecodeSession> clone() const override { return std::make_unique<Session>(*this); }
    void push(TokenId) override {
      ++step_;
      refresh();
    }
    std::span<const double> log_probs() const override { return lp_; }

   private:
    void refresh() {
      const std::vector<TokenId> key{static_cast<TokenId>(step_)};
      const auto s = inner_.open(key);
      lp_.assign(s->log_probs().begin(), s->log_probs().end());
    }
    const HashScorer& inner_;
    std::size_t step_;
    std::vector<double> lp_;
  };
  HashScorer inner_;
};

class UniformScorer final : public Scorer {
 public:
  explicit UniformScorer(std::size_t vocab) : vocab_(vocab) {}
  std::size_t vocab_size() const override { return vocab_; }
  std::unique_ptr<DecodeSession> open(std::span<const TokenId>) const override {
    return std::make_unique<Session>(vocab_);
  }

 private:
  class Session final : public DecodeSession {
   public:
    explicit Session(std::size_t v) : lp_(v, -std::log(static_cast<double>(v))) {}
    std::unique_ptr<DecodeSession> clone() const override { return std::make_unique<Session>(*this); }
    void push(TokenId) override {}
    std::span<const double> log_probs() const override { return lp_; }

   private:
    std::vector<double> lp_;
  };
  std::size_t vocab_;
};

IdentifierMap random_map(std::size_t n, std::size_t levels, int labels, std::uint64_t seed) {
  IdentifierMap map;
  map.base_length = levels;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    ItemIdentifier id;
    for (std::size_t l = 0; l < levels; ++l)
      id.push_back({static_cast<int>(l), static_cast<int>(rng.index(static_cast<std::size_t>(labels)))});
    map.entries[static_cast<ItemId>(i)] = id;
  }
  return collision_avoidance(map);
}

TokenVocabulary vocab_for(const IdentifierMap& map) {
  auto v = TokenVocabulary::with_control_tokens();
  for (const auto& [item, id] : map.entries) v.add_identifier(id);
  return v;
}

struct Scored {
  double perplexity;
  std::vector<TokenId> tokens;
  ItemId item;
  bool operator<(const Scored& o) const {
    if (perplexity != o.perplexity) return perplexity < o.perplexity;
    return tokens < o.tokens;
  }
};

std::vector<Scored> exhaustive(const Scorer& scorer, std::span<const TokenId> prompt, const IdentifierMap& map,
                               const TokenVocabulary& vocab) {
  std::vector<Scored> all;
  for (const auto& [item, id] : map.entries) {
    auto path = vocab.encode(id);
    path.push_back(vocab.eos());
    const double lp = sequence_log_prob(scorer, prompt, path);
    all.push_back({std::exp(-lp / static_cast<double>(path.size())), path, item});
  }
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

TEST_CASE("trie with a single identifier") {
  IdentifierMap map;
  map.base_length = 2;
  map.entries[7] = {{0, 1}, {1, 2}};
  const auto vocab = vocab_for(map);
  const auto trie = TrieIndex::build(map, vocab);
  const auto path = [&] {
    auto p = vocab.encode(map.at(7));
    p.push_back(vocab.eos());
    return p;
  }();
  CHECK(trie.item_count() == 1);
  CHECK(trie.node_count() == 4);
  CHECK(trie.allowed({}) == std::vector<TokenId>{path[0]});
  CHECK(trie.complete(path));
  CHECK_FALSE(trie.complete(std::span(path).first(2)));
  CHECK(trie.item(path) == ItemId{7});
  CHECK(trie.allowed(path).empty());
}

TEST_CASE("trie shares prefixes") {
  IdentifierMap map;
  map.base_length = 2;
  map.entries[0] = {{0, 1}, {1, 1}};
  map.entries[1] = {{0, 1}, {1, 2}};
  const auto vocab = vocab_for(map);
  const auto trie = TrieIndex::build(map, vocab);
  const auto a1 = vocab.id("<a_1>");
  CHECK(trie.allowed({}).size() == 1);
  const std::vector<TokenId> prefix{a1};
  CHECK(trie.allowed(prefix) == std::vector<TokenId>{vocab.id("<b_1>"), vocab.id("<b_2>")});
}

TEST_CASE("trie paths reproduce a 100-item map with extended identifiers") {
  const auto map = random_map(100, 3, 4, 11);
  REQUIRE(map.injective());
  const auto vocab = vocab_for(map);
  const auto trie = TrieIndex::build(map, vocab);
  const auto paths = trie.paths();
  CHECK(paths.size() == 100);
  std::size_t longer = 0;
  for (const auto& [path, item] : paths) {
    REQUIRE(path.back() == vocab.eos());
    ItemIdentifier id;
    for (std::size_t t = 0; t + 1 < path.size(); ++t) id.push_back(IdToken::parse(vocab.token(path[t])));
    CHECK(map.at(item) == id);
    if (id.size() > 3) ++longer;
  }
  CHECK(longer > 0);
}

TEST_CASE("trie refuses colliding identifiers") {
  IdentifierMap map;
  map.base_length = 1;
  map.entries[0] = {{0, 1}};
  map.entries[1] = {{0, 1}};
  CHECK_THROWS_AS(TrieIndex::build(map, vocab_for(map)), IntegrityError);
}

TEST_CASE("a one-item catalog always decodes to that item") {
  IdentifierMap map;
  map.base_length = 3;
  map.entries[42] = {{0, 3}, {1, 0}, {2, 5}};
  const auto vocab = vocab_for(map);
  const auto trie = TrieIndex::build(map, vocab);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const HashScorer scorer(vocab.size(), seed);
    const std::vector<TokenId> prompt{1, 2};
    const auto ranked = constrained_beam_search(scorer, prompt, trie, 4);
    REQUIRE(ranked.size() == 1);
    CHECK(ranked[0].item == 42);
  }
}

TEST_CASE("full-width beam search equals exhaustive perplexity ranking") {
  const auto map = random_map(20, 3, 3, 5);
  const auto vocab = vocab_for(map);
  const auto trie = TrieIndex::build(map, vocab);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const HashScorer scorer(vocab.size(), seed);
    const std::vector<TokenId> prompt{static_cast<TokenId>(seed % 5), 3};
    const auto oracle = exhaustive(scorer, prompt, map, vocab);
    const auto ranked = constrained_beam_search(scorer, prompt, trie, 20);
    REQUIRE(ranked.size() == oracle.size());
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      CHECK(ranked[r].item == oracle[r].item);
      CHECK(ranked[r].perplexity == oracle[r].perplexity);
    }
  }
}

TEST_CASE("full-width beam search over a transformer equals exhaustive ranking") {
  const auto map = random_map(20, 2, 5, 9);
  auto vocab = vocab_for(map);
  ModelConfig cfg;
  cfg.dim = 16;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.context = 32;
  SequenceModel model(cfg, vocab, 3);
  const auto trie = TrieIndex::build(map, model.vocab());
  const std::vector<TokenId> prompt{model.vocab().id(tokens::rec_open(1)), model.vocab().id("<a_1>"),
                                    model.vocab().id(tokens::rec_close(1))};
  const auto oracle = exhaustive(model, prompt, map, model.vocab());
  const auto ranked = constrained_beam_search(model, prompt, trie, 25);
  REQUIRE(ranked.size() == 20);
  for (std::size_t r = 0; r < ranked.size(); ++r) CHECK(ranked[r].item == oracle[r].item);
}

TEST_CASE("uniform scores fall back to token order") {
  const auto map = random_map(30, 2, 6, 2);
  const auto vocab = vocab_for(map);
  const auto trie = TrieIndex::build(map, vocab);
  const UniformScorer scorer(vocab.size());
  const std::vector<TokenId> prompt{0};
  auto paths = trie.paths();
  std::vector<std::pair<std::vector<TokenId>, ItemId>> same_length;
  for (const auto& p : paths)
    if (p.first.size() == 3) same_length.push_back(p);
  std::sort(same_length.begin(), same_length.end());
  const auto ranked = constrained_beam_search(scorer, prompt, trie, 5);
  REQUIRE(ranked.size() == 5);
  // Longer identifiers have the same per-token score, so every path ties.
  std::sort(paths.begin(), paths.end());
  for (std::size_t r = 0; r < 5; ++r) CHECK(ranked[r].item == paths[r].second);
}

TEST_CASE("beam search is exact for position-only scores at any width") {
  const int labels = 8;
  std::vector<std::vector<TokenId>> levels(3);
  for (int l = 0; l < 3; ++l)
    for (int k = 0; k < labels; ++k) levels[static_cast<std::size_t>(l)].push_back(static_cast<TokenId>(1 + l * labels + k));
  const TokenId eos = 0;
  const LevelGrammar grammar(levels, eos);
  const PositionScorer scorer(1 + 3 * labels, 4);
  const std::vector<TokenId> prompt{5};
  std::vector<Hypothesis> all;
  for (TokenId a : levels[0])
    for (TokenId b : levels[1])
      for (TokenId c : levels[2]) {
        const std::vector<TokenId> seq{a, b, c, eos};
        const double lp = sequence_log_prob(scorer, prompt, seq);
        all.push_back({seq, lp, std::exp(-lp / 4.0)});
      }
  std::sort(all.begin(), all.end(), [](const Hypothesis& x, const Hypothesis& y) {
    return x.perplexity != y.perplexity ? x.perplexity < y.perplexity : x.tokens < y.tokens;
  });
  const auto top = beam_search(scorer, prompt, grammar, 2);
  REQUIRE(top.size() == 2);
  CHECK(top[0].tokens == all[0].tokens);
  CHECK(top[1].tokens == all[1].tokens);
  CHECK(top[0].tokens != top[1].tokens);
}

TEST_CASE("a grammar with one sentence yields one hypothesis") {
  const LevelGrammar grammar({{3}, {4}}, 0);
  const HashScorer scorer(6, 1);
  const std::vector<TokenId> prompt{1};
  const auto out = beam_search(scorer, prompt, grammar, 20);
  REQUIRE(out.size() == 1);
  CHECK(out[0].tokens == std::vector<TokenId>{3, 4, 0});
}

TEST_CASE("beam search argument checks") {
  const LevelGrammar grammar({{3}}, 0);
  const HashScorer scorer(4, 1);
  const std::vector<TokenId> prompt{1};
  CHECK_THROWS_AS(beam_search(scorer, prompt, grammar, 0), ArgumentError);
  CHECK_THROWS_AS(beam_search(scorer, {}, grammar, 1), ArgumentError);
  const LevelGrammar too_wide({{9}}, 0);
  CHECK_THROWS_AS(beam_search(scorer, prompt, too_wide, 1), ArgumentError);
}

TEST_CASE("every decoded identifier is a catalog item") {
  const auto map = random_map(60, 3, 4, 21);
  const auto vocab = vocab_for(map);
  const auto trie = TrieIndex::build(map, vocab);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const HashScorer scorer(vocab.size(), seed);
    const std::vector<TokenId> prompt{static_cast<TokenId>(seed % vocab.size())};
    const auto ranked = constrained_beam_search(scorer, prompt, trie, 10);
    CHECK(ranked.size() == 10);
    std::set<ItemId> seen;
    for (const auto& r : ranked) {
      CHECK(map.entries.count(r.item) == 1);
      seen.insert(r.item);
    }
    CHECK(seen.size() == ranked.size());
    for (std::size_t r = 1; r < ranked.size(); ++r) CHECK(ranked[r - 1].perplexity <= ranked[r].perplexity);
  }
}

TEST_CASE("prediction files round-trip") {
  const auto path = std::filesystem::temp_directory_path() / "itemtok_predictions.tsv";
  std::vector<UserPrediction> preds{{3, 9, {{9, 1.5}, {2, 2.25}}}, {1, 4, {{0, 0.1 + 0.2}}}, {8, 5, {}}};
  write_predictions(path, preds, "abc");
  std::string hash;
  const auto back = read_predictions(path, &hash);
  CHECK(hash == "abc");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].user == preds[i].user);
    CHECK(back[i].truth == preds[i].truth);
    REQUIRE(back[i].ranked.size() == preds[i].ranked.size());
    for (std::size_t r = 0; r < back[i].ranked.size(); ++r) {
      CHECK(back[i].ranked[r].item == preds[i].ranked[r].item);
      CHECK(back[i].ranked[r].perplexity == preds[i].ranked[r].perplexity);
    }
  }
  {
    std::ofstream out(path);
    out << "# truth 1\t2\n1\t2\t5\t1.0\n";
  }
  CHECK_THROWS_AS(read_predictions(path), ParseError);
  std::filesystem::remove(path);
}
