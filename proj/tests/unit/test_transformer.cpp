#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "itemtok/error.hpp"
#include "itemtok/kernels.hpp"
#include "itemtok/rng.hpp"
#include "itemtok/transformer.hpp"

using namespace itemtok;

namespace {

TokenVocabulary toy_vocab(int extra = 10) {
  auto v = TokenVocabulary::with_control_tokens();
  for (int i = 0; i < extra; ++i) v.add("t" + std::to_string(i));
  return v;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 2;
  c.heads = 2;
  c.dim = 8;
  c.context = 16;
  c.ff_mult = 2;
  return c;
}

std::vector<TokenId> random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenId> t(n);
  for (auto& x : t) x = static_cast<TokenId>(rng.index(vocab));
  return t;
}

}  // namespace

TEST_CASE("softmax rows of the model sum to one") {
  SequenceModel m(tiny_config(), toy_vocab(), 3);
  const auto toks = random_tokens(9, m.vocab_size(), 1);
  std::vector<std::size_t> pos(toks.size());
  std::iota(pos.begin(), pos.end(), 0);
  auto logits = m.logits(toks, pos);
  const std::size_t v = m.vocab_size();
  for (std::size_t r = 0; r < pos.size(); ++r) {
    std::span<double> row(&logits[r * v], v);
    kernels::log_softmax(row);
    double s = 0.0;
    for (double x : row) {
      CHECK(std::isfinite(x));
      s += std::exp(x);
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("logits are causal") {
  SequenceModel m(tiny_config(), toy_vocab(), 4);
  auto toks = random_tokens(10, m.vocab_size(), 2);
  const std::size_t p = 5;
  const std::vector<std::size_t> pos{p};
  const auto before = m.logits(toks, pos);
  for (std::size_t i = p + 1; i < toks.size(); ++i) toks[i] = (toks[i] + 3) % static_cast<TokenId>(m.vocab_size());
  CHECK(m.logits(toks, pos) == before);
}

TEST_CASE("nll equals the per-step sum over response positions") {
  SequenceModel m(tiny_config(), toy_vocab(), 5);
  auto toks = random_tokens(8, m.vocab_size(), 3);
  const double a = m.nll(toks, 5);
  double b = 0.0;
  for (std::size_t k = 5; k < toks.size(); ++k) {
    const std::vector<std::size_t> pos{k - 1};
    auto row = m.logits(toks, pos);
    kernels::log_softmax(row);
    b -= row[static_cast<std::size_t>(toks[k])];
  }
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("incremental session matches the full forward pass bitwise") {
  SequenceModel m(tiny_config(), toy_vocab(), 6);
  const auto toks = random_tokens(12, m.vocab_size(), 4);
  auto session = m.open(std::span(toks).first(1));
  for (std::size_t i = 1; i <= toks.size(); ++i) {
    const std::vector<std::size_t> pos{i - 1};
    auto row = m.logits(std::span(toks).first(i), pos);
    kernels::log_softmax(row);
    const auto lp = session->log_probs();
    REQUIRE(lp.size() == row.size());
    for (std::size_t k = 0; k < row.size(); ++k) CHECK(lp[k] == row[k]);
    if (i < toks.size()) session->push(toks[i]);
  }
}

TEST_CASE("cloned sessions evolve independently") {
  SequenceModel m(tiny_config(), toy_vocab(), 6);
  const std::vector<TokenId> prompt{1, 2, 3};
  auto a = m.open(prompt);
  auto b = a->clone();
  a->push(4);
  b->push(5);
  auto c = m.open(std::vector<TokenId>{1, 2, 3, 5});
  const auto lb = b->log_probs();
  const auto lc = c->log_probs();
  CHECK(std::equal(lb.begin(), lb.end(), lc.begin()));
}

TEST_CASE("zero parameters give uniform logits and loss L ln V") {
  auto vocab = TokenVocabulary::with_control_tokens();
  SequenceModel m(tiny_config(), vocab, 1);
  std::fill(m.params().begin(), m.params().end(), 0.0);
  const double v = static_cast<double>(m.vocab_size());
  const std::vector<TokenId> toks{1, 2, 3, 4, 5, 6};
  CHECK(m.nll(toks, 2) == doctest::Approx(4.0 * std::log(v)).epsilon(1e-12));
}

TEST_CASE("context overflow and unknown tokens are rejected") {
  SequenceModel m(tiny_config(), toy_vocab(), 1);
  std::vector<TokenId> longer(17, 1);
  CHECK_THROWS_AS(m.nll(longer, 3), ArgumentError);
  const std::vector<TokenId> bad{1, static_cast<TokenId>(m.vocab_size())};
  CHECK_THROWS_AS(m.nll(bad, 1), ArgumentError);
  CHECK_THROWS_AS(m.nll(std::vector<TokenId>{1, 2}, 2), ArgumentError);
}

TEST_CASE("analytic gradient matches central differences") {
  SequenceModel m(tiny_config(), toy_vocab(), 11);
  const auto toks = random_tokens(10, m.vocab_size(), 7);
  const std::size_t begin = 6;
  std::vector<double> grad(m.param_count(), 0.0);
  m.nll(toks, begin, grad);
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (grad[i] != 0.0) live.push_back(i);
  REQUIRE(live.size() > 100);
  Rng rng(99);
  const double h = 1e-5;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t i = live[rng.index(live.size())];
    const double saved = m.params()[i];
    m.params()[i] = saved + h;
    const double up = m.nll(toks, begin);
    m.params()[i] = saved - h;
    const double down = m.nll(toks, begin);
    m.params()[i] = saved;
    const double fd = (up - down) / (2 * h);
    const double rel = std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
    CAPTURE(i);
    CAPTURE(fd);
    CAPTURE(grad[i]);
    CHECK(rel < 1e-4);
  }
}

TEST_CASE("vocabulary growth appends seeded embedding rows") {
  SequenceModel m(tiny_config(), toy_vocab(), 1);
  const auto before = std::vector<double>(m.params().begin(), m.params().end());
  m.add_token("<new_a>");
  m.add_token("<new_b>");
  CHECK(m.vocab_size() == m.vocab().size() - 2);
  CHECK(m.sync_vocabulary(42) == 2);
  CHECK(m.vocab_size() == m.vocab().size());
  REQUIRE(m.param_count() == before.size() + 2 * 8);
  CHECK(std::equal(before.begin(), before.end(), m.params().begin()));
  double ss = 0.0;
  for (std::size_t i = before.size(); i < m.param_count(); ++i) ss += m.params()[i] * m.params()[i];
  CHECK(ss > 0.0);
  CHECK(std::sqrt(ss / 16.0) < 0.1);

  SequenceModel other(tiny_config(), toy_vocab(), 1);
  other.add_token("<new_a>");
  other.add_token("<new_b>");
  other.sync_vocabulary(42);
  CHECK(other == m);
}

TEST_CASE("checkpoint round trip") {
  SequenceModel m(tiny_config(), toy_vocab(), 8);
  m.optimizer().m.assign(m.param_count(), 0.5);
  m.optimizer().v.assign(m.param_count(), 0.25);
  m.optimizer().step = 17;
  const auto path = std::filesystem::temp_directory_path() / "itemtok_model_roundtrip.bin";
  m.save(path);
  const auto loaded = SequenceModel::load(path);
  CHECK(loaded == m);
  std::filesystem::remove(path);
}
