#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "itemtok/error.hpp"
#include "itemtok/kernels.hpp"
#include "itemtok/seqmodel.hpp"

using namespace itemtok;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 1;
  c.heads = 2;
  c.dim = 16;
  c.context = 32;
  c.ff_mult = 2;
  return c;
}

struct Toy {
  Catalog catalog;
  IdentifierMap map;
  TokenVocabulary vocab = TokenVocabulary::with_control_tokens();
};

Toy toy(std::size_t n_items) {
  Toy t;
  std::vector<Item> items;
  t.map.base_length = 2;
  for (std::size_t i = 0; i < n_items; ++i) {
    const auto id = static_cast<ItemId>(i);
    items.push_back({id, {"w" + std::to_string(i % 7), "v" + std::to_string(i / 7)}});
    t.map.entries[id] = {{0, static_cast<int>(i / 5)}, {1, static_cast<int>(i % 5)}};
  }
  t.catalog = Catalog(items, {});
  extend_vocabulary(t.vocab, t.catalog, t.map);
  return t;
}

double oracle_nll(const SequenceModel& m, const PromptPair& p) {
  auto session = m.open(p.instruction);
  double prob = 1.0;
  for (TokenId tok : p.response) {
    const auto lp = session->log_probs();
    prob *= std::exp(lp[static_cast<std::size_t>(tok)]);
    session->push(tok);
  }
  return -std::log(prob);
}

}  // namespace

TEST_CASE("recommendation prompts") {
  const auto t = toy(12);
  const std::vector<ItemIdentifier> history{t.map.at(3)};
  const auto target = t.map.at(8);
  const auto p1 = build_rec_prompt(t.vocab, history, 1, &target);
  CHECK(p1.task == Task::kRec);
  std::vector<TokenId> expected{t.vocab.id(tokens::rec_open(1))};
  for (TokenId id : t.vocab.encode(history[0])) expected.push_back(id);
  expected.push_back(t.vocab.id(tokens::rec_close(1)));
  CHECK(p1.instruction == expected);
  auto response = t.vocab.encode(target);
  response.push_back(t.vocab.eos());
  CHECK(p1.response == response);

  const auto p2 = build_rec_prompt(t.vocab, history, 2, &target);
  CHECK(p2.instruction.front() != p1.instruction.front());
  CHECK(p2.instruction.back() != p1.instruction.back());
  CHECK(std::equal(p1.instruction.begin() + 1, p1.instruction.end() - 1, p2.instruction.begin() + 1));
  CHECK(p2.response == p1.response);

  const std::vector<ItemIdentifier> three{t.map.at(0), t.map.at(1), t.map.at(2)};
  CHECK(build_rec_prompt(t.vocab, three, 5).instruction.size() == 2 + 3 * 2);
  CHECK(build_rec_prompt(t.vocab, three, 5).response.empty());

  CHECK_THROWS_AS(build_rec_prompt(t.vocab, std::vector<ItemIdentifier>{}, 1), ArgumentError);
  CHECK_THROWS_AS(build_rec_prompt(t.vocab, std::vector<ItemIdentifier>(11, t.map.at(0)), 1), ArgumentError);
  CHECK_THROWS_AS(build_rec_prompt(t.vocab, history, 0), ArgumentError);
  CHECK_THROWS_AS(build_rec_prompt(t.vocab, history, 16), ArgumentError);

  Rng rng(4);
  std::set<TokenId> opens;
  for (int i = 0; i < 300; ++i) opens.insert(build_rec_prompt(t.vocab, history, rng).instruction.front());
  CHECK(opens.size() == static_cast<std::size_t>(kNumRecTemplates));
}

TEST_CASE("alignment prompts are dual") {
  auto t = toy(12);
  const Item item{100, {"w1", "w2"}};
  const ItemIdentifier ident{{0, 4}, {1, 1}};
  t.vocab.add_identifier(ident);
  const auto i2id = build_item2id_prompt(t.vocab, item, ident);
  const auto id2i = build_id2item_prompt(t.vocab, item, ident);
  CHECK(i2id.task == Task::kItem2Id);
  CHECK(id2i.task == Task::kId2Item);
  CHECK(std::vector<TokenId>(i2id.response.begin(), i2id.response.end() - 1) == t.vocab.encode(ident));
  CHECK(std::vector<TokenId>(id2i.response.begin(), id2i.response.end() - 1) == t.vocab.encode_words(item.words));
  CHECK(std::vector<TokenId>(id2i.instruction.begin() + 1, id2i.instruction.end() - 1) ==
        std::vector<TokenId>(i2id.response.begin(), i2id.response.end() - 1));
  CHECK(std::vector<TokenId>(i2id.instruction.begin() + 1, i2id.instruction.end() - 1) ==
        std::vector<TokenId>(id2i.response.begin(), id2i.response.end() - 1));

  const auto pairs = alignment_pairs(t.vocab, t.catalog, t.map);
  CHECK(pairs.size() == 24);
}

TEST_CASE("nll matches a step-by-step probability product") {
  const auto t = toy(12);
  SequenceModel m(tiny_config(), t.vocab, 3);
  for (std::size_t i = 0; i < 12; ++i) {
    const auto id = static_cast<ItemId>(i);
    const auto p = build_item2id_prompt(t.vocab, t.catalog.item(id), t.map.at(id));
    const double nll = nll_loss(m, p);
    CHECK(nll >= 0.0);
    CHECK(nll == doctest::Approx(oracle_nll(m, p)).epsilon(1e-10));
    CHECK(perplexity(m, p.instruction, p.response) ==
          doctest::Approx(std::exp(nll / static_cast<double>(p.response.size()))).epsilon(1e-12));
  }
  PromptPair empty;
  empty.instruction = {1};
  CHECK_THROWS_AS(nll_loss(m, empty), ArgumentError);
}

TEST_CASE("uniform logits give L ln V and perplexity V") {
  const auto t = toy(12);
  SequenceModel m(tiny_config(), t.vocab, 3);
  std::fill(m.params().begin(), m.params().end(), 0.0);
  const double v = static_cast<double>(m.vocab_size());
  const auto target = t.map.at(1);
  const auto p = build_rec_prompt(t.vocab, std::vector<ItemIdentifier>{t.map.at(0)}, 1, &target);
  CHECK(nll_loss(m, p) == doctest::Approx(3.0 * std::log(v)).epsilon(1e-12));
  CHECK(perplexity(m, p.instruction, p.response) == doctest::Approx(v).epsilon(1e-12));
}

TEST_CASE("loss covers response positions only") {
  const auto t = toy(12);
  SequenceModel m(tiny_config(), t.vocab, 3);
  const auto target = t.map.at(2);
  const auto p = build_rec_prompt(t.vocab, std::vector<ItemIdentifier>{t.map.at(0), t.map.at(5)}, 1, &target);
  auto tokens = p.instruction;
  tokens.insert(tokens.end(), p.response.begin(), p.response.end());
  std::vector<std::size_t> positions(tokens.size() - 1);
  std::iota(positions.begin(), positions.end(), 0);
  const auto logits = m.logits(tokens, positions);
  const std::size_t v = m.vocab_size();
  std::vector<double> step(tokens.size(), 0.0);
  for (std::size_t q = 1; q < tokens.size(); ++q) {
    std::vector<double> row(logits.begin() + static_cast<std::ptrdiff_t>((q - 1) * v),
                            logits.begin() + static_cast<std::ptrdiff_t>(q * v));
    kernels::log_softmax(row);
    step[q] = -row[static_cast<std::size_t>(tokens[q])];
  }
  for (std::size_t b = 1; b < tokens.size(); ++b) {
    double expected = 0.0;
    for (std::size_t q = b; q < tokens.size(); ++q) expected += step[q];
    CHECK(m.nll(tokens, b) == doctest::Approx(expected).epsilon(1e-11));
  }
  const double base = nll_loss(m, p);
  CHECK(mean_loss(m, std::vector<PromptPair>{p, p}, Exec::kSerial) == base);
  CHECK(mean_loss(m, std::vector<PromptPair>{p, p}, Exec::kParallel) == base);
}

TEST_CASE("training") {
  const auto t = toy(25);
  auto pairs = alignment_pairs(t.vocab, t.catalog, t.map);
  REQUIRE(pairs.size() == 50);
  TrainOptions o;
  o.lr = 1e-2;
  o.batch = 10;
  o.seed = 11;

  SUBCASE("zero epochs leave the model untouched") {
    SequenceModel m(tiny_config(), t.vocab, 3);
    const auto before = m;
    o.epochs = 0;
    const auto h = train(m, pairs, o);
    CHECK(h.epoch_loss.empty());
    CHECK(m == before);
  }
  SUBCASE("same seed and data reproduce bitwise; thread policy is irrelevant") {
    o.epochs = 3;
    SequenceModel a(tiny_config(), t.vocab, 3), b(tiny_config(), t.vocab, 3), c(tiny_config(), t.vocab, 3);
    const auto ha = train(a, pairs, o);
    const auto hb = train(b, pairs, o);
    o.exec = Exec::kSerial;
    train(c, pairs, o);
    CHECK(a == b);
    CHECK(a == c);
    CHECK(ha.epoch_loss == hb.epoch_loss);
    o.seed = 12;
    SequenceModel d(tiny_config(), t.vocab, 3);
    train(d, pairs, o);
    CHECK_FALSE(a == d);
  }
  SUBCASE("task losses are split by prompt kind") {
    o.epochs = 1;
    SequenceModel m(tiny_config(), t.vocab, 3);
    const auto h = train(m, pairs, o);
    CHECK(std::isnan(h.task_loss[0][0]));
    CHECK(std::isfinite(h.task_loss[0][1]));
    CHECK(std::isfinite(h.task_loss[0][2]));
    CHECK(h.epoch_loss[0] == doctest::Approx((h.task_loss[0][1] + h.task_loss[0][2]) / 2.0).epsilon(1e-12));
  }
  SUBCASE("a 50-pair toy set is memorized within 100 epochs") {
    o.epochs = 100;
    SequenceModel m(tiny_config(), t.vocab, 3);
    const double initial = mean_loss(m, pairs);
    train(m, pairs, o);
    const double final_loss = mean_loss(m, pairs);
    CHECK(final_loss < 0.2 * initial);
    MESSAGE("memorization ratio " << final_loss / initial);
  }
  SUBCASE("a validation hook rolls back to its best epoch") {
    o.epochs = 4;
    const std::vector<double> scores{3.0, 1.0, 2.0, 1.0};
    std::size_t calls = 0;
    o.validate = [&](const SequenceModel&) { return scores[calls++]; };
    SequenceModel m(tiny_config(), t.vocab, 3);
    const auto h = train(m, pairs, o);
    CHECK(calls == 4);
    CHECK(h.valid_loss == scores);
    CHECK(h.best_epoch == 2);
    CHECK(h.epoch_loss.size() == 4);

    o.validate = nullptr;
    o.epochs = 2;
    SequenceModel two(tiny_config(), t.vocab, 3);
    const auto h2 = train(two, pairs, o);
    CHECK(h2.valid_loss.empty());
    CHECK(h2.best_epoch == 2);
    CHECK(m == two);

    o.validate = [](const SequenceModel&) { return std::nan(""); };
    CHECK_THROWS_AS(train(two, pairs, o), NumericError);
  }
  SUBCASE("an empty training set is an error") {
    SequenceModel m(tiny_config(), t.vocab, 3);
    CHECK_THROWS_AS(train(m, std::vector<PromptPair>{}, o), ArgumentError);
    o.batch = 0;
    CHECK_THROWS_AS(train(m, pairs, o), ArgumentError);
  }
}
