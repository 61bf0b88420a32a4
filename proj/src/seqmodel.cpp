#include "itemtok/seqmodel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include "itemtok/error.hpp"

namespace itemtok {
namespace {

constexpr std::size_t kGradShards = 8;
constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

std::vector<TokenId> with_eos(std::vector<TokenId> tokens, const TokenVocabulary& vocab) {
  tokens.push_back(vocab.eos());
  return tokens;
}

std::vector<TokenId> concat(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<TokenId> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace

const char* task_name(Task task) {
  switch (task) {
    case Task::kRec: return "rec";
    case Task::kItem2Id: return "item2id";
    case Task::kId2Item: return "id2item";
  }
  return "?";
}

void extend_vocabulary(TokenVocabulary& vocab, const Catalog& catalog, const IdentifierMap& map) {
  for (const auto& item : catalog.items())
    for (const auto& w : item.words) vocab.add(w);
  for (const auto& [id, ident] : map.entries) vocab.add_identifier(ident);
}

PromptPair build_rec_prompt(const TokenVocabulary& vocab, std::span<const ItemIdentifier> history,
                            int template_id, const ItemIdentifier* target) {
  if (history.empty()) throw ArgumentError("recommendation prompt needs a non-empty history");
  if (history.size() > kHistoryCap)
    throw ArgumentError("history longer than " + std::to_string(kHistoryCap) + " items");
  if (template_id < 1 || template_id > kNumRecTemplates)
    throw ArgumentError("template id " + std::to_string(template_id) + " out of range");
  PromptPair p;
  p.task = Task::kRec;
  p.instruction.push_back(vocab.id(tokens::rec_open(template_id)));
  for (const auto& ident : history) {
    const auto ids = vocab.encode(ident);
    p.instruction.insert(p.instruction.end(), ids.begin(), ids.end());
  }
  p.instruction.push_back(vocab.id(tokens::rec_close(template_id)));
  if (target) p.response = with_eos(vocab.encode(*target), vocab);
  return p;
}

PromptPair build_rec_prompt(const TokenVocabulary& vocab, std::span<const ItemIdentifier> history,
                            Rng& rng, const ItemIdentifier* target) {
  const int t = 1 + static_cast<int>(rng.index(kNumRecTemplates));
  return build_rec_prompt(vocab, history, t, target);
}

PromptPair build_item2id_prompt(const TokenVocabulary& vocab, const Item& item,
                                const ItemIdentifier& identifier) {
  PromptPair p;
  p.task = Task::kItem2Id;
  p.instruction.push_back(vocab.id(tokens::kItem2IdOpen));
  const auto words = vocab.encode_words(item.words);
  p.instruction.insert(p.instruction.end(), words.begin(), words.end());
  p.instruction.push_back(vocab.id(tokens::kItem2IdClose));
  p.response = with_eos(vocab.encode(identifier), vocab);
  return p;
}

PromptPair build_id2item_prompt(const TokenVocabulary& vocab, const Item& item,
                                const ItemIdentifier& identifier) {
  PromptPair p;
  p.task = Task::kId2Item;
  p.instruction.push_back(vocab.id(tokens::kId2ItemOpen));
  const auto ids = vocab.encode(identifier);
  p.instruction.insert(p.instruction.end(), ids.begin(), ids.end());
  p.instruction.push_back(vocab.id(tokens::kId2ItemClose));
  p.response = with_eos(vocab.encode_words(item.words), vocab);
  return p;
}

std::vector<PromptPair> rec_pairs(const TokenVocabulary& vocab, std::span<const Example> examples,
                                  const IdentifierMap& map, Rng& rng) {
  std::vector<PromptPair> out;
  out.reserve(examples.size());
  std::vector<ItemIdentifier> history;
  for (const auto& ex : examples) {
    history.clear();
    for (ItemId id : ex.history) history.push_back(map.at(id));
    out.push_back(build_rec_prompt(vocab, history, rng, &map.at(ex.target)));
  }
  return out;
}

std::vector<PromptPair> alignment_pairs(const TokenVocabulary& vocab, const Catalog& catalog,
                                        const IdentifierMap& map) {
  std::vector<PromptPair> out;
  out.reserve(2 * catalog.size());
  for (const auto& item : catalog.items()) {
    out.push_back(build_item2id_prompt(vocab, item, map.at(item.id)));
    out.push_back(build_id2item_prompt(vocab, item, map.at(item.id)));
  }
  return out;
}

double nll_loss(const SequenceModel& model, const PromptPair& pair) {
  if (pair.response.empty()) throw ArgumentError("nll of an empty response");
  const auto tokens = concat(pair.instruction, pair.response);
  return model.nll(tokens, pair.instruction.size());
}

double perplexity(const SequenceModel& model, std::span<const TokenId> instruction,
                  std::span<const TokenId> response) {
  if (response.empty()) throw ArgumentError("perplexity of an empty response");
  const auto tokens = concat(instruction, response);
  return std::exp(model.nll(tokens, instruction.size()) / static_cast<double>(response.size()));
}

double mean_loss(const SequenceModel& model, std::span<const PromptPair> pairs, Exec exec) {
  if (pairs.empty()) return 0.0;
  std::vector<double> losses(pairs.size());
  parallel_for(exec, pairs.size(), [&](std::size_t i) { losses[i] = nll_loss(model, pairs[i]); });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(pairs.size());
}

TrainHistory train(SequenceModel& model, const PairProvider& provider, const TrainOptions& options) {
  if (options.batch == 0) throw ArgumentError("batch size must be positive");
  TrainHistory history;
  if (options.epochs == 0) return history;
  auto params = model.params();
  const std::size_t np = params.size();
  auto& opt = model.optimizer();
  if (opt.m.size() != np) {
    opt.m.assign(np, 0.0);
    opt.v.assign(np, 0.0);
  }
  std::vector<std::vector<double>> shards(kGradShards, std::vector<double>(np));
  std::vector<double> grad(np);
  std::optional<SequenceModel> best;
  history.best_epoch = options.epochs;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const std::vector<PromptPair> pairs = provider(epoch);
    if (pairs.empty()) throw ArgumentError("empty training set");
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(derive_seed(options.seed, "train.order"), static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    std::vector<double> pair_loss(pairs.size());
    for (std::size_t start = 0; start < order.size(); start += options.batch) {
      const std::size_t count = std::min(options.batch, order.size() - start);
      const double scale = 1.0 / static_cast<double>(count);
      parallel_for(options.exec, kGradShards, [&](std::size_t s) {
        auto& g = shards[s];
        std::fill(g.begin(), g.end(), 0.0);
        for (std::size_t b = s; b < count; b += kGradShards) {
          const auto& pair = pairs[order[start + b]];
          const auto tokens = concat(pair.instruction, pair.response);
          pair_loss[order[start + b]] = model.nll(tokens, pair.instruction.size(), g, scale);
        }
      });
      for (std::size_t b = 0; b < count; ++b) {
        const double l = pair_loss[order[start + b]];
        if (!std::isfinite(l))
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting " +
                             std::to_string(start) + " (pair " + std::to_string(order[start + b]) + ")");
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t s = 0; s < std::min(kGradShards, count); ++s)
        for (std::size_t i = 0; i < np; ++i) grad[i] += shards[s][i];

      double norm2 = 0.0;
      for (double g : grad) norm2 += g * g;
      const double norm = std::sqrt(norm2);
      if (!std::isfinite(norm))
        throw NumericError("non-finite gradient at epoch " + std::to_string(epoch));
      const double clip_scale = (options.clip > 0.0 && norm > options.clip) ? options.clip / norm : 1.0;

      ++opt.step;
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(opt.step));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(opt.step));
      for (std::size_t i = 0; i < np; ++i) {
        const double g = grad[i] * clip_scale;
        opt.m[i] = kBeta1 * opt.m[i] + (1.0 - kBeta1) * g;
        opt.v[i] = kBeta2 * opt.v[i] + (1.0 - kBeta2) * g * g;
        const double mhat = opt.m[i] / bc1;
        const double vhat = opt.v[i] / bc2;
        params[i] -= options.lr * (mhat / (std::sqrt(vhat) + kAdamEps) + options.weight_decay * params[i]);
      }
    }

    double total = 0.0;
    std::array<double, 3> task_sum{};
    std::array<std::size_t, 3> task_n{};
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      total += pair_loss[i];
      const auto t = static_cast<std::size_t>(pairs[i].task);
      task_sum[t] += pair_loss[i];
      ++task_n[t];
    }
    history.epoch_loss.push_back(total / static_cast<double>(pairs.size()));
    std::array<double, 3> task_mean{};
    for (std::size_t t = 0; t < 3; ++t)
      task_mean[t] = task_n[t] ? task_sum[t] / static_cast<double>(task_n[t])
                               : std::numeric_limits<double>::quiet_NaN();
    history.task_loss.push_back(task_mean);

    if (options.validate) {
      const double v = options.validate(model);
      if (!std::isfinite(v)) throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
      history.valid_loss.push_back(v);
      if (!best || v < history.valid_loss[history.best_epoch - 1]) {
        best = model;
        history.best_epoch = epoch + 1;
      }
    }
  }
  if (best) model = std::move(*best);
  return history;
}

TrainHistory train(SequenceModel& model, const std::vector<PromptPair>& pairs,
                   const TrainOptions& options) {
  return train(model, [&](std::size_t) { return pairs; }, options);
}

}  // namespace itemtok
