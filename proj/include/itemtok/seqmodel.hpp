#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "itemtok/corpus.hpp"
#include "itemtok/identifier.hpp"
#include "itemtok/parallel.hpp"
#include "itemtok/rng.hpp"
#include "itemtok/transformer.hpp"
#include "itemtok/vocab.hpp"

namespace itemtok {

enum class Task { kRec = 0, kItem2Id = 1, kId2Item = 2 };

const char* task_name(Task task);

struct PromptPair {
  std::vector<TokenId> instruction;
  std::vector<TokenId> response;  // loss is taken on these only
  Task task = Task::kRec;
};

/// Adds every catalog word and every identifier token of `map` to `vocab`.
void extend_vocabulary(TokenVocabulary& vocab, const Catalog& catalog, const IdentifierMap& map);

/// [<recT_open>, history identifier tokens..., <recT_close>] → target + <eos>.
/// Without a target the response is empty (inference prompt).
PromptPair build_rec_prompt(const TokenVocabulary& vocab, std::span<const ItemIdentifier> history,
                            int template_id, const ItemIdentifier* target = nullptr);
/// Same with the template drawn uniformly from [1, kNumRecTemplates].
PromptPair build_rec_prompt(const TokenVocabulary& vocab, std::span<const ItemIdentifier> history,
                            Rng& rng, const ItemIdentifier* target = nullptr);

/// [<i2id_open>, words..., <i2id_close>] → identifier + <eos>.
PromptPair build_item2id_prompt(const TokenVocabulary& vocab, const Item& item,
                                const ItemIdentifier& identifier);
/// [<id2i_open>, identifier..., <id2i_close>] → words + <eos>.
PromptPair build_id2item_prompt(const TokenVocabulary& vocab, const Item& item,
                                const ItemIdentifier& identifier);

/// Recommendation pairs for every example, each with a freshly drawn template.
std::vector<PromptPair> rec_pairs(const TokenVocabulary& vocab, std::span<const Example> examples,
                                  const IdentifierMap& map, Rng& rng);
/// One ITEM2ID and one ID2ITEM pair per catalog item.
std::vector<PromptPair> alignment_pairs(const TokenVocabulary& vocab, const Catalog& catalog,
                                        const IdentifierMap& map);

double nll_loss(const SequenceModel& model, const PromptPair& pair);
/// exp(nll / |response|).
double perplexity(const SequenceModel& model, std::span<const TokenId> instruction,
                  std::span<const TokenId> response);
double mean_loss(const SequenceModel& model, std::span<const PromptPair> pairs,
                 Exec exec = default_exec());

struct TrainOptions {
  std::size_t epochs = 1;
  double lr = 1e-3;
  std::size_t batch = 32;
  double weight_decay = 0.0;
  double clip = 1.0;  // global gradient-norm cap, 0 disables
  std::uint64_t seed = 0;
  Exec exec = default_exec();
  /// Held-out loss evaluated after every epoch. When set, the model (with its
  /// optimizer state) is rolled back to the epoch with the lowest value.
  std::function<double(const SequenceModel&)> validate;
};

struct TrainHistory {
  std::vector<double> epoch_loss;                  // mean per-pair nll seen during the epoch
  std::vector<std::array<double, 3>> task_loss;    // same, split by Task (NaN when absent)
  std::vector<double> valid_loss;                  // empty without a validate hook
  std::size_t best_epoch = 0;                      // 1-based; the last epoch without a hook
};

using PairProvider = std::function<std::vector<PromptPair>(std::size_t epoch)>;

/// AdamW on per-pair summed nll averaged over mini-batches. Gradients are
/// accumulated into a fixed number of shards and summed in order, so results
/// are independent of thread count. Throws NumericError on a non-finite loss.
TrainHistory train(SequenceModel& model, const PairProvider& provider, const TrainOptions& options);
TrainHistory train(SequenceModel& model, const std::vector<PromptPair>& pairs,
                   const TrainOptions& options);

}  // namespace itemtok
