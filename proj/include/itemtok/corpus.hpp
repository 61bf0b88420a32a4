#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace itemtok {

using ItemId = std::int64_t;
using UserId = std::int64_t;

struct Item {
  ItemId id = 0;
  std::vector<std::string> words;  // text feature, never empty
};

struct InteractionSequence {
  UserId user = 0;
  std::vector<ItemId> items;  // chronological
};

/// Items sorted by id with an id → position index.
class Catalog {
 public:
  Catalog() = default;
  Catalog(std::vector<Item> items, std::vector<UserId> users);

  const std::vector<Item>& items() const { return items_; }
  const std::vector<UserId>& users() const { return users_; }
  std::size_t size() const { return items_.size(); }

  bool contains(ItemId id) const { return index_.count(id) != 0; }
  /// Dense position of an item in items(); throws IntegrityError if unknown.
  std::size_t index_of(ItemId id) const;
  const Item& item(ItemId id) const { return items_[index_of(id)]; }

 private:
  std::vector<Item> items_;
  std::vector<UserId> users_;
  std::unordered_map<ItemId, std::size_t> index_;
};

struct Dataset {
  Catalog catalog;
  std::vector<InteractionSequence> sequences;
};

/// Minimum interactions for a user or item to survive loading.
inline constexpr std::size_t kMinInteractions = 5;
/// Histories are truncated to this many most recent items.
inline constexpr std::size_t kHistoryCap = 10;

/// Reads `user<TAB>i1,i2,...<TAB>` records plus `item<TAB>w1 w2 ...` records.
/// Users and items with fewer than kMinInteractions interactions (counted over
/// the raw file) are removed, then users left with fewer than
/// kMinInteractions items are dropped.
Dataset load_interactions(const std::filesystem::path& interactions,
                          const std::filesystem::path& items);

void write_dataset(const Dataset& data, const std::filesystem::path& interactions,
                   const std::filesystem::path& items);

struct SynthConfig {
  std::uint64_t seed = 7;
  std::size_t n_users = 500;
  std::size_t n_items = 100;
  std::size_t n_clusters = 10;
  std::size_t min_len = 5;
  std::size_t max_len = 10;
  std::size_t vocab_words = 200;
  std::size_t words_per_item = 4;
};

/// Planted-structure generator. Item i belongs to latent cluster
/// latent_cluster(i); users draw most items from one or two clusters and often
/// follow a within-cluster successor chain.
Dataset synthesize_dataset(const SynthConfig& config);

/// Cluster planted for item `id` by synthesize_dataset (ids are 0..n_items-1).
std::size_t latent_cluster(ItemId id, std::size_t n_clusters);

struct Example {
  UserId user = 0;
  std::vector<ItemId> history;  // at most kHistoryCap, oldest first
  ItemId target = 0;
};

struct SplitDataset {
  std::vector<Example> train;
  std::vector<Example> valid;
  std::vector<Example> test;
  std::size_t skipped = 0;  // sequences shorter than 3
};

/// Leave-one-out: last item is the test target, second-to-last the validation
/// target, and every earlier position (including the validation target) is a
/// training target.
SplitDataset leave_one_out_split(const std::vector<InteractionSequence>& sequences,
                                 std::size_t history_cap = kHistoryCap);

}  // namespace itemtok
