#include "itemtok/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "itemtok/error.hpp"
#include "itemtok/rng.hpp"

namespace itemtok {
namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

bool parse_int(std::string_view s, std::int64_t& out) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open " + path.string());
  return in;
}

}  // namespace

Catalog::Catalog(std::vector<Item> items, std::vector<UserId> users)
    : items_(std::move(items)), users_(std::move(users)) {
  std::sort(items_.begin(), items_.end(), [](const Item& a, const Item& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (items_[i].words.empty())
      throw ArgumentError("item " + std::to_string(items_[i].id) + " has an empty text feature");
    if (!index_.emplace(items_[i].id, i).second)
      throw IntegrityError("duplicate item id " + std::to_string(items_[i].id));
  }
}

std::size_t Catalog::index_of(ItemId id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw IntegrityError("unknown item id " + std::to_string(id));
  return it->second;
}

Dataset load_interactions(const std::filesystem::path& interactions,
                          const std::filesystem::path& items) {
  std::map<ItemId, std::vector<std::string>> texts;
  {
    auto in = open_input(items);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto fields = split(line, '\t');
      std::int64_t id = 0;
      if (fields.size() != 2 || !parse_int(fields[0], id))
        throw ParseError(items.string(), lineno, "expected item_id<TAB>words");
      std::vector<std::string> words;
      std::istringstream ws{std::string(fields[1])};
      for (std::string w; ws >> w;) words.push_back(w);
      if (words.empty()) throw ParseError(items.string(), lineno, "empty text feature");
      if (!texts.emplace(id, std::move(words)).second)
        throw ParseError(items.string(), lineno, "duplicate item id " + std::to_string(id));
    }
  }

  std::vector<InteractionSequence> raw;
  {
    auto in = open_input(interactions);
    std::string line;
    std::size_t lineno = 0;
    std::set<UserId> seen;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto fields = split(line, '\t');
      std::int64_t user = 0;
      if (fields.size() < 2 || fields.size() > 3 || !parse_int(fields[0], user))
        throw ParseError(interactions.string(), lineno, "expected user_id<TAB>item_id,...<TAB>");
      if (!seen.insert(user).second)
        throw ParseError(interactions.string(), lineno, "duplicate user id " + std::to_string(user));
      InteractionSequence seq{user, {}};
      for (std::string_view tok : split(fields[1], ',')) {
        std::int64_t id = 0;
        if (!parse_int(tok, id))
          throw ParseError(interactions.string(), lineno, "bad item id '" + std::string(tok) + "'");
        if (texts.count(id) == 0)
          throw IntegrityError(interactions.string() + ":" + std::to_string(lineno) +
                               ": item " + std::to_string(id) + " missing from " + items.string());
        seq.items.push_back(id);
      }
      raw.push_back(std::move(seq));
    }
  }

  std::map<ItemId, std::size_t> item_count;
  for (const auto& s : raw)
    for (ItemId id : s.items) ++item_count[id];

  Dataset out;
  std::set<ItemId> kept_items;
  std::vector<UserId> users;
  for (const auto& s : raw) {
    if (s.items.size() < kMinInteractions) continue;
    InteractionSequence kept{s.user, {}};
    for (ItemId id : s.items)
      if (item_count[id] >= kMinInteractions) kept.items.push_back(id);
    if (kept.items.size() < kMinInteractions) continue;
    kept_items.insert(kept.items.begin(), kept.items.end());
    users.push_back(kept.user);
    out.sequences.push_back(std::move(kept));
  }
  std::vector<Item> catalog_items;
  for (ItemId id : kept_items) catalog_items.push_back(Item{id, texts[id]});
  out.catalog = Catalog(std::move(catalog_items), std::move(users));
  return out;
}

void write_dataset(const Dataset& data, const std::filesystem::path& interactions,
                   const std::filesystem::path& items) {
  std::ofstream io(interactions);
  if (!io) throw ArgumentError("cannot write " + interactions.string());
  for (const auto& s : data.sequences) {
    io << s.user << '\t';
    for (std::size_t i = 0; i < s.items.size(); ++i) io << (i ? "," : "") << s.items[i];
    io << "\t\n";
  }
  std::ofstream it(items);
  if (!it) throw ArgumentError("cannot write " + items.string());
  for (const auto& item : data.catalog.items()) {
    it << item.id << '\t';
    for (std::size_t i = 0; i < item.words.size(); ++i) it << (i ? " " : "") << item.words[i];
    it << '\n';
  }
}

std::size_t latent_cluster(ItemId id, std::size_t n_clusters) {
  return static_cast<std::size_t>(id) % n_clusters;
}

Dataset synthesize_dataset(const SynthConfig& cfg) {
  if (cfg.n_users == 0 || cfg.n_items == 0 || cfg.n_clusters == 0)
    throw ArgumentError("synthesize_dataset: sizes must be positive");
  if (cfg.n_clusters > cfg.n_items)
    throw ArgumentError("synthesize_dataset: n_clusters exceeds n_items");
  if (cfg.min_len < 1 || cfg.min_len > cfg.max_len)
    throw ArgumentError("synthesize_dataset: bad sequence length range");
  if (cfg.words_per_item < 2 || cfg.vocab_words * 4 / 5 < cfg.words_per_item)
    throw ArgumentError("synthesize_dataset: word vocabulary too small for words_per_item");

  // 80% of the word vocabulary is split into per-cluster pools; the rest is
  // shared filler.
  const std::size_t pooled = cfg.vocab_words * 4 / 5;
  const std::size_t pool = std::max<std::size_t>(cfg.words_per_item, pooled / cfg.n_clusters);
  const std::size_t generic = std::max<std::size_t>(1, cfg.vocab_words - pooled);
  auto word = [](std::size_t w) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "w%03zu", w);
    return std::string(buf);
  };

  std::vector<std::vector<ItemId>> members(cfg.n_clusters);
  for (std::size_t i = 0; i < cfg.n_items; ++i)
    members[latent_cluster(static_cast<ItemId>(i), cfg.n_clusters)].push_back(
        static_cast<ItemId>(i));

  Rng text_rng(derive_seed(cfg.seed, "synth.text"));
  std::vector<Item> items;
  for (std::size_t i = 0; i < cfg.n_items; ++i) {
    const std::size_t c = latent_cluster(static_cast<ItemId>(i), cfg.n_clusters);
    std::vector<std::size_t> candidates;
    for (std::size_t k = 0; k < pool; ++k) candidates.push_back((c * pool + k) % pooled);
    text_rng.shuffle(candidates);
    Item item{static_cast<ItemId>(i), {}};
    for (std::size_t k = 0; k + 1 < cfg.words_per_item; ++k) item.words.push_back(word(candidates[k]));
    item.words.push_back(word(pooled + text_rng.index(generic)));
    items.push_back(std::move(item));
  }

  // successor[i]: next member of i's cluster, cyclically.
  std::vector<ItemId> successor(cfg.n_items);
  for (const auto& m : members)
    for (std::size_t k = 0; k < m.size(); ++k) successor[m[k]] = m[(k + 1) % m.size()];

  Rng seq_rng(derive_seed(cfg.seed, "synth.sequences"));
  Dataset out;
  std::vector<UserId> users;
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    const std::size_t len = cfg.min_len + seq_rng.index(cfg.max_len - cfg.min_len + 1);
    const std::size_t primary = seq_rng.index(cfg.n_clusters);
    const std::size_t secondary = seq_rng.index(cfg.n_clusters);
    auto draw_from = [&](std::size_t c) { return members[c][seq_rng.index(members[c].size())]; };
    InteractionSequence seq{static_cast<UserId>(u), {}};
    seq.items.push_back(draw_from(primary));
    while (seq.items.size() < len) {
      const ItemId prev = seq.items.back();
      const double r = seq_rng.uniform();
      ItemId next;
      if (r < 0.5)
        next = successor[prev];
      else if (r < 0.8)
        next = draw_from(primary);
      else if (r < 0.95)
        next = draw_from(secondary);
      else
        next = static_cast<ItemId>(seq_rng.index(cfg.n_items));
      if (next == prev) next = successor[prev];
      seq.items.push_back(next);
    }
    users.push_back(seq.user);
    out.sequences.push_back(std::move(seq));
  }
  out.catalog = Catalog(std::move(items), std::move(users));
  return out;
}

SplitDataset leave_one_out_split(const std::vector<InteractionSequence>& sequences,
                                 std::size_t history_cap) {
  SplitDataset out;
  auto make = [&](const InteractionSequence& s, std::size_t target_pos) {
    Example ex;
    ex.user = s.user;
    const std::size_t begin = target_pos > history_cap ? target_pos - history_cap : 0;
    ex.history.assign(s.items.begin() + static_cast<std::ptrdiff_t>(begin),
                      s.items.begin() + static_cast<std::ptrdiff_t>(target_pos));
    ex.target = s.items[target_pos];
    return ex;
  };
  for (const auto& s : sequences) {
    const std::size_t n = s.items.size();
    if (n < 3) {
      ++out.skipped;
      continue;
    }
    for (std::size_t t = 1; t + 1 < n; ++t) out.train.push_back(make(s, t));
    out.valid.push_back(make(s, n - 2));
    out.test.push_back(make(s, n - 1));
  }
  return out;
}

}  // namespace itemtok
