#include "itemtok/refine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "itemtok/error.hpp"
#include "itemtok/rng.hpp"

namespace itemtok {

void prepare_model(SequenceModel& model, const Catalog& catalog, const IdentifierMap& map, std::uint64_t seed) {
  extend_vocabulary(model.mutable_vocab(), catalog, map);
  model.sync_vocabulary(derive_seed(seed, "vocab"));
}

TrainHistory train_rec(SequenceModel& model, const Catalog& catalog, std::span<const Example> examples,
                       const IdentifierMap& map, const TrainOptions& options,
                       std::span<const Example> valid) {
  prepare_model(model, catalog, map, options.seed);
  const std::uint64_t stream = derive_seed(options.seed, "rec.templates");
  const auto provider = [&](std::size_t epoch) {
    Rng rng(derive_seed(stream, static_cast<std::uint64_t>(epoch)));
    return rec_pairs(model.vocab(), examples, map, rng);
  };
  if (valid.empty()) return train(model, provider, options);
  Rng rng(derive_seed(options.seed, "rec.valid"));
  const auto held_out = rec_pairs(model.vocab(), valid, map, rng);
  TrainOptions selecting = options;
  selecting.validate = [&](const SequenceModel& m) { return mean_loss(m, held_out, options.exec); };
  return train(model, provider, selecting);
}

AlignResult align_finetune(const SequenceModel& model, const Catalog& catalog, const IdentifierMap& map,
                           const TrainOptions& options) {
  AlignResult out{model, {}};
  prepare_model(out.model, catalog, map, options.seed);
  out.history = train(out.model, alignment_pairs(out.model.vocab(), catalog, map), options);
  return out;
}

std::vector<Candidate> generate_candidates(const SequenceModel& model, const Item& item, const LevelGrammar& grammar,
                                           std::size_t k, std::size_t beam_width) {
  if (k == 0) throw ArgumentError("candidate count must be >= 1");
  const auto& vocab = model.vocab();
  const auto prompt = build_item2id_prompt(vocab, item, {});
  auto hyps = beam_search(model, prompt.instruction, grammar, std::max(k, beam_width));
  if (hyps.size() > k) hyps.resize(k);
  std::vector<Candidate> out;
  out.reserve(hyps.size());
  for (const auto& h : hyps) {
    Candidate c;
    c.perplexity = h.perplexity;
    for (std::size_t t = 0; t + 1 < h.tokens.size(); ++t) c.identifier.push_back(IdToken::parse(vocab.token(h.tokens[t])));
    out.push_back(std::move(c));
  }
  return out;
}

Assignment assign_diverse(const std::map<ItemId, std::vector<ItemIdentifier>>& candidates,
                          std::span<const ItemId> order) {
  if (order.size() != candidates.size()) throw ArgumentError("assignment order must list every item exactly once");
  Assignment out;
  std::set<ItemIdentifier> taken;
  for (ItemId item : order) {
    const auto it = candidates.find(item);
    if (it == candidates.end()) throw ArgumentError("assignment order names item " + std::to_string(item) + " without candidates");
    if (out.map.entries.count(item)) throw ArgumentError("assignment order repeats item " + std::to_string(item));
    const auto& list = it->second;
    if (list.empty()) throw ArgumentError("item " + std::to_string(item) + " has no candidates");
    std::size_t pick = list.size();
    for (std::size_t r = 0; r < list.size(); ++r)
      if (!taken.count(list[r])) {
        pick = r;
        break;
      }
    if (pick == list.size()) {
      out.unresolved.insert(item);
      pick = 0;
    }
    out.map.entries[item] = list[pick];
    out.rank[item] = static_cast<int>(pick) + 1;
    taken.insert(list[pick]);
  }
  return out;
}

IdentifierMap assign_greedy(const std::map<ItemId, std::vector<ItemIdentifier>>& candidates) {
  IdentifierMap out;
  for (const auto& [item, list] : candidates) {
    if (list.empty()) throw ArgumentError("item " + std::to_string(item) + " has no candidates");
    out.entries[item] = list.front();
  }
  return out;
}

IdentifierMap collision_avoidance(const IdentifierMap& map) {
  IdentifierMap out = map;
  for (const auto& group : collision_groups(map)) {
    for (std::size_t j = 1; j < group.size(); ++j) {
      auto& ident = out.entries[group[j]];
      if (ident.size() != map.base_length)
        throw IntegrityError("colliding identifier of item " + std::to_string(group[j]) + " is not of base length");
      ident.push_back({static_cast<int>(map.base_length), static_cast<int>(j)});
    }
  }
  return out;
}

double adjustment_ratio(const IdentifierMap& before, const IdentifierMap& after) {
  if (before.size() != after.size()) throw ArgumentError("adjustment ratio: maps cover different catalogs");
  if (before.size() == 0) return 0.0;
  std::size_t changed = 0;
  for (const auto& [item, ident] : before.entries) {
    const auto it = after.entries.find(item);
    if (it == after.entries.end()) throw ArgumentError("adjustment ratio: item " + std::to_string(item) + " missing");
    if (it->second != ident) ++changed;
  }
  return static_cast<double>(changed) / static_cast<double>(before.size());
}

double collision_rate(const IdentifierMap& map) {
  if (map.size() == 0) return 0.0;
  std::size_t n = 0;
  for (const auto& g : collision_groups(map)) n += g.size();
  return static_cast<double>(n) / static_cast<double>(map.size());
}

void write_iteration_report(const std::filesystem::path& path, const IterationReport& r,
                            const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << std::setprecision(17);
  out << "config_hash=" << config_hash << '\n';
  out << "iteration=" << r.iteration << '\n';
  out << "items=" << r.candidates.size() << '\n';
  out << "unresolved=" << r.unresolved << '\n';
  out << "unresolved_rate=" << (r.candidates.empty() ? 0.0 : static_cast<double>(r.unresolved) / static_cast<double>(r.candidates.size())) << '\n';
  out << "greedy_collision_rate=" << r.greedy_collision_rate << '\n';
  out << "pre_ca_collision_rate=" << r.pre_ca_collision_rate << '\n';
  out << "pre_ca_collisions=" << r.pre_ca_collisions << '\n';
  out << "post_ca_collisions=" << r.post_ca_collisions << '\n';
  out << "disambiguated=" << r.disambiguated << '\n';
  out << "adjustment_ratio=" << r.adjustment_ratio << '\n';
  std::map<int, std::size_t> ranks;
  for (const auto& [item, rank] : r.rank) ++ranks[rank];
  for (const auto& [rank, count] : ranks) out << "rank_used." << rank << '=' << count << '\n';
  for (std::size_t e = 0; e < r.align_loss.size(); ++e) out << "align_loss." << e + 1 << '=' << r.align_loss[e] << '\n';
  for (std::size_t e = 0; e < r.align_item2id_loss.size(); ++e)
    out << "align_item2id_loss." << e + 1 << '=' << r.align_item2id_loss[e] << '\n';
  for (std::size_t e = 0; e < r.rec_loss.size(); ++e) out << "rec_loss." << e + 1 << '=' << r.rec_loss[e] << '\n';
  for (std::size_t e = 0; e < r.rec_valid_loss.size(); ++e)
    out << "rec_valid_loss." << e + 1 << '=' << r.rec_valid_loss[e] << '\n';
  out << "rec_best_epoch=" << r.rec_best_epoch << '\n';
}

void write_candidates(const std::filesystem::path& path, const IterationReport& r) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << std::setprecision(17);
  for (const auto& [item, list] : r.candidates) {
    const auto used = r.rank.find(item);
    for (std::size_t i = 0; i < list.size(); ++i)
      out << item << '\t' << i + 1 << '\t' << to_string(list[i].identifier) << '\t' << list[i].perplexity << '\t'
          << (used != r.rank.end() && used->second == static_cast<int>(i) + 1 ? "*" : "") << '\n';
  }
}

namespace {

TrainOptions with_seed(TrainOptions options, std::uint64_t seed) {
  options.seed = seed;
  return options;
}

}  // namespace

RefinementState run_refinement(SequenceModel model, IdentifierMap map, const Catalog& catalog,
                               std::span<const Example> train, const RefineConfig& config,
                               std::vector<IterationReport>* reports, const IterationObserver& observer) {
  map.check_total(catalog);
  if (!map.injective()) throw IntegrityError("refinement needs an injective starting map");
  if (config.first_iteration == 0) throw ArgumentError("iterations are numbered from 1");
  const std::size_t k = config.candidates;
  for (std::size_t iter = config.first_iteration; iter < config.first_iteration + config.iterations; ++iter) {
    try {
      IterationReport report;
      report.iteration = iter;
      const auto align = align_finetune(
          model, catalog, map, with_seed(config.align, derive_seed(derive_seed(config.seed, "align"), iter)));
      report.align_loss = align.history.epoch_loss;
      for (const auto& t : align.history.task_loss) report.align_item2id_loss.push_back(t[1]);

      const auto grammar = LevelGrammar::from_map(map, align.model.vocab());
      const auto& items = catalog.items();
      std::vector<std::vector<Candidate>> found(items.size());
      parallel_for(config.exec, items.size(), [&](std::size_t i) {
        found[i] = generate_candidates(align.model, items[i], grammar, k, config.beam_width);
      });
      std::map<ItemId, std::vector<ItemIdentifier>> lists;
      std::vector<std::pair<double, ItemId>> by_confidence;
      for (std::size_t i = 0; i < items.size(); ++i) {
        if (found[i].empty()) throw Error("no well-formed candidate for item " + std::to_string(items[i].id));
        auto& list = lists[items[i].id];
        for (const auto& c : found[i]) list.push_back(c.identifier);
        by_confidence.emplace_back(found[i].front().perplexity, items[i].id);
        report.candidates[items[i].id] = std::move(found[i]);
      }
      if (config.order == AssignOrder::kPerplexity) {
        std::sort(by_confidence.begin(), by_confidence.end());
        for (const auto& [ppl, id] : by_confidence) report.order.push_back(id);
      } else {
        for (const auto& item : items) report.order.push_back(item.id);
      }

      auto assigned = assign_diverse(lists, report.order);
      assigned.map.base_length = map.base_length;
      report.rank = assigned.rank;
      report.unresolved = assigned.unresolved.size();
      report.greedy_collision_rate = collision_rate(assign_greedy(lists));
      report.pre_ca_collision_rate = collision_rate(assigned.map);
      for (const auto& g : collision_groups(assigned.map)) report.pre_ca_collisions += g.size();

      IdentifierMap next = collision_avoidance(assigned.map);
      next.version = map.version + 1;
      next.source = "refined-" + std::to_string(next.version);
      next.base_length = map.base_length;
      for (const auto& [item, ident] : next.entries)
        if (ident.size() > next.base_length) ++report.disambiguated;
      for (const auto& g : collision_groups(next)) report.post_ca_collisions += g.size();
      if (report.post_ca_collisions != 0) throw IntegrityError("collisions survived collision avoidance");
      report.adjustment_ratio = adjustment_ratio(map, next);

      const auto rec = train_rec(model, catalog, train, next,
                                 with_seed(config.rec, derive_seed(derive_seed(config.seed, "rec"), iter)),
                                 config.valid);
      report.rec_valid_loss = rec.valid_loss;
      report.rec_best_epoch = rec.best_epoch;
      report.rec_loss = rec.epoch_loss;
      map = std::move(next);
      if (observer) observer(report, model, map);
      if (reports) reports->push_back(std::move(report));
    } catch (const Error& e) {
      throw Error("refinement iteration " + std::to_string(iter) + ": " + e.what());
    }
  }
  return {std::move(model), std::move(map)};
}

RefinementState train_and_refine(SequenceModel model, IdentifierMap map, const Catalog& catalog,
                                 std::span<const Example> train, std::size_t warmup_epochs,
                                 const RefineConfig& config, std::vector<IterationReport>* reports) {
  TrainOptions warm = with_seed(config.rec, derive_seed(config.seed, "warmup"));
  warm.epochs = warmup_epochs;
  train_rec(model, catalog, train, map, warm, config.valid);
  return run_refinement(std::move(model), std::move(map), catalog, train, config, reports);
}

}  // namespace itemtok
