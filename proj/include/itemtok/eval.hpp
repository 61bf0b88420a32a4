#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "itemtok/corpus.hpp"
#include "itemtok/decode.hpp"
#include "itemtok/embed.hpp"
#include "itemtok/identifier.hpp"
#include "itemtok/parallel.hpp"

namespace itemtok {

/// Mean over cases of 1[truth in the first k predictions].
double recall_at_k(std::span<const UserPrediction> predictions, std::size_t k);
/// Mean over cases of 1/log2(rank+1) for a hit within the first k.
double ndcg_at_k(std::span<const UserPrediction> predictions, std::size_t k);
/// Distinct items among all top-k lists over the catalog size.
double coverage_at_k(std::span<const UserPrediction> predictions, const Catalog& catalog, std::size_t k);
/// Distinct ground-truth items over the catalog size.
double coverage_gt(std::span<const UserPrediction> predictions, const Catalog& catalog);

/// Size of the multiset intersection of two token lists.
std::size_t token_overlap(const ItemIdentifier& a, const ItemIdentifier& b);

/// Σ S·O / Σ S over ordered pairs i ≠ j, where S is the cosine of the item
/// embeddings clamped to [0, 1] and O the token overlap. Throws NumericError
/// when every weight is zero.
double semantic_identifier_similarity(const IdentifierMap& map, const std::map<ItemId, SemanticEmbedding>& embeddings,
                                      Exec exec = default_exec());

struct MetricReport {
  std::map<std::string, double> values;  // recall@5, ndcg@10, ...
  std::map<std::string, std::string> stamps;  // config_hash, map_version, ...

  double at(const std::string& key) const;
  bool operator==(const MetricReport&) const = default;
};

struct EvalInputs {
  std::span<const UserPrediction> predictions;
  const Catalog* catalog = nullptr;
  const IdentifierMap* map = nullptr;
  const std::map<ItemId, SemanticEmbedding>* embeddings = nullptr;
  const IdentifierMap* previous_map = nullptr;  // for adjustment_ratio
  std::vector<std::size_t> ks{5, 10};
};

MetricReport evaluate(const EvalInputs& inputs, Exec exec = default_exec());

/// `key=value` lines, stamps first, values at full precision.
void write_report(std::ostream& out, const MetricReport& report);
MetricReport read_report(std::istream& in, const std::string& origin = "<report>");
void write_report(const std::filesystem::path& path, const MetricReport& report);
MetricReport read_report(const std::filesystem::path& path);

/// One row per run, one column per metric.
void render_table(std::ostream& out, std::span<const std::pair<std::string, MetricReport>> runs);

}  // namespace itemtok
