#include "itemtok/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "itemtok/error.hpp"
#include "itemtok/kernels.hpp"
#include "itemtok/refine.hpp"

namespace itemtok {

namespace {

/// 1-based rank of the truth within the first k predictions, 0 if absent.
std::size_t hit_rank(const UserPrediction& p, std::size_t k) {
  const std::size_t n = std::min(k, p.ranked.size());
  for (std::size_t r = 0; r < n; ++r)
    if (p.ranked[r].item == p.truth) return r + 1;
  return 0;
}

void require_k(std::size_t k) {
  if (k == 0) throw ArgumentError("cutoff k must be >= 1");
}

}  // namespace

double recall_at_k(std::span<const UserPrediction> predictions, std::size_t k) {
  require_k(k);
  if (predictions.empty()) return 0.0;
  double hits = 0.0;
  for (const auto& p : predictions) hits += hit_rank(p, k) ? 1.0 : 0.0;
  return hits / static_cast<double>(predictions.size());
}

double ndcg_at_k(std::span<const UserPrediction> predictions, std::size_t k) {
  require_k(k);
  if (predictions.empty()) return 0.0;
  double total = 0.0;
  for (const auto& p : predictions)
    if (const std::size_t r = hit_rank(p, k)) total += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  return total / static_cast<double>(predictions.size());
}

double coverage_at_k(std::span<const UserPrediction> predictions, const Catalog& catalog, std::size_t k) {
  require_k(k);
  if (catalog.size() == 0) throw ArgumentError("coverage over an empty catalog");
  std::set<ItemId> seen;
  for (const auto& p : predictions)
    for (std::size_t r = 0; r < std::min(k, p.ranked.size()); ++r) {
      if (!catalog.contains(p.ranked[r].item))
        throw IntegrityError("prediction names unknown item " + std::to_string(p.ranked[r].item));
      seen.insert(p.ranked[r].item);
    }
  return static_cast<double>(seen.size()) / static_cast<double>(catalog.size());
}

double coverage_gt(std::span<const UserPrediction> predictions, const Catalog& catalog) {
  if (catalog.size() == 0) throw ArgumentError("coverage over an empty catalog");
  std::set<ItemId> seen;
  for (const auto& p : predictions) seen.insert(p.truth);
  return static_cast<double>(seen.size()) / static_cast<double>(catalog.size());
}

std::size_t token_overlap(const ItemIdentifier& a, const ItemIdentifier& b) {
  std::vector<IdToken> x(a), y(b);
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  std::vector<IdToken> common;
  std::set_intersection(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(common));
  return common.size();
}

double semantic_identifier_similarity(const IdentifierMap& map, const std::map<ItemId, SemanticEmbedding>& embeddings,
                                      Exec exec) {
  std::vector<const ItemIdentifier*> ids;
  std::vector<const SemanticEmbedding*> vecs;
  std::vector<double> norms;
  for (const auto& [item, ident] : map.entries) {
    const auto it = embeddings.find(item);
    if (it == embeddings.end()) throw IntegrityError("no embedding for item " + std::to_string(item));
    ids.push_back(&ident);
    vecs.push_back(&it->second);
    norms.push_back(std::sqrt(kernels::dot(it->second, it->second)));
    if (norms.back() == 0.0) throw NumericError("zero-norm embedding for item " + std::to_string(item));
  }
  const std::size_t n = ids.size();
  std::vector<double> num(n, 0.0), den(n, 0.0);
  parallel_for(exec, n, [&](std::size_t i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      if (vecs[i]->size() != vecs[j]->size()) throw ArgumentError("embedding dimensions differ");
      const double s = std::clamp(kernels::dot(*vecs[i], *vecs[j]) / (norms[i] * norms[j]), 0.0, 1.0);
      num[i] += s * static_cast<double>(token_overlap(*ids[i], *ids[j]));
      den[i] += s;
    }
  });
  double total_num = 0.0, total_den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total_num += num[i];
    total_den += den[i];
  }
  if (total_den == 0.0) throw NumericError("semantic identifier similarity: all pair weights are zero");
  return total_num / total_den;
}

double MetricReport::at(const std::string& key) const {
  const auto it = values.find(key);
  if (it == values.end()) throw ArgumentError("metric report has no '" + key + "'");
  return it->second;
}

MetricReport evaluate(const EvalInputs& in, Exec exec) {
  if (!in.catalog) throw ArgumentError("evaluation needs a catalog");
  MetricReport r;
  r.stamps["cases"] = std::to_string(in.predictions.size());
  for (std::size_t k : in.ks) {
    r.values["recall@" + std::to_string(k)] = recall_at_k(in.predictions, k);
    r.values["ndcg@" + std::to_string(k)] = ndcg_at_k(in.predictions, k);
    r.values["coverage@" + std::to_string(k)] = coverage_at_k(in.predictions, *in.catalog, k);
  }
  r.values["coverage@gt"] = coverage_gt(in.predictions, *in.catalog);
  if (in.map) {
    r.stamps["map_version"] = std::to_string(in.map->version);
    r.stamps["map_source"] = in.map->source;
    r.values["collision_rate"] = collision_rate(*in.map);
    if (in.embeddings) r.values["semantic_identifier_similarity"] = semantic_identifier_similarity(*in.map, *in.embeddings, exec);
    if (in.previous_map) r.values["adjustment_ratio"] = adjustment_ratio(*in.previous_map, *in.map);
  }
  return r;
}

void write_report(std::ostream& out, const MetricReport& report) {
  for (const auto& [k, v] : report.stamps) out << "# " << k << '=' << v << '\n';
  out << std::setprecision(17);
  for (const auto& [k, v] : report.values) out << k << '=' << v << '\n';
}

MetricReport read_report(std::istream& in, const std::string& origin) {
  MetricReport r;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const bool stamp = line.rfind("# ", 0) == 0;
    const std::string body = stamp ? line.substr(2) : line;
    const auto eq = body.find('=');
    if (eq == std::string::npos || eq == 0) throw ParseError(origin, lineno, "expected key=value");
    const std::string key = body.substr(0, eq), value = body.substr(eq + 1);
    if (stamp) {
      r.stamps[key] = value;
      continue;
    }
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != value.size() || value.empty()) throw ParseError(origin, lineno, "not a number: '" + value + "'");
    r.values[key] = v;
  }
  return r;
}

void write_report(const std::filesystem::path& path, const MetricReport& report) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  write_report(out, report);
}

MetricReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open " + path.string());
  return read_report(in, path.string());
}

void render_table(std::ostream& out, std::span<const std::pair<std::string, MetricReport>> runs) {
  std::vector<std::string> columns;
  for (const auto& [name, rep] : runs)
    for (const auto& [key, v] : rep.values)
      if (std::find(columns.begin(), columns.end(), key) == columns.end()) columns.push_back(key);
  const auto rank = [](const std::string& key) {
    static const char* order[] = {"recall@", "ndcg@", "coverage@", "semantic", "collision", "adjustment"};
    for (std::size_t i = 0; i < std::size(order); ++i)
      if (key.rfind(order[i], 0) == 0) return i;
    return std::size(order);
  };
  std::stable_sort(columns.begin(), columns.end(), [&](const std::string& a, const std::string& b) {
    if (rank(a) != rank(b)) return rank(a) < rank(b);
    const auto ka = a.substr(a.find('@') + 1), kb = b.substr(b.find('@') + 1);
    if (ka.size() != kb.size()) return ka.size() < kb.size();
    return ka < kb;
  });
  std::size_t name_w = 3;
  for (const auto& [name, rep] : runs) name_w = std::max(name_w, name.size());
  std::vector<std::size_t> width;
  for (const auto& c : columns) width.push_back(std::max<std::size_t>(c.size(), 8));
  out << std::left << std::setw(static_cast<int>(name_w)) << "run";
  for (std::size_t c = 0; c < columns.size(); ++c) out << "  " << std::right << std::setw(static_cast<int>(width[c])) << columns[c];
  out << '\n';
  for (const auto& [name, rep] : runs) {
    out << std::left << std::setw(static_cast<int>(name_w)) << name;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      std::ostringstream cell;
      const auto it = rep.values.find(columns[c]);
      if (it == rep.values.end())
        cell << "-";
      else
        cell << std::fixed << std::setprecision(4) << it->second;
      out << "  " << std::right << std::setw(static_cast<int>(width[c])) << cell.str();
    }
    out << '\n';
  }
}

}  // namespace itemtok
