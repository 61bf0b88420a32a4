#include "itemtok/embed.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "itemtok/error.hpp"
#include "itemtok/kernels.hpp"
#include "itemtok/rng.hpp"

namespace itemtok {
namespace {

std::uint64_t bucket_of(const std::string& word) { return fnv1a(word) % kHashBuckets; }

void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n == 0.0) return;
  for (double& x : v) x /= n;
}

}  // namespace

SemanticEmbedding embed_text(std::span<const std::string> words, std::size_t dim,
                             std::uint64_t seed) {
  if (words.empty()) throw ArgumentError("embed_text: empty word list");
  if (dim == 0) throw ArgumentError("embed_text: dim must be positive");
  std::vector<std::string> sorted(words.begin(), words.end());
  std::sort(sorted.begin(), sorted.end());
  SemanticEmbedding out(dim, 0.0);
  for (const auto& w : sorted) {
    Rng rng(derive_seed(seed, bucket_of(w)));
    for (std::size_t k = 0; k < dim; ++k) out[k] += rng.normal();
  }
  normalize(out);
  return out;
}

std::vector<SemanticEmbedding> embed_catalog(const Catalog& catalog, std::size_t dim,
                                             std::uint64_t seed) {
  std::vector<SemanticEmbedding> out;
  out.reserve(catalog.size());
  for (const auto& item : catalog.items()) out.push_back(embed_text(item.words, dim, seed));
  return out;
}

std::vector<std::pair<std::string, std::string>> find_hash_collisions(
    std::span<const std::string> vocabulary) {
  std::unordered_map<std::uint64_t, std::string> first;
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& w : vocabulary) {
    const auto [it, inserted] = first.emplace(bucket_of(w), w);
    if (!inserted && it->second != w) out.emplace_back(it->second, w);
  }
  return out;
}

std::vector<double> cf_projection_column(std::size_t j, std::size_t dim, std::uint64_t seed) {
  Rng rng(derive_seed(derive_seed(seed, "cf.projection"), j));
  std::vector<double> col(dim);
  for (double& v : col) v = rng.normal();
  return col;
}

CfEmbedding cf_embed(std::span<const double> row, std::size_t dim, std::uint64_t seed,
                     std::size_t truncate) {
  CfEmbedding out{SemanticEmbedding(dim, 0.0), false};
  std::vector<std::size_t> order(row.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  std::vector<std::pair<std::size_t, double>> kept;
  for (std::size_t r = 0; r < order.size() && kept.size() < truncate; ++r)
    if (row[order[r]] != 0.0) kept.emplace_back(order[r], row[order[r]]);
  if (kept.empty()) {
    out.cold = true;
    return out;
  }
  std::sort(kept.begin(), kept.end());
  double norm = 0.0;
  for (const auto& [j, v] : kept) norm += v * v;
  norm = std::sqrt(norm);
  for (const auto& [j, v] : kept) {
    const auto col = cf_projection_column(j, dim, seed);
    for (std::size_t k = 0; k < dim; ++k) out.values[k] += col[k] * (v / norm);
  }
  normalize(out.values);
  return out;
}

void write_embeddings(const std::filesystem::path& path, std::span<const ItemId> ids,
                      std::span<const SemanticEmbedding> vectors) {
  if (ids.size() != vectors.size()) throw ArgumentError("write_embeddings: size mismatch");
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out.precision(17);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i] << '\t';
    for (std::size_t k = 0; k < vectors[i].size(); ++k) out << (k ? " " : "") << vectors[i][k];
    out << '\n';
  }
}

std::map<ItemId, SemanticEmbedding> read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open " + path.string());
  std::map<ItemId, SemanticEmbedding> out;
  std::string line;
  std::size_t lineno = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(path.string(), lineno, "missing tab");
    ItemId id = 0;
    try {
      id = std::stoll(line.substr(0, tab));
    } catch (const std::exception&) {
      throw ParseError(path.string(), lineno, "bad item id");
    }
    std::istringstream vs(line.substr(tab + 1));
    SemanticEmbedding v;
    for (double x; vs >> x;) v.push_back(x);
    if (!vs.eof() || v.empty()) throw ParseError(path.string(), lineno, "bad vector");
    if (dim == 0) dim = v.size();
    if (v.size() != dim) throw ParseError(path.string(), lineno, "dimension mismatch");
    if (!out.emplace(id, std::move(v)).second)
      throw ParseError(path.string(), lineno, "duplicate item id");
  }
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = std::sqrt(kernels::dot(a, a));
  const double nb = std::sqrt(kernels::dot(b, b));
  if (na == 0.0 || nb == 0.0) throw ArgumentError("cosine: zero-norm vector");
  return kernels::dot(a, b) / (na * nb);
}

}  // namespace itemtok
