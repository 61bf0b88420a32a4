#include "itemtok/cid.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <set>

#include <Eigen/Dense>

#include "itemtok/error.hpp"
#include "itemtok/kmeans.hpp"
#include "itemtok/rng.hpp"

namespace itemtok {

std::vector<double> CooccurrenceMatrix::row(std::size_t i) const {
  std::vector<double> r(n);
  for (std::size_t j = 0; j < n; ++j) r[j] = static_cast<double>(at(i, j));
  return r;
}

CooccurrenceMatrix build_cooccurrence(const Catalog& catalog,
                                      std::span<const InteractionSequence> sequences) {
  CooccurrenceMatrix m;
  m.n = catalog.size();
  m.counts.assign(m.n * m.n, 0);
  for (const auto& seq : sequences) {
    std::set<std::size_t> distinct;
    for (ItemId id : seq.items) distinct.insert(catalog.index_of(id));
    const std::vector<std::size_t> idx(distinct.begin(), distinct.end());
    for (std::size_t a = 0; a < idx.size(); ++a)
      for (std::size_t b = a + 1; b < idx.size(); ++b) {
        ++m.counts[idx[a] * m.n + idx[b]];
        ++m.counts[idx[b] * m.n + idx[a]];
      }
  }
  return m;
}

namespace {

std::vector<int> renumber(const std::vector<int>& labels) {
  std::map<int, int> remap;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto [it, fresh] = remap.emplace(labels[i], static_cast<int>(remap.size()));
    out[i] = it->second;
  }
  return out;
}

}  // namespace

SpectralResult spectral_cluster(std::span<const double> weights, std::size_t m, std::size_t branching,
                                std::uint64_t seed) {
  if (branching < 2) throw ArgumentError("spectral clustering needs branching >= 2");
  if (weights.size() != m * m) throw ArgumentError("spectral clustering: weight matrix is not m x m");
  SpectralResult res;
  res.labels.assign(m, static_cast<int>(branching) - 1);
  std::vector<std::size_t> active;
  std::vector<double> degree(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j)
      if (i != j) degree[i] += weights[i * m + j];
    if (degree[i] > 0.0) active.push_back(i);
  }
  res.zero_degree = m - active.size();
  if (active.empty()) return res;
  const std::size_t k = res.zero_degree > 0 ? branching - 1 : branching;
  const std::size_t a = active.size();
  std::vector<int> local(a);
  if (a <= k) {
    for (std::size_t i = 0; i < a; ++i) local[i] = static_cast<int>(i);
  } else {
    Eigen::MatrixXd lap(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a));
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < a; ++j) {
        const double w = i == j ? 0.0 : weights[active[i] * m + active[j]];
        const double norm = w / std::sqrt(degree[active[i]] * degree[active[j]]);
        lap(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (i == j ? 1.0 : 0.0) - norm;
      }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap);
    if (solver.info() != Eigen::Success) throw NumericError("eigen decomposition of the Laplacian failed");
    const Eigen::MatrixXd& vecs = solver.eigenvectors();  // ascending eigenvalues
    std::vector<Point> rows(a, Point(k));
    for (std::size_t i = 0; i < a; ++i) {
      double norm2 = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double v = vecs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
        rows[i][c] = v;
        norm2 += v * v;
      }
      const double inv = norm2 > 0.0 ? 1.0 / std::sqrt(norm2) : 0.0;
      for (double& v : rows[i]) v *= inv;
    }
    // Eigenvector signs are arbitrary; pin each by its first non-negligible entry.
    for (std::size_t c = 0; c < k; ++c) {
      double sign = 1.0;
      for (std::size_t i = 0; i < a; ++i)
        if (std::abs(rows[i][c]) > 1e-9) {
          sign = rows[i][c] < 0 ? -1.0 : 1.0;
          break;
        }
      for (std::size_t i = 0; i < a; ++i) rows[i][c] *= sign;
    }
    const auto km = kmeans(rows, k, seed, 8);
    for (std::size_t i = 0; i < a; ++i) local[i] = static_cast<int>(km.labels[i]);
  }
  local = renumber(local);
  for (std::size_t i = 0; i < a; ++i) res.labels[active[i]] = local[i];
  return res;
}

namespace {

struct Builder {
  const Catalog& catalog;
  const CooccurrenceMatrix& cooc;
  const CidConfig& config;
  CidResult& result;

  void split(ClusterNode& node, std::size_t depth, std::uint64_t stream) {
    const std::size_t m = node.members.size();
    if (m <= config.threshold) return;
    if (depth >= config.depth_cap)
      throw Error("cluster of " + std::to_string(m) + " items still exceeds threshold " +
                  std::to_string(config.threshold) + " at depth cap " + std::to_string(config.depth_cap));
    std::vector<std::size_t> idx(m);
    for (std::size_t i = 0; i < m; ++i) idx[i] = catalog.index_of(node.members[i]);
    std::vector<double> w(m * m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) w[i * m + j] = static_cast<double>(cooc.at(idx[i], idx[j]));
    auto sc = spectral_cluster(w, m, config.branching, derive_seed(config.seed, stream));
    result.zero_degree += sc.zero_degree;
    std::vector<int> labels = std::move(sc.labels);
    if (std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels[0]; })) {
      const std::size_t chunk = (m + config.branching - 1) / config.branching;
      for (std::size_t i = 0; i < m; ++i) labels[i] = static_cast<int>(i / chunk);
      ++result.fallback_splits;
    }
    std::map<int, ClusterNode> children;
    for (std::size_t i = 0; i < m; ++i) {
      auto& child = children[labels[i]];
      child.label = labels[i];
      child.members.push_back(node.members[i]);
    }
    result.depth = std::max(result.depth, depth + 1);
    for (auto& [label, child] : children) {
      split(child, depth + 1, derive_seed(stream, static_cast<std::uint64_t>(label)));
      node.children.push_back(std::move(child));
    }
  }

  void assign(const ClusterNode& node, std::vector<int>& path) {
    if (node.leaf()) {
      for (std::size_t rank = 0; rank < node.members.size(); ++rank) {
        ItemIdentifier ident;
        for (std::size_t l = 0; l < result.depth; ++l)
          ident.push_back({static_cast<int>(l), l < path.size() ? path[l] : 0});
        ident.push_back({static_cast<int>(result.depth), static_cast<int>(rank)});
        result.map.entries[node.members[rank]] = std::move(ident);
      }
      return;
    }
    for (const auto& child : node.children) {
      path.push_back(child.label);
      assign(child, path);
      path.pop_back();
    }
  }
};

void dump_node(std::ostream& out, const ClusterNode& node, std::size_t indent) {
  out << std::string(indent * 2, ' ');
  if (node.label < 0)
    out << "root";
  else
    out << node.label;
  out << " (" << node.members.size() << ")";
  if (node.leaf()) {
    out << ":";
    for (ItemId id : node.members) out << ' ' << id;
  }
  out << '\n';
  for (const auto& c : node.children) dump_node(out, c, indent + 1);
}

}  // namespace

CidResult hierarchical_tokenize(const Catalog& catalog, const CooccurrenceMatrix& cooc, const CidConfig& config) {
  if (config.threshold < 1) throw ConfigError("cid threshold must be >= 1");
  if (config.branching < 2) throw ConfigError("cid branching must be >= 2");
  if (cooc.n != catalog.size()) throw ArgumentError("co-occurrence matrix does not match the catalog");
  CidResult result;
  for (const auto& item : catalog.items()) result.root.members.push_back(item.id);
  Builder b{catalog, cooc, config, result};
  b.split(result.root, 0, derive_seed(config.seed, "cid.root"));
  std::vector<int> path;
  b.assign(result.root, path);
  result.map.source = "cid";
  result.map.base_length = result.depth + 1;
  return result;
}

void dump_tree(std::ostream& out, const ClusterNode& root) { dump_node(out, root, 0); }

}  // namespace itemtok
