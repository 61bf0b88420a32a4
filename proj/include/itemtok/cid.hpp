#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "itemtok/corpus.hpp"
#include "itemtok/identifier.hpp"

namespace itemtok {

/// Dense symmetric co-occurrence counts indexed by catalog position.
struct CooccurrenceMatrix {
  std::size_t n = 0;
  std::vector<std::int64_t> counts;  // n × n, zero diagonal

  std::int64_t at(std::size_t i, std::size_t j) const { return counts[i * n + j]; }
  std::vector<double> row(std::size_t i) const;
};

/// Each user sequence adds 1 to every unordered pair of distinct items it
/// contains; repeated items within one sequence are counted once.
CooccurrenceMatrix build_cooccurrence(const Catalog& catalog,
                                      std::span<const InteractionSequence> sequences);

struct SpectralResult {
  std::vector<int> labels;        // in [0, branching)
  std::size_t zero_degree = 0;    // items sent to the reserved label branching-1
};

/// Normalized spectral clustering of a dense symmetric weight matrix (m × m,
/// row-major): eigenvectors of the K smallest eigenvalues of
/// I − D^{-1/2} W D^{-1/2}, rows normalized, then seeded k-means. Items of
/// zero degree get the reserved label branching−1 and the rest share the
/// remaining labels. Labels are renumbered by first appearance.
SpectralResult spectral_cluster(std::span<const double> weights, std::size_t m, std::size_t branching,
                                std::uint64_t seed);

struct ClusterNode {
  int label = -1;                   // child label under the parent; -1 at the root
  std::vector<ItemId> members;      // ascending
  std::vector<ClusterNode> children;

  bool leaf() const { return children.empty(); }
};

struct CidConfig {
  std::size_t branching = 8;
  std::size_t threshold = 8;
  std::size_t depth_cap = 8;
  std::uint64_t seed = 0;
};

struct CidResult {
  ClusterNode root;
  IdentifierMap map;
  std::size_t depth = 0;            // deepest split level
  std::size_t zero_degree = 0;      // reserved-label assignments over all splits
  std::size_t fallback_splits = 0;  // splits that made no progress and were chunked by id
};

/// Recursive spectral splitting until every leaf holds at most `threshold`
/// items. An item's identifier is its path of child labels, padded with
/// label 0 to the deepest level, followed by its rank inside the leaf.
CidResult hierarchical_tokenize(const Catalog& catalog, const CooccurrenceMatrix& cooc,
                                const CidConfig& config);

void dump_tree(std::ostream& out, const ClusterNode& root);

}  // namespace itemtok
