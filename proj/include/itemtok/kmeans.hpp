#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace itemtok {

using Point = std::vector<double>;

struct KMeansResult {
  std::vector<Point> centroids;
  std::vector<std::size_t> labels;
  double inertia = 0.0;  // sum of squared distances to assigned centroids
};

/// Seeded k-means++ followed by Lloyd iterations; the best of `restarts`
/// runs (lowest inertia, earliest on ties) is returned. Assignment ties go to
/// the lowest centroid index; an emptied cluster keeps its previous centroid.
KMeansResult kmeans(std::span<const Point> points, std::size_t k, std::uint64_t seed,
                    std::size_t restarts = 4, std::size_t max_iter = 100);

/// Size-constrained variant: every cluster receives floor(n/k) or ceil(n/k)
/// points. Assignment is greedy over (point, centroid) pairs by distance.
KMeansResult balanced_kmeans(std::span<const Point> points, std::size_t k, std::uint64_t seed,
                             std::size_t max_iter = 50);

}  // namespace itemtok
