#include "itemtok/kmeans.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <tuple>

#include "itemtok/error.hpp"
#include "itemtok/kernels.hpp"
#include "itemtok/rng.hpp"

namespace itemtok {
namespace {

std::size_t nearest(const Point& p, const std::vector<Point>& centroids, double* dist = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = kernels::squared_distance(p, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist) *dist = best_d;
  return best;
}

std::vector<Point> seed_plus_plus(std::span<const Point> points, std::size_t k, Rng& rng) {
  std::vector<Point> centroids;
  centroids.push_back(points[rng.index(points.size())]);
  std::vector<double> d2(points.size());
  while (centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      nearest(points[i], centroids, &d2[i]);
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = rng.index(points.size());
    } else {
      double u = rng.uniform() * total;
      pick = points.size() - 1;
      for (std::size_t i = 0; i < points.size(); ++i) {
        if (u < d2[i]) {
          pick = i;
          break;
        }
        u -= d2[i];
      }
    }
    centroids.push_back(points[pick]);
  }
  return centroids;
}

void update_centroids(std::span<const Point> points, const std::vector<std::size_t>& labels,
                      std::vector<Point>& centroids) {
  const std::size_t dim = points[0].size();
  std::vector<Point> sums(centroids.size(), Point(dim, 0.0));
  std::vector<std::size_t> counts(centroids.size(), 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t d = 0; d < dim; ++d) sums[labels[i]][d] += points[i][d];
    ++counts[labels[i]];
  }
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t d = 0; d < dim; ++d) centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
  }
}

double inertia_of(std::span<const Point> points, const std::vector<std::size_t>& labels,
                  const std::vector<Point>& centroids) {
  double s = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) s += kernels::squared_distance(points[i], centroids[labels[i]]);
  return s;
}

void validate(std::span<const Point> points, std::size_t k) {
  if (k == 0) throw ArgumentError("k-means needs k >= 1");
  if (points.size() < k)
    throw ArgumentError("k-means with k=" + std::to_string(k) + " on " + std::to_string(points.size()) +
                        " points");
  for (const auto& p : points)
    if (p.size() != points[0].size()) throw ArgumentError("k-means points have mixed dimensions");
}

}  // namespace

KMeansResult kmeans(std::span<const Point> points, std::size_t k, std::uint64_t seed,
                    std::size_t restarts, std::size_t max_iter) {
  validate(points, k);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    KMeansResult run;
    run.centroids = seed_plus_plus(points, k, rng);
    run.labels.assign(points.size(), k);
    for (std::size_t it = 0; it < max_iter; ++it) {
      bool changed = false;
      for (std::size_t i = 0; i < points.size(); ++i) {
        const std::size_t c = nearest(points[i], run.centroids);
        if (c != run.labels[i]) {
          run.labels[i] = c;
          changed = true;
        }
      }
      if (!changed) break;
      update_centroids(points, run.labels, run.centroids);
    }
    run.inertia = inertia_of(points, run.labels, run.centroids);
    if (run.inertia < best.inertia) best = std::move(run);
  }
  return best;
}

KMeansResult balanced_kmeans(std::span<const Point> points, std::size_t k, std::uint64_t seed,
                             std::size_t max_iter) {
  validate(points, k);
  const std::size_t n = points.size();
  KMeansResult res = kmeans(points, k, seed, 1, 10);
  const std::size_t base = n / k;
  const std::size_t extra = n % k;
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  pairs.reserve(n * k);
  for (std::size_t it = 0; it < max_iter; ++it) {
    pairs.clear();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < k; ++c)
        pairs.emplace_back(kernels::squared_distance(points[i], res.centroids[c]), i, c);
    std::sort(pairs.begin(), pairs.end());
    std::vector<std::size_t> labels(n, k);
    std::vector<std::size_t> fill(k, 0);
    std::size_t big_clusters = 0;  // clusters already holding base + 1
    for (const auto& [d, i, c] : pairs) {
      if (labels[i] != k) continue;
      const bool open = fill[c] < base || (fill[c] == base && big_clusters < extra);
      if (!open) continue;
      labels[i] = c;
      if (++fill[c] == base + 1) ++big_clusters;
    }
    const bool stable = labels == res.labels;
    res.labels = std::move(labels);
    update_centroids(points, res.labels, res.centroids);
    if (stable) break;
  }
  res.inertia = inertia_of(points, res.labels, res.centroids);
  return res;
}

}  // namespace itemtok
