#include <doctest.h>

#include <cmath>
#include <numeric>

#include "itemtok/error.hpp"
#include "itemtok/kernels.hpp"
#include "itemtok/rqvae.hpp"

using namespace itemtok;

namespace {

CodebookStack random_books(std::size_t levels, std::size_t size, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  CodebookStack s{levels, size, dim, {}};
  for (std::size_t i = 0; i < levels * size * dim; ++i) s.values.push_back(rng.normal());
  return s;
}

RqvaeData make_data(std::size_t n, std::size_t dim, std::uint64_t seed, bool with_cf, std::size_t cf_dim = 0) {
  Rng rng(seed);
  RqvaeData data;
  for (std::size_t i = 0; i < n; ++i) {
    Point x(dim);
    for (auto& v : x) v = rng.normal();
    data.x.push_back(x);
    if (with_cf) {
      CfEmbedding h;
      h.values.resize(cf_dim);
      for (auto& v : h.values) v = rng.normal(0.5);
      h.cold = i % 7 == 3;
      if (h.cold) std::fill(h.values.begin(), h.values.end(), 0.0);
      data.cf.push_back(h);
    }
  }
  return data;
}

}  // namespace

TEST_CASE("quantize: codebook containing z gives zero residual") {
  CodebookStack s{1, 3, 2, {0.5, 0.5, 0.3, -0.2, 1.0, 1.0}};
  const std::vector<double> z{0.3, -0.2};
  const auto q = quantize(z, s);
  CHECK(q.codes == std::vector<int>{1});
  CHECK(q.residuals[1] == std::vector<double>{0.0, 0.0});
  CHECK(q.quantized == z);
}

TEST_CASE("quantize: two-level hand example") {
  CodebookStack s{2, 2, 2, {1, 0, 0, 1, -0.1, 0.1, 0, 0}};
  const std::vector<double> z{0.9, 0.1};
  CHECK(kernels::squared_distance(z, s.codeword(0, 0)) == doctest::Approx(0.02));
  CHECK(kernels::squared_distance(z, s.codeword(0, 1)) == doctest::Approx(1.62));
  const auto q = quantize(z, s);
  CHECK(q.codes == std::vector<int>{0, 0});
  CHECK(q.residuals[1][0] == doctest::Approx(-0.1));
  CHECK(q.residuals[1][1] == doctest::Approx(0.1));
  CHECK(q.residuals[2][0] == doctest::Approx(0.0));
  CHECK(q.residuals[2][1] == doctest::Approx(0.0));
  CHECK(q.quantized[0] == doctest::Approx(0.9));
  CHECK(q.quantized[1] == doctest::Approx(0.1));
}

TEST_CASE("quantize: ties go to the lowest index") {
  CodebookStack s{1, 2, 2, {1, 0, -1, 0}};
  CHECK(quantize(std::vector<double>{0, 3}, s).codes == std::vector<int>{0});
}

TEST_CASE("quantize: empty codebook is a configuration error") {
  CodebookStack s{1, 0, 2, {}};
  CHECK_THROWS_AS(quantize(std::vector<double>{0, 0}, s), ConfigError);
}

TEST_CASE("quantize matches exhaustive per-level search and the residual chain") {
  const auto books = random_books(3, 8, 8, 5);
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> z(8);
    for (auto& v : z) v = rng.normal(1.5);
    const auto q = quantize(z, books);
    std::vector<double> r = z;
    for (std::size_t l = 0; l < 3; ++l) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < 8; ++k)
        if (kernels::squared_distance(r, books.codeword(l, k)) < kernels::squared_distance(r, books.codeword(l, best)))
          best = k;
      CHECK(q.codes[l] == static_cast<int>(best));
      for (std::size_t i = 0; i < 8; ++i) r[i] -= books.codeword(l, best)[i];
      CHECK(q.residuals[l + 1] == r);
    }
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs((z[i] - q.quantized[i]) - q.residuals[3][i]) < 1e-12);
  }
}

TEST_CASE("reconstruction loss") {
  const std::vector<double> x{1, 0};
  CHECK(reconstruction_loss(x, x) == 0.0);
  CHECK(reconstruction_loss(x, std::vector<double>{0, 0}) == 1.0);
  Rng rng(2);
  std::vector<double> a(6), b(6);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  std::vector<double> diff(6);
  for (int i = 0; i < 6; ++i) diff[i] = a[i] - b[i];
  CHECK(reconstruction_loss(a, b) == doctest::Approx(kernels::dot(diff, diff)).epsilon(1e-14));
}

TEST_CASE("commitment loss") {
  const std::vector<std::vector<double>> r{{1, 0}};
  const std::vector<std::vector<double>> e{{0, 0}};
  CHECK(commitment_loss(r, e) == 2.0);
  CHECK(commitment_loss(r, r) == 0.0);
  // two levels: ‖(1,2)-(0,1)‖² = 2, ‖(0.5,-0.5)-(0.5,0.5)‖² = 1, each counted twice
  const std::vector<std::vector<double>> r2{{1, 2}, {0.5, -0.5}};
  const std::vector<std::vector<double>> e2{{0, 1}, {0.5, 0.5}};
  CHECK(commitment_loss(r2, e2) == doctest::Approx(6.0));
}

TEST_CASE("collaborative loss") {
  const std::vector<std::vector<double>> q{{1, 0}, {0, 1}};
  CHECK(collaborative_loss(q, q, 1.0) == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))));
  CHECK_THROWS_AS(collaborative_loss(std::span(q).first(1), std::span(q).first(1), 1.0), ArgumentError);
  const std::vector<std::vector<double>> big{{30, 0}, {0, 30}};
  const std::vector<std::vector<double>> h{{1, 0}, {0, 1}};
  CHECK(collaborative_loss(big, h, 1.0) < 1e-12);
  // adding a constant to every logit: shift along a direction orthogonal to
  // the differences between the h rows leaves the loss unchanged
  const std::vector<std::vector<double>> h2{{1, 1, 0}, {0, 2, 1}};
  const std::vector<std::vector<double>> h3{{1, 1, 5}, {0, 2, 6}};
  const std::vector<std::vector<double>> q3{{0.3, 0.2, 0.7}, {-0.4, 0.1, 0.7}};
  CHECK(collaborative_loss(q3, h2, 1.0) == doctest::Approx(collaborative_loss(q3, h3, 1.0)).epsilon(1e-12));
}

TEST_CASE("diversity loss") {
  const std::vector<std::vector<double>> e{{1, 0}, {0.6, 0.8}};
  const double s00 = 1.0, s01 = 0.6, s11 = 1.0;
  const double hand = 0.5 * (-std::log(std::exp(s00) / (std::exp(s00) + std::exp(s01))) -
                             std::log(std::exp(s11) / (std::exp(s11) + std::exp(s01))));
  CHECK(diversity_loss(e, e, 1.0) == doctest::Approx(hand).epsilon(1e-14));

  std::vector<std::size_t> singleton{0, 1};
  Rng rng(1);
  std::size_t singles = 0;
  const std::vector<int> codes{0, 1};
  CHECK(sample_positives(codes, singleton, rng, &singles) == codes);
  CHECK(singles == 2);

  // four codewords in two clusters, oracle loop
  const std::vector<std::vector<double>> cw{{1, 0}, {0.9, 0.1}, {0, 1}, {-0.2, 0.8}};
  const std::vector<std::size_t> clusters{0, 0, 1, 1};
  const std::vector<int> batch_codes{0, 2, 3, 1};
  Rng r2(4);
  const auto pos = sample_positives(batch_codes, clusters, r2);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(pos[i] != batch_codes[i]);
    CHECK(clusters[static_cast<std::size_t>(pos[i])] == clusters[static_cast<std::size_t>(batch_codes[i])]);
  }
  std::vector<std::vector<double>> anchors, positives;
  for (std::size_t i = 0; i < 4; ++i) {
    anchors.push_back(cw[static_cast<std::size_t>(batch_codes[i])]);
    positives.push_back(cw[static_cast<std::size_t>(pos[i])]);
  }
  double oracle = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double num = std::exp(kernels::dot(anchors[i], positives[i]));
    double den = num;
    for (std::size_t j = 0; j < 4; ++j)
      if (j != i) den += std::exp(kernels::dot(anchors[i], anchors[j]));
    oracle += -std::log(num / den);
  }
  CHECK(diversity_loss(anchors, positives, 1.0) == doctest::Approx(oracle / 4).epsilon(1e-13));
}

TEST_CASE("identical codewords in one cluster maximize the positive logit") {
  const std::vector<std::vector<double>> a{{1, 0}, {1, 0}, {0, 1}};
  const std::vector<std::vector<double>> p{{1, 0}, {1, 0}, {0, 1}};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(kernels::dot(a[i], p[i]) >= kernels::dot(a[i], a[j]));
}

TEST_CASE("rqvae batch gradient matches central differences of the frozen-operand objective") {
  RqvaeConfig cfg;
  cfg.input_dim = 6;
  cfg.hidden = 5;
  cfg.latent = 4;
  cfg.levels = 3;
  cfg.codebook = 4;
  cfg.cf_weight = 0.7;
  cfg.div_weight = 0.3;
  cfg.div_clusters = 2;
  cfg.temperature = 0.8;
  cfg.commit_weight = 0.5;
  const RqvaeModel frozen(cfg, 3);
  RqvaeModel live = frozen;
  const auto data = make_data(12, 6, 9, true, 4);
  std::vector<std::size_t> items(10);
  std::iota(items.begin(), items.end(), 1);
  Rng rng(5);
  const auto plan = plan_batch(frozen, data, items, cluster_codewords(frozen, 2), rng);
  std::vector<double> grad(live.params().size(), 0.0);
  batch_loss(live, frozen, data, plan, grad);
  Rng pick(8);
  const double h = 1e-6;
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t i = pick.index(grad.size());
    while (grad[i] == 0.0) i = pick.index(grad.size());
    const double saved = live.params()[i];
    live.params()[i] = saved + h;
    const double up = batch_loss(live, frozen, data, plan).total;
    live.params()[i] = saved - h;
    const double down = batch_loss(live, frozen, data, plan).total;
    live.params()[i] = saved;
    const double fd = (up - down) / (2 * h);
    CAPTURE(i);
    CHECK(std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-6}) < 1e-4);
  }
}

TEST_CASE("rqvae training on identical embeddings yields one shared code sequence") {
  RqvaeConfig cfg;
  cfg.epochs = 3;
  RqvaeData data;
  Point x(16, 0.25);
  for (int i = 0; i < 20; ++i) data.x.push_back(x);
  std::vector<ItemId> ids(20);
  std::iota(ids.begin(), ids.end(), 0);
  const auto res = train_rqvae(ids, data, cfg);
  for (const auto& [id, ident] : res.map.entries) CHECK(ident == res.map.entries.begin()->second);
}

TEST_CASE("rqvae rejects too few items and is deterministic") {
  RqvaeConfig cfg;
  cfg.epochs = 2;
  const auto small = make_data(5, 16, 1, false);
  std::vector<ItemId> ids5{0, 1, 2, 3, 4};
  CHECK_THROWS_AS(train_rqvae(ids5, small, cfg), ArgumentError);
  const auto data = make_data(40, 16, 2, false);
  std::vector<ItemId> ids(40);
  std::iota(ids.begin(), ids.end(), 0);
  const auto a = train_rqvae(ids, data, cfg);
  const auto b = train_rqvae(ids, data, cfg);
  CHECK(a.model == b.model);
  CHECK(a.map.entries == b.map.entries);
}

TEST_CASE("codes are invariant under batch permutation") {
  RqvaeConfig cfg;
  const RqvaeModel m(cfg, 4);
  const auto data = make_data(10, 16, 3, false);
  std::vector<std::size_t> fwd(10), rev(10);
  std::iota(fwd.begin(), fwd.end(), 0);
  std::iota(rev.rbegin(), rev.rend(), 0);
  Rng r1(1), r2(1);
  const auto p1 = plan_batch(m, data, fwd, {}, r1);
  const auto p2 = plan_batch(m, data, rev, {}, r2);
  for (std::size_t i = 0; i < 10; ++i) CHECK(p1.codes[i] == p2.codes[9 - i]);
}

TEST_CASE("rqvae checkpoint round trip") {
  RqvaeConfig cfg;
  const RqvaeModel m(cfg, 12);
  const auto path = std::filesystem::temp_directory_path() / "itemtok_rqvae_roundtrip.txt";
  m.save(path);
  CHECK(RqvaeModel::load(path) == m);
  std::filesystem::remove(path);
}
