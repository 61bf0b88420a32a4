// Serial vs OpenMP timings for the parallel kernels, with a bitwise check of
// each pair of results.

#include <CLI11.hpp>
#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <vector>

#include "itemtok/corpus.hpp"
#include "itemtok/embed.hpp"
#include "itemtok/eval.hpp"
#include "itemtok/kernels.hpp"
#include "itemtok/rng.hpp"
#include "itemtok/seqmodel.hpp"

using namespace itemtok;

namespace {

template <typename T>
double best_of(int reps, const std::function<T()>& fn, T& result) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    result = fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

template <typename T>
void row(const char* name, int reps, const std::function<T(Exec)>& fn) {
  T serial{}, parallel{};
  const double ts = best_of<T>(reps, [&] { return fn(Exec::kSerial); }, serial);
  const double tp = best_of<T>(reps, [&] { return fn(Exec::kParallel); }, parallel);
  std::printf("%-28s %10.2f %10.2f %8.2fx  %s\n", name, ts, tp, ts / tp,
              serial == parallel ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel benchmark"};
  int reps = 3;
  std::size_t n = 256;
  app.add_option("-r,--reps", reps, "repetitions per timing (best is reported)");
  app.add_option("-n,--size", n, "square matrix size");
  CLI11_PARSE(app, argc, argv);

  std::printf("threads: %d\n", omp_get_max_threads());
  std::printf("%-28s %10s %10s %9s\n", "kernel", "serial ms", "omp ms", "speedup");

  Rng rng(1);
  std::vector<double> a(n * n), b(n * n);
  for (double& x : a) x = rng.normal();
  for (double& x : b) x = rng.normal();
  row<std::vector<double>>("matmul", reps, [&](Exec e) {
    std::vector<double> c(n * n);
    kernels::matmul(a, b, c, n, n, n, false, e);
    return c;
  });
  row<std::vector<double>>("matmul_bt", reps, [&](Exec e) {
    std::vector<double> c(n * n);
    kernels::matmul_bt(a, b, c, n, n, n, false, e);
    return c;
  });
  row<std::vector<double>>("matmul_at", reps, [&](Exec e) {
    std::vector<double> c(n * n);
    kernels::matmul_at(a, b, c, n, n, n, false, e);
    return c;
  });

  const auto data = synthesize_dataset(SynthConfig{});
  const auto vectors = embed_catalog(data.catalog, kDefaultEmbedDim, 1);
  std::map<ItemId, SemanticEmbedding> emb;
  IdentifierMap map;
  map.base_length = 3;
  for (std::size_t i = 0; i < data.catalog.size(); ++i) {
    const ItemId id = data.catalog.items()[i].id;
    emb[id] = vectors[i];
    map.entries[id] = {{0, static_cast<int>(i % 10)}, {1, static_cast<int>(i % 7)}, {2, static_cast<int>(i % 3)}};
  }
  row<double>("identifier similarity", reps, [&](Exec e) { return semantic_identifier_similarity(map, emb, e); });

  auto vocab = TokenVocabulary::with_control_tokens();
  extend_vocabulary(vocab, data.catalog, map);
  const SequenceModel model(ModelConfig{}, vocab, 1);
  const auto pairs = alignment_pairs(vocab, data.catalog, map);
  row<double>("sequence-model mean loss", reps, [&](Exec e) { return mean_loss(model, pairs, e); });

  row<std::vector<double>>("training epoch", 1, [&](Exec e) {
    SequenceModel m = model;
    TrainOptions o;
    o.exec = e;
    o.seed = 3;
    train(m, pairs, o);
    return std::vector<double>(m.params().begin(), m.params().end());
  });
  return 0;
}
