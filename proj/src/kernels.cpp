#include "itemtok/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace itemtok::kernels {
namespace {

void matmul_rows(const double* a, const double* b, double* c, std::size_t row, std::size_t k,
                 std::size_t m, bool accumulate) {
  double* out = c + row * m;
  if (!accumulate) std::fill(out, out + m, 0.0);
  const double* arow = a + row * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = arow[p];
    const double* brow = b + p * m;
    for (std::size_t j = 0; j < m; ++j) out[j] += av * brow[j];
  }
}

void matmul_bt_row(const double* a, const double* b, double* c, std::size_t row, std::size_t k,
                   std::size_t m, bool accumulate) {
  const double* arow = a + row * k;
  double* out = c + row * m;
  std::size_t j = 0;
  for (; j + 4 <= m; j += 4) {
    const double* b0 = b + j * k;
    const double* b1 = b0 + k;
    const double* b2 = b1 + k;
    const double* b3 = b2 + k;
    double s0 = accumulate ? out[j] : 0.0;
    double s1 = accumulate ? out[j + 1] : 0.0;
    double s2 = accumulate ? out[j + 2] : 0.0;
    double s3 = accumulate ? out[j + 3] : 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      s0 += av * b0[p];
      s1 += av * b1[p];
      s2 += av * b2[p];
      s3 += av * b3[p];
    }
    out[j] = s0;
    out[j + 1] = s1;
    out[j + 2] = s2;
    out[j + 3] = s3;
  }
  for (; j < m; ++j) {
    const double* brow = b + j * k;
    double s = accumulate ? out[j] : 0.0;
    for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
    out[j] = s;
  }
}

void matmul_at_row(const double* a, const double* b, double* c, std::size_t p, std::size_t n,
                   std::size_t k, std::size_t m, bool accumulate) {
  double* out = c + p * m;
  if (!accumulate) std::fill(out, out + m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double av = a[i * k + p];
    const double* brow = b + i * m;
    for (std::size_t j = 0; j < m; ++j) out[j] += av * brow[j];
  }
}

}  // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t n, std::size_t k, std::size_t m, bool accumulate, Exec exec) {
  parallel_for(exec, n, [&](std::size_t i) { matmul_rows(a.data(), b.data(), c.data(), i, k, m, accumulate); });
}

void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t n, std::size_t k, std::size_t m, bool accumulate, Exec exec) {
  parallel_for(exec, n, [&](std::size_t i) { matmul_bt_row(a.data(), b.data(), c.data(), i, k, m, accumulate); });
}

void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t n, std::size_t k, std::size_t m, bool accumulate, Exec exec) {
  if (exec == Exec::kParallel) {
    parallel_for(exec, k, [&](std::size_t p) {
      matmul_at_row(a.data(), b.data(), c.data(), p, n, k, m, accumulate);
    });
    return;
  }
  // Serial path walks A row-major for locality; per-element order is still
  // ascending in i, identical to the per-row parallel split.
  if (!accumulate) std::fill(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(k * m), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a.data() + i * k;
    const double* brow = b.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* out = c.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) out[j] += av * brow[j];
    }
  }
}

double log_softmax(std::span<double> row) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : row) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : row) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (double& v : row) v -= lse;
  return lse;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

namespace reference {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t n, std::size_t k, std::size_t m, bool accumulate) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = accumulate ? c[i * m + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * m + j];
      c[i * m + j] = s;
    }
}

void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t n, std::size_t k, std::size_t m, bool accumulate) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = accumulate ? c[i * m + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * m + j] = s;
    }
}

void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t n, std::size_t k, std::size_t m, bool accumulate) {
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < m; ++j) {
      double s = accumulate ? c[p * m + j] : 0.0;
      for (std::size_t i = 0; i < n; ++i) s += a[i * k + p] * b[i * m + j];
      c[p * m + j] = s;
    }
}

}  // namespace reference
}  // namespace itemtok::kernels
