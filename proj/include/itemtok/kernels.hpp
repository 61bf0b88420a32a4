#pragma once

#include <cstddef>
#include <span>

#include "itemtok/parallel.hpp"

// Dense row-major double kernels. Every output element is summed in
// ascending inner-index order regardless of policy, so the OpenMP variants
// agree bitwise with the serial ones.
namespace itemtok::kernels {

/// C[n×m] (+)= A[n×k] · B[k×m]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t n, std::size_t k, std::size_t m, bool accumulate,
            Exec exec = Exec::kSerial);

/// C[n×m] (+)= A[n×k] · B[m×k]ᵀ
void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t n, std::size_t k, std::size_t m, bool accumulate,
               Exec exec = Exec::kSerial);

/// C[k×m] (+)= A[n×k]ᵀ · B[n×m]
void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t n, std::size_t k, std::size_t m, bool accumulate,
               Exec exec = Exec::kSerial);

/// In-place log-softmax of one row; returns log of the partition function.
double log_softmax(std::span<double> row);

/// Squared Euclidean distance.
double squared_distance(std::span<const double> a, std::span<const double> b);

double dot(std::span<const double> a, std::span<const double> b);

/// Textbook triple loops kept as the oracle for the kernels above.
namespace reference {
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t n, std::size_t k, std::size_t m, bool accumulate);
void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t n, std::size_t k, std::size_t m, bool accumulate);
void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t n, std::size_t k, std::size_t m, bool accumulate);
}  // namespace reference

}  // namespace itemtok::kernels
