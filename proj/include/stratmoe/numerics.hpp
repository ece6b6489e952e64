#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stratmoe/error.hpp"

namespace stratmoe {

using Vector = std::vector<double>;
using BitMask = std::vector<bool>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  /// Builds from nested rows; all rows must have equal length.
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  Vector col(std::size_t c) const;
  void set_col(std::size_t c, std::span<const double> values);

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  Matrix transposed() const;

  std::string shape_string() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// xoshiro256** seeded through splitmix64. The stream is a pure function of the
/// seed, and normals come from Box-Muller on that stream, so results do not
/// depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double normal();
  /// Uniform integer in [0, bound); bound must be positive.
  std::uint64_t below(std::uint64_t bound);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

// Basic algebra. All of these throw DimensionError on shape mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& a, std::span<const double> x);
/// aᵀx without materializing the transpose.
Vector matvec_transposed(const Matrix& a, std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double frobenius_norm(const Matrix& a);
/// a += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> a);
/// a += alpha * u vᵀ
void add_outer(Matrix& a, double alpha, std::span<const double> u, std::span<const double> v);

Vector softmax(std::span<const double> logits);
/// Elementwise sign(x)·max(|x|−θ, 0).
Vector soft_threshold(std::span<const double> x, std::span<const double> theta);
/// k ones at the positions of the k largest |x_i|; ties go to the lower index.
BitMask top_k_mask(std::span<const double> x, std::size_t k);

struct EigenDecomposition {
  Vector values;   ///< descending
  Matrix vectors;  ///< column i pairs with values[i]
};

/// Cyclic Jacobi rotations. O(d³) per sweep; fine for d up to a few thousand.
EigenDecomposition sym_eig(const Matrix& a);

struct PcaResult {
  Matrix components;  ///< d×d, columns ordered by eigenvalue
  Vector eigenvalues;
  Vector mean;
  std::size_t intrinsic_dim = 0;
};

/// Covariance PCA (n−1 denominator). intrinsic_dim is the smallest k whose
/// leading eigenvalues reach `variance_fraction` of the total; 0 for data
/// with no variance.
PcaResult pca(const Matrix& x, double variance_fraction);

/// Number of leading eigenvalues needed to reach the given share of the sum.
std::size_t variance_rank(std::span<const double> eigenvalues_desc, double variance_fraction);

/// Largest eigenvalue of aᵀa by power iteration, inflated by 1.001.
double spectral_norm_sq(const Matrix& a);

/// Modified Gram-Schmidt; columns with residual norm < 1e-10 are dropped.
Matrix orthonormal_basis(const Matrix& a);

/// Principal angles between column spans, ascending, in radians.
Vector principal_angles(const Matrix& a, const Matrix& b);

bool all_finite(std::span<const double> x);

}  // namespace stratmoe
