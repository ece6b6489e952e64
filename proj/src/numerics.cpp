#include "stratmoe/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace stratmoe {

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    std::ostringstream os;
    os << what << ": length mismatch (" << a << " vs " << b << ")";
    throw DimensionError(os.str());
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    std::ostringstream os;
    os << "Matrix: data length " << data_.size() << " does not match " << rows_ << "x" << cols_;
    throw DimensionError(os.str());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  const std::size_t cols = rows.front().size();
  Matrix m(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require_same_length(rows[r].size(), cols, "Matrix::from_rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

Vector Matrix::col(std::size_t c) const {
  Vector out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void Matrix::set_col(std::size_t c, std::span<const double> values) {
  require_same_length(values.size(), rows_, "Matrix::set_col");
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = values[r];
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

std::string Matrix::shape_string() const {
  std::ostringstream os;
  os << rows_ << "x" << cols_;
  return os.str();
}

// ---------------------------------------------------------------------------
// Rng

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) {
  std::uint64_t sm = seed;
  for (auto& word : s_) word = splitmix64(sm);
}

std::uint64_t Rng::next_u64() {
  auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * M_PI * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) throw ValueError("Rng::below: bound must be positive");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x = 0;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % bound;
}

// ---------------------------------------------------------------------------
// Algebra

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

Vector matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) {
    std::ostringstream os;
    os << "matvec: matrix " << a.shape_string() << " vs vector of length " << x.size();
    throw DimensionError(os.str());
  }
  Vector out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) out[i] = dot(a.row(i), x);
  return out;
}

Vector matvec_transposed(const Matrix& a, std::span<const double> x) {
  if (a.rows() != x.size()) {
    std::ostringstream os;
    os << "matvec_transposed: matrix " << a.shape_string() << " vs vector of length " << x.size();
    throw DimensionError(os.str());
  }
  Vector out(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) axpy(x[i], a.row(i), out);
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_length(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double frobenius_norm(const Matrix& a) { return norm2(a.flat()); }

void axpy(double alpha, std::span<const double> x, std::span<double> a) {
  require_same_length(x.size(), a.size(), "axpy");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += alpha * x[i];
}

void add_outer(Matrix& a, double alpha, std::span<const double> u, std::span<const double> v) {
  require_same_length(u.size(), a.rows(), "add_outer (rows)");
  require_same_length(v.size(), a.cols(), "add_outer (cols)");
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double scale = alpha * u[i];
    if (scale == 0.0) continue;
    auto r = a.row(i);
    for (std::size_t j = 0; j < v.size(); ++j) r[j] += scale * v[j];
  }
}

bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Elementwise

Vector softmax(std::span<const double> logits) {
  if (logits.empty()) throw ValueError("softmax: empty input");
  if (!all_finite(logits)) throw ValueError("softmax: non-finite logit");
  const double peak = *std::max_element(logits.begin(), logits.end());
  Vector out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

Vector soft_threshold(std::span<const double> x, std::span<const double> theta) {
  require_same_length(x.size(), theta.size(), "soft_threshold");
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (theta[i] < 0.0) throw ValueError("soft_threshold: negative threshold");
    const double mag = std::abs(x[i]) - theta[i];
    out[i] = mag > 0.0 ? std::copysign(mag, x[i]) : 0.0;
  }
  return out;
}

BitMask top_k_mask(std::span<const double> x, std::size_t k) {
  if (k > x.size()) {
    std::ostringstream os;
    os << "top_k_mask: k=" << k << " exceeds length " << x.size();
    throw ValueError(os.str());
  }
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t i, std::size_t j) {
                      const double ai = std::abs(x[i]);
                      const double aj = std::abs(x[j]);
                      return ai != aj ? ai > aj : i < j;
                    });
  BitMask mask(x.size(), false);
  for (std::size_t i = 0; i < k; ++i) mask[order[i]] = true;
  return mask;
}

// ---------------------------------------------------------------------------
// Spectral

EigenDecomposition sym_eig(const Matrix& input) {
  if (input.rows() != input.cols())
    throw DimensionError("sym_eig: matrix " + input.shape_string() + " is not square");
  const std::size_t n = input.rows();
  const double scale = std::max(1.0, frobenius_norm(input));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(input(i, j) - input(j, i)) > 1e-10 * scale)
        throw ValueError("sym_eig: matrix is not symmetric");

  Matrix a = input;
  Matrix v = Matrix::identity(n);
  constexpr int kMaxSweeps = 100;
  // Absolute 1e-12 target, scaled up for matrices whose norm exceeds one.
  const double tol = 1e-12 * scale;

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off = std::max(off, std::abs(a(p, q)));
    if (off < tol) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(tau * tau + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  EigenDecomposition out{Vector(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t r = 0; r < n; ++r) out.vectors(r, k) = v(r, order[k]);
  }
  return out;
}

std::size_t variance_rank(std::span<const double> eigenvalues_desc, double variance_fraction) {
  if (!(variance_fraction > 0.0 && variance_fraction <= 1.0))
    throw ValueError("variance fraction must lie in (0, 1]");
  double total = 0.0;
  for (double l : eigenvalues_desc) total += std::max(l, 0.0);
  if (total <= 0.0) return 0;
  double running = 0.0;
  for (std::size_t k = 0; k < eigenvalues_desc.size(); ++k) {
    running += std::max(eigenvalues_desc[k], 0.0);
    // Relative slack absorbs rounding when the fraction is hit exactly.
    if (running >= variance_fraction * total * (1.0 - 1e-12)) return k + 1;
  }
  return eigenvalues_desc.size();
}

PcaResult pca(const Matrix& x, double variance_fraction) {
  if (x.rows() < 2) throw ValueError("pca: need at least two rows");
  if (!(variance_fraction > 0.0 && variance_fraction <= 1.0))
    throw ValueError("pca: variance fraction must lie in (0, 1]");
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();

  Vector mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) axpy(1.0, x.row(i), mean);
  for (double& m : mean) m /= static_cast<double>(n);

  Matrix cov(d, d);
  Vector centered(d);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < d; ++j) centered[j] = r[j] - mean[j];
    for (std::size_t a = 0; a < d; ++a) {
      const double ca = centered[a];
      if (ca == 0.0) continue;
      auto cov_row = cov.row(a);
      for (std::size_t b = a; b < d; ++b) cov_row[b] += ca * centered[b];
    }
  }
  const double denom = static_cast<double>(n - 1);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) {
      cov(a, b) /= denom;
      cov(b, a) = cov(a, b);
    }

  auto eig = sym_eig(cov);
  PcaResult out;
  out.intrinsic_dim = variance_rank(eig.values, variance_fraction);
  out.eigenvalues = std::move(eig.values);
  out.components = std::move(eig.vectors);
  out.mean = std::move(mean);
  return out;
}

double spectral_norm_sq(const Matrix& a) {
  if (a.empty()) throw DimensionError("spectral_norm_sq: empty matrix");
  // Fixed pseudo-random start so the iterate is never orthogonal to the top
  // singular vector by construction.
  Rng rng(0x5eedULL);
  Vector v(a.cols());
  for (double& x : v) x = rng.uniform() + 0.5;
  double estimate = 0.0;
  for (int it = 0; it < 200; ++it) {
    const double nv = norm2(v);
    if (nv == 0.0) return 0.0;
    for (double& x : v) x /= nv;
    Vector w = matvec_transposed(a, matvec(a, v));
    const double next = dot(v, w);
    const bool converged = it > 0 && std::abs(next - estimate) <= 1e-10 * std::abs(next);
    estimate = next;
    v = std::move(w);
    if (converged) break;
  }
  return estimate * 1.001;
}

Matrix orthonormal_basis(const Matrix& a) {
  std::vector<Vector> kept;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    Vector v = a.col(c);
    for (const auto& q : kept) axpy(-dot(q, v), q, v);
    // Second pass keeps the basis orthogonal to working precision.
    for (const auto& q : kept) axpy(-dot(q, v), q, v);
    const double nv = norm2(v);
    if (nv < 1e-10) continue;
    for (double& x : v) x /= nv;
    kept.push_back(std::move(v));
  }
  Matrix q(a.rows(), kept.size());
  for (std::size_t c = 0; c < kept.size(); ++c) q.set_col(c, kept[c]);
  return q;
}

Vector principal_angles(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw DimensionError("principal_angles: ambient dimensions differ (" + a.shape_string() + " vs " +
                         b.shape_string() + ")");
  Matrix qa = orthonormal_basis(a);
  Matrix qb = orthonormal_basis(b);
  if (qa.cols() == 0 || qb.cols() == 0) throw ValueError("principal_angles: rank-0 input");
  if (qb.cols() > qa.cols()) std::swap(qa, qb);
  const std::size_t k = qb.cols();

  // Cosines from the Gram of QaᵀQb; sines from the residual of Qb after
  // projecting onto span(Qa). Small angles are taken from the sines, where
  // arccos loses precision.
  const Matrix cross = matmul(qa.transposed(), qb);
  const auto cos_eig = sym_eig(matmul(cross.transposed(), cross));
  Matrix residual = qb;
  const Matrix projected = matmul(qa, cross);
  for (std::size_t i = 0; i < residual.size(); ++i) residual.flat()[i] -= projected.flat()[i];
  const auto sin_eig = sym_eig(matmul(residual.transposed(), residual));

  Vector angles(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double c = std::clamp(std::sqrt(std::max(cos_eig.values[i], 0.0)), 0.0, 1.0);
    const double s = std::clamp(std::sqrt(std::max(sin_eig.values[k - 1 - i], 0.0)), 0.0, 1.0);
    angles[i] = c * c >= 0.5 ? std::asin(s) : std::acos(c);
  }
  std::sort(angles.begin(), angles.end());
  return angles;
}

}  // namespace stratmoe
