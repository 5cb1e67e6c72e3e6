// Copyright 2026 The Prunelab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense double-precision linear algebra: the Matrix carrier, products,
// norms, truncated SVD (one-sided Jacobi), Cholesky and pseudo-inverse.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace prunelab {

/// Invalid caller input: wrong shape, out-of-range parameter, empty input.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical procedure failed: non-convergence, loss of definiteness,
/// degenerate data.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Vector = std::vector<double>;

/// Row-major dense matrix. Entries are always finite.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (!std::isfinite(fill)) throw ArgumentError("Matrix: non-finite fill");
  }
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw ArgumentError("Matrix: data length " + std::to_string(data_.size()) +
                          " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    for (double v : data_)
      if (!std::isfinite(v)) throw ArgumentError("Matrix: non-finite entry");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static Matrix diagonal(std::span<const double> d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }
  static Matrix column(std::span<const double> v) {
    return Matrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  Vector col(std::size_t c) const {
    Vector out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Row-major boolean matrix (mask bits, activation events).
class BoolMatrix {
 public:
  BoolMatrix() = default;
  BoolMatrix(std::size_t rows, std::size_t cols, bool fill = false)
      : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return bits_.size(); }

  bool operator()(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { bits_[r * cols_ + c] = v ? 1 : 0; }
  bool at(std::size_t flat) const { return bits_[flat] != 0; }
  void set_flat(std::size_t flat, bool v) { bits_[flat] = v ? 1 : 0; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits_) n += b;
    return n;
  }

  bool operator==(const BoolMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<unsigned char> bits_;
};

inline Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  return t;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw ArgumentError("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                        std::to_string(b.rows()));
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

/// a · bᵀ without materializing the transpose.
inline Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ArgumentError("matmul_transposed: column mismatch");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto brow = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += arow[k] * brow[k];
      out(i, j) = s;
    }
  }
  return out;
}

inline Vector matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw ArgumentError("matvec: dimension mismatch");
  Vector out(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) s += arow[k] * x[k];
    out[i] = s;
  }
  return out;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ArgumentError("subtract: shape mismatch");
  Matrix out = a;
  auto od = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] -= bd[i];
  return out;
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ArgumentError("add: shape mismatch");
  Matrix out = a;
  auto od = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
  return out;
}

inline Matrix operator*(double s, const Matrix& a) {
  Matrix out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

inline double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data()) s += v * v;
  return std::sqrt(s);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ArgumentError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline double max_abs(const Matrix& m) {
  double best = 0.0;
  for (double v : m.data()) best = std::max(best, std::abs(v));
  return best;
}

struct SvdResult {
  Matrix u;   // rows × r, orthonormal columns
  Vector s;   // r singular values, descending
  Matrix v;   // cols × r, orthonormal columns
};

namespace detail {

// Gram–Schmidt completion of column `c` of q against columns [0, c), trying
// unit vectors in index order. Used when a singular value is exactly zero.
inline void complete_orthonormal_column(Matrix& q, std::size_t c) {
  const std::size_t n = q.rows();
  for (std::size_t e = 0; e < n; ++e) {
    Vector cand(n, 0.0);
    cand[e] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < c; ++k) {
        double proj = 0.0;
        for (std::size_t i = 0; i < n; ++i) proj += q(i, k) * cand[i];
        for (std::size_t i = 0; i < n; ++i) cand[i] -= proj * q(i, k);
      }
    }
    const double nrm = norm2(cand);
    if (nrm > 1e-8) {
      for (std::size_t i = 0; i < n; ++i) q(i, c) = cand[i] / nrm;
      return;
    }
  }
  throw NumericError("svd: failed to complete orthonormal basis");
}

// One-sided Jacobi on a tall matrix (rows >= cols). Returns full thin SVD.
inline SvdResult jacobi_svd_tall(const Matrix& m) {
  constexpr int kMaxSweeps = 100;
  const std::size_t n = m.rows();
  const std::size_t p = m.cols();
  const double fro = frobenius_norm(m);
  const double abs_tol = 1e-12 * fro;

  // Work column-major for cache-friendly column rotations.
  std::vector<Vector> a(p, Vector(n));
  for (std::size_t c = 0; c < p; ++c)
    for (std::size_t r = 0; r < n; ++r) a[c][r] = m(r, c);
  std::vector<Vector> v(p, Vector(p, 0.0));
  for (std::size_t c = 0; c < p; ++c) v[c][c] = 1.0;

  bool converged = (p < 2) || fro == 0.0;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    bool rotated = false;
    for (std::size_t i = 0; i + 1 < p; ++i) {
      for (std::size_t j = i + 1; j < p; ++j) {
        const double alpha = dot(a[i], a[i]);
        const double beta = dot(a[j], a[j]);
        const double gamma = dot(a[i], a[j]);
        // Columns already orthogonal to working precision, or negligible
        // relative to the whole matrix.
        if (std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta)) continue;
        if (std::sqrt(std::abs(gamma)) <= abs_tol) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        for (std::size_t r = 0; r < n; ++r) {
          const double ai = a[i][r];
          const double aj = a[j][r];
          a[i][r] = cs * ai - sn * aj;
          a[j][r] = sn * ai + cs * aj;
        }
        for (std::size_t r = 0; r < p; ++r) {
          const double vi = v[i][r];
          const double vj = v[j][r];
          v[i][r] = cs * vi - sn * vj;
          v[j][r] = sn * vi + cs * vj;
        }
      }
    }
    if (!rotated) converged = true;
  }
  if (!converged) throw NumericError("svd: no convergence after 100 Jacobi sweeps");

  Vector sv(p);
  for (std::size_t c = 0; c < p; ++c) sv[c] = norm2(a[c]);
  std::vector<std::size_t> order(p);
  for (std::size_t c = 0; c < p; ++c) order[c] = c;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sv[x] > sv[y]; });

  SvdResult out{Matrix(n, p), Vector(p), Matrix(p, p)};
  const double zero_tol = std::max<double>(n, p) * 2.2e-16 * (p ? sv[order[0]] : 0.0);
  for (std::size_t k = 0; k < p; ++k) {
    const std::size_t c = order[k];
    out.s[k] = sv[c];
    for (std::size_t r = 0; r < p; ++r) out.v(r, k) = v[c][r];
    if (sv[c] > zero_tol && sv[c] > 0.0) {
      for (std::size_t r = 0; r < n; ++r) out.u(r, k) = a[c][r] / sv[c];
    } else {
      out.s[k] = 0.0;
      complete_orthonormal_column(out.u, k);
    }
  }
  return out;
}

}  // namespace detail

/// Truncated SVD keeping the r largest singular triplets.
///
/// Sign convention: the largest-magnitude entry of each u column is positive
/// (first such entry on ties); v columns are flipped alongside.
inline SvdResult svd_top_r(const Matrix& m, std::size_t r) {
  const std::size_t k = std::min(m.rows(), m.cols());
  if (r < 1 || r > k)
    throw ArgumentError("svd_top_r: rank " + std::to_string(r) + " outside [1, " +
                        std::to_string(k) + "]");
  const bool wide = m.rows() < m.cols();
  SvdResult full = detail::jacobi_svd_tall(wide ? transpose(m) : m);
  if (wide) std::swap(full.u, full.v);

  SvdResult out{Matrix(m.rows(), r), Vector(full.s.begin(), full.s.begin() + r),
                Matrix(m.cols(), r)};
  for (std::size_t c = 0; c < r; ++c) {
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
      if (std::abs(full.u(i, c)) > best) {
        best = std::abs(full.u(i, c));
        arg = i;
      }
    }
    const double sign = full.u(arg, c) < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < m.rows(); ++i) out.u(i, c) = sign * full.u(i, c);
    for (std::size_t i = 0; i < m.cols(); ++i) out.v(i, c) = sign * full.v(i, c);
  }
  return out;
}

/// u · diag(s) · vᵀ
inline Matrix reconstruct(const SvdResult& svd) {
  Matrix us = svd.u;
  for (std::size_t i = 0; i < us.rows(); ++i)
    for (std::size_t c = 0; c < us.cols(); ++c) us(i, c) *= svd.s[c];
  return matmul_transposed(us, svd.v);
}

/// Lower-triangular L with L·Lᵀ = h + damping·I.
inline Matrix cholesky_factor(const Matrix& h, double damping = 0.0) {
  if (h.rows() != h.cols()) throw ArgumentError("cholesky: matrix not square");
  if (!(damping >= 0.0)) throw ArgumentError("cholesky: negative damping");
  const std::size_t n = h.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = h(j, j) + damping;
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0))
      throw NumericError("cholesky: matrix not positive definite at pivot " + std::to_string(j));
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = h(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

/// (h + damping·I)⁻¹ via Cholesky; the result is exactly symmetric.
inline Matrix cholesky_inverse(const Matrix& h, double damping = 0.0) {
  const Matrix l = cholesky_factor(h, damping);
  const std::size_t n = l.rows();
  // Solve L·Y = I (forward), then Lᵀ·X = Y (backward), column by column.
  Matrix inv(n, n);
  Vector y(n);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = (i == c) ? 1.0 : 0.0;
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
      y[i] = s / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = y[ii];
      for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * inv(k, c);
      inv(ii, c) = s / l(ii, ii);
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double avg = 0.5 * (inv(i, j) + inv(j, i));
      inv(i, j) = avg;
      inv(j, i) = avg;
    }
  return inv;
}

/// Moore–Penrose pseudo-inverse. Singular values below
/// max(rows, cols)·eps·s_max are treated as zero.
inline Matrix pseudo_inverse(const Matrix& m) {
  if (m.empty() || max_abs(m) == 0.0) throw ArgumentError("pseudo_inverse: all-zero matrix");
  const std::size_t k = std::min(m.rows(), m.cols());
  const SvdResult svd = svd_top_r(m, k);
  const double tol = std::max(m.rows(), m.cols()) * 2.220446049250313e-16 * svd.s[0];
  Matrix vs = svd.v;  // cols × k
  for (std::size_t c = 0; c < k; ++c) {
    const double inv = svd.s[c] > tol ? 1.0 / svd.s[c] : 0.0;
    for (std::size_t i = 0; i < vs.rows(); ++i) vs(i, c) *= inv;
  }
  return matmul_transposed(vs, svd.u);
}

}  // namespace prunelab
