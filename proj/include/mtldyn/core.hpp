/*
 * Copyright 2026 The mtldyn Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MTLDYN_CORE_HPP
#define MTLDYN_CORE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mtldyn/errors.hpp"

namespace mtldyn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Labels = std::vector<int>;
using RngSeed = std::uint64_t;

struct SvdTriple {
  Matrix u;  // rows x k, orthonormal columns
  Vector s;  // non-increasing, non-negative
  Matrix v;  // cols x k, orthonormal columns
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derive an independent child seed from a parent seed and a tag.
inline RngSeed derive_seed(RngSeed parent, std::uint64_t tag) {
  return splitmix64(parent ^ splitmix64(tag + 0x632be59bd9b4e019ULL));
}

inline RngSeed derive_seed(RngSeed parent, std::string_view tag) {
  return derive_seed(parent, hash_string(tag));
}

// Per-run random stream. Never shared between runs.
class Rng {
 public:
  explicit Rng(RngSeed seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  std::uint64_t bits() { return engine_(); }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> d(0, n - 1);
    return d(engine_);
  }

  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double sd = 1.0) {
    Matrix m(rows, cols);
    // column-major fill; the draw order is part of the determinism contract
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = sd * normal_(engine_);
    return m;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw InvalidInput(std::string(what) + ": non-finite entry");
}

// Column-wise softmax with per-column max subtraction.
inline Matrix softmax_columns(const Matrix& logits) {
  require_finite(logits, "softmax_columns");
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double m = logits.col(j).maxCoeff();
    p.col(j) = (logits.col(j).array() - m).exp();
    p.col(j) /= p.col(j).sum();
  }
  return p;
}

// Row index of the column maximum; ties go to the lowest index.
inline Labels argmax_labels(const Matrix& scores) {
  if (scores.rows() == 0 || scores.cols() == 0) throw InvalidInput("argmax_labels: empty matrix");
  require_finite(scores, "argmax_labels");
  Labels out(static_cast<std::size_t>(scores.cols()));
  for (Eigen::Index j = 0; j < scores.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < scores.rows(); ++i)
      if (scores(i, j) > scores(best, j)) best = i;
    out[static_cast<std::size_t>(j)] = static_cast<int>(best);
  }
  return out;
}

inline Matrix one_hot(const Labels& y, int n_classes) {
  Matrix m = Matrix::Zero(n_classes, static_cast<Eigen::Index>(y.size()));
  for (std::size_t j = 0; j < y.size(); ++j) {
    if (y[j] < 0 || y[j] >= n_classes) throw InvalidInput("one_hot: label out of range");
    m(y[j], static_cast<Eigen::Index>(j)) = 1.0;
  }
  return m;
}

// Thin SVD, singular values sorted non-increasing, and each U column signed
// so that its largest-magnitude entry is positive.
inline SvdTriple svd(const Matrix& m) {
  require_finite(m, "svd");
  const Eigen::Index k = std::min(m.rows(), m.cols());
  SvdTriple out;
  if (k == 0) {
    out.u = Matrix(m.rows(), 0);
    out.v = Matrix(m.cols(), 0);
    return out;
  }
  Matrix u, v;
  Vector s;
  if (k <= 32) {
    Eigen::JacobiSVD<Matrix> solver(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    u = solver.matrixU();
    v = solver.matrixV();
    s = solver.singularValues();
  } else {
    Eigen::BDCSVD<Matrix> solver(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (solver.info() != Eigen::Success)
      throw NumericalError("svd: BDCSVD did not converge (" + std::to_string(m.rows()) + "x" +
                           std::to_string(m.cols()) + ")");
    u = solver.matrixU();
    v = solver.matrixV();
    s = solver.singularValues();
  }
  if (!u.allFinite() || !v.allFinite() || !s.allFinite())
    throw NumericalError("svd: non-finite factors");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return s(a) > s(b); });
  out.u.resize(m.rows(), k);
  out.v.resize(m.cols(), k);
  out.s.resize(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    const Eigen::Index src = order[static_cast<std::size_t>(c)];
    out.u.col(c) = u.col(src);
    out.v.col(c) = v.col(src);
    out.s(c) = std::max(0.0, s(src));
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < m.rows(); ++i)
      if (std::abs(out.u(i, c)) > std::abs(out.u(arg, c))) arg = i;
    if (out.u(arg, c) < 0) {
      out.u.col(c) *= -1.0;
      out.v.col(c) *= -1.0;
    }
  }
  return out;
}

inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double variance, Rng& rng) {
  if (!(variance >= 0.0)) throw InvalidInput("gaussian_matrix: negative variance");
  return rng.normal_matrix(rows, cols, std::sqrt(variance));
}

inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double variance, RngSeed seed) {
  Rng rng(seed);
  return gaussian_matrix(rows, cols, variance, rng);
}

// Random rows x cols matrix with orthonormal columns (QR of a Gaussian draw).
inline Matrix random_orthonormal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  if (cols > rows) throw InvalidInput("random_orthonormal: cols > rows");
  Matrix g = rng.normal_matrix(rows, cols);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(rows, cols);
  // fix the QR sign ambiguity so the frame is Haar distributed
  Matrix r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
  for (Eigen::Index c = 0; c < cols; ++c)
    if (r(c, c) < 0) q.col(c) *= -1.0;
  return q;
}

// Symmetric square root factor L with L L^T = c. Throws on non-PSD input.
inline Matrix covariance_factor(const Matrix& c) {
  if (c.rows() != c.cols()) throw InvalidInput("covariance: not square");
  require_finite(c, "covariance");
  if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, c.cwiseAbs().maxCoeff()))
    throw InvalidInput("covariance: not symmetric");
  if (c.isIdentity(0.0)) return c;
  Eigen::SelfAdjointEigenSolver<Matrix> es(c);
  const Vector& ev = es.eigenvalues();
  const double tol = 1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() < -tol) throw InvalidInput("covariance: not positive semi-definite");
  Vector root = ev.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

// Columns i.i.d. N(0, c) given a factor from covariance_factor.
inline Matrix sample_gaussian_columns(const Matrix& factor, Eigen::Index n, Rng& rng) {
  Matrix z = rng.normal_matrix(factor.rows(), n);
  if (factor.isIdentity(0.0)) return z;
  return factor * z;
}

}  // namespace mtldyn

#endif
