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

#ifndef MTLDYN_GMATRIX_HPP
#define MTLDYN_GMATRIX_HPP

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mtldyn/core.hpp"

namespace mtldyn {

// G_cc' = E[P_c] delta_cc' - E[P_c P_c'] over X ~ N(0, C_X).
struct GEstimate {
  Matrix g;
  long n_samples = 0;
  Matrix std_err;
};

namespace detail {

constexpr Eigen::Index kBlock = 4096;

// Samples of B X for X ~ N(0, C_X), drawn in the reduced coordinates of B L
// (B L = U S V^T, V^T xi ~ N(0, I)). Calls fn(block) with B X columns.
template <class Fn>
void sample_projected(const Matrix& b, const Matrix& c_x, long n, RngSeed seed, Fn&& fn) {
  Matrix bl = c_x.isIdentity(0.0) ? b : Matrix(b * covariance_factor(c_x));
  Eigen::JacobiSVD<Matrix> sv(bl, Eigen::ComputeThinU);
  Matrix us = sv.matrixU() * sv.singularValues().asDiagonal();
  Rng rng(seed);
  for (long done = 0; done < n;) {
    const Eigen::Index m = std::min<long>(kBlock, n - done);
    fn(Matrix(us * rng.normal_matrix(us.cols(), m)));
    done += m;
  }
}

// Gauss-Hermite rule for the standard normal weight (Golub-Welsch).
inline void hermite_rule(int order, Vector& nodes, Vector& weights) {
  Matrix j = Matrix::Zero(order, order);
  for (int k = 1; k < order; ++k) j(k, k - 1) = j(k - 1, k) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Matrix> es(j);
  nodes = es.eigenvalues();
  weights = es.eigenvectors().row(0).transpose().array().square();
}

inline std::uint64_t hash_matrix(const Matrix& m, std::uint64_t h = 0xcbf29ce484222325ULL) {
  auto mix = [&](const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 0x100000001b3ULL;
    }
  };
  const Eigen::Index r = m.rows(), c = m.cols();
  mix(&r, sizeof r);
  mix(&c, sizeof c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) {
      const double v = m(i, j);
      mix(&v, sizeof v);
    }
  return h;
}

}  // namespace detail

inline GEstimate estimate_g(const Matrix& w, const Matrix& c_x, long n_samples, RngSeed seed) {
  if (n_samples < 1) throw InvalidInput("estimate_g: n_samples must be >= 1");
  if (c_x.rows() != w.cols()) throw InvalidInput("estimate_g: covariance dimension mismatch");
  const Eigen::Index C = w.rows();
  Vector sum_p = Vector::Zero(C);
  Matrix sum_pp = Matrix::Zero(C, C);
  Vector sum_diag_sq = Vector::Zero(C);
  Matrix sum_p2p2 = Matrix::Zero(C, C);
  detail::sample_projected(w, c_x, n_samples, seed, [&](const Matrix& z) {
    Matrix p = softmax_columns(z);
    Matrix p2 = p.array().square();
    sum_p += p.rowwise().sum();
    sum_pp += p * p.transpose();
    sum_diag_sq += (p - p2).array().square().matrix().rowwise().sum();
    sum_p2p2 += p2 * p2.transpose();
  });
  const auto n = static_cast<double>(n_samples);
  GEstimate e;
  e.n_samples = n_samples;
  Matrix mean_pp = sum_pp / n;
  e.g = Matrix(sum_p.asDiagonal()) / n - mean_pp;
  e.g = 0.5 * (e.g + e.g.transpose());
  Matrix second = sum_p2p2 / n;
  second.diagonal() = sum_diag_sq / n;
  e.std_err = Matrix::Zero(C, C);
  if (n_samples > 1) {
    Matrix var = (second.array() - e.g.array().square()).cwiseMax(0.0) * (n / (n - 1.0));
    e.std_err = (var / n).cwiseSqrt();
  }
  return e;
}

inline GEstimate estimate_g(const Matrix& w, long n_samples, RngSeed seed) {
  return estimate_g(w, Matrix::Identity(w.cols(), w.cols()), n_samples, seed);
}

// Tensor Gauss-Hermite evaluation of G for W C_X^{1/2} of rank <= 2.
inline Matrix gauss_hermite_g(const Matrix& w, const Matrix& c_x, int order = 80) {
  Matrix bl = c_x.isIdentity(0.0) ? w : Matrix(w * covariance_factor(c_x));
  Eigen::JacobiSVD<Matrix> sv(bl, Eigen::ComputeThinU);
  const Vector& s = sv.singularValues();
  const double tol = 1e-12 * std::max(1.0, s.size() ? s(0) : 0.0);
  int rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) rank += s(i) > tol;
  if (rank > 2) throw InvalidInput("gauss_hermite_g: rank of W C_X^{1/2} exceeds 2");
  const Eigen::Index C = w.rows();
  Matrix us = Matrix::Zero(C, 2);
  for (int k = 0; k < rank; ++k) us.col(k) = sv.matrixU().col(k) * s(k);
  Vector x, wt;
  detail::hermite_rule(order, x, wt);
  Matrix g = Matrix::Zero(C, C);
  const int o1 = rank >= 1 ? order : 1;
  const int o2 = rank >= 2 ? order : 1;
  for (int i = 0; i < o1; ++i)
    for (int j = 0; j < o2; ++j) {
      const double weight = (rank >= 1 ? wt(i) : 1.0) * (rank >= 2 ? wt(j) : 1.0);
      Vector z = (rank >= 1 ? x(i) : 0.0) * us.col(0) + (rank >= 2 ? x(j) : 0.0) * us.col(1);
      Vector p = softmax_columns(z);
      g += weight * (Matrix(p.asDiagonal()) - p * p.transpose());
    }
  return g;
}

inline double trace_g(const Vector& s, const Matrix& u, const Matrix& v, const Matrix& c_x, long n_samples,
                      RngSeed seed) {
  Matrix w = u * s.asDiagonal() * v.transpose();
  return estimate_g(w, c_x, n_samples, seed).g.trace();
}

// (trace / (C - 1)) (I - 11^T / C)
inline Matrix isotropic_approx(const Matrix& w, double trace) {
  if (!(trace >= 0.0)) throw InvalidInput("isotropic_approx: trace must be >= 0");
  const Eigen::Index C = w.rows();
  if (C < 2) throw InvalidInput("isotropic_approx: need at least 2 classes");
  Matrix centering = Matrix::Identity(C, C) - Matrix::Constant(C, C, 1.0 / C);
  return (trace / static_cast<double>(C - 1)) * centering;
}

// (1/N) sum_mu P(W x_mu) x_mu^T
inline Matrix empirical_cross_cov(const Matrix& w, const Matrix& x) {
  if (w.cols() != x.rows()) throw InvalidInput("empirical_cross_cov: dimension mismatch");
  return softmax_columns(w * x) * x.transpose() / static_cast<double>(x.cols());
}

// (1/N) sum_mu e_{y_mu} x_mu^T
inline Matrix empirical_cross_cov(const Labels& y, int n_classes, const Matrix& x) {
  if (y.size() != static_cast<std::size_t>(x.cols())) throw InvalidInput("empirical_cross_cov: label count mismatch");
  return one_hot(y, n_classes) * x.transpose() / static_cast<double>(x.cols());
}

struct DriveEstimate {
  Vector value;
  Vector std_err;
};

// diag(U^T E[e_y X^T] V) with y = argmax(sigma_hat X): the hard-label target
// term of the aligned dynamics, one entry per column of U and V.
inline DriveEstimate hard_label_drive(const Matrix& sigma_hat, const Matrix& u, const Matrix& v, const Matrix& c_x,
                                      long n_samples, RngSeed seed) {
  if (u.rows() != sigma_hat.rows() || v.rows() != sigma_hat.cols() || u.cols() != v.cols())
    throw InvalidInput("hard_label_drive: dimension mismatch");
  const Eigen::Index C = sigma_hat.rows(), k = u.cols();
  Matrix b(C + k, sigma_hat.cols());
  b << sigma_hat, v.transpose();
  Vector sum = Vector::Zero(k), sum2 = Vector::Zero(k);
  detail::sample_projected(b, c_x, n_samples, seed, [&](const Matrix& z) {
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      Eigen::Index y = 0;
      for (Eigen::Index c = 1; c < C; ++c)
        if (z(c, j) > z(y, j)) y = c;
      for (Eigen::Index m = 0; m < k; ++m) {
        const double t = u(y, m) * z(C + m, j);
        sum(m) += t;
        sum2(m) += t * t;
      }
    }
  });
  const auto n = static_cast<double>(n_samples);
  DriveEstimate d;
  d.value = sum / n;
  d.std_err = ((sum2 / n - d.value.cwiseAbs2()).cwiseMax(0.0) / std::max(1.0, n - 1.0)).cwiseSqrt();
  return d;
}

// ---------------------------------------------------------------------------
// Tabulated g(s) = u^T G(s u v^T) u along a fixed rank-1 frame.

struct GLookupOptions {
  long n_samples = 200000;
  RngSeed seed = 0;
  double spacing = 0.05;
  double refine_tol = 0.02;
  int max_refine = 6;
};

struct GLookup {
  std::vector<double> s;
  std::vector<double> g;
  std::vector<double> se;
  // Hard-label target term replacing s_hat g(s_hat); NaN when unset.
  double drive = std::numeric_limits<double>::quiet_NaN();
  double drive_se = 0.0;
  std::string key;

  double at(double x) const {
    if (s.empty()) throw RangeError("g lookup: empty table");
    const double tol = 1e-12 * std::max(1.0, s.back());
    if (!(x >= s.front() - tol && x <= s.back() + tol))
      throw RangeError("g lookup: s = " + std::to_string(x) + " outside [" + std::to_string(s.front()) + ", " +
                       std::to_string(s.back()) + "]");
    auto it = std::upper_bound(s.begin(), s.end(), x);
    if (it == s.begin()) return g.front();
    if (it == s.end()) return g.back();
    const std::size_t hi = static_cast<std::size_t>(it - s.begin()), lo = hi - 1;
    const double t = (x - s[lo]) / (s[hi] - s[lo]);
    return (1.0 - t) * g[lo] + t * g[hi];
  }

  double target(double s_hat) const { return std::isnan(drive) ? s_hat * at(s_hat) : drive; }
  double s_max() const { return s.empty() ? 0.0 : s.back(); }
};

// Knots where g rises by more than n_se combined standard errors. The
// dynamics assume g decreases with s; a rise is reported, not rejected.
inline long g_increases(const GLookup& lk, double n_se = 3.0) {
  long n = 0;
  for (std::size_t i = 1; i < lk.g.size(); ++i)
    if (lk.g[i] - lk.g[i - 1] > n_se * std::hypot(lk.se[i], lk.se[i - 1])) ++n;
  return n;
}

namespace detail {

// g(s) for logits s * u * z, z ~ N(0, sigma_z^2), using fixed samples z.
// Classes sharing the same u entry share a softmax value, so the work scales
// with the number of distinct entries of u.
class FrameG {
 public:
  FrameG(const Vector& u, double sigma_z, long n, RngSeed seed) {
    for (Eigen::Index c = 0; c < u.size(); ++c) {
      std::size_t i = 0;
      while (i < vals_.size() && vals_[i] != u(c)) ++i;
      if (i == vals_.size()) {
        vals_.push_back(u(c));
        mult_.push_back(0.0);
      }
      mult_[i] += 1.0;
    }
    Rng rng(seed);
    z_.resize(n);
    for (long i = 0; i < n; ++i) z_(i) = sigma_z * rng.normal();
  }

  std::pair<double, double> eval(double s) const {
    const std::size_t k = vals_.size();
    std::vector<double> e(k);
    double sum = 0.0, sum2 = 0.0;
    for (Eigen::Index i = 0; i < z_.size(); ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < k; ++a) mx = std::max(mx, s * vals_[a] * z_(i));
      double norm = 0.0;
      for (std::size_t a = 0; a < k; ++a) {
        e[a] = std::exp(s * vals_[a] * z_(i) - mx);
        norm += mult_[a] * e[a];
      }
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t a = 0; a < k; ++a) {
        const double p = e[a] / norm;
        m1 += mult_[a] * vals_[a] * p;
        m2 += mult_[a] * vals_[a] * vals_[a] * p;
      }
      const double t = m2 - m1 * m1;
      sum += t;
      sum2 += t * t;
    }
    const auto n = static_cast<double>(z_.size());
    const double mean = sum / n;
    const double var = std::max(0.0, sum2 / n - mean * mean) / std::max(1.0, n - 1.0);
    return {mean, std::sqrt(var)};
  }

 private:
  std::vector<double> vals_;
  std::vector<double> mult_;
  Vector z_;
};

}  // namespace detail

inline std::string g_lookup_key(const Vector& u, const Vector& v, const Matrix& c_x, const GLookupOptions& opt) {
  std::uint64_t h = detail::hash_matrix(u);
  h = detail::hash_matrix(v, h);
  h = detail::hash_matrix(c_x, h);
  std::ostringstream os;
  os << std::hex << h << std::dec << "-C" << u.size() << "-n" << opt.n_samples << "-seed" << opt.seed << "-ds"
     << opt.spacing;
  return os.str();
}

// Common random numbers across the grid; intervals whose relative change
// exceeds refine_tol are bisected up to max_refine times.
inline GLookup build_g_lookup(const Vector& u, const Vector& v, const Matrix& c_x, double s_max,
                              const GLookupOptions& opt = {}) {
  if (!(s_max > 0.0)) throw InvalidInput("g lookup: s_max must be > 0");
  if (!(opt.spacing > 0.0)) throw InvalidInput("g lookup: spacing must be > 0");
  if (opt.n_samples < 1) throw InvalidInput("g lookup: n_samples must be >= 1");
  if (c_x.rows() != v.size()) throw InvalidInput("g lookup: covariance dimension mismatch");
  const double sigma_z = std::sqrt(std::max(0.0, v.dot(c_x * v)));
  detail::FrameG fg(u, sigma_z, opt.n_samples, opt.seed);
  std::map<double, std::pair<double, double>> table;
  const long n_pts = static_cast<long>(std::ceil(s_max / opt.spacing - 1e-9));
  for (long i = 0; i <= n_pts; ++i) {
    const double s = std::min(s_max, static_cast<double>(i) * opt.spacing);
    table.emplace(s, fg.eval(s));
  }
  for (int pass = 0; pass < opt.max_refine; ++pass) {
    std::vector<double> mids;
    for (auto it = table.begin(); std::next(it) != table.end(); ++it) {
      auto nx = std::next(it);
      const double ga = it->second.first, gb = nx->second.first;
      if (std::abs(gb - ga) > opt.refine_tol * std::max(std::abs(ga), 1e-300)) mids.push_back(0.5 * (it->first + nx->first));
    }
    if (mids.empty()) break;
    for (double m : mids) table.emplace(m, fg.eval(m));
  }
  GLookup lk;
  for (const auto& [s, v2] : table) {
    lk.s.push_back(s);
    lk.g.push_back(v2.first);
    lk.se.push_back(v2.second);
  }
  lk.key = g_lookup_key(u, v, c_x, opt);
  return lk;
}

inline void write_g_lookup(const GLookup& lk, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw InvalidInput("g lookup: cannot write " + path);
  os << "# mtldyn-gcache v1\n";
  os << "# key " << lk.key << "\n";
  os << std::setprecision(17);
  os << "# drive " << lk.drive << " " << lk.drive_se << "\n";
  os << "s,g,stderr\n";
  for (std::size_t i = 0; i < lk.s.size(); ++i) os << lk.s[i] << "," << lk.g[i] << "," << lk.se[i] << "\n";
}

inline GLookup read_g_lookup(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInput("g lookup: cannot read " + path);
  GLookup lk;
  std::string line;
  if (!std::getline(is, line) || line != "# mtldyn-gcache v1") throw InvalidInput("g lookup: bad header in " + path);
  while (std::getline(is, line)) {
    if (line.rfind("# key ", 0) == 0) {
      lk.key = line.substr(6);
    } else if (line.rfind("# drive ", 0) == 0) {
      std::istringstream ss(line.substr(8));
      std::string d, se;
      ss >> d >> se;
      lk.drive = std::strtod(d.c_str(), nullptr);
      lk.drive_se = std::strtod(se.c_str(), nullptr);
    } else if (line == "s,g,stderr" || line.empty()) {
      continue;
    } else {
      double a, b, c;
      if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &a, &b, &c) != 3) throw InvalidInput("g lookup: bad row in " + path);
      lk.s.push_back(a);
      lk.g.push_back(b);
      lk.se.push_back(c);
    }
  }
  return lk;
}

}  // namespace mtldyn

#endif
