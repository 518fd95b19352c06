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

#ifndef MTLDYN_BENEFIT_HPP
#define MTLDYN_BENEFIT_HPP

#include <cmath>
#include <limits>
#include <utility>

#include "mtldyn/gmatrix.hpp"
#include "mtldyn/student.hpp"

namespace mtldyn {

struct BenefitReport {
  double min_loss_single = 0.0;
  double min_loss_multi = 0.0;
  double mt_benefit = 0.0;
  double bound_lower = std::numeric_limits<double>::quiet_NaN();
  double bound_upper = std::numeric_limits<double>::quiet_NaN();
  // Isotropic-G variant of the bounds, kept alongside for comparison.
  double bound_lower_iso = std::numeric_limits<double>::quiet_NaN();
  double bound_upper_iso = std::numeric_limits<double>::quiet_NaN();
  long argmin_single = 0;
  long argmin_multi = 0;
  std::size_t index_single = 0;
  std::size_t index_multi = 0;
  double loss_stderr = std::numeric_limits<double>::quiet_NaN();
  long record_every = 1;
};

namespace detail {

inline std::size_t argmin_index(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] < v[best]) best = i;
  return best;
}

}  // namespace detail

// MT = min_t single - min_t multi over the recorded grid. loss_stderr combines
// the two minima's Monte Carlo errors in quadrature.
inline BenefitReport multitask_benefit(const Trajectory& single, const Trajectory& multi_a) {
  if (single.gen_loss.empty() || multi_a.gen_loss.empty()) throw InvalidInput("multitask_benefit: empty trajectory");
  BenefitReport r;
  r.index_single = detail::argmin_index(single.gen_loss);
  r.index_multi = detail::argmin_index(multi_a.gen_loss);
  r.min_loss_single = single.gen_loss[r.index_single];
  r.min_loss_multi = multi_a.gen_loss[r.index_multi];
  r.mt_benefit = r.min_loss_single - r.min_loss_multi;
  r.argmin_single = single.times[r.index_single];
  r.argmin_multi = multi_a.times[r.index_multi];
  r.record_every = single.record_every;
  if (r.index_single < single.gen_stderr.size() && r.index_multi < multi_a.gen_stderr.size()) {
    const double a = single.gen_stderr[r.index_single], b = multi_a.gen_stderr[r.index_multi];
    r.loss_stderr = std::sqrt(a * a + b * b);
  }
  return r;
}

// Trace form with explicit cross-covariance terms:
//   lower = Tr([T - K(W_A)] [W_A - W~_A]^T)
//   upper = Tr([T - K(W~_A)] [W_A - W~_A]^T)
// T is the teacher's cross-covariance, K(W) = G(W) W C_X the student's.
inline std::pair<double, double> bounds_from_cross_cov(const Matrix& w_a, const Matrix& w_a_tilde, const Matrix& t,
                                                       const Matrix& k_a, const Matrix& k_tilde) {
  if (w_a.rows() != w_a_tilde.rows() || w_a.cols() != w_a_tilde.cols() || t.rows() != w_a.rows() ||
      t.cols() != w_a.cols() || k_a.rows() != t.rows() || k_a.cols() != t.cols() || k_tilde.rows() != t.rows() ||
      k_tilde.cols() != t.cols())
    throw InvalidInput("benefit bounds: dimension mismatch");
  Matrix delta = w_a - w_a_tilde;
  return {((t - k_a).cwiseProduct(delta)).sum(), ((t - k_tilde).cwiseProduct(delta)).sum()};
}

struct BoundGs {
  Matrix g_bar;    // G(W_bar_A)
  Matrix g_a;      // G(W_A)
  Matrix g_tilde;  // G(W~_A)
};

// lower = Tr([G(W_bar) W_bar - G(W_A) W_A] C_X [W_A - W~_A]^T); upper uses W~_A
// in the second term.
inline std::pair<double, double> benefit_bounds_general(const Matrix& w_a, const Matrix& w_a_tilde,
                                                        const Matrix& w_bar_a, const Matrix& c_x, const BoundGs& g) {
  if (w_bar_a.rows() != w_a.rows() || w_bar_a.cols() != w_a.cols() || c_x.rows() != w_a.cols())
    throw InvalidInput("benefit_bounds_general: dimension mismatch");
  const auto C = w_a.rows();
  for (const Matrix* m : {&g.g_bar, &g.g_a, &g.g_tilde})
    if (m->rows() != C || m->cols() != C) throw InvalidInput("benefit_bounds_general: G has wrong shape");
  return bounds_from_cross_cov(w_a, w_a_tilde, g.g_bar * w_bar_a * c_x, g.g_a * w_a * c_x,
                               g.g_tilde * w_a_tilde * c_x);
}

// Bounds evaluated on a fixed labeled sample: T = mean e_y x^T and
// K(W) = mean P(W x) x^T. Since the sample loss is convex in W, these bracket
// the sample-loss difference exactly.
inline std::pair<double, double> benefit_bounds_on_sample(const Matrix& w_a, const Matrix& w_a_tilde,
                                                          const TestSet& ts) {
  const int C = static_cast<int>(w_a.rows());
  return bounds_from_cross_cov(w_a, w_a_tilde, empirical_cross_cov(ts.labels, C, ts.x),
                               empirical_cross_cov(w_a, ts.x), empirical_cross_cov(w_a_tilde, ts.x));
}

// Isotropic variant: K(W) ~ iso(Tr G(W)) W C_X with Tr G from Monte Carlo.
inline std::pair<double, double> benefit_bounds_isotropic(const Matrix& w_a, const Matrix& w_a_tilde,
                                                          const Matrix& teacher_cross_cov, const Matrix& c_x,
                                                          long n_samples, RngSeed seed) {
  const double tr_a = estimate_g(w_a, c_x, n_samples, seed).g.trace();
  const double tr_t = estimate_g(w_a_tilde, c_x, n_samples, seed).g.trace();
  return bounds_from_cross_cov(w_a, w_a_tilde, teacher_cross_cov, isotropic_approx(w_a, tr_a) * w_a * c_x,
                               isotropic_approx(w_a_tilde, tr_t) * w_a_tilde * c_x);
}

// Rank-1 aligned form:
//   lower = (s_A - s~_A)(t(s_bar) - s_A g(s_A)), upper = (s_A - s~_A)(t(s_bar) - s~_A g(s~_A))
// with t(s_bar) = s_bar g(s_bar) or the lookup's hard-label drive.
inline std::pair<double, double> benefit_bounds_rank1(double s_a, double s_a_tilde, double s_bar_a,
                                                      const GLookup& g_of) {
  const double d = s_a - s_a_tilde;
  const double t = g_of.target(s_bar_a);
  return {d * (t - s_a * g_of.at(s_a)), d * (t - s_a_tilde * g_of.at(s_a_tilde))};
}

}  // namespace mtldyn

#endif
