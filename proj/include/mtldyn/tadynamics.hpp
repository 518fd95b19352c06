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

#ifndef MTLDYN_TADYNAMICS_HPP
#define MTLDYN_TADYNAMICS_HPP

#include <cmath>
#include <utility>
#include <vector>

#include "mtldyn/core.hpp"
#include "mtldyn/gmatrix.hpp"
#include "mtldyn/student.hpp"

namespace mtldyn {

struct TaTrajectory {
  std::vector<long> times;
  std::vector<Vector> states;  // composite singular values
  std::vector<Vector> heads;   // multitask only: per-task head values
  std::vector<Vector> trunk;   // multitask only: shared trunk values
  std::vector<double> gen_loss;
  std::vector<double> gen_stderr;
};

// 2 s (target(s_hat) - s g(s)); target is s_hat g(s_hat) or the hard-label drive.
inline double rank1_rhs(double s, double s_hat, const GLookup& g) { return 2.0 * s * (g.target(s_hat) - s * g.at(s)); }

namespace detail {

inline bool due(long step, long steps, long every) { return step % every == 0 || step == steps; }

inline void check_tau(double tau, long steps, long every) {
  if (!(tau > 0.0)) throw InvalidInput("integrate: tau must be > 0");
  if (steps < 0) throw InvalidInput("integrate: steps must be >= 0");
  if (every < 1) throw InvalidInput("integrate: record_every must be >= 1");
}

inline const GLookup& pick(const std::vector<GLookup>& g, Eigen::Index i) {
  if (g.empty()) throw InvalidInput("integrate: no g lookup");
  return g.size() == 1 ? g.front() : g.at(static_cast<std::size_t>(i));
}

}  // namespace detail

// Explicit Euler with step 1/tau, one step per SGD step.
inline TaTrajectory integrate_ta(const Vector& s0, const Vector& s_hat, double tau, long steps,
                                 const std::vector<GLookup>& g_of, long record_every = 1) {
  detail::check_tau(tau, steps, record_every);
  if (s0.size() != s_hat.size()) throw InvalidInput("integrate_ta: s0 and s_hat differ in length");
  if (g_of.size() != 1 && static_cast<Eigen::Index>(g_of.size()) != s0.size())
    throw InvalidInput("integrate_ta: need one g lookup or one per mode");
  for (Eigen::Index i = 0; i < s0.size(); ++i)
    if (!(s0(i) >= 0.0)) throw InvalidInput("integrate_ta: s0 must be >= 0");
  const double eta = 1.0 / tau;
  Vector target(s0.size());
  for (Eigen::Index i = 0; i < s0.size(); ++i)
    target(i) = s_hat(i) == 0.0 ? 0.0 : detail::pick(g_of, i).target(s_hat(i));
  TaTrajectory tr;
  Vector s = s0;
  for (long step = 0;; ++step) {
    if (detail::due(step, steps, record_every)) {
      tr.times.push_back(step);
      tr.states.push_back(s);
    }
    if (step == steps) break;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const double rhs = 2.0 * s(i) * (target(i) - s(i) * detail::pick(g_of, i).at(s(i)));
      s(i) = s(i) + eta * rhs;
    }
    if (!s.allFinite()) throw NumericalError("integrate_ta: non-finite state at step " + std::to_string(step));
  }
  return tr;
}

inline TaTrajectory integrate_rank1(double s0, double s_hat, double tau, long steps, const GLookup& g_of,
                                    long record_every = 1) {
  if (!(s0 > 0.0)) throw InvalidInput("integrate_rank1: s0 must be > 0");
  return integrate_ta(Vector::Constant(1, s0), Vector::Constant(1, s_hat), tau, steps, {g_of}, record_every);
}

// Two-teacher aligned dynamics with scalar relatedness r. s_a0, s_b0 are the
// initial head values; the trunk value satisfies s21^2 = s_a^2 + r s_b^2.
// Stepped in the squared head values a = s_a^2, b = s_b^2:
//   tau da/dt = 2 c_a (t_a - c_a g_a(c_a)),  c_a = sqrt(a (a + r b))
//   tau db/dt = 2 r c_b (t_b - c_b g_b(c_b)), c_b = sqrt(b (a + r b))
// which is the head equation multiplied by 2 s; at r = 0, a follows the
// single-task equation exactly.
inline std::pair<TaTrajectory, TaTrajectory> integrate_multitask(const Vector& s_a0, const Vector& s_b0,
                                                                 const Vector& s_hat_a, const Vector& s_hat_b,
                                                                 double r, double tau, long steps,
                                                                 const std::vector<GLookup>& g_a,
                                                                 const std::vector<GLookup>& g_b,
                                                                 long record_every = 1) {
  detail::check_tau(tau, steps, record_every);
  if (!(r >= 0.0 && r <= 1.0)) throw InvalidInput("integrate_multitask: r must lie in [0, 1]");
  const Eigen::Index k = s_a0.size();
  if (s_b0.size() != k || s_hat_a.size() != k || s_hat_b.size() != k)
    throw InvalidInput("integrate_multitask: state lengths differ");
  const double eta = 1.0 / tau;
  Vector ta(k), tb(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    ta(i) = s_hat_a(i) == 0.0 ? 0.0 : detail::pick(g_a, i).target(s_hat_a(i));
    tb(i) = (s_hat_b(i) == 0.0 || r == 0.0) ? 0.0 : detail::pick(g_b, i).target(s_hat_b(i));
  }
  Vector a = s_a0.cwiseAbs2(), b = s_b0.cwiseAbs2();
  std::pair<TaTrajectory, TaTrajectory> out;
  for (long step = 0;; ++step) {
    Vector trunk = (a + r * b).cwiseMax(0.0).cwiseSqrt();
    Vector ha = a.cwiseSqrt(), hb = b.cwiseSqrt();
    Vector ca = (a.cwiseProduct(a + r * b)).cwiseMax(0.0).cwiseSqrt();
    Vector cb = (b.cwiseProduct(a + r * b)).cwiseMax(0.0).cwiseSqrt();
    for (Eigen::Index i = 0; i < k; ++i) {
      const double lhs = trunk(i) * trunk(i), rhs = ha(i) * ha(i) + r * hb(i) * hb(i);
      if (std::abs(lhs - rhs) > 1e-8 * std::max(1.0, std::abs(rhs)))
        throw ConsistencyError("integrate_multitask: trunk coupling violated at step " + std::to_string(step));
    }
    if (detail::due(step, steps, record_every)) {
      out.first.times.push_back(step);
      out.first.states.push_back(ca);
      out.first.heads.push_back(ha);
      out.first.trunk.push_back(trunk);
      out.second.times.push_back(step);
      out.second.states.push_back(cb);
      out.second.heads.push_back(hb);
      out.second.trunk.push_back(trunk);
    }
    if (step == steps) break;
    for (Eigen::Index i = 0; i < k; ++i) {
      const double da = 2.0 * ca(i) * (ta(i) - ca(i) * detail::pick(g_a, i).at(ca(i)));
      double db = 0.0;
      if (r != 0.0) db = 2.0 * r * cb(i) * (tb(i) - cb(i) * detail::pick(g_b, i).at(cb(i)));
      a(i) = std::max(0.0, a(i) + eta * da);
      b(i) = std::max(0.0, b(i) + eta * db);
    }
    if (!a.allFinite() || !b.allFinite())
      throw NumericalError("integrate_multitask: non-finite state at step " + std::to_string(step));
  }
  return out;
}

// Generalization loss of W(t) = U diag(s(t)) V^T on a fixed test set, at every
// `every`-th record.
inline void attach_gen_loss(TaTrajectory& tr, const Matrix& u, const Matrix& v, const TestSet& ts, long every = 1) {
  tr.gen_loss.assign(tr.states.size(), std::numeric_limits<double>::quiet_NaN());
  tr.gen_stderr.assign(tr.states.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < tr.states.size(); i += static_cast<std::size_t>(every)) {
    const auto k = tr.states[i].size();
    Matrix w = u.leftCols(k) * tr.states[i].asDiagonal() * v.leftCols(k).transpose();
    LossEstimate e = test_loss(w, ts);
    tr.gen_loss[i] = e.mean;
    tr.gen_stderr[i] = e.stderr_;
  }
}

}  // namespace mtldyn

#endif
