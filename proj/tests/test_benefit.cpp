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

#include <gtest/gtest.h>

#include <cmath>

#include "mtldyn/benefit.hpp"
#include "mtldyn/tadynamics.hpp"

using namespace mtldyn;

namespace {

Trajectory curve(std::vector<double> gen, std::vector<double> se, long every = 10) {
  Trajectory t;
  t.record_every = every;
  for (std::size_t i = 0; i < gen.size(); ++i) t.times.push_back(static_cast<long>(i) * every);
  t.gen_loss = std::move(gen);
  t.gen_stderr = std::move(se);
  return t;
}

const GLookup& contrast_g() {
  static const GLookup g = [] {
    const Vector u = (Vector(2) << 1.0, -1.0).finished() / std::sqrt(2.0);
    GLookupOptions opt;
    opt.n_samples = 20000;
    opt.seed = 3;
    return build_g_lookup(u, Vector::Unit(5, 0), Matrix::Identity(5, 5), 12.0, opt);
  }();
  return g;
}

}  // namespace

TEST(Benefit, IdenticalRunsGiveZero) {
  Trajectory t = curve({0.7, 0.5, 0.6}, {0.01, 0.01, 0.01});
  BenefitReport r = multitask_benefit(t, t);
  EXPECT_EQ(r.mt_benefit, 0.0);
  EXPECT_EQ(r.argmin_single, r.argmin_multi);
}

TEST(Benefit, MinimaArgminsAndError) {
  Trajectory single = curve({0.9, 0.6, 0.65, 0.7}, {0.1, 0.03, 0.1, 0.1});
  Trajectory multi = curve({0.9, 0.7, 0.55, 0.6}, {0.1, 0.1, 0.04, 0.1});
  BenefitReport r = multitask_benefit(single, multi);
  EXPECT_DOUBLE_EQ(r.min_loss_single, 0.6);
  EXPECT_DOUBLE_EQ(r.min_loss_multi, 0.55);
  EXPECT_DOUBLE_EQ(r.mt_benefit, 0.6 - 0.55);
  EXPECT_EQ(r.argmin_single, 10);
  EXPECT_EQ(r.argmin_multi, 20);
  EXPECT_DOUBLE_EQ(r.loss_stderr, 0.05);
  EXPECT_EQ(r.record_every, 10);
}

TEST(Benefit, FirstMinimumWinsTies) {
  BenefitReport r = multitask_benefit(curve({0.5, 0.4, 0.4}, {}), curve({0.5, 0.4, 0.4}, {}));
  EXPECT_EQ(r.argmin_single, 10);
  EXPECT_TRUE(std::isnan(r.loss_stderr));
}

TEST(Benefit, EmptyTrajectory) {
  EXPECT_THROW(multitask_benefit(Trajectory{}, curve({1.0}, {0.0})), InvalidInput);
}

TEST(Bounds, EqualWeightsGiveZero) {
  Matrix w = gaussian_matrix(3, 4, 1.0, RngSeed{1});
  BoundGs g{Matrix::Identity(3, 3), Matrix::Identity(3, 3), Matrix::Identity(3, 3)};
  auto [lo, hi] = benefit_bounds_general(w, w, gaussian_matrix(3, 4, 1.0, RngSeed{2}), Matrix::Identity(4, 4), g);
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 0.0);
}

TEST(Bounds, SwappingNegatesAndSwaps) {
  Matrix wa = gaussian_matrix(3, 4, 1.0, RngSeed{3}), wt = gaussian_matrix(3, 4, 1.0, RngSeed{4});
  Matrix wbar = gaussian_matrix(3, 4, 1.0, RngSeed{5});
  const Matrix cx = Matrix::Identity(4, 4);
  BoundGs g{estimate_g(wbar, 20000, 6).g, estimate_g(wa, 20000, 7).g, estimate_g(wt, 20000, 8).g};
  BoundGs swapped{g.g_bar, g.g_tilde, g.g_a};
  auto [lo, hi] = benefit_bounds_general(wa, wt, wbar, cx, g);
  auto [lo2, hi2] = benefit_bounds_general(wt, wa, wbar, cx, swapped);
  EXPECT_NEAR(lo2, -hi, 1e-12);
  EXPECT_NEAR(hi2, -lo, 1e-12);
}

TEST(Bounds, DimensionMismatch) {
  BoundGs g{Matrix::Identity(3, 3), Matrix::Identity(3, 3), Matrix::Identity(2, 2)};
  Matrix w = Matrix::Zero(3, 4);
  EXPECT_THROW(benefit_bounds_general(w, w, w, Matrix::Identity(4, 4), g), InvalidInput);
  EXPECT_THROW(bounds_from_cross_cov(w, Matrix::Zero(3, 5), w, w, w), InvalidInput);
}

TEST(Bounds, SampleBoundsBracketSampleLossDifference) {
  // convexity of the sample cross-entropy makes this exact, with no Monte Carlo slack
  TeacherSpec sp;
  sp.n_features = 6;
  sp.n_classes = 3;
  sp.singular_values = {3.0};
  Teacher t = make_teacher(sp, 9);
  TestSet ts = make_test_set(t, 2000, 10);
  for (RngSeed s = 0; s < 20; ++s) {
    Matrix wa = t.w_bar + gaussian_matrix(3, 6, 0.3, RngSeed{100 + s});
    Matrix wt = 0.5 * t.w_bar + gaussian_matrix(3, 6, 0.3, RngSeed{200 + s});
    const double mt = test_loss(wt, ts).mean - test_loss(wa, ts).mean;
    auto [lo, hi] = benefit_bounds_on_sample(wa, wt, ts);
    EXPECT_LE(lo, mt + 1e-12);
    EXPECT_GE(hi, mt - 1e-12);
  }
}

TEST(Bounds, IsotropicMatchesSampleForLargeSymmetricProblem) {
  TeacherSpec sp;
  sp.n_features = 8;
  sp.n_classes = 2;
  sp.singular_values = {2.0};
  sp.output_frame = OutputFrame::contrast;
  Teacher t = make_teacher(sp, 11);
  TestSet ts = make_test_set(t, 200000, 12);
  Matrix wa = 1.5 * t.w_bar, wt = 0.8 * t.w_bar;
  auto [lo, hi] = benefit_bounds_on_sample(wa, wt, ts);
  auto [li, ui] = benefit_bounds_isotropic(wa, wt, empirical_cross_cov(ts.labels, 2, ts.x), Matrix::Identity(8, 8),
                                           200000, 13);
  // two classes with a contrast frame: G is exactly isotropic on the centered subspace
  EXPECT_NEAR(li, lo, 0.02 * std::abs(lo) + 2e-3);
  EXPECT_NEAR(ui, hi, 0.02 * std::abs(hi) + 2e-3);
}

TEST(Rank1Bounds, EqualValuesGiveZero) {
  auto [lo, hi] = benefit_bounds_rank1(2.0, 2.0, 3.0, contrast_g());
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 0.0);
}

TEST(Rank1Bounds, AgreesWithGeneralForm) {
  const GLookup& g = contrast_g();
  const Matrix u = (Matrix(2, 1) << 1.0, -1.0).finished() / std::sqrt(2.0);
  const Matrix v = Vector::Unit(5, 0);
  // G restricted to the centered subspace: u^T G u = g(s)
  auto gmat = [&](double s) { return isotropic_approx(Matrix::Zero(2, 5), g.at(s)); };
  for (double sa : {0.5, 1.5, 3.0})
    for (double st : {0.7, 2.5}) {
      const double sbar = 2.0;
      BoundGs gs{gmat(sbar), gmat(sa), gmat(st)};
      auto [lo, hi] = benefit_bounds_general(Matrix(sa * u * v.transpose()), Matrix(st * u * v.transpose()),
                                             Matrix(sbar * u * v.transpose()), Matrix::Identity(5, 5), gs);
      auto [lr, hr] = benefit_bounds_rank1(sa, st, sbar, g);
      EXPECT_NEAR(lo, lr, 1e-10);
      EXPECT_NEAR(hi, hr, 1e-10);
    }
}

TEST(Rank1Bounds, EnhancedGrowthGivesNonNegativeLowerBound) {
  const GLookup& g = contrast_g();
  const double s_hat = 4.0;
  TaTrajectory single = integrate_ta(Vector::Constant(1, 0.25), Vector::Constant(1, s_hat), 100.0, 1500, {g}, 10);
  int checked = 0;
  for (double r : {0.3, 0.6, 0.9}) {
    auto [a, b] = integrate_multitask(Vector::Constant(1, 0.5), Vector::Constant(1, 0.5), Vector::Constant(1, s_hat),
                                      Vector::Constant(1, 8.0), r, 100.0, 1500, {g}, {g}, 10);
    for (std::size_t i = 0; i < a.states.size(); ++i) {
      const double sa = a.states[i](0), st = single.states[i](0);
      if (!(sa > st && sa <= s_hat)) continue;
      auto [lo, hi] = benefit_bounds_rank1(sa, st, s_hat, g);
      EXPECT_GE(lo, 0.0);
      EXPECT_GE(hi, lo);
      ++checked;
    }
  }
  EXPECT_GT(checked, 50);
}
