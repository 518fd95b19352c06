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
#include <filesystem>

#include "mtldyn/gmatrix.hpp"
#include "mtldyn/teachergen.hpp"

using namespace mtldyn;

namespace {

Matrix uniform_g(int c) { return Matrix::Identity(c, c) / c - Matrix::Constant(c, c, 1.0 / (c * c)); }

Matrix low_rank(int c, int f, int k, double scale, RngSeed seed) {
  Rng rng(seed);
  return rng.normal_matrix(c, k, scale) * rng.normal_matrix(k, f, 1.0 / std::sqrt(f));
}

// Independent 1-D oracle for two classes: with z = (w_0 - w_1) . x ~ N(0, q),
// G = p(1-p) [[1, -1], [-1, 1]] with p = sigmoid(z). Trapezoid rule on a wide grid.
double two_class_pq(const Matrix& w) {
  const double sd = (w.row(0) - w.row(1)).norm();
  if (sd == 0.0) return 0.25;
  double acc = 0.0;
  const int n = 200001;
  const double lim = 12.0, h = 2.0 * lim / (n - 1);
  for (int i = 0; i < n; ++i) {
    const double t = -lim + i * h;
    const double p = 1.0 / (1.0 + std::exp(-sd * t));
    const double wt = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    acc += wt * p * (1.0 - p) * std::exp(-0.5 * t * t);
  }
  return acc * h / std::sqrt(2.0 * M_PI);
}

}  // namespace

TEST(EstimateG, ZeroWeightsExact) {
  for (int c : {2, 3, 7}) {
    GEstimate e = estimate_g(Matrix::Zero(c, 5), 1000, 1);
    // exact up to accumulated rounding over the sample
    EXPECT_LT((e.g - uniform_g(c)).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_NEAR(e.g.trace(), (c - 1.0) / c, 1e-13);
    EXPECT_LT(e.std_err.maxCoeff(), 1e-8);
  }
}

TEST(EstimateG, TwoClassRankOneMatchesQuadrature) {
  Matrix w = low_rank(2, 6, 1, 2.0, 2);
  GEstimate e = estimate_g(w, 200000, 3);
  const double pq = two_class_pq(w);
  Matrix expect(2, 2);
  expect << pq, -pq, -pq, pq;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_LE(std::abs(e.g(i, j) - expect(i, j)), 3.0 * e.std_err(i, j) + 1e-12);
}

TEST(EstimateG, HermiteRuleMatchesTwoClassOracle) {
  Matrix w = low_rank(2, 6, 1, 3.0, 4);
  const double pq = two_class_pq(w);
  Matrix gh = gauss_hermite_g(w, Matrix::Identity(6, 6));
  EXPECT_NEAR(gh(0, 0), pq, 1e-8);
  EXPECT_NEAR(gh(0, 1), -pq, 1e-8);
}

TEST(EstimateG, RankTwoMatchesHermite) {
  for (RngSeed s = 0; s < 5; ++s) {
    Matrix w = low_rank(4, 7, 2, 1.5, 10 + s);
    GEstimate e = estimate_g(w, 100000, 20 + s);
    Matrix gh = gauss_hermite_g(w, Matrix::Identity(7, 7));
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) EXPECT_LE(std::abs(e.g(i, j) - gh(i, j)), 3.5 * e.std_err(i, j) + 1e-12);
  }
}

TEST(EstimateG, CorrelatedInputsMatchHermite) {
  Matrix w = low_rank(3, 4, 1, 2.0, 30);
  Matrix c(4, 4);
  c.setIdentity();
  c(0, 1) = c(1, 0) = 0.5;
  c(2, 2) = 2.0;
  GEstimate e = estimate_g(w, c, 100000, 31);
  Matrix gh = gauss_hermite_g(w, c);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_LE(std::abs(e.g(i, j) - gh(i, j)), 3.5 * e.std_err(i, j) + 1e-12);
}

TEST(EstimateG, HermiteRejectsHighRank) {
  EXPECT_THROW(gauss_hermite_g(low_rank(4, 6, 3, 1.0, 32), Matrix::Identity(6, 6)), InvalidInput);
}

TEST(EstimateG, StructuralInvariants) {
  for (RngSeed s = 0; s < 10; ++s) {
    Matrix w = low_rank(5, 8, 3, 2.0, 40 + s);
    GEstimate e = estimate_g(w, 50000, 50 + s);
    EXPECT_EQ(e.g, e.g.transpose());
    const double se = e.std_err.maxCoeff();
    for (int i = 0; i < 5; ++i) EXPECT_LE(std::abs(e.g.row(i).sum()), 5.0 * e.std_err.row(i).sum() + 1e-14);
    Eigen::SelfAdjointEigenSolver<Matrix> es(e.g);
    EXPECT_GE(es.eigenvalues().minCoeff(), -3.0 * se);
    int near_zero = 0;
    for (int i = 0; i < 5; ++i) near_zero += std::abs(es.eigenvalues()(i)) < 5.0 * se;
    EXPECT_EQ(near_zero, 1);
  }
}

TEST(EstimateG, StdErrShrinksAsRootN) {
  int ok = 0;
  for (RngSeed s = 0; s < 20; ++s) {
    Matrix w = low_rank(3, 5, 2, 2.0, 60 + s);
    const double a = estimate_g(w, 5000, 80 + s).std_err.maxCoeff();
    const double b = estimate_g(w, 20000, 80 + s).std_err.maxCoeff();
    ok += std::abs(a / b - 2.0) < 0.3 * 2.0;
  }
  EXPECT_EQ(ok, 20);
}

TEST(EstimateG, SoftmaxShiftInvariant) {
  Matrix w = low_rank(4, 6, 2, 2.0, 90);
  Matrix shifted = w + Vector::Ones(4) * gaussian_matrix(1, 6, 1.0, RngSeed{91});
  GEstimate a = estimate_g(w, 100000, 92), b = estimate_g(shifted, 100000, 93);
  Matrix tol = 3.0 * (a.std_err.array().square() + b.std_err.array().square()).sqrt();
  EXPECT_TRUE(((a.g - b.g).array().abs() <= tol.array() + 1e-12).all());
}

TEST(EstimateG, Errors) {
  EXPECT_THROW(estimate_g(Matrix::Zero(2, 3), Matrix::Identity(4, 4), 10, 1), InvalidInput);
  EXPECT_THROW(estimate_g(Matrix::Zero(2, 3), 0, 1), InvalidInput);
}

TEST(TraceG, ZeroWeights) {
  Vector s = Vector::Zero(1);
  EXPECT_NEAR(trace_g(s, Matrix::Ones(3, 1) / std::sqrt(3.0), Matrix::Ones(4, 1) / 2.0, Matrix::Identity(4, 4), 100, 1),
              2.0 / 3.0, 1e-15);
}

TEST(TraceG, DecreasesWithNormAndNonNegative) {
  TeacherSpec sp;
  sp.n_features = 10;
  sp.n_classes = 2;
  Teacher t = make_teacher(sp, 5);
  const Matrix c = Matrix::Identity(10, 10);
  const double g1 = trace_g(Vector::Constant(1, 1.0), t.svd.u, t.svd.v, c, 100000, 6);
  const double g100 = trace_g(Vector::Constant(1, 100.0), t.svd.u, t.svd.v, c, 100000, 6);
  EXPECT_LT(g100, g1);
  EXPECT_GE(g100, 0.0);
}

TEST(Lookup, FlagsIncreasesBeyondNoise) {
  GLookup g;
  g.s = {0.0, 1.0, 2.0, 3.0};
  g.g = {0.25, 0.2, 0.21, 0.1};
  g.se = {0.0, 0.001, 0.001, 0.001};
  EXPECT_EQ(g_increases(g), 1);
  g.se = {0.0, 0.01, 0.01, 0.01};
  EXPECT_EQ(g_increases(g), 0);
}

TEST(Lookup, TwoClassContrastTableDecreases) {
  const Vector u = (Vector(2) << 1.0, -1.0).finished() / std::sqrt(2.0);
  GLookupOptions opt;
  opt.n_samples = 20000;
  GLookup g = build_g_lookup(u, Vector::Unit(4, 0), Matrix::Identity(4, 4), 15.0, opt);
  EXPECT_EQ(g_increases(g), 0);
}

TEST(Isotropic, UniformTraceGivesZeroWeightG) {
  EXPECT_LT((isotropic_approx(Matrix::Zero(5, 3), 0.8) - uniform_g(5)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(isotropic_approx(Matrix::Zero(5, 3), -1.0), InvalidInput);
}

TEST(Isotropic, DiagonallyDominantInstance) {
  // rank 3, s = 5, 10 classes, with W W^T diagonal: the class axes carry the singular directions
  Rng rng(7);
  Matrix u = Matrix::Zero(10, 3);
  for (int k = 0; k < 3; ++k) u(k, k) = 1.0;
  Matrix w = 5.0 * u * random_orthonormal(20, 3, rng).transpose();
  GEstimate e = estimate_g(w, 200000, 8);
  Matrix iso = isotropic_approx(w, e.g.trace());
  EXPECT_LT((iso - e.g).norm() / e.g.norm(), 0.15);
}

TEST(Isotropic, AccurateForSmallWeightsAndDegradesWithScale) {
  double prev = 0.0;
  for (double s : {0.5, 1.0, 2.0, 5.0}) {
    TeacherSpec sp;
    sp.n_features = 20;
    sp.n_classes = 10;
    sp.rank = 3;
    sp.singular_values = {s, s, s};
    Teacher t = make_teacher(sp, 7);
    GEstimate e = estimate_g(t.w_bar, 200000, 8);
    Matrix iso = isotropic_approx(t.w_bar, e.g.trace());
    const double err = (iso - e.g).norm() / e.g.norm();
    if (s <= 1.0) EXPECT_LT(err, 0.06) << "s = " << s;
    EXPECT_GT(err, prev) << "s = " << s;
    prev = err;
  }
}

TEST(CrossCov, ZeroWeights) {
  Matrix x = gaussian_matrix(4, 50, 1.0, RngSeed{9});
  Matrix cc = empirical_cross_cov(Matrix::Zero(3, 4), x);
  Vector mean = x.rowwise().mean();
  for (int c = 0; c < 3; ++c) EXPECT_LT((cc.row(c).transpose() - mean / 3.0).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(CrossCov, LargeSampleMatchesStein) {
  Matrix w = low_rank(3, 4, 2, 1.5, 10);
  Matrix c(4, 4);
  c.setIdentity();
  c(1, 1) = 1.5;
  c(0, 3) = c(3, 0) = 0.3;
  Rng rng(11);
  Matrix x = sample_gaussian_columns(covariance_factor(c), 1000000, rng);
  Matrix lhs = empirical_cross_cov(w, x);
  Matrix rhs = estimate_g(w, c, 400000, 12).g * w * c;
  EXPECT_LT((lhs - rhs).norm() / rhs.norm(), 0.01);
}

TEST(CrossCov, LabelsAreIndicators) {
  Matrix x = gaussian_matrix(3, 20, 1.0, RngSeed{13});
  Matrix sig = gaussian_matrix(4, 3, 1.0, RngSeed{14});
  Labels y = argmax_labels(sig * x);
  Matrix cc = empirical_cross_cov(y, 4, x);
  Matrix manual = Matrix::Zero(4, 3);
  for (int j = 0; j < 20; ++j) manual.row(y[j]) += x.col(j).transpose() / 20.0;
  EXPECT_LT((cc - manual).cwiseAbs().maxCoeff(), 1e-15);
  // a very sharp softmax reproduces the indicator form
  EXPECT_LT((empirical_cross_cov(1e6 * sig, x) - manual).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Drive, NoiselessTwoClassClosedForm) {
  // y = argmax s u v^T x with u = (1, -1)/sqrt(2): u_y = sign(v.x)/sqrt(2), so the drive is E|v.x|/sqrt(2)
  TeacherSpec sp;
  sp.n_features = 12;
  sp.singular_values = {2.0};
  sp.output_frame = OutputFrame::contrast;
  Teacher t = make_teacher(sp, 15);
  // pool ten independent estimates so a single unlucky draw cannot decide the test
  double sum = 0.0, var = 0.0;
  for (RngSeed seed = 16; seed < 26; ++seed) {
    DriveEstimate d = hard_label_drive(t.w_bar, t.svd.u, t.svd.v, Matrix::Identity(12, 12), 200000, seed);
    EXPECT_GT(d.std_err(0), 0.0);
    sum += d.value(0);
    var += d.std_err(0) * d.std_err(0);
  }
  EXPECT_NEAR(sum / 10.0, 1.0 / std::sqrt(M_PI), 3.0 * std::sqrt(var) / 10.0);
}

TEST(Drive, DimensionMismatch) {
  EXPECT_THROW(hard_label_drive(Matrix::Zero(2, 3), Matrix::Zero(3, 1), Matrix::Zero(3, 1), Matrix::Identity(3, 3),
                                10, 1),
               InvalidInput);
}

namespace {

GLookup linear_table() {
  GLookup g;
  g.s = {0.0, 1.0, 2.0};
  g.g = {1.0, 0.5, 0.0};
  g.se = {0.0, 0.0, 0.0};
  return g;
}

}  // namespace

TEST(Lookup, InterpolatesLinearly) {
  GLookup g = linear_table();
  EXPECT_DOUBLE_EQ(g.at(0.5), 0.75);
  EXPECT_DOUBLE_EQ(g.at(1.5), 0.25);
  EXPECT_DOUBLE_EQ(g.at(2.0), 0.0);
  EXPECT_THROW(g.at(2.1), RangeError);
  EXPECT_THROW(g.at(-0.1), RangeError);
  EXPECT_THROW(GLookup{}.at(0.0), RangeError);
}

TEST(Lookup, TargetUsesDriveWhenSet) {
  GLookup g = linear_table();
  EXPECT_DOUBLE_EQ(g.target(1.0), 0.5);
  g.drive = 0.3;
  EXPECT_DOUBLE_EQ(g.target(1.0), 0.3);
}

TEST(Lookup, TableMatchesDirectEstimate) {
  TeacherSpec sp;
  sp.n_features = 8;
  sp.n_classes = 4;
  Teacher t = make_teacher(sp, 17);
  const Vector u = t.svd.u.col(0), v = t.svd.v.col(0);
  GLookupOptions opt;
  opt.n_samples = 100000;
  opt.seed = 18;
  GLookup lk = build_g_lookup(u, v, Matrix::Identity(8, 8), 6.0, opt);
  EXPECT_TRUE(std::is_sorted(lk.s.begin(), lk.s.end()));
  EXPECT_DOUBLE_EQ(lk.s.back(), 6.0);
  for (double s : {0.0, 1.0, 3.0, 6.0}) {
    GEstimate e = estimate_g(s * u * v.transpose(), 100000, 19);
    const double direct = u.dot(e.g * u);
    const double se = u.cwiseAbs().dot(e.std_err * u.cwiseAbs());
    const double tab = lk.at(s);
    auto it = std::lower_bound(lk.s.begin(), lk.s.end(), s);
    const double tab_se = lk.se[static_cast<std::size_t>(it - lk.s.begin())];
    EXPECT_LE(std::abs(tab - direct), 3.0 * std::hypot(se, tab_se) + 1e-12) << "s = " << s;
  }
}

TEST(Lookup, RefinesWhereCurveBends) {
  const Vector u = (Vector(2) << 1.0, -1.0).finished() / std::sqrt(2.0);
  const Vector v = Vector::Unit(4, 0);
  GLookupOptions coarse;
  coarse.n_samples = 2000;
  coarse.spacing = 1.0;
  coarse.refine_tol = 0.02;
  GLookup lk = build_g_lookup(u, v, Matrix::Identity(4, 4), 8.0, coarse);
  EXPECT_GT(lk.s.size(), 9u);
  for (std::size_t i = 1; i < lk.s.size(); ++i)
    if (lk.s[i] - lk.s[i - 1] > 1.0 / 64.0 + 1e-12) {
      EXPECT_LE(std::abs(lk.g[i] - lk.g[i - 1]), 0.02 * std::abs(lk.g[i - 1]) + 1e-15);
    }
}

TEST(Lookup, FileRoundTrip) {
  GLookup g = linear_table();
  g.drive = 0.123456789012345678;
  g.drive_se = 1e-4;
  g.key = "abc-C2";
  const std::string path = (std::filesystem::temp_directory_path() / "mtldyn_lookup_roundtrip.gcache").string();
  write_g_lookup(g, path);
  GLookup back = read_g_lookup(path);
  EXPECT_EQ(back.s, g.s);
  EXPECT_EQ(back.g, g.g);
  EXPECT_EQ(back.drive, g.drive);
  EXPECT_EQ(back.key, g.key);
  GLookup unset = linear_table();
  write_g_lookup(unset, path);
  EXPECT_TRUE(std::isnan(read_g_lookup(path).drive));
  std::filesystem::remove(path);
}

TEST(Lookup, Errors) {
  const Vector u = Vector::Ones(2) / std::sqrt(2.0), v = Vector::Unit(3, 0);
  EXPECT_THROW(build_g_lookup(u, v, Matrix::Identity(3, 3), 0.0), InvalidInput);
  EXPECT_THROW(build_g_lookup(u, v, Matrix::Identity(4, 4), 1.0), InvalidInput);
  EXPECT_THROW(read_g_lookup("/nonexistent/file.gcache"), InvalidInput);
}
