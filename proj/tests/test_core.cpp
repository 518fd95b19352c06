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
#include <limits>

#include "mtldyn/core.hpp"

using namespace mtldyn;

TEST(Softmax, ZeroColumnIsUniform) {
  Matrix p = softmax_columns(Matrix::Zero(3, 1));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p(i, 0), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariant) {
  Matrix z(2, 1), zs(2, 1);
  z << 0.3, -1.2;
  zs << 0.3 + 17.5, -1.2 + 17.5;
  EXPECT_LT((softmax_columns(z) - softmax_columns(zs)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Softmax, LogTwoColumn) {
  Matrix z(2, 1);
  z << std::log(2.0), 0.0;
  Matrix p = softmax_columns(z);
  EXPECT_NEAR(p(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p(1, 0), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ColumnsSumToOneAtLargeMagnitude) {
  Rng rng(3);
  Matrix z = rng.normal_matrix(7, 50, 1e3);
  Matrix p = softmax_columns(z);
  EXPECT_LT((p.colwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
  EXPECT_TRUE(p.allFinite());
}

TEST(Softmax, RejectsNonFinite) {
  Matrix z = Matrix::Zero(2, 2);
  z(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(softmax_columns(z), InvalidInput);
  z(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(softmax_columns(z), InvalidInput);
}

TEST(Argmax, SimpleColumn) {
  Matrix s(2, 1);
  s << 3.0, 1.0;
  EXPECT_EQ(argmax_labels(s)[0], 0);
}

TEST(Argmax, TiesGoToLowestIndex) {
  EXPECT_EQ(argmax_labels(Matrix::Constant(4, 1, 2.5))[0], 0);
  Matrix s(3, 1);
  s << 0.0, 1.0, 1.0;
  EXPECT_EQ(argmax_labels(s)[0], 1);
}

TEST(Argmax, MatchesLinearScan) {
  Rng rng(11);
  Matrix s = rng.normal_matrix(10, 100);
  Labels y = argmax_labels(s);
  for (int j = 0; j < 100; ++j) {
    int best = 0;
    double bv = s(0, j);
    for (int i = 1; i < 10; ++i)
      if (s(i, j) > bv) bv = s(i, j), best = i;
    EXPECT_EQ(y[j], best);
  }
}

TEST(Argmax, InvariantUnderShiftAndPositiveScale) {
  Rng rng(12);
  Matrix s = rng.normal_matrix(5, 40);
  Matrix t = s;
  for (int j = 0; j < t.cols(); ++j) t.col(j) = (0.1 + j) * t.col(j).array() + (j - 20.0);
  EXPECT_EQ(argmax_labels(s), argmax_labels(t));
}

TEST(Argmax, RejectsEmpty) { EXPECT_THROW(argmax_labels(Matrix(0, 3)), InvalidInput); }

TEST(OneHot, MatchesLabels) {
  Matrix m = one_hot({2, 0, 1}, 3);
  EXPECT_EQ(m(2, 0), 1.0);
  EXPECT_EQ(m(0, 1), 1.0);
  EXPECT_EQ(m(1, 2), 1.0);
  EXPECT_EQ(m.sum(), 3.0);
  EXPECT_THROW(one_hot({3}, 3), InvalidInput);
}

TEST(Svd, Identity) {
  SvdTriple t = svd(Matrix::Identity(3, 3));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(t.s(i), 1.0, 1e-14);
}

TEST(Svd, DiagonalUpToSigns) {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = 1.0;
  m(1, 1) = 2.0;
  SvdTriple t = svd(m);
  EXPECT_NEAR(t.s(0), 2.0, 1e-14);
  EXPECT_NEAR(t.s(1), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(t.u(1, 0)), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(t.v(1, 0)), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(t.u(0, 1)), 1.0, 1e-14);
}

TEST(Svd, ReconstructsRandomMatrix) {
  Matrix m = gaussian_matrix(10, 20, 1.0, RngSeed{5});
  SvdTriple t = svd(m);
  Matrix back = t.u * t.s.asDiagonal() * t.v.transpose();
  EXPECT_LT((back - m).norm() / m.norm(), 1e-6);
  EXPECT_LT((t.u.transpose() * t.u - Matrix::Identity(10, 10)).norm(), 1e-10);
}

TEST(Svd, SortedNonNegativeAndSigned) {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(static_cast<RngSeed>(seed));
    const auto r = 1 + static_cast<Eigen::Index>(rng.index(40));
    const auto c = 1 + static_cast<Eigen::Index>(rng.index(40));
    Matrix m = rng.normal_matrix(r, c);
    SvdTriple t = svd(m);
    for (Eigen::Index i = 0; i < t.s.size(); ++i) {
      EXPECT_GE(t.s(i), 0.0);
      if (i > 0) {
        EXPECT_LE(t.s(i), t.s(i - 1));
      }
      Eigen::Index arg;
      t.u.col(i).cwiseAbs().maxCoeff(&arg);
      EXPECT_GT(t.u(arg, i), 0.0);
    }
  }
}

TEST(Svd, LargeMatrixPath) {
  Matrix m = gaussian_matrix(40, 60, 1.0, RngSeed{8});
  SvdTriple t = svd(m);
  EXPECT_EQ(t.s.size(), 40);
  EXPECT_LT((t.u * t.s.asDiagonal() * t.v.transpose() - m).norm() / m.norm(), 1e-10);
}

TEST(Svd, RejectsNonFinite) {
  Matrix m = Matrix::Ones(2, 2);
  m(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(svd(m), InvalidInput);
}

TEST(GaussianMatrix, ZeroVariance) { EXPECT_EQ(gaussian_matrix(4, 5, 0.0, RngSeed{1}).norm(), 0.0); }

TEST(GaussianMatrix, Moments) {
  Matrix m = gaussian_matrix(1000, 1000, 1.0, RngSeed{2});
  const double mean = m.mean();
  const double var = (m.array() - mean).square().sum() / (m.size() - 1.0);
  EXPECT_LT(std::abs(mean), 3.0 / 1000.0);
  EXPECT_NEAR(var, 1.0, 0.02);
}

TEST(GaussianMatrix, SameSeedSameMatrix) {
  EXPECT_EQ(gaussian_matrix(6, 7, 2.0, RngSeed{9}), gaussian_matrix(6, 7, 2.0, RngSeed{9}));
  EXPECT_NE(gaussian_matrix(6, 7, 2.0, RngSeed{9}), gaussian_matrix(6, 7, 2.0, RngSeed{10}));
}

TEST(GaussianMatrix, RejectsNegativeVariance) { EXPECT_THROW(gaussian_matrix(2, 2, -1.0, RngSeed{1}), InvalidInput); }

TEST(Seeds, DerivedSeedsDiffer) {
  EXPECT_NE(derive_seed(1, "a"), derive_seed(1, "b"));
  EXPECT_NE(derive_seed(1, "a"), derive_seed(2, "a"));
  EXPECT_EQ(derive_seed(1, "a"), derive_seed(1, "a"));
  EXPECT_NE(derive_seed(0, std::uint64_t{0}), derive_seed(0, std::uint64_t{1}));
}

TEST(Orthonormal, ColumnsOrthonormal) {
  Rng rng(4);
  Matrix q = random_orthonormal(9, 4, rng);
  EXPECT_LT((q.transpose() * q - Matrix::Identity(4, 4)).norm(), 1e-12);
  EXPECT_THROW(random_orthonormal(3, 4, rng), InvalidInput);
}

TEST(Covariance, FactorSquaresBack) {
  Rng rng(6);
  Matrix a = rng.normal_matrix(5, 5);
  Matrix c = a * a.transpose();
  Matrix l = covariance_factor(c);
  EXPECT_LT((l * l.transpose() - c).norm(), 1e-10);
}

TEST(Covariance, RejectsNonPsd) {
  Matrix c = Matrix::Identity(3, 3);
  c(2, 2) = -1.0;
  EXPECT_THROW(covariance_factor(c), InvalidInput);
  Matrix ns = Matrix::Identity(2, 2);
  ns(0, 1) = 0.5;
  EXPECT_THROW(covariance_factor(ns), InvalidInput);
}

TEST(Covariance, SampleCovarianceConverges) {
  Matrix c(2, 2);
  c << 2.0, 0.6, 0.6, 1.0;
  Rng rng(7);
  Matrix x = sample_gaussian_columns(covariance_factor(c), 200000, rng);
  Matrix emp = x * x.transpose() / static_cast<double>(x.cols());
  EXPECT_LT((emp - c).cwiseAbs().maxCoeff(), 0.03);
}
