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

#ifndef MTLDYN_TEACHERGEN_HPP
#define MTLDYN_TEACHERGEN_HPP

#include <limits>
#include <utility>
#include <vector>

#include "mtldyn/core.hpp"

namespace mtldyn {

// How the left singular frame of a teacher is drawn.
//   random:   Haar-random orthonormal columns.
//   contrast: column k is (e_a - e_b)/sqrt(2) for disjoint class pairs
//             (a, b) taken from a random permutation. Needs 2*rank <= classes.
enum class OutputFrame { random, contrast };

struct TeacherSpec {
  int n_features = 64;
  int n_classes = 2;
  int rank = 1;
  std::vector<double> singular_values{1.0};
  double noise_sigma = 0.0;
  double label_sharpness = std::numeric_limits<double>::infinity();
  OutputFrame output_frame = OutputFrame::random;

  void validate() const {
    if (n_features < 1 || n_classes < 2) throw InvalidSpec("teacher: need >=1 feature and >=2 classes");
    if (rank < 1 || rank > std::min(n_features, n_classes))
      throw InvalidSpec("teacher: rank must lie in [1, min(features, classes)]");
    if (static_cast<int>(singular_values.size()) != rank)
      throw InvalidSpec("teacher: singular_values length must equal rank");
    for (double s : singular_values)
      if (!(s > 0.0) || !std::isfinite(s)) throw InvalidSpec("teacher: singular values must be positive");
    if (!(noise_sigma >= 0.0)) throw InvalidSpec("teacher: noise_sigma must be >= 0");
    if (!(label_sharpness > 0.0)) throw InvalidSpec("teacher: label_sharpness must be > 0");
    if (output_frame == OutputFrame::contrast && 2 * rank > n_classes)
      throw InvalidSpec("teacher: contrast frame needs 2*rank <= classes");
  }
};

struct Teacher {
  Matrix w_bar;
  SvdTriple svd;  // thin, rank columns
};

struct NoisyTeacher {
  Matrix sigma_hat;
  SvdTriple svd;  // full thin SVD of sigma_hat
  Matrix noise;
};

struct Dataset {
  Matrix x;  // features x n_data
  Labels noisy_labels;
  Labels clean_labels;
  Matrix input_covariance;
  Matrix soft_targets;  // empty unless finite-sharpness targets were requested
};

namespace detail {

inline Matrix output_frame(const TeacherSpec& spec, Rng& rng) {
  if (spec.output_frame == OutputFrame::random)
    return random_orthonormal(spec.n_classes, spec.rank, rng);
  std::vector<int> perm(static_cast<std::size_t>(spec.n_classes));
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
  Matrix u = Matrix::Zero(spec.n_classes, spec.rank);
  const double h = 1.0 / std::sqrt(2.0);
  for (int k = 0; k < spec.rank; ++k) {
    u(perm[2 * k], k) = h;
    u(perm[2 * k + 1], k) = -h;
  }
  return u;
}

inline Teacher assemble(const Matrix& u, const std::vector<double>& sv, const Matrix& v) {
  std::vector<std::size_t> order(sv.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sv[a] > sv[b]; });
  Teacher t;
  const auto k = static_cast<Eigen::Index>(sv.size());
  t.svd.u.resize(u.rows(), k);
  t.svd.v.resize(v.rows(), k);
  t.svd.s.resize(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    const auto src = static_cast<Eigen::Index>(order[static_cast<std::size_t>(c)]);
    t.svd.u.col(c) = u.col(src);
    t.svd.v.col(c) = v.col(src);
    t.svd.s(c) = sv[static_cast<std::size_t>(src)];
  }
  t.w_bar = t.svd.u * t.svd.s.asDiagonal() * t.svd.v.transpose();
  return t;
}

}  // namespace detail

inline Teacher make_teacher(const TeacherSpec& spec, RngSeed seed) {
  spec.validate();
  Rng rng(seed);
  Matrix u = detail::output_frame(spec, rng);
  Matrix v = random_orthonormal(spec.n_features, spec.rank, rng);
  return detail::assemble(u, spec.singular_values, v);
}

// Teachers whose right frames satisfy V_B = r V_A + sqrt(1 - r^2) V_perp.
inline std::pair<Teacher, Teacher> make_related_pair(const TeacherSpec& spec_a, const TeacherSpec& spec_b,
                                                     double r, RngSeed seed) {
  spec_a.validate();
  spec_b.validate();
  if (spec_a.rank != spec_b.rank) throw InvalidSpec("related pair: ranks differ");
  if (spec_a.n_features != spec_b.n_features) throw InvalidSpec("related pair: feature counts differ");
  if (2 * spec_a.rank > spec_a.n_features)
    throw InvalidSpec("related pair: need 2*rank <= features for the orthogonal complement");
  if (!(r >= 0.0 && r <= 1.0)) throw InvalidSpec("related pair: r must lie in [0, 1]");
  Rng rng(seed);
  const int k = spec_a.rank;
  Matrix frame = random_orthonormal(spec_a.n_features, 2 * k, rng);
  Matrix va = frame.leftCols(k);
  Matrix vperp = frame.rightCols(k);
  Matrix vb = r * va + std::sqrt(std::max(0.0, 1.0 - r * r)) * vperp;
  Matrix ua = detail::output_frame(spec_a, rng);
  Matrix ub = detail::output_frame(spec_b, rng);
  return {detail::assemble(ua, spec_a.singular_values, va), detail::assemble(ub, spec_b.singular_values, vb)};
}

inline NoisyTeacher perturb_teacher(const Teacher& t, double sigma_hat, RngSeed seed) {
  if (!(sigma_hat >= 0.0)) throw InvalidInput("perturb_teacher: negative sigma");
  NoisyTeacher nt;
  const auto n1 = static_cast<double>(t.w_bar.cols());
  nt.noise = gaussian_matrix(t.w_bar.rows(), t.w_bar.cols(), sigma_hat * sigma_hat / n1, seed);
  nt.sigma_hat = t.w_bar + nt.noise;
  nt.svd = svd(nt.sigma_hat);
  return nt;
}

inline Dataset sample_dataset(const NoisyTeacher& nt, const Teacher& t, Eigen::Index n_data, const Matrix& c_x,
                              RngSeed seed) {
  if (n_data < 1) throw InvalidInput("sample_dataset: n_data must be >= 1");
  if (c_x.rows() != t.w_bar.cols()) throw InvalidInput("sample_dataset: covariance dimension mismatch");
  if (nt.sigma_hat.rows() != t.w_bar.rows() || nt.sigma_hat.cols() != t.w_bar.cols())
    throw InvalidInput("sample_dataset: teacher shapes differ");
  Matrix factor = covariance_factor(c_x);
  Rng rng(seed);
  Dataset d;
  d.x = sample_gaussian_columns(factor, n_data, rng);
  d.noisy_labels = argmax_labels(nt.sigma_hat * d.x);
  d.clean_labels = argmax_labels(t.w_bar * d.x);
  d.input_covariance = c_x;
  return d;
}

inline Dataset sample_dataset(const NoisyTeacher& nt, const Teacher& t, Eigen::Index n_data, RngSeed seed) {
  return sample_dataset(nt, t, n_data, Matrix::Identity(t.w_bar.cols(), t.w_bar.cols()), seed);
}

// Replace one-hot training targets by softmax(beta * sigma_hat * X).
inline void set_soft_targets(Dataset& d, const NoisyTeacher& nt, double beta) {
  if (!(beta > 0.0)) throw InvalidInput("set_soft_targets: beta must be > 0");
  if (std::isinf(beta)) {
    d.soft_targets.resize(0, 0);
    return;
  }
  d.soft_targets = softmax_columns(beta * (nt.sigma_hat * d.x));
}

inline double label_flip_rate(const Dataset& d) {
  if (d.noisy_labels.empty()) return 0.0;
  std::size_t flips = 0;
  for (std::size_t i = 0; i < d.noisy_labels.size(); ++i) flips += d.noisy_labels[i] != d.clean_labels[i];
  return static_cast<double>(flips) / static_cast<double>(d.noisy_labels.size());
}

// r_AB = V_B^T V_A.
inline Matrix relatedness(const Teacher& a, const Teacher& b) {
  if (a.w_bar.cols() != b.w_bar.cols()) throw InvalidInput("relatedness: feature counts differ");
  return b.svd.v.transpose() * a.svd.v;
}

}  // namespace mtldyn

#endif
