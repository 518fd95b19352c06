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

// Invariant checks shared by the `validate` command and the acceptance suite.

#ifndef MTLDYN_VALIDATE_HPP
#define MTLDYN_VALIDATE_HPP

#include <cstdio>
#include <string>
#include <vector>

#include "mtldyn/experiment.hpp"

namespace mtldyn {

inline std::string short_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Small random supervised problem for gradient and descent checks.
struct Instance {
  std::vector<Matrix> layers;
  Activation act = Activation::linear;
  Matrix x;
  Matrix targets;
};

inline Instance random_instance(RngSeed seed, int max_classes, int max_features, int min_layers, int max_layers,
                                Activation act, long n_data = 12, double weight_scale = 1.0) {
  Rng rng(seed);
  Instance in;
  in.act = act;
  const int C = 2 + static_cast<int>(rng.index(static_cast<std::size_t>(max_classes - 1)));
  const int F = 2 + static_cast<int>(rng.index(static_cast<std::size_t>(max_features - 1)));
  const int L = min_layers + static_cast<int>(rng.index(static_cast<std::size_t>(max_layers - min_layers + 1)));
  std::vector<int> w{F};
  for (int l = 1; l < L; ++l) w.push_back(2 + static_cast<int>(rng.index(5)));
  w.push_back(C);
  for (int l = 0; l < L; ++l) in.layers.push_back(rng.normal_matrix(w[l + 1], w[l], weight_scale / std::sqrt(w[l])));
  in.x = rng.normal_matrix(F, n_data);
  Labels y(static_cast<std::size_t>(n_data));
  for (auto& v : y) v = static_cast<int>(rng.index(static_cast<std::size_t>(C)));
  in.targets = one_hot(y, C);
  return in;
}

inline double instance_loss(const std::vector<Matrix>& layers, const Instance& in) {
  return soft_cross_entropy(logits(layers, in.act, in.x), in.targets);
}

// Max |analytic - central difference| over all weight entries.
inline double fd_gradient_error(const Instance& in, double eps = 1e-5) {
  auto grads = loss_gradients(in.layers, in.act, in.x, in.targets);
  double worst = 0.0;
  std::vector<Matrix> w = in.layers;
  for (std::size_t l = 0; l < w.size(); ++l)
    for (Eigen::Index j = 0; j < w[l].cols(); ++j)
      for (Eigen::Index i = 0; i < w[l].rows(); ++i) {
        const double keep = w[l](i, j);
        w[l](i, j) = keep + eps;
        const double up = instance_loss(w, in);
        w[l](i, j) = keep - eps;
        const double dn = instance_loss(w, in);
        w[l](i, j) = keep;
        worst = std::max(worst, std::abs((up - dn) / (2.0 * eps) - grads[l](i, j)));
      }
  return worst;
}

// Max over layer pairs of ||D_l(t) - D_l(0)||_F, D_l = W_{l+1}^T W_{l+1} - W_l W_l^T.
inline double conservation_drift(const std::vector<Matrix>& start, const std::vector<Matrix>& end) {
  double worst = 0.0;
  for (std::size_t l = 0; l + 1 < start.size(); ++l) {
    Matrix d0 = start[l + 1].transpose() * start[l + 1] - start[l] * start[l].transpose();
    Matrix d1 = end[l + 1].transpose() * end[l + 1] - end[l] * end[l].transpose();
    worst = std::max(worst, (d1 - d0).norm());
  }
  return worst;
}

inline std::vector<Matrix> run_gd(std::vector<Matrix> layers, Activation act, const Matrix& x, const Matrix& targets,
                                  double eta, long steps, std::vector<double>* losses = nullptr) {
  for (long t = 0; t < steps; ++t) {
    double loss = 0.0;
    auto g = loss_gradients(layers, act, x, targets, &loss);
    if (losses) losses->push_back(loss);
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l] -= eta * g[l];
  }
  if (losses) losses->push_back(soft_cross_entropy(logits(layers, act, x), targets));
  return layers;
}

// Linear teacher-student problem used by the conservation and descent checks.
inline Instance teacher_instance(RngSeed seed, long n_data = 200) {
  Rng rng(seed);
  const int C = 2 + static_cast<int>(rng.index(4));
  const int F = 4 + static_cast<int>(rng.index(5));
  const int L = 2 + static_cast<int>(rng.index(2));
  TeacherSpec spec;
  spec.n_features = F;
  spec.n_classes = C;
  spec.rank = 1;
  spec.singular_values = {1.0 + 3.0 * static_cast<double>(rng.index(1000)) / 1000.0};
  Teacher t = make_teacher(spec, rng.bits());
  NoisyTeacher nt = perturb_teacher(t, 0.5, rng.bits());
  Dataset d = sample_dataset(nt, t, n_data, rng.bits());
  Instance in;
  in.act = Activation::linear;
  std::vector<int> w{F};
  for (int l = 1; l < L; ++l) w.push_back(3 + static_cast<int>(rng.index(4)));
  w.push_back(C);
  for (int l = 0; l < L; ++l) in.layers.push_back(rng.normal_matrix(w[l + 1], w[l], 0.5 / std::sqrt(w[l])));
  in.x = d.x;
  in.targets = one_hot(d.noisy_labels, C);
  return in;
}

inline std::vector<CheckResult> quick_validation(const ExperimentConfig* cfg = nullptr) {
  std::vector<CheckResult> out;
  {
    Matrix z(3, 2);
    z << 1000.0, 0.0, -1000.0, std::log(2.0), 3.0, 0.0;
    Matrix p = softmax_columns(z);
    const double err = (p.colwise().sum().array() - 1.0).abs().maxCoeff();
    out.push_back({"softmax columns sum to one", err < 1e-12, "max |sum-1| = " + short_real(err)});
  }
  {
    double worst = 0.0;
    for (int i = 0; i < 10; ++i)
      worst = std::max(worst, fd_gradient_error(random_instance(1000 + i, 5, 8, 2, 4,
                                                                i % 2 ? Activation::relu : Activation::linear)));
    out.push_back({"gradient matches finite differences", worst < 1e-6, "max error " + short_real(worst)});
  }
  {
    const int C = 4;
    GEstimate e = estimate_g(Matrix::Zero(C, 5), 1000, 1);
    Matrix exact = Matrix::Identity(C, C) / C - Matrix::Constant(C, C, 1.0 / (C * C));
    const double err = (e.g - exact).cwiseAbs().maxCoeff();
    out.push_back({"G at W = 0 is exact", err < 1e-15, "max error " + short_real(err)});
  }
  {
    Instance in = teacher_instance(77);
    std::vector<double> losses;
    auto end = run_gd(in.layers, in.act, in.x, in.targets, 1e-3, 300, &losses);
    bool mono = true;
    for (std::size_t i = 1; i < losses.size(); ++i) mono = mono && losses[i] <= losses[i - 1];
    const double drift = conservation_drift(in.layers, end);
    out.push_back({"train loss non-increasing", mono, std::to_string(losses.size()) + " steps"});
    out.push_back({"layer balance conserved", drift < 1e-3, "drift " + short_real(drift)});
  }
  {
    GLookup g;
    for (int i = 0; i <= 100; ++i) {
      g.s.push_back(0.1 * i);
      g.g.push_back(0.5 / (1.0 + 0.1 * i));
      g.se.push_back(0.0);
    }
    auto single = integrate_ta(Vector::Constant(1, 0.25), Vector::Constant(1, 3.0), 100.0, 200, {g});
    auto multi = integrate_multitask(Vector::Constant(1, 0.5), Vector::Constant(1, 0.5), Vector::Constant(1, 3.0),
                                     Vector::Constant(1, 3.0), 0.0, 100.0, 200, {g}, {g});
    double err = 0.0;
    for (std::size_t i = 0; i < single.states.size(); ++i)
      err = std::max(err, std::abs(single.states[i](0) - multi.first.states[i](0)));
    out.push_back({"multitask ODE at r = 0 equals single task", err < 1e-8, "max diff " + short_real(err)});
  }
  if (cfg) {
    ConfigTree t = experiment_to_tree(*cfg);
    ConfigTree back = parse_config(serialize_config(t));
    out.push_back({"config round trip", back == t && experiment_to_tree(experiment_from_tree(back)) == t, ""});
  }
  return out;
}

}  // namespace mtldyn

#endif
