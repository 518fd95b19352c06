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

#ifndef MTLDYN_STUDENT_HPP
#define MTLDYN_STUDENT_HPP

#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "mtldyn/core.hpp"
#include "mtldyn/teachergen.hpp"

namespace mtldyn {

enum class Activation { linear, relu };

struct InitSpec {
  enum class Kind { random, training_aligned };
  Kind kind = Kind::random;
  double scale = 0.01;  // random: W_l ~ N(0, scale^2 / N_{l-1})
  double s0 = 0.1;      // training_aligned: composite singular value of each aligned mode
  int ta_rank = 1;      // training_aligned: number of aligned modes
};

struct StudentArch {
  std::vector<int> layer_widths;  // N_0 = features, ..., N_L = classes
  Activation activation = Activation::linear;
  InitSpec init;

  int n_layers() const { return static_cast<int>(layer_widths.size()) - 1; }

  void validate() const {
    if (layer_widths.size() < 3) throw InvalidSpec("student: need at least 2 layers");
    for (int w : layer_widths)
      if (w < 1) throw InvalidSpec("student: widths must be positive");
    if (init.kind == InitSpec::Kind::random && !(init.scale >= 0.0))
      throw InvalidSpec("student: init scale must be >= 0");
    if (init.kind == InitSpec::Kind::training_aligned) {
      if (!(init.s0 > 0.0)) throw InvalidSpec("student: s0 must be > 0");
      if (init.ta_rank < 1) throw InvalidSpec("student: ta_rank must be >= 1");
      for (int w : layer_widths)
        if (w < init.ta_rank) throw InvalidSpec("student: every width must be >= ta_rank");
    }
  }
};

struct Student {
  std::vector<Matrix> layers;  // layers[l] maps N_l -> N_{l+1}
  StudentArch arch;

  Matrix composite() const {
    Matrix w = layers.front();
    for (std::size_t l = 1; l < layers.size(); ++l) w = layers[l] * w;
    return w;
  }
};

struct MultitaskStudent {
  std::vector<Matrix> trunk;
  Matrix head_a;
  Matrix head_b;
  Activation activation = Activation::linear;

  Student view(bool task_a) const {
    Student s;
    s.layers = trunk;
    s.layers.push_back(task_a ? head_a : head_b);
    s.arch.activation = activation;
    s.arch.layer_widths.push_back(static_cast<int>(trunk.front().cols()));
    for (const auto& m : s.layers) s.arch.layer_widths.push_back(static_cast<int>(m.rows()));
    return s;
  }
  Student view_a() const { return view(true); }
  Student view_b() const { return view(false); }
};

struct TrainConfig {
  double learning_rate = 1e-3;
  long steps = 1000;
  long record_every = 10;
  double alpha_a = 1.0;
  double alpha_b = 1.0;
  long n_test = 10000;
  RngSeed test_seed = 0;
  double divergence_threshold = 1e6;

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidSpec("train: learning_rate must be > 0");
    if (steps < 0) throw InvalidSpec("train: steps must be >= 0");
    if (record_every < 1) throw InvalidSpec("train: record_every must be >= 1");
    if (n_test < 1) throw InvalidSpec("train: n_test must be >= 1");
  }
};

struct LossEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
};

// Fixed held-out sample with clean teacher labels.
struct TestSet {
  Matrix x;
  Labels labels;
};

struct Trajectory {
  std::vector<long> times;
  std::vector<double> train_loss;
  std::vector<double> gen_loss;
  std::vector<double> gen_stderr;
  std::vector<Vector> singular_values;
  std::vector<Matrix> composites;  // linear students only
  Student final_student;
  long record_every = 1;
};

// ---------------------------------------------------------------------------
// construction

inline Student init_student(const StudentArch& arch, const SvdTriple* teacher_svd, RngSeed seed) {
  arch.validate();
  Student st;
  st.arch = arch;
  const int L = arch.n_layers();
  const auto& w = arch.layer_widths;
  if (arch.init.kind == InitSpec::Kind::random) {
    Rng rng(seed);
    for (int l = 0; l < L; ++l) {
      const double var = arch.init.scale * arch.init.scale / static_cast<double>(w[l]);
      st.layers.push_back(gaussian_matrix(w[l + 1], w[l], var, rng));
    }
    return st;
  }
  if (teacher_svd == nullptr) throw InvalidInput("init_student: training-aligned init needs the teacher SVD");
  const int k = arch.init.ta_rank;
  if (teacher_svd->u.cols() < k || teacher_svd->u.rows() != w.back() || teacher_svd->v.rows() != w.front())
    throw InvalidInput("init_student: teacher SVD does not match the architecture");
  const double a = std::pow(arch.init.s0, 1.0 / L);
  for (int l = 0; l < L; ++l) {
    Matrix m = Matrix::Zero(w[l + 1], w[l]);
    if (L == 1) {
      m = a * teacher_svd->u.leftCols(k) * teacher_svd->v.leftCols(k).transpose();
    } else if (l == 0) {
      m.topRows(k) = a * teacher_svd->v.leftCols(k).transpose();
    } else if (l == L - 1) {
      m.leftCols(k) = a * teacher_svd->u.leftCols(k);
    } else {
      m.topLeftCorner(k, k) = a * Matrix::Identity(k, k);
    }
    st.layers.push_back(m);
  }
  return st;
}

// Shared-trunk student with one hidden layer. Hidden units [0, k) carry the
// task-A aligned modes; units [k, 2k) carry the task-B modes when with_b.
inline MultitaskStudent init_multitask_aligned(int hidden, const SvdTriple& a, const SvdTriple& b, int k, double s0,
                                               bool with_b) {
  if (hidden < 2 * k) throw InvalidSpec("multitask aligned init: hidden width must be >= 2*rank");
  if (!(s0 > 0.0)) throw InvalidSpec("multitask aligned init: s0 must be > 0");
  const double r = std::sqrt(s0);
  MultitaskStudent ms;
  Matrix trunk = Matrix::Zero(hidden, a.v.rows());
  trunk.topRows(k) = r * a.v.leftCols(k).transpose();
  if (with_b) trunk.middleRows(k, k) = r * b.v.leftCols(k).transpose();
  ms.trunk.push_back(trunk);
  ms.head_a = Matrix::Zero(a.u.rows(), hidden);
  ms.head_a.leftCols(k) = r * a.u.leftCols(k);
  ms.head_b = Matrix::Zero(b.u.rows(), hidden);
  ms.head_b.middleCols(k, k) = r * b.u.leftCols(k);
  return ms;
}

inline MultitaskStudent init_multitask_random(const std::vector<int>& trunk_widths, int classes_a, int classes_b,
                                              Activation act, double scale, RngSeed seed) {
  if (trunk_widths.size() < 2) throw InvalidSpec("multitask random init: trunk needs >= 1 layer");
  Rng rng(seed);
  MultitaskStudent ms;
  ms.activation = act;
  for (std::size_t l = 0; l + 1 < trunk_widths.size(); ++l) {
    const double var = scale * scale / trunk_widths[l];
    ms.trunk.push_back(gaussian_matrix(trunk_widths[l + 1], trunk_widths[l], var, rng));
  }
  const int h = trunk_widths.back();
  ms.head_a = gaussian_matrix(classes_a, h, scale * scale / h, rng);
  ms.head_b = gaussian_matrix(classes_b, h, scale * scale / h, rng);
  return ms;
}

// ---------------------------------------------------------------------------
// forward pass and losses

inline void check_layers(const std::vector<Matrix>& layers, Eigen::Index features) {
  if (layers.empty()) throw InvalidInput("student: no layers");
  if (layers.front().cols() != features) throw InvalidInput("student: input dimension mismatch");
  for (std::size_t l = 1; l < layers.size(); ++l)
    if (layers[l].cols() != layers[l - 1].rows()) throw InvalidInput("student: layer dimensions do not chain");
}

inline Matrix product(const std::vector<Matrix>& layers) {
  Matrix w = layers.front();
  for (std::size_t l = 1; l < layers.size(); ++l) w = layers[l] * w;
  return w;
}

inline Matrix logits(const std::vector<Matrix>& layers, Activation act, const Matrix& x) {
  check_layers(layers, x.rows());
  if (act == Activation::linear) return product(layers) * x;
  Matrix a = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    a = layers[l] * a;
    if (l + 1 < layers.size()) a = a.cwiseMax(0.0);
  }
  return a;
}

inline Matrix forward(const Student& s, const Matrix& x) { return softmax_columns(logits(s.layers, s.arch.activation, x)); }

// -ln P_{y}(column) for each column, computed via log-sum-exp.
inline Vector per_sample_loss(const Matrix& z, const Labels& y) {
  if (static_cast<std::size_t>(z.cols()) != y.size()) throw InvalidInput("loss: label count mismatch");
  Vector out(z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double m = z.col(j).maxCoeff();
    const double lse = m + std::log((z.col(j).array() - m).exp().sum());
    out(j) = lse - z(y[static_cast<std::size_t>(j)], j);
  }
  return out;
}

inline double soft_cross_entropy(const Matrix& z, const Matrix& targets) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double m = z.col(j).maxCoeff();
    const double lse = m + std::log((z.col(j).array() - m).exp().sum());
    total += (targets.col(j).array() * (lse - z.col(j).array())).sum();
  }
  return total / static_cast<double>(z.cols());
}

inline double mean_loss(const Matrix& z, const Dataset& d) {
  if (d.soft_targets.size() > 0) return soft_cross_entropy(z, d.soft_targets);
  return per_sample_loss(z, d.noisy_labels).mean();
}

inline double train_loss(const Student& s, const Dataset& d) {
  return mean_loss(logits(s.layers, s.arch.activation, d.x), d);
}

inline LossEstimate summarize(const Vector& losses) {
  LossEstimate e;
  const auto n = static_cast<double>(losses.size());
  e.mean = losses.mean();
  if (losses.size() > 1) {
    const double var = (losses.array() - e.mean).square().sum() / (n - 1.0);
    e.stderr_ = std::sqrt(var / n);
  }
  return e;
}

inline TestSet make_test_set(const Teacher& t, Eigen::Index n_test, const Matrix& c_x, RngSeed seed) {
  if (n_test < 1) throw InvalidInput("test set: n_test must be >= 1");
  if (c_x.rows() != t.w_bar.cols()) throw InvalidInput("test set: covariance dimension mismatch");
  Rng rng(seed);
  TestSet ts;
  ts.x = sample_gaussian_columns(covariance_factor(c_x), n_test, rng);
  ts.labels = argmax_labels(t.w_bar * ts.x);
  return ts;
}

inline TestSet make_test_set(const Teacher& t, Eigen::Index n_test, RngSeed seed) {
  return make_test_set(t, n_test, Matrix::Identity(t.w_bar.cols(), t.w_bar.cols()), seed);
}

// Same inputs, labels from another teacher.
inline TestSet relabel(const TestSet& ts, const Teacher& t) { return {ts.x, argmax_labels(t.w_bar * ts.x)}; }

inline LossEstimate test_loss(const std::vector<Matrix>& layers, Activation act, const TestSet& ts) {
  return summarize(per_sample_loss(logits(layers, act, ts.x), ts.labels));
}

inline LossEstimate test_loss(const Matrix& composite, const TestSet& ts) {
  return summarize(per_sample_loss(composite * ts.x, ts.labels));
}

inline LossEstimate generalization_loss(const Student& s, const Teacher& t, Eigen::Index n_test, const Matrix& c_x,
                                        RngSeed seed) {
  return test_loss(s.layers, s.arch.activation, make_test_set(t, n_test, c_x, seed));
}

// ---------------------------------------------------------------------------
// gradients

inline Matrix training_targets(const Dataset& d, int n_classes) {
  if (d.soft_targets.size() > 0) return d.soft_targets;
  return one_hot(d.noisy_labels, n_classes);
}

// dL/dW_l of the mean cross-entropy against the given target columns.
// Linear students use the composite form W_>^T (P - Y) X^T W_<^T / N.
inline std::vector<Matrix> loss_gradients(const std::vector<Matrix>& layers, Activation act, const Matrix& x,
                                          const Matrix& targets, double* loss_out = nullptr) {
  check_layers(layers, x.rows());
  const auto n = static_cast<double>(x.cols());
  const std::size_t L = layers.size();
  std::vector<Matrix> grads(L);
  if (act == Activation::linear) {
    std::vector<Matrix> below(L);  // W_{l-1} ... W_0, identity-free: empty means none
    Matrix acc;
    for (std::size_t l = 0; l < L; ++l) {
      below[l] = acc;
      acc = (l == 0) ? layers[0] : Matrix(layers[l] * acc);
    }
    Matrix z = acc * x;
    if (loss_out) *loss_out = soft_cross_entropy(z, targets);
    Matrix p = softmax_columns(z);
    Matrix m = (p - targets) * x.transpose() / n;  // dL/dW for the composite
    Matrix above;                                   // W_{L-1} ... W_{l+1}
    for (std::size_t li = L; li-- > 0;) {
      Matrix left = above.size() ? Matrix(above.transpose() * m) : m;
      grads[li] = below[li].size() ? Matrix(left * below[li].transpose()) : left;
      above = above.size() ? Matrix(above * layers[li]) : layers[li];
    }
    return grads;
  }
  std::vector<Matrix> acts(L);  // input to layer l
  std::vector<Matrix> pre(L);
  Matrix a = x;
  for (std::size_t l = 0; l < L; ++l) {
    acts[l] = a;
    pre[l] = layers[l] * a;
    a = (l + 1 < L) ? Matrix(pre[l].cwiseMax(0.0)) : pre[l];
  }
  if (loss_out) *loss_out = soft_cross_entropy(a, targets);
  Matrix delta = (softmax_columns(a) - targets) / n;
  for (std::size_t li = L; li-- > 0;) {
    grads[li] = delta * acts[li].transpose();
    if (li > 0) {
      delta = layers[li].transpose() * delta;
      delta = delta.cwiseProduct((pre[li - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  return grads;
}

inline Student sgd_step(const Student& s, const Dataset& d, const TrainConfig& cfg) {
  auto grads = loss_gradients(s.layers, s.arch.activation, d.x, training_targets(d, static_cast<int>(s.layers.back().rows())));
  Student out = s;
  for (std::size_t l = 0; l < out.layers.size(); ++l) out.layers[l] -= cfg.learning_rate * grads[l];
  return out;
}

// ---------------------------------------------------------------------------
// training loops

namespace detail {

inline void record(Trajectory& tr, long step, double loss, const std::vector<Matrix>& layers, Activation act,
                   const TestSet& ts) {
  tr.times.push_back(step);
  tr.train_loss.push_back(loss);
  if (act == Activation::linear) {
    Matrix w = product(layers);
    LossEstimate g = test_loss(w, ts);
    tr.gen_loss.push_back(g.mean);
    tr.gen_stderr.push_back(g.stderr_);
    tr.singular_values.push_back(svd(w).s);
    tr.composites.push_back(std::move(w));
  } else {
    LossEstimate g = test_loss(layers, act, ts);
    tr.gen_loss.push_back(g.mean);
    tr.gen_stderr.push_back(g.stderr_);
    tr.singular_values.push_back(svd(product(layers)).s);
  }
}

inline void check_divergence(double loss, long step, double threshold) {
  if (!std::isfinite(loss) || loss > threshold) throw DivergenceError(step, loss);
}

inline bool due(long step, const TrainConfig& cfg) { return step % cfg.record_every == 0 || step == cfg.steps; }

}  // namespace detail

inline Trajectory train(Student s, const Dataset& d, const TestSet& test, const TrainConfig& cfg) {
  cfg.validate();
  const int classes = static_cast<int>(s.layers.back().rows());
  const Matrix targets = training_targets(d, classes);
  Trajectory tr;
  tr.record_every = cfg.record_every;
  for (long step = 0;; ++step) {
    double loss = 0.0;
    auto grads = loss_gradients(s.layers, s.arch.activation, d.x, targets, &loss);
    detail::check_divergence(loss, step, cfg.divergence_threshold);
    if (detail::due(step, cfg)) detail::record(tr, step, loss, s.layers, s.arch.activation, test);
    if (step == cfg.steps) break;
    for (std::size_t l = 0; l < s.layers.size(); ++l) s.layers[l] -= cfg.learning_rate * grads[l];
  }
  tr.final_student = std::move(s);
  return tr;
}

inline Trajectory train(Student s, const Dataset& d, const Teacher& t, const TrainConfig& cfg) {
  TestSet ts = make_test_set(t, cfg.n_test, d.input_covariance, cfg.test_seed);
  return train(std::move(s), d, ts, cfg);
}

// Shared trunk, per-task heads. The trunk receives alpha_a * grad_A + alpha_b * grad_B
// (accumulated in that order); each head receives only its own task's gradient.
inline std::pair<Trajectory, Trajectory> train_multitask(MultitaskStudent ms, const Dataset& da, const Dataset& db,
                                                         const TestSet& test_a, const TestSet& test_b,
                                                         const TrainConfig& cfg) {
  cfg.validate();
  if (da.x.rows() != db.x.rows()) throw InvalidInput("train_multitask: feature counts differ");
  const Matrix ya = training_targets(da, static_cast<int>(ms.head_a.rows()));
  const Matrix yb = training_targets(db, static_cast<int>(ms.head_b.rows()));
  const std::size_t T = ms.trunk.size();
  std::pair<Trajectory, Trajectory> out;
  out.first.record_every = out.second.record_every = cfg.record_every;
  std::vector<Matrix> la, lb;
  for (long step = 0;; ++step) {
    la = ms.trunk;
    la.push_back(ms.head_a);
    lb = ms.trunk;
    lb.push_back(ms.head_b);
    double loss_a = 0.0, loss_b = 0.0;
    auto ga = loss_gradients(la, ms.activation, da.x, ya, &loss_a);
    auto gb = loss_gradients(lb, ms.activation, db.x, yb, &loss_b);
    detail::check_divergence(cfg.alpha_a * loss_a + cfg.alpha_b * loss_b, step, cfg.divergence_threshold);
    if (detail::due(step, cfg)) {
      detail::record(out.first, step, loss_a, la, ms.activation, test_a);
      detail::record(out.second, step, loss_b, lb, ms.activation, test_b);
    }
    if (step == cfg.steps) break;
    for (std::size_t l = 0; l < T; ++l) {
      Matrix g = cfg.alpha_a * ga[l];
      g += cfg.alpha_b * gb[l];
      ms.trunk[l] -= cfg.learning_rate * g;
    }
    ms.head_a -= cfg.learning_rate * (cfg.alpha_a * ga[T]);
    ms.head_b -= cfg.learning_rate * (cfg.alpha_b * gb[T]);
  }
  out.first.final_student = ms.view_a();
  out.second.final_student = ms.view_b();
  return out;
}

inline std::pair<Trajectory, Trajectory> train_multitask(MultitaskStudent ms, const Dataset& da, const Dataset& db,
                                                         const Teacher& ta, const Teacher& tb,
                                                         const TrainConfig& cfg) {
  TestSet sa = make_test_set(ta, cfg.n_test, da.input_covariance, cfg.test_seed);
  TestSet sb = relabel(sa, tb);
  return train_multitask(std::move(ms), da, db, sa, sb, cfg);
}

}  // namespace mtldyn

#endif
