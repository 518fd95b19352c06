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

#ifndef MTLDYN_EXPERIMENT_HPP
#define MTLDYN_EXPERIMENT_HPP

#include <cstdlib>
#include <filesystem>
#include <set>
#include <tuple>
#include <string>
#include <vector>

#include "mtldyn/benefit.hpp"
#include "mtldyn/config.hpp"
#include "mtldyn/gmatrix.hpp"
#include "mtldyn/student.hpp"
#include "mtldyn/tadynamics.hpp"
#include "mtldyn/teachergen.hpp"

#ifndef MTLDYN_VERSION
#define MTLDYN_VERSION "0.1.0"
#endif
#ifndef MTLDYN_GIT_REV
#define MTLDYN_GIT_REV "unknown"
#endif

namespace mtldyn {

inline std::string version_stamp() { return std::string(MTLDYN_VERSION) + "+" + MTLDYN_GIT_REV; }

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t master_seed = 0;
  std::uint64_t test_seed = 7;

  int n_features = 64;
  int n_classes = 2;
  int rank = 1;
  double noise_sigma = 1.0;
  OutputFrame output_frame = OutputFrame::contrast;
  double label_sharpness = std::numeric_limits<double>::infinity();

  std::vector<double> relatedness{0.0};
  std::vector<double> s_bar_a{3.0};
  std::vector<double> s_bar_b{10.0};
  std::vector<long> n_data{400};
  std::vector<long> n_aux{};  // empty: auxiliary set size follows n_data

  std::vector<int> hidden{16};
  Activation activation = Activation::linear;
  InitSpec::Kind init = InitSpec::Kind::training_aligned;
  double s0 = 1.0;
  double init_scale = 0.01;

  TrainConfig train{0.01, 2000, 20, 1.0, 1.0, 10000, 7, 1e6};

  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

  long g_samples = 200000;
  double g_spacing = 0.05;

  std::string output_dir = "results";

  void validate() const {
    auto nonempty = [](bool empty, const char* what) {
      if (empty) throw ConfigError(std::string(what) + ": grid must be non-empty");
    };
    nonempty(relatedness.empty(), "grid.relatedness");
    nonempty(s_bar_a.empty(), "grid.s_bar_a");
    nonempty(s_bar_b.empty(), "grid.s_bar_b");
    nonempty(n_data.empty(), "grid.n_data");
    nonempty(seeds.empty(), "seeds.list");
    nonempty(hidden.empty(), "student.hidden");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
      throw ConfigError("seeds.list: seeds must be distinct");
    for (double r : relatedness)
      if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("grid.relatedness: values must lie in [0, 1]");
    for (double s : s_bar_a)
      if (!(s > 0.0)) throw ConfigError("grid.s_bar_a: values must be > 0");
    for (double s : s_bar_b)
      if (!(s > 0.0)) throw ConfigError("grid.s_bar_b: values must be > 0");
    for (long n : n_data)
      if (n < 1) throw ConfigError("grid.n_data: values must be >= 1");
    for (long n : n_aux)
      if (n < 1) throw ConfigError("grid.n_aux: values must be >= 1");
    for (int h : hidden)
      if (h < 1) throw ConfigError("student.hidden: widths must be >= 1");
    if (!(noise_sigma >= 0.0)) throw ConfigError("teacher.noise_sigma: must be >= 0");
    if (g_samples < 1) throw ConfigError("gcache.n_samples: must be >= 1");
    if (!(g_spacing > 0.0)) throw ConfigError("gcache.spacing: must be > 0");
    try {
      train.validate();
      teacher_spec(s_bar_a.front()).validate();
    } catch (const InvalidSpec& e) {
      throw ConfigError(e.what());
    }
  }

  TeacherSpec teacher_spec(double s_bar) const {
    TeacherSpec t;
    t.n_features = n_features;
    t.n_classes = n_classes;
    t.rank = rank;
    t.singular_values.assign(static_cast<std::size_t>(rank), s_bar);
    t.noise_sigma = noise_sigma;
    t.label_sharpness = label_sharpness;
    t.output_frame = output_frame;
    return t;
  }

  std::vector<long> aux_grid() const { return n_aux.empty() ? std::vector<long>{0} : n_aux; }
};

// ---------------------------------------------------------------------------
// config tree <-> experiment config

namespace detail {

template <class T, class F>
std::vector<T> list_of(const ConfigValue& v, const std::string& key, F&& conv) {
  std::vector<T> out;
  for (const auto& s : v.items) out.push_back(static_cast<T>(conv(key, s)));
  return out;
}

inline ConfigValue scalar(std::string s) { return ConfigValue{false, {std::move(s)}}; }

template <class T, class F>
ConfigValue list(const std::vector<T>& v, F&& fmt) {
  ConfigValue c{true, {}};
  for (const auto& x : v) c.items.push_back(fmt(x));
  return c;
}

inline std::string frame_name(OutputFrame f) { return f == OutputFrame::contrast ? "contrast" : "random"; }
inline std::string activation_name(Activation a) { return a == Activation::relu ? "relu" : "linear"; }
inline std::string init_name(InitSpec::Kind k) { return k == InitSpec::Kind::random ? "random" : "training_aligned"; }

}  // namespace detail

inline ExperimentConfig experiment_from_tree(const ConfigTree& tree) {
  ExperimentConfig c;
  auto one = [](const std::string& key, const ConfigValue& v) -> const std::string& {
    if (v.is_list || v.items.size() != 1) throw ConfigError(key + ": expected a single value");
    return v.items[0];
  };
  auto real = [&](const std::string& k, const ConfigValue& v) { return parse_real(k, one(k, v)); };
  auto integer = [&](const std::string& k, const ConfigValue& v) { return parse_integer(k, one(k, v)); };
  auto uns = [&](const std::string& k, const ConfigValue& v) { return parse_unsigned(k, one(k, v)); };
  for (const auto& [key, v] : tree) {
    if (key == "experiment.name") c.name = one(key, v);
    else if (key == "experiment.master_seed") c.master_seed = uns(key, v);
    else if (key == "experiment.test_seed") c.test_seed = c.train.test_seed = uns(key, v);
    else if (key == "teacher.n_features") c.n_features = static_cast<int>(integer(key, v));
    else if (key == "teacher.n_classes") c.n_classes = static_cast<int>(integer(key, v));
    else if (key == "teacher.rank") c.rank = static_cast<int>(integer(key, v));
    else if (key == "teacher.noise_sigma") c.noise_sigma = real(key, v);
    else if (key == "teacher.label_sharpness") c.label_sharpness = real(key, v);
    else if (key == "teacher.output_frame") {
      const auto& s = one(key, v);
      if (s == "contrast") c.output_frame = OutputFrame::contrast;
      else if (s == "random") c.output_frame = OutputFrame::random;
      else throw ConfigError(key + ": expected 'random' or 'contrast'");
    } else if (key == "grid.relatedness") c.relatedness = detail::list_of<double>(v, key, parse_real);
    else if (key == "grid.s_bar_a") c.s_bar_a = detail::list_of<double>(v, key, parse_real);
    else if (key == "grid.s_bar_b") c.s_bar_b = detail::list_of<double>(v, key, parse_real);
    else if (key == "grid.n_data") c.n_data = detail::list_of<long>(v, key, parse_integer);
    else if (key == "grid.n_aux") c.n_aux = detail::list_of<long>(v, key, parse_integer);
    else if (key == "student.hidden") c.hidden = detail::list_of<int>(v, key, parse_integer);
    else if (key == "student.activation") {
      const auto& s = one(key, v);
      if (s == "linear") c.activation = Activation::linear;
      else if (s == "relu") c.activation = Activation::relu;
      else throw ConfigError(key + ": expected 'linear' or 'relu'");
    } else if (key == "student.init") {
      const auto& s = one(key, v);
      if (s == "training_aligned") c.init = InitSpec::Kind::training_aligned;
      else if (s == "random") c.init = InitSpec::Kind::random;
      else throw ConfigError(key + ": expected 'training_aligned' or 'random'");
    } else if (key == "student.s0") c.s0 = real(key, v);
    else if (key == "student.init_scale") c.init_scale = real(key, v);
    else if (key == "train.learning_rate") c.train.learning_rate = real(key, v);
    else if (key == "train.steps") c.train.steps = integer(key, v);
    else if (key == "train.record_every") c.train.record_every = integer(key, v);
    else if (key == "train.alpha_a") c.train.alpha_a = real(key, v);
    else if (key == "train.alpha_b") c.train.alpha_b = real(key, v);
    else if (key == "train.divergence_threshold") c.train.divergence_threshold = real(key, v);
    else if (key == "test.n_test") c.train.n_test = integer(key, v);
    else if (key == "seeds.list") c.seeds = detail::list_of<std::uint64_t>(v, key, parse_unsigned);
    else if (key == "gcache.n_samples") c.g_samples = integer(key, v);
    else if (key == "gcache.spacing") c.g_spacing = real(key, v);
    else if (key == "output.dir") c.output_dir = one(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

inline ConfigTree experiment_to_tree(const ExperimentConfig& c) {
  using detail::list;
  using detail::scalar;
  auto i2s = [](auto x) { return std::to_string(x); };
  ConfigTree t;
  t["experiment.name"] = scalar(c.name);
  t["experiment.master_seed"] = scalar(std::to_string(c.master_seed));
  t["experiment.test_seed"] = scalar(std::to_string(c.test_seed));
  t["teacher.n_features"] = scalar(i2s(c.n_features));
  t["teacher.n_classes"] = scalar(i2s(c.n_classes));
  t["teacher.rank"] = scalar(i2s(c.rank));
  t["teacher.noise_sigma"] = scalar(format_real(c.noise_sigma));
  t["teacher.label_sharpness"] = scalar(format_real(c.label_sharpness));
  t["teacher.output_frame"] = scalar(detail::frame_name(c.output_frame));
  t["grid.relatedness"] = list(c.relatedness, format_real);
  t["grid.s_bar_a"] = list(c.s_bar_a, format_real);
  t["grid.s_bar_b"] = list(c.s_bar_b, format_real);
  t["grid.n_data"] = list(c.n_data, i2s);
  t["grid.n_aux"] = list(c.n_aux, i2s);
  t["student.hidden"] = list(c.hidden, i2s);
  t["student.activation"] = scalar(detail::activation_name(c.activation));
  t["student.init"] = scalar(detail::init_name(c.init));
  t["student.s0"] = scalar(format_real(c.s0));
  t["student.init_scale"] = scalar(format_real(c.init_scale));
  t["train.learning_rate"] = scalar(format_real(c.train.learning_rate));
  t["train.steps"] = scalar(i2s(c.train.steps));
  t["train.record_every"] = scalar(i2s(c.train.record_every));
  t["train.alpha_a"] = scalar(format_real(c.train.alpha_a));
  t["train.alpha_b"] = scalar(format_real(c.train.alpha_b));
  t["train.divergence_threshold"] = scalar(format_real(c.train.divergence_threshold));
  t["test.n_test"] = scalar(i2s(c.train.n_test));
  t["seeds.list"] = list(c.seeds, i2s);
  t["gcache.n_samples"] = scalar(i2s(c.g_samples));
  t["gcache.spacing"] = scalar(format_real(c.g_spacing));
  t["output.dir"] = scalar(c.output_dir);
  return t;
}

inline ExperimentConfig load_experiment(const std::string& path) { return experiment_from_tree(load_config(path)); }

// ---------------------------------------------------------------------------
// g lookups with an optional on-disk cache (MTLDYN_CACHE_DIR)

inline std::string cache_dir() {
  const char* d = std::getenv("MTLDYN_CACHE_DIR");
  return d ? std::string(d) : std::string();
}

// Lookup along mode `mode` of the noisy teacher's SVD, with the hard-label
// drive of that mode attached.
inline GLookup frame_lookup(const NoisyTeacher& nt, int mode, const Matrix& c_x, double s_max, long n_samples,
                            double spacing, RngSeed seed, const std::string& dir = cache_dir()) {
  GLookupOptions opt;
  opt.n_samples = n_samples;
  opt.seed = seed;
  opt.spacing = spacing;
  const Vector u = nt.svd.u.col(mode), v = nt.svd.v.col(mode);
  std::string file;
  if (!dir.empty()) {
    std::ostringstream name;
    name << g_lookup_key(u, v, c_x, opt) << "-" << std::hex << detail::hash_matrix(nt.sigma_hat) << std::dec << "-m"
         << mode << "-smax" << format_real(s_max) << ".gcache";
    file = (std::filesystem::path(dir) / name.str()).string();
    if (std::filesystem::exists(file)) return read_g_lookup(file);
  }
  GLookup lk = build_g_lookup(u, v, c_x, s_max, opt);
  DriveEstimate d = hard_label_drive(nt.sigma_hat, nt.svd.u.col(mode), nt.svd.v.col(mode), c_x, n_samples,
                                     derive_seed(seed, "drive"));
  lk.drive = d.value(0);
  lk.drive_se = d.std_err(0);
  if (!file.empty()) {
    std::filesystem::create_directories(dir);
    write_g_lookup(lk, file);
  }
  return lk;
}

// ---------------------------------------------------------------------------
// single-task aligned protocol: empirical SGD against the rank-1 ODE

struct AlignedRun {
  Teacher teacher;
  NoisyTeacher noisy;
  Dataset data;
  TestSet test;
  RngSeed base = 0;
  Trajectory empirical;
  TaTrajectory theory;
  GLookup lookup;
};

// Teacher, noisy teacher, training set and shared test set for one seed.
inline AlignedRun make_aligned(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  AlignedRun run;
  run.base = derive_seed(cfg.master_seed, seed);
  TeacherSpec spec = cfg.teacher_spec(cfg.s_bar_a.front());
  spec.rank = 1;
  spec.singular_values = {cfg.s_bar_a.front()};
  run.teacher = make_teacher(spec, derive_seed(run.base, "teacher"));
  run.noisy = perturb_teacher(run.teacher, cfg.noise_sigma, derive_seed(run.base, "noise"));
  const Matrix c_x = Matrix::Identity(cfg.n_features, cfg.n_features);
  run.data = sample_dataset(run.noisy, run.teacher, cfg.n_data.front(), c_x, derive_seed(run.base, "data"));
  if (std::isfinite(cfg.label_sharpness)) set_soft_targets(run.data, run.noisy, cfg.label_sharpness);
  run.test = make_test_set(run.teacher, cfg.train.n_test, c_x, cfg.test_seed);
  return run;
}

// Empirical SGD. The default is the rank-1 aligned initialization that the
// ODE describes; `student.init = random` gives the unaligned comparison.
inline void aligned_empirical(AlignedRun& run, const ExperimentConfig& cfg) {
  StudentArch arch;
  arch.layer_widths.push_back(cfg.n_features);
  for (int h : cfg.hidden) arch.layer_widths.push_back(h);
  arch.layer_widths.push_back(cfg.n_classes);
  arch.activation = cfg.activation;
  arch.init.kind = cfg.init;
  arch.init.scale = cfg.init_scale;
  arch.init.s0 = cfg.s0;
  arch.init.ta_rank = 1;
  Student st = init_student(arch, &run.noisy.svd, derive_seed(run.base, "init"));
  run.empirical = train(st, run.data, run.test, cfg.train);
}

inline GLookup aligned_lookup(const AlignedRun& run, const ExperimentConfig& cfg, double s_max) {
  const Matrix c_x = Matrix::Identity(cfg.n_features, cfg.n_features);
  GLookup lk = frame_lookup(run.noisy, 0, c_x, s_max, cfg.g_samples, cfg.g_spacing, derive_seed(run.base, "gcache"));
  // finite sharpness: soft targets softmax(beta sigma_hat X) replace the hard-label drive
  if (std::isfinite(cfg.label_sharpness)) {
    const double reach = cfg.label_sharpness * run.noisy.svd.s(0);
    lk.drive = reach * lk.at(reach);
  }
  return lk;
}

// Rank-1 ODE on the same step grid, with gen loss of U s(t) V^T.
inline void aligned_theory(AlignedRun& run, const ExperimentConfig& cfg, long gen_every = 1) {
  const double s_hat = run.noisy.svd.s(0);
  const double reach = std::isfinite(cfg.label_sharpness) ? cfg.label_sharpness * s_hat : s_hat;
  double s_max = 4.0 * std::max({cfg.s0, reach, 1.0});
  for (int attempt = 0;; ++attempt) {
    run.lookup = aligned_lookup(run, cfg, s_max);
    try {
      run.theory = integrate_rank1(cfg.s0, s_hat, 1.0 / cfg.train.learning_rate, cfg.train.steps, run.lookup,
                                   cfg.train.record_every);
      break;
    } catch (const RangeError&) {
      if (attempt >= 4) throw;
      s_max *= 2.0;
    }
  }
  attach_gen_loss(run.theory, run.noisy.svd.u, run.noisy.svd.v, run.test, gen_every);
}

inline AlignedRun run_aligned(const ExperimentConfig& cfg, std::uint64_t seed, long gen_every = 1) {
  AlignedRun run = make_aligned(cfg, seed);
  aligned_empirical(run, cfg);
  aligned_theory(run, cfg, gen_every);
  return run;
}

// ---------------------------------------------------------------------------
// multitask benefit cell

struct Coord {
  double relatedness = 0.0;
  double s_bar_a = 3.0;
  double s_bar_b = 10.0;
  long n_data = 400;
  long n_aux = 0;  // 0: same as n_data
};

struct ResultRow {
  Coord coord;
  std::uint64_t seed = 0;
  BenefitReport report;
  std::string status = "ok";
  double flip_rate_a = std::numeric_limits<double>::quiet_NaN();
  double flip_rate_b = std::numeric_limits<double>::quiet_NaN();
  bool bounds_differ = false;  // isotropic and sample bounds differ by > 10%
  // modes whose initial value u_k^T W(0) v_k reaches the noisy teacher's s_hat_k
  double n_init_above = std::numeric_limits<double>::quiet_NaN();
};

struct CellRun {
  ResultRow row;
  Trajectory single;
  Trajectory multi_a;
  Trajectory multi_b;
};

struct CellData {
  RngSeed base = 0;
  Teacher ta, tb;
  NoisyTeacher na, nb;
  Dataset da, db;
};

// Seeds are keyed by the quantities each random object depends on: task-A
// noise and data are shared across auxiliary coordinates, and data sets of
// different sizes are nested prefixes of one stream.
inline CellData make_cell(const ExperimentConfig& cfg, const Coord& c, std::uint64_t seed) {
  CellData cd;
  cd.base = derive_seed(cfg.master_seed, seed);
  TeacherSpec spec_a = cfg.teacher_spec(c.s_bar_a);
  TeacherSpec spec_b = cfg.teacher_spec(c.s_bar_b);
  std::tie(cd.ta, cd.tb) = make_related_pair(spec_a, spec_b, c.relatedness, derive_seed(cd.base, "pair"));
  cd.na = perturb_teacher(cd.ta, cfg.noise_sigma, derive_seed(cd.base, "noise_a"));
  cd.nb = perturb_teacher(cd.tb, cfg.noise_sigma, derive_seed(cd.base, "noise_b"));
  const Matrix c_x = Matrix::Identity(cfg.n_features, cfg.n_features);
  const long n_aux = c.n_aux > 0 ? c.n_aux : c.n_data;
  cd.da = sample_dataset(cd.na, cd.ta, c.n_data, c_x, derive_seed(cd.base, "data_a"));
  cd.db = sample_dataset(cd.nb, cd.tb, n_aux, c_x, derive_seed(cd.base, "data_b"));
  if (std::isfinite(cfg.label_sharpness)) {
    set_soft_targets(cd.da, cd.na, cfg.label_sharpness);
    set_soft_targets(cd.db, cd.nb, cfg.label_sharpness);
  }
  return cd;
}

inline CellRun run_cell(const ExperimentConfig& cfg, const Coord& c, std::uint64_t seed) {
  CellRun out;
  ResultRow& row = out.row;
  row.coord = c;
  row.seed = seed;
  CellData cd = make_cell(cfg, c, seed);
  const RngSeed base = cd.base;
  const Teacher& ta = cd.ta;
  const Teacher& tb = cd.tb;
  const NoisyTeacher& na = cd.na;
  const NoisyTeacher& nb = cd.nb;
  const Dataset& da = cd.da;
  const Dataset& db = cd.db;
  const Matrix c_x = Matrix::Identity(cfg.n_features, cfg.n_features);
  row.flip_rate_a = label_flip_rate(da);
  row.flip_rate_b = label_flip_rate(db);
  TestSet test_a = make_test_set(ta, cfg.train.n_test, c_x, cfg.test_seed);
  TestSet test_b = relabel(test_a, tb);

  MultitaskStudent multi, single;
  if (cfg.init == InitSpec::Kind::training_aligned) {
    if (cfg.hidden.size() != 1) throw ConfigError("aligned multitask runs need exactly one hidden layer");
    multi = init_multitask_aligned(cfg.hidden[0], na.svd, nb.svd, cfg.rank, cfg.s0, true);
    single = init_multitask_aligned(cfg.hidden[0], na.svd, nb.svd, cfg.rank, cfg.s0, false);
    multi.activation = single.activation = cfg.activation;
  } else {
    std::vector<int> widths{cfg.n_features};
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    multi = init_multitask_random(widths, cfg.n_classes, cfg.n_classes, cfg.activation, cfg.init_scale,
                                  derive_seed(base, "init"));
    single = multi;
  }
  try {
    Student s = single.view_a();
    s.arch.init.kind = cfg.init;
    out.single = train(s, da, test_a, cfg.train);
    auto mt = train_multitask(multi, da, db, test_a, test_b, cfg.train);
    out.multi_a = std::move(mt.first);
    out.multi_b = std::move(mt.second);
  } catch (const DivergenceError& e) {
    row.status = "diverged@" + std::to_string(e.step);
    row.report.mt_benefit = row.report.min_loss_single = row.report.min_loss_multi =
        std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  row.report = multitask_benefit(out.single, out.multi_a);
  if (cfg.activation == Activation::linear) {
    const Matrix& w0 = out.single.composites.front();
    int above = 0;
    for (Eigen::Index k = 0; k < na.svd.s.size(); ++k)
      if (std::abs(na.svd.u.col(k).dot(w0 * na.svd.v.col(k))) >= na.svd.s(k)) ++above;
    row.n_init_above = above;
    const Matrix& w_a = out.multi_a.composites.at(row.report.index_multi);
    const Matrix& w_t = out.single.composites.at(row.report.index_single);
    auto [lo, hi] = benefit_bounds_on_sample(w_a, w_t, test_a);
    row.report.bound_lower = lo;
    row.report.bound_upper = hi;
    const Matrix t_cc = empirical_cross_cov(test_a.labels, cfg.n_classes, test_a.x);
    auto [li, ui] = benefit_bounds_isotropic(w_a, w_t, t_cc, c_x, cfg.g_samples, derive_seed(base, "iso"));
    row.report.bound_lower_iso = li;
    row.report.bound_upper_iso = ui;
    auto rel = [](double a, double b) { return std::abs(a - b) > 0.1 * std::max(std::abs(a), std::abs(b)); };
    row.bounds_differ = rel(lo, li) || rel(hi, ui);
  }
  return out;
}

inline ResultRow run_single(const ExperimentConfig& cfg, const Coord& c, std::uint64_t seed) {
  return run_cell(cfg, c, seed).row;
}

inline std::vector<Coord> grid_coords(const ExperimentConfig& cfg) {
  std::vector<Coord> out;
  for (long nd : cfg.n_data)
    for (long na : cfg.aux_grid())
      for (double sa : cfg.s_bar_a)
        for (double sb : cfg.s_bar_b)
          for (double r : cfg.relatedness) out.push_back(Coord{r, sa, sb, nd, na});
  return out;
}

}  // namespace mtldyn

#endif
