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

// mtldyn: batch driver for the simulator.
//
// Exit status: 0 on success, 1 on a failed validation or runtime error,
// 2 on a configuration error or bad command line.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mtldyn/mtldyn.hpp"

namespace fs = std::filesystem;
using namespace mtldyn;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "csv";
  int jobs = 1;
};

ExperimentConfig load(const Options& o) {
  if (o.config.empty()) return ExperimentConfig{};
  return load_experiment(o.config);
}

std::vector<std::uint64_t> seeds_of(const Options& o, const ExperimentConfig& cfg) {
  if (o.seed) return {*o.seed};
  return cfg.seeds;
}

// With one seed --out names a file (stdout when empty). With several it names
// a directory that receives one file per seed.
class Sink {
 public:
  Sink(const Options& o, const ExperimentConfig& cfg, std::string stem, std::size_t n_seeds)
      : o_(o), stem_(std::move(stem)), multi_(n_seeds > 1 || (!o.out.empty() && fs::is_directory(o.out))) {
    dir_ = o.out.empty() ? cfg.output_dir : o.out;
  }

  template <class F>
  void emit(std::uint64_t seed, F&& write) {
    if (!multi_ && o_.out.empty()) {
      write(std::cout);
      return;
    }
    std::string path = o_.out;
    if (multi_) {
      fs::create_directories(dir_);
      path = (fs::path(dir_) / (stem_ + "_seed" + std::to_string(seed) + "." + o_.format)).string();
    } else if (fs::path(path).has_parent_path()) {
      fs::create_directories(fs::path(path).parent_path());
    }
    std::ofstream os(path);
    if (!os) throw InvalidInput("cannot write " + path);
    write(os);
    std::cerr << "wrote " << path << "\n";
  }

 private:
  const Options& o_;
  std::string stem_;
  std::string dir_;
  bool multi_;
};

int cmd_gen_teachers(const Options& o) {
  const ExperimentConfig cfg = load(o);
  std::ostringstream csv;
  nlohmann::json js = nlohmann::json::array();
  csv << "relatedness,s_bar_a,s_bar_b,n_data,n_aux,seed,overlap_v,s_hat_a,s_hat_b,flip_rate_a,flip_rate_b\n";
  for (const Coord& c : grid_coords(cfg))
    for (std::uint64_t seed : seeds_of(o, cfg)) {
      CellData cd = make_cell(cfg, c, seed);
      const double overlap = relatedness(cd.ta, cd.tb)(0, 0);
      const double fa = label_flip_rate(cd.da), fb = label_flip_rate(cd.db);
      csv << c.relatedness << "," << c.s_bar_a << "," << c.s_bar_b << "," << c.n_data << "," << c.n_aux << "," << seed
          << "," << detail::csv_real(overlap) << "," << detail::csv_real(cd.na.svd.s(0)) << ","
          << detail::csv_real(cd.nb.svd.s(0)) << "," << detail::csv_real(fa) << "," << detail::csv_real(fb) << "\n";
      js.push_back({{"relatedness", c.relatedness},
                    {"s_bar_a", c.s_bar_a},
                    {"s_bar_b", c.s_bar_b},
                    {"n_data", c.n_data},
                    {"n_aux", c.n_aux},
                    {"seed", seed},
                    {"overlap_v", overlap},
                    {"s_hat_a", std::vector<double>(cd.na.svd.s.data(), cd.na.svd.s.data() + cd.na.svd.s.size())},
                    {"s_hat_b", std::vector<double>(cd.nb.svd.s.data(), cd.nb.svd.s.data() + cd.nb.svd.s.size())},
                    {"flip_rate_a", fa},
                    {"flip_rate_b", fb}});
    }
  Sink sink(o, cfg, "teachers", 1);
  sink.emit(0, [&](std::ostream& os) {
    if (o.format == "json")
      os << js.dump(2) << "\n";
    else
      os << csv.str();
  });
  return 0;
}

int cmd_train(const Options& o) {
  const ExperimentConfig cfg = load(o);
  const auto seeds = seeds_of(o, cfg);
  Sink sink(o, cfg, cfg.name + "_train", seeds.size());
  for (std::uint64_t seed : seeds) {
    AlignedRun run = make_aligned(cfg, seed);
    aligned_empirical(run, cfg);
    sink.emit(seed, [&](std::ostream& os) {
      if (o.format == "json")
        os << trajectory_json(run.empirical).dump(2) << "\n";
      else
        write_trajectory_csv(os, run.empirical);
    });
  }
  return 0;
}

int cmd_integrate(const Options& o) {
  const ExperimentConfig cfg = load(o);
  const auto seeds = seeds_of(o, cfg);
  Sink sink(o, cfg, cfg.name + "_integrate", seeds.size());
  for (std::uint64_t seed : seeds) {
    AlignedRun run = make_aligned(cfg, seed);
    aligned_theory(run, cfg);
    if (long n = g_increases(run.lookup)) std::cerr << "warning: seed " << seed << ": g increases at " << n << " knots\n";
    sink.emit(seed, [&](std::ostream& os) {
      if (o.format == "json")
        os << trajectory_json(run.theory).dump(2) << "\n";
      else
        write_trajectory_csv(os, run.theory);
    });
  }
  return 0;
}

int cmd_benefit(const Options& o) {
  const ExperimentConfig cfg = load(o);
  std::vector<ResultRow> rows;
  for (const Coord& c : grid_coords(cfg))
    for (std::uint64_t seed : seeds_of(o, cfg)) rows.push_back(run_single(cfg, c, seed));
  Sink sink(o, cfg, "benefit", 1);
  sink.emit(0, [&](std::ostream& os) {
    if (o.format == "json") {
      nlohmann::json js = nlohmann::json::array();
      for (const auto& r : rows) js.push_back(result_json(r));
      os << js.dump(2) << "\n";
    } else {
      os << detail::join(result_columns()) << "\n";
      for (const auto& r : rows) os << format_result_row(r) << "\n";
    }
  });
  return 0;
}

int cmd_sweep(const Options& o) {
  ExperimentConfig cfg = load(o);
  if (o.seed) cfg.seeds = {*o.seed};
  SweepOptions so;
  so.out_dir = o.out.empty() ? cfg.output_dir : o.out;
  so.jobs = o.jobs;
  SweepSummary s = run_sweep(cfg, so);
  std::cerr << "rows: " << s.written << "/" << s.expected << " (computed " << s.computed << ", resumed " << s.skipped
            << ", flagged " << s.failed << ")\n"
            << "results: " << s.results_path << "\nmetadata: " << s.metadata_path << "\n";
  return 0;
}

int cmd_gcache(const Options& o) {
  const ExperimentConfig cfg = load(o);
  std::string dir = o.out.empty() ? cache_dir() : o.out;
  if (dir.empty()) dir = (fs::path(cfg.output_dir) / "gcache").string();
  for (std::uint64_t seed : seeds_of(o, cfg)) {
    AlignedRun run = make_aligned(cfg, seed);
    const double s_hat = run.noisy.svd.s(0);
    const double s_max = 4.0 * std::max({cfg.s0, s_hat, 1.0});
    const Matrix c_x = Matrix::Identity(cfg.n_features, cfg.n_features);
    GLookup lk = frame_lookup(run.noisy, 0, c_x, s_max, cfg.g_samples, cfg.g_spacing,
                              derive_seed(run.base, "gcache"), dir);
    std::cerr << "seed " << seed << ": " << lk.s.size() << " knots up to s = " << lk.s_max() << " in " << dir
              << "\n";
    if (long n = g_increases(lk)) std::cerr << "warning: g increases at " << n << " knots\n";
  }
  return 0;
}

int cmd_validate(const Options& o) {
  std::optional<ExperimentConfig> cfg;
  if (!o.config.empty()) cfg = load(o);
  bool ok = true;
  for (const auto& r : quick_validation(cfg ? &*cfg : nullptr)) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name;
    if (!r.detail.empty()) std::cout << " (" << r.detail << ")";
    std::cout << "\n";
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"teacher-student softmax multitask dynamics simulator"};
  app.set_version_flag("--version", version_stamp());
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "experiment config file")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "run a single seed instead of the configured list");
  app.add_option("--out", o.out, "output file or directory");
  app.add_option("--format", o.format, "output format")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--jobs", o.jobs, "worker threads for sweeps")->check(CLI::PositiveNumber);

  struct Cmd {
    const char* name;
    const char* help;
    int (*fn)(const Options&);
  };
  const Cmd cmds[] = {
      {"gen-teachers", "sample teachers and label statistics for every cell", cmd_gen_teachers},
      {"train", "empirical SGD trajectories", cmd_train},
      {"integrate", "training-aligned ODE trajectories", cmd_integrate},
      {"benefit", "multitask benefit rows for every cell", cmd_benefit},
      {"sweep", "resumable grid sweep with metadata", cmd_sweep},
      {"gcache", "build the g lookup tables", cmd_gcache},
      {"validate", "run the invariant checks", cmd_validate},
  };
  const Cmd* chosen = nullptr;
  for (const auto& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->fallthrough();
    sub->callback([&chosen, &c] { chosen = &c; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    return chosen->fn(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
