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

#ifndef MTLDYN_SWEEP_HPP
#define MTLDYN_SWEEP_HPP

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mtldyn/experiment.hpp"

namespace mtldyn {

inline constexpr int kSchemaVersion = 1;

inline const std::vector<std::string>& coordinate_columns() {
  static const std::vector<std::string> cols{"relatedness", "s_bar_a", "s_bar_b", "n_data", "n_aux"};
  return cols;
}

inline const std::vector<std::string>& result_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c = coordinate_columns();
    for (const char* k : {"seed", "mt_benefit", "min_loss_single", "min_loss_multi", "argmin_single", "argmin_multi",
                          "bound_lower", "bound_upper", "loss_stderr", "status"})
      c.push_back(k);
    return c;
  }();
  return cols;
}

inline const std::vector<std::string>& extra_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c = coordinate_columns();
    for (const char* k : {"seed", "bound_lower_iso", "bound_upper_iso", "bounds_differ", "flip_rate_a", "flip_rate_b",
                          "record_every", "n_init_above_teacher"})
      c.push_back(k);
    return c;
  }();
  return cols;
}

namespace detail {

inline std::string csv_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::vector<std::string> coord_fields(const Coord& c) {
  return {csv_real(c.relatedness), csv_real(c.s_bar_a), csv_real(c.s_bar_b), std::to_string(c.n_data),
          std::to_string(c.n_aux)};
}

inline std::string row_key(const Coord& c, std::uint64_t seed) {
  auto f = coord_fields(c);
  f.push_back(std::to_string(seed));
  return join(f);
}

}  // namespace detail

inline std::string format_result_row(const ResultRow& r) {
  auto f = detail::coord_fields(r.coord);
  const auto& b = r.report;
  f.push_back(std::to_string(r.seed));
  f.push_back(detail::csv_real(b.mt_benefit));
  f.push_back(detail::csv_real(b.min_loss_single));
  f.push_back(detail::csv_real(b.min_loss_multi));
  f.push_back(std::to_string(b.argmin_single));
  f.push_back(std::to_string(b.argmin_multi));
  f.push_back(detail::csv_real(b.bound_lower));
  f.push_back(detail::csv_real(b.bound_upper));
  f.push_back(detail::csv_real(b.loss_stderr));
  f.push_back(r.status);
  return detail::join(f);
}

inline std::string format_extra_row(const ResultRow& r) {
  auto f = detail::coord_fields(r.coord);
  f.push_back(std::to_string(r.seed));
  f.push_back(detail::csv_real(r.report.bound_lower_iso));
  f.push_back(detail::csv_real(r.report.bound_upper_iso));
  f.push_back(r.bounds_differ ? "1" : "0");
  f.push_back(detail::csv_real(r.flip_rate_a));
  f.push_back(detail::csv_real(r.flip_rate_b));
  f.push_back(std::to_string(r.report.record_every));
  f.push_back(detail::csv_real(r.n_init_above));
  return detail::join(f);
}

// ---------------------------------------------------------------------------
// trajectory output

inline void write_trajectory_csv(std::ostream& os, const std::vector<long>& steps, const std::vector<double>& train,
                                 const std::vector<double>& gen, const std::vector<double>& gen_se,
                                 const std::vector<Vector>& s, const std::string& source) {
  Eigen::Index k = 0;
  for (const auto& v : s) k = std::max(k, v.size());
  os << "step,train_loss,gen_loss,gen_loss_stderr";
  for (Eigen::Index i = 0; i < k; ++i) os << ",s_" << (i + 1);
  os << ",source\n";
  auto at = [](const std::vector<double>& v, std::size_t i) {
    return i < v.size() ? v[i] : std::numeric_limits<double>::quiet_NaN();
  };
  for (std::size_t i = 0; i < steps.size(); ++i) {
    os << steps[i] << "," << detail::csv_real(at(train, i)) << "," << detail::csv_real(at(gen, i)) << ","
       << detail::csv_real(at(gen_se, i));
    for (Eigen::Index j = 0; j < k; ++j)
      os << "," << detail::csv_real(j < s[i].size() ? s[i](j) : std::numeric_limits<double>::quiet_NaN());
    os << "," << source << "\n";
  }
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& t) {
  write_trajectory_csv(os, t.times, t.train_loss, t.gen_loss, t.gen_stderr, t.singular_values, "empirical");
}

inline void write_trajectory_csv(std::ostream& os, const TaTrajectory& t) {
  write_trajectory_csv(os, t.times, {}, t.gen_loss, t.gen_stderr, t.states, "theory");
}

inline nlohmann::json trajectory_json(const std::vector<long>& steps, const std::vector<double>& train,
                                      const std::vector<double>& gen, const std::vector<double>& gen_se,
                                      const std::vector<Vector>& s, const std::string& source) {
  auto num = [](const std::vector<double>& v, std::size_t i) -> nlohmann::json {
    if (i >= v.size() || std::isnan(v[i])) return nullptr;
    return v[i];
  };
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < steps.size(); ++i) {
    nlohmann::json sv = nlohmann::json::array();
    for (Eigen::Index j = 0; j < s[i].size(); ++j) sv.push_back(s[i](j));
    rows.push_back({{"step", steps[i]},
                    {"train_loss", num(train, i)},
                    {"gen_loss", num(gen, i)},
                    {"gen_loss_stderr", num(gen_se, i)},
                    {"s", sv},
                    {"source", source}});
  }
  return rows;
}

inline nlohmann::json trajectory_json(const Trajectory& t) {
  return trajectory_json(t.times, t.train_loss, t.gen_loss, t.gen_stderr, t.singular_values, "empirical");
}

inline nlohmann::json trajectory_json(const TaTrajectory& t) {
  return trajectory_json(t.times, {}, t.gen_loss, t.gen_stderr, t.states, "theory");
}

inline nlohmann::json result_json(const ResultRow& r) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isnan(v)) return nullptr;
    return v;
  };
  const auto& b = r.report;
  return {{"relatedness", r.coord.relatedness},
          {"s_bar_a", r.coord.s_bar_a},
          {"s_bar_b", r.coord.s_bar_b},
          {"n_data", r.coord.n_data},
          {"n_aux", r.coord.n_aux},
          {"seed", r.seed},
          {"mt_benefit", num(b.mt_benefit)},
          {"min_loss_single", num(b.min_loss_single)},
          {"min_loss_multi", num(b.min_loss_multi)},
          {"argmin_single", b.argmin_single},
          {"argmin_multi", b.argmin_multi},
          {"bound_lower", num(b.bound_lower)},
          {"bound_upper", num(b.bound_upper)},
          {"loss_stderr", num(b.loss_stderr)},
          {"status", r.status},
          {"bound_lower_iso", num(b.bound_lower_iso)},
          {"bound_upper_iso", num(b.bound_upper_iso)},
          {"bounds_differ", r.bounds_differ},
          {"flip_rate_a", num(r.flip_rate_a)},
          {"flip_rate_b", num(r.flip_rate_b)},
          {"record_every", b.record_every}};
}

// ---------------------------------------------------------------------------
// sweep

struct SweepOptions {
  std::string out_dir;
  int jobs = 1;
  long max_new_rows = -1;  // stop after this many new rows (simulated interruption)
};

struct SweepSummary {
  long expected = 0;
  long written = 0;  // rows present in the final table
  long computed = 0;
  long skipped = 0;  // already present when the sweep started
  long failed = 0;
  bool complete = false;
  std::string results_path;
  std::string metadata_path;
};

namespace detail {

// Complete rows of a results-style CSV keyed by their coordinate prefix.
inline std::map<std::string, std::string> read_rows(const std::string& path, std::size_t n_cols) {
  std::map<std::string, std::string> rows;
  std::ifstream is(path);
  if (!is) return rows;
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (header) {
      header = false;
      continue;
    }
    auto f = split(line);
    if (f.size() != n_cols) continue;  // partial trailing line
    std::vector<std::string> key(f.begin(), f.begin() + 6);
    rows[join(key)] = line;
  }
  return rows;
}

inline void write_sorted(const std::string& path, const std::string& header,
                         const std::map<std::string, std::string>& rows, const std::vector<std::string>& order) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    os << header << "\n";
    for (const auto& k : order) {
      auto it = rows.find(k);
      if (it != rows.end()) os << it->second << "\n";
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline SweepSummary run_sweep(const ExperimentConfig& cfg, const SweepOptions& opt) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  std::filesystem::create_directories(opt.out_dir);
  SweepSummary sum;
  sum.results_path = (std::filesystem::path(opt.out_dir) / "results.csv").string();
  sum.metadata_path = (std::filesystem::path(opt.out_dir) / "results.json").string();
  const std::string extra_path = (std::filesystem::path(opt.out_dir) / "results_extra.csv").string();

  struct Task {
    Coord c;
    std::uint64_t seed;
    std::string key;
  };
  std::vector<Task> all;
  for (const Coord& c : grid_coords(cfg))
    for (std::uint64_t s : cfg.seeds) all.push_back({c, s, detail::row_key(c, s)});
  sum.expected = static_cast<long>(all.size());

  auto done = detail::read_rows(sum.results_path, result_columns().size());
  auto extras = detail::read_rows(extra_path, extra_columns().size());
  std::vector<const Task*> pending;
  for (const auto& t : all) {
    if (done.count(t.key))
      ++sum.skipped;
    else
      pending.push_back(&t);
  }

  // append-safe: each finished row is flushed before the next is taken
  const bool fresh = done.empty();
  if (!fresh) {
    // drop any partial trailing line left by an interrupted run
    std::vector<std::string> keys;
    for (const auto& [k, line] : done) keys.push_back(k);
    detail::write_sorted(sum.results_path, detail::join(result_columns()), done, keys);
    detail::write_sorted(extra_path, detail::join(extra_columns()), extras, keys);
  }
  std::ofstream res(sum.results_path, fresh ? std::ios::trunc : std::ios::app);
  std::ofstream ext(extra_path, fresh ? std::ios::trunc : std::ios::app);
  if (fresh) {
    res << detail::join(result_columns()) << "\n";
    ext << detail::join(extra_columns()) << "\n";
  }
  res.flush();
  ext.flush();

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::atomic<long> started{0};
  auto worker = [&] {
    for (;;) {
      if (opt.max_new_rows >= 0 && started.fetch_add(1) >= opt.max_new_rows) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= pending.size()) return;
      const Task& t = *pending[i];
      ResultRow row;
      try {
        row = run_single(cfg, t.c, t.seed);
      } catch (const std::exception& e) {
        row.coord = t.c;
        row.seed = t.seed;
        row.report.mt_benefit = row.report.min_loss_single = row.report.min_loss_multi =
            std::numeric_limits<double>::quiet_NaN();
        std::string msg = e.what();
        for (char& ch : msg)
          if (ch == ',' || ch == '\n') ch = ' ';
        row.status = "error:" + msg;
      }
      const std::string line = format_result_row(row), eline = format_extra_row(row);
      std::lock_guard<std::mutex> lock(mu);
      res << line << "\n";
      res.flush();
      ext << eline << "\n";
      ext.flush();
      done[t.key] = line;
      extras[t.key] = eline;
      ++sum.computed;
    }
  };
  const int jobs = std::max(1, opt.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  res.close();
  ext.close();

  sum.complete = done.size() == all.size();
  if (sum.complete) {
    std::vector<std::string> order;
    for (const auto& t : all) order.push_back(t.key);
    detail::write_sorted(sum.results_path, detail::join(result_columns()), done, order);
    detail::write_sorted(extra_path, detail::join(extra_columns()), extras, order);
  }
  sum.written = static_cast<long>(done.size());
  for (const auto& [k, line] : done)
    if (detail::split(line).back() != "ok") ++sum.failed;

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json meta;
  meta["schema_version"] = kSchemaVersion;
  meta["version"] = version_stamp();
  meta["name"] = cfg.name;
  meta["master_seed"] = cfg.master_seed;
  meta["test_seed"] = cfg.test_seed;
  meta["seeds"] = cfg.seeds;
  meta["columns"] = result_columns();
  meta["extra_columns"] = extra_columns();
  meta["extra_path"] = "results_extra.csv";
  meta["record_every"] = cfg.train.record_every;
  meta["min_over_time_granularity_steps"] = cfg.train.record_every;
  meta["noise_resampled_per_seed"] = true;
  meta["test_set_shared_across_cells"] = true;
  meta["rows_expected"] = sum.expected;
  meta["rows_written"] = sum.written;
  meta["rows_failed"] = sum.failed;
  meta["rows_computed_this_run"] = sum.computed;
  meta["rows_skipped_resume"] = sum.skipped;
  meta["complete"] = sum.complete;
  meta["rows_ok"] = sum.written - sum.failed;
  meta["rows_missing"] = sum.expected - sum.written;
  meta["seconds"] = secs;
  meta["config"] = serialize_config(experiment_to_tree(cfg));
  std::ofstream(sum.metadata_path, std::ios::trunc) << meta.dump(2) << "\n";
  return sum;
}

}  // namespace mtldyn

#endif
