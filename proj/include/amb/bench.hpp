#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "amb/config.hpp"
#include "amb/icp.hpp"
#include "amb/io.hpp"
#include "amb/pose_averaging.hpp"
#include "amb/scene.hpp"
#include "amb/stats.hpp"

namespace amb {

/// Outcome of one RLF on one trial.
struct TrialReport {
  std::string group;  ///< outlier level ("outliers_40") or scene kind
  int trial = 0;
  RlfKind rlf = RlfKind::L2;
  std::uint64_t seed = 0;
  double overlap = std::numeric_limits<double>::quiet_NaN();
  double phi0_deg = 0.0, rho0_mm = 0.0;
  double phi_deg = std::numeric_limits<double>::quiet_NaN();
  double rho_mm = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  bool converged = false;
  bool success = false;
  std::optional<ShapeAlpha> alpha_star;
  std::optional<double> a_star;
  std::optional<double> mode;
  std::string error;  ///< empty unless the solve threw
  double wall_seconds = 0.0;
};

struct SummaryRow {
  std::string group;
  RlfKind rlf = RlfKind::L2;
  std::size_t trials = 0;
  std::size_t failed = 0;  ///< trials whose solve threw
  std::array<double, 3> phi_deg{};  ///< p50, p75, p90
  std::array<double, 3> rho_mm{};
  double median_iterations = 0.0;
  double median_seconds = 0.0;
  double success_rate = 0.0;   ///< percent
  double converge_rate = 0.0;  ///< percent
};

struct BenchmarkResult {
  Study study = Study::PoseAvg;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  nlohmann::json config;
  std::vector<TrialReport> rows;
  std::vector<SummaryRow> summary;

  /// Summary row for (group, rlf); group "all" pools every group.
  const SummaryRow& find(const std::string& group, RlfKind rlf) const {
    for (const auto& r : summary)
      if (r.group == group && r.rlf == rlf) return r;
    throw std::out_of_range("no summary row for " + group + "/" + std::string(rlf_name(rlf)));
  }
};

/// Seed of trial `index` in stream `stream` (splitmix64 finalizer chain).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(master) ^ stream) ^ index);
}

/// Runs task(i) for i in [0, n) on `threads` workers. The first exception
/// thrown by any task is rethrown after all workers finish.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& task) {
  const std::size_t workers = std::min<std::size_t>(std::max(1, threads), std::max<std::size_t>(n, 1));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        task(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

inline std::string level_name(double fraction) {
  return "outliers_" + std::to_string(static_cast<int>(std::lround(100.0 * fraction)));
}

namespace detail {

inline constexpr double kRad2Deg = 180.0 / M_PI;

inline void fill_errors(TrialReport& r, const Pose& truth, const Pose& estimate) {
  const ErrorNorms post = pose_error_norms(truth.inverse() * estimate);
  r.phi_deg = post.phi * kRad2Deg;
  r.rho_mm = post.rho * 1000.0;
  r.success = r.phi_deg < r.phi0_deg && r.rho_mm < r.rho0_mm;
}

inline double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class Trace>
void fill_final_diagnostics(TrialReport& r, const std::vector<Trace>& trace) {
  if (trace.empty()) return;
  r.alpha_star = trace.back().alpha_star;
  r.a_star = trace.back().a_star;
  r.mode = trace.back().mode;
}

inline SummaryRow summarize(const std::string& group, RlfKind rlf, const std::vector<const TrialReport*>& rows) {
  SummaryRow s;
  s.group = group;
  s.rlf = rlf;
  s.trials = rows.size();
  std::vector<double> phi, rho, iters, secs;
  std::size_t ok = 0, conv = 0;
  for (const TrialReport* r : rows) {
    if (!r->error.empty()) {
      ++s.failed;
      continue;
    }
    phi.push_back(r->phi_deg);
    rho.push_back(r->rho_mm);
    iters.push_back(r->iterations);
    secs.push_back(r->wall_seconds);
    ok += r->success;
    conv += r->converged;
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const std::array<double, 3> ps = {50.0, 75.0, 90.0};
  for (int k = 0; k < 3; ++k) {
    s.phi_deg[k] = phi.empty() ? nan : percentile(phi, ps[k]);
    s.rho_mm[k] = rho.empty() ? nan : percentile(rho, ps[k]);
  }
  s.median_iterations = iters.empty() ? nan : median(iters);
  s.median_seconds = secs.empty() ? nan : median(secs);
  s.success_rate = s.trials ? 100.0 * static_cast<double>(ok) / static_cast<double>(s.trials) : nan;
  s.converge_rate = s.trials ? 100.0 * static_cast<double>(conv) / static_cast<double>(s.trials) : nan;
  return s;
}

/// One row per (group, rlf) in first-seen order, then pooled "all" rows.
inline std::vector<SummaryRow> build_summary(const std::vector<TrialReport>& rows, const std::vector<RlfKind>& rlfs) {
  std::vector<std::string> groups;
  for (const auto& r : rows)
    if (std::find(groups.begin(), groups.end(), r.group) == groups.end()) groups.push_back(r.group);
  std::vector<SummaryRow> out;
  for (const auto& g : groups)
    for (RlfKind k : rlfs) {
      std::vector<const TrialReport*> sel;
      for (const auto& r : rows)
        if (r.group == g && r.rlf == k) sel.push_back(&r);
      out.push_back(summarize(g, k, sel));
    }
  for (RlfKind k : rlfs) {
    std::vector<const TrialReport*> sel;
    for (const auto& r : rows)
      if (r.rlf == k) sel.push_back(&r);
    out.push_back(summarize("all", k, sel));
  }
  return out;
}

inline BenchmarkResult finish(const ExperimentConfig& cfg, std::vector<std::vector<TrialReport>>&& per_task) {
  BenchmarkResult out;
  out.study = cfg.study;
  out.seed = cfg.seed;
  out.config_hash = config_hash(cfg);
  out.config = to_json(cfg);
  out.config.erase("threads");
  out.config.erase("out_dir");
  for (auto& v : per_task)
    for (auto& r : v) out.rows.push_back(std::move(r));
  out.summary = build_summary(out.rows, cfg.rlfs);
  return out;
}

}  // namespace detail

/**
 * \brief Monte Carlo pose-averaging study.
 *
 * For every outlier level and trial a measurement set is drawn from a seed
 * derived from (master seed, level, trial); every configured RLF then solves
 * the same set from the same initial guess.
 */
inline BenchmarkResult run_pose_avg_benchmark(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto& p = cfg.pose_avg;
  const std::size_t n_levels = p.outlier_levels.size();
  const auto n_trials = static_cast<std::size_t>(p.trials);
  const Matrix6 r = p.inlier_cov();

  std::vector<std::vector<TrialReport>> results(n_levels * n_trials);
  parallel_for(results.size(), cfg.threads, [&](std::size_t task) {
    const std::size_t li = task / n_trials, t = task % n_trials;
    TrialSpec spec;
    spec.n_inliers = p.n_inliers;
    spec.outlier_fraction = p.outlier_levels[li];
    spec.inlier_cov = r;
    spec.init_cov = p.init_scale * r;
    spec.outlier_phi_max = p.outlier_phi_max_deg * M_PI / 180.0;
    spec.outlier_rho_max = p.outlier_rho_max;
    spec.seed = derive_seed(cfg.seed, li, t);
    const PoseTrial trial = generate_trial(spec);
    const ErrorNorms prior = pose_error_norms(trial.truth.inverse() * trial.initial);

    for (RlfKind k : cfg.rlfs) {
      TrialReport rep;
      rep.group = level_name(spec.outlier_fraction);
      rep.trial = static_cast<int>(t);
      rep.rlf = k;
      rep.seed = spec.seed;
      rep.phi0_deg = prior.phi * detail::kRad2Deg;
      rep.rho0_mm = prior.rho * 1000.0;
      PoseAvgConfig pc;
      pc.max_iters = p.max_iters;
      pc.tol_phi = p.tol_phi;
      pc.tol_rho = p.tol_rho;
      pc.rlf.kind = k;
      pc.rlf.tau = p.tau;
      pc.placement = p.placement;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const auto res = solve_pose_average(trial.measurements, trial.initial, pc);
        rep.iterations = res.iterations;
        rep.converged = res.converged;
        detail::fill_errors(rep, trial.truth, res.estimate);
        detail::fill_final_diagnostics(rep, res.trace);
      } catch (const std::exception& e) {
        rep.error = e.what();
      }
      rep.wall_seconds = detail::elapsed(t0);
      results[task].push_back(std::move(rep));
    }
  });
  return detail::finish(cfg, std::move(results));
}

/// Downsampled source and normal-carrying target ready for icp_solve.
struct IcpPair {
  PointCloud source;
  PointCloud target;
  Pose truth;
  double overlap = std::numeric_limits<double>::quiet_NaN();
};

inline IcpPair prepare_icp_pair(const PointCloud& source, const PointCloud& target, const Pose& truth, double grid,
                                std::size_t normal_k) {
  IcpPair p;
  p.source = voxel_downsample(source, grid);
  p.target = estimate_normals(voxel_downsample(target, grid), normal_k);
  p.truth = truth;
  return p;
}

/**
 * \brief Monte Carlo ICP study.
 *
 * Each trial draws an overlap in [overlap_min, overlap_max] and a perturbation
 * dT whose attitude and position norms stay below phi_max / r_max with
 * probability 0.9973; all RLFs start from truth * dT. With ingested clouds the
 * single pair is reused and only the perturbation varies.
 */
inline BenchmarkResult run_icp_benchmark(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto& p = cfg.icp;
  const bool ingested = !p.source_cloud.empty();
  const std::size_t n_groups = ingested ? 1 : p.scenes.size();
  const auto n_trials = static_cast<std::size_t>(p.trials);

  std::optional<IcpPair> fixed;
  if (ingested)
    fixed = prepare_icp_pair(load_point_cloud(p.source_cloud), load_point_cloud(p.target_cloud), pose_from_row(p.truth),
                             p.grid, p.normal_k);

  SceneParams sp;
  sp.points_per_cloud = p.points_per_cloud;
  sp.noise = p.point_noise;
  sp.overlap_radius = 2.0 * p.grid;
  const double sigma_phi = perturbation_sigma(p.phi_max_deg * M_PI / 180.0);
  const double sigma_r = perturbation_sigma(p.r_max);

  std::vector<std::vector<TrialReport>> results(n_groups * n_trials);
  parallel_for(results.size(), cfg.threads, [&](std::size_t task) {
    const std::size_t gi = task / n_trials, t = task % n_trials;
    const std::uint64_t seed = derive_seed(cfg.seed, 100 + gi, t);
    std::mt19937_64 rng(seed);
    const double overlap = std::uniform_real_distribution<double>(p.overlap_min, p.overlap_max)(rng);
    const Pose dt = sample_perturbation(sigma_phi, sigma_r, rng);
    const std::string group = ingested ? "ingested" : std::string(scene_name(p.scenes[gi]));

    std::optional<IcpPair> local;
    std::string setup_error;
    try {
      if (!ingested) {
        const Scene scene = generate_scene(p.scenes[gi], overlap, derive_seed(seed, 1, 0), sp);
        local = prepare_icp_pair(scene.source, scene.target, scene.truth, p.grid, p.normal_k);
        local->overlap = scene.overlap_measured;
      }
    } catch (const std::exception& e) {
      setup_error = e.what();
    }
    const IcpPair* pair = ingested ? &*fixed : (local ? &*local : nullptr);
    const Pose truth = pair ? pair->truth : Pose::identity();
    const Pose initial = truth * dt;
    const ErrorNorms prior = pose_error_norms(dt);

    for (RlfKind k : cfg.rlfs) {
      TrialReport rep;
      rep.group = group;
      rep.trial = static_cast<int>(t);
      rep.rlf = k;
      rep.seed = seed;
      rep.overlap = pair ? pair->overlap : std::numeric_limits<double>::quiet_NaN();
      rep.phi0_deg = prior.phi * detail::kRad2Deg;
      rep.rho0_mm = prior.rho * 1000.0;
      if (!pair) {
        rep.error = setup_error;
        results[task].push_back(std::move(rep));
        continue;
      }
      IcpConfig ic;
      ic.grid = p.grid;
      ic.normal_k = p.normal_k;
      ic.max_iters = p.max_iters;
      ic.tol_phi = p.tol_phi;
      ic.tol_rho = p.tol_rho;
      ic.rlf.kind = k;
      ic.rlf.tau = p.tau;
      ic.placement = p.placement;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const auto res = icp_solve(pair->source, pair->target, initial, ic);
        rep.iterations = res.iterations;
        rep.converged = res.converged;
        detail::fill_errors(rep, truth, res.estimate);
        detail::fill_final_diagnostics(rep, res.trace);
      } catch (const std::exception& e) {
        rep.error = e.what();
      }
      rep.wall_seconds = detail::elapsed(t0);
      results[task].push_back(std::move(rep));
    }
  });
  return detail::finish(cfg, std::move(results));
}

inline BenchmarkResult run_benchmark(const ExperimentConfig& cfg) {
  return cfg.study == Study::PoseAvg ? run_pose_avg_benchmark(cfg) : run_icp_benchmark(cfg);
}

namespace detail {

inline std::string csv_num(double v) {
  if (std::isnan(v)) return "";
  return fmt(v);
}

inline std::string csv_text(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

inline std::string alpha_text(const std::optional<ShapeAlpha>& a) {
  if (!a) return "";
  return a->is_negative_infinity() ? "-inf" : fmt(a->value());
}

inline nlohmann::json json_num(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

}  // namespace detail

/// trials.csv: deterministic per-trial rows (no timing).
inline void write_trials_csv(std::ostream& out, const BenchmarkResult& r) {
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(r.config_hash));
  out << "group,trial,rlf,seed,config_hash,overlap,phi0_deg,rho0_mm,phi_deg,rho_mm,iterations,converged,success,"
         "alpha_star,a_star,mode,error\n";
  for (const auto& t : r.rows) {
    out << t.group << ',' << t.trial << ',' << rlf_name(t.rlf) << ',' << t.seed << ',' << hash << ','
        << detail::csv_num(t.overlap) << ',' << detail::csv_num(t.phi0_deg) << ',' << detail::csv_num(t.rho0_mm) << ','
        << detail::csv_num(t.phi_deg) << ',' << detail::csv_num(t.rho_mm) << ',' << t.iterations << ','
        << int(t.converged) << ',' << int(t.success) << ',' << detail::alpha_text(t.alpha_star) << ','
        << (t.a_star ? detail::fmt(*t.a_star) : "") << ',' << (t.mode ? detail::fmt(*t.mode) : "") << ','
        << detail::csv_text(t.error) << '\n';
  }
}

inline void write_timings_csv(std::ostream& out, const BenchmarkResult& r) {
  out << "group,trial,rlf,wall_seconds\n";
  for (const auto& t : r.rows)
    out << t.group << ',' << t.trial << ',' << rlf_name(t.rlf) << ',' << detail::fmt(t.wall_seconds) << '\n';
}

inline void write_summary_csv(std::ostream& out, const BenchmarkResult& r) {
  out << "group,rlf,trials,failed,phi_p50_deg,phi_p75_deg,phi_p90_deg,rho_p50_mm,rho_p75_mm,rho_p90_mm,"
         "median_iterations,median_seconds,success_rate,converge_rate\n";
  for (const auto& s : r.summary) {
    out << s.group << ',' << rlf_name(s.rlf) << ',' << s.trials << ',' << s.failed;
    for (double v : s.phi_deg) out << ',' << detail::csv_num(v);
    for (double v : s.rho_mm) out << ',' << detail::csv_num(v);
    out << ',' << detail::csv_num(s.median_iterations) << ',' << detail::csv_num(s.median_seconds) << ','
        << detail::csv_num(s.success_rate) << ',' << detail::csv_num(s.converge_rate) << '\n';
  }
}

inline nlohmann::json summary_json(const BenchmarkResult& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : r.summary) {
    nlohmann::json phi = nlohmann::json::array(), rho = nlohmann::json::array();
    for (double v : s.phi_deg) phi.push_back(detail::json_num(v));
    for (double v : s.rho_mm) rho.push_back(detail::json_num(v));
    rows.push_back({{"group", s.group},
                    {"rlf", std::string(rlf_name(s.rlf))},
                    {"trials", s.trials},
                    {"failed", s.failed},
                    {"phi_deg_p50_p75_p90", phi},
                    {"rho_mm_p50_p75_p90", rho},
                    {"median_iterations", detail::json_num(s.median_iterations)},
                    {"median_seconds", detail::json_num(s.median_seconds)},
                    {"success_rate", detail::json_num(s.success_rate)},
                    {"converge_rate", detail::json_num(s.converge_rate)}});
  }
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(r.config_hash));
  return {{"study", study_name(r.study)}, {"seed", r.seed}, {"config_hash", hash}, {"config", r.config}, {"rows", rows}};
}

/// Writes trials.csv, timings.csv, summary.csv and summary.json into `dir`.
inline void emit_report(const BenchmarkResult& r, const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(std::filesystem::path(dir) / name);
    if (!f) throw std::runtime_error("cannot write " + (std::filesystem::path(dir) / name).string());
    return f;
  };
  {
    auto f = open("trials.csv");
    write_trials_csv(f, r);
  }
  {
    auto f = open("timings.csv");
    write_timings_csv(f, r);
  }
  {
    auto f = open("summary.csv");
    write_summary_csv(f, r);
  }
  {
    auto f = open("summary.json");
    f << summary_json(r).dump(2) << '\n';
  }
}

}  // namespace amb
