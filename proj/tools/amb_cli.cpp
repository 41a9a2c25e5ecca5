#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "amb/bench.hpp"
#include "amb/config.hpp"
#include "amb/io.hpp"
#include "amb/mb_mode.hpp"
#include "amb/robust_loss.hpp"
#include "amb/scene.hpp"

namespace {

struct BenchFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::vector<std::string> rlfs;
  std::optional<int> trials;
  std::optional<int> threads;
};

void add_bench_flags(CLI::App* cmd, BenchFlags& f) {
  cmd->add_option("--config", f.config, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--out-dir", f.out_dir, "output directory");
  cmd->add_option("--rlf", f.rlfs, "robust loss(es) to run")->delimiter(',');
  cmd->add_option("--trials", f.trials, "trials per outlier level / scene kind")->check(CLI::PositiveNumber);
  cmd->add_option("--threads", f.threads, "worker threads")->check(CLI::PositiveNumber);
}

amb::ExperimentConfig resolve_config(const BenchFlags& f, amb::Study study) {
  amb::ExperimentConfig c = f.config.empty() ? amb::ExperimentConfig{} : amb::load_config(f.config);
  c.study = study;
  if (f.seed) c.seed = *f.seed;
  if (f.out_dir) c.out_dir = *f.out_dir;
  if (!f.rlfs.empty()) {
    c.rlfs.clear();
    for (const auto& n : f.rlfs) c.rlfs.push_back(amb::parse_rlf(n));
  }
  if (f.trials) (study == amb::Study::PoseAvg ? c.pose_avg.trials : c.icp.trials) = *f.trials;
  if (f.threads) c.threads = *f.threads;
  c.validate();
  return c;
}

void print_summary(const amb::BenchmarkResult& r) {
  std::printf("%-14s %-18s %6s %22s %24s %7s %8s %8s\n", "group", "rlf", "trials", "phi deg p50/75/90",
              "rho mm p50/75/90", "iters", "success", "conv");
  for (const auto& s : r.summary) {
    std::printf("%-14s %-18s %6zu %6.2f/%6.2f/%7.2f %7.1f/%7.1f/%7.1f %7.1f %7.1f%% %7.1f%%\n", s.group.c_str(),
                std::string(amb::rlf_name(s.rlf)).c_str(), s.trials, s.phi_deg[0], s.phi_deg[1], s.phi_deg[2],
                s.rho_mm[0], s.rho_mm[1], s.rho_mm[2], s.median_iterations, s.success_rate, s.converge_rate);
  }
}

int run_bench(const BenchFlags& f, amb::Study study) {
  const auto cfg = resolve_config(f, study);
  const auto result = amb::run_benchmark(cfg);
  amb::emit_report(result, cfg.out_dir);
  print_summary(result);
  std::printf("wrote %s/{trials.csv,summary.csv,summary.json,timings.csv}\n", cfg.out_dir.c_str());
  return 0;
}

nlohmann::json diagnostics_json(const amb::WeightDiagnostics& d) {
  nlohmann::json j = nlohmann::json::object();
  if (d.alpha_star)
    j["alpha_star"] = d.alpha_star->is_negative_infinity() ? nlohmann::json("-inf") : nlohmann::json(d.alpha_star->value());
  if (d.a_star) j["a_star"] = *d.a_star;
  if (d.mode) j["mode"] = *d.mode;
  if (d.scale) j["scale"] = *d.scale;
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive robust loss toolkit: weights, MB fits and Monte Carlo benchmarks"};
  app.require_subcommand(1);

  BenchFlags pa_flags, icp_flags;
  auto* pa = app.add_subcommand("pose-avg-bench", "robust SE(3) pose-averaging Monte Carlo study");
  add_bench_flags(pa, pa_flags);
  auto* icp = app.add_subcommand("icp-bench", "robust point-to-plane ICP Monte Carlo study");
  add_bench_flags(icp, icp_flags);

  std::string fit_file;
  int fit_ne = 3;
  double fit_tau = 10.0;
  auto* fit = app.add_subcommand("fit-mb", "fit the MB shape and adaptive weights to a residual file");
  fit->add_option("residuals", fit_file, "file of residuals")->required()->check(CLI::ExistingFile);
  fit->add_option("--ne", fit_ne, "error dimension")->check(CLI::PositiveNumber);
  fit->add_option("--tau", fit_tau, "truncation bound");

  std::string w_file, w_rlf = "adaptive-mb";
  int w_ne = 3;
  double w_tau = 10.0;
  auto* wcmd = app.add_subcommand("weights", "evaluate an RLF's weights on a residual file");
  wcmd->add_option("residuals", w_file, "file of residuals")->required()->check(CLI::ExistingFile);
  wcmd->add_option("--rlf", w_rlf, "robust loss name");
  wcmd->add_option("--ne", w_ne, "error dimension (adaptive-mb)")->check(CLI::PositiveNumber);
  wcmd->add_option("--tau", w_tau, "truncation bound (adaptive losses)");

  std::string g_kind = "structured", g_out = "scene";
  double g_overlap = 0.6;
  std::uint64_t g_seed = 1;
  std::string g_format = "ply";
  auto* gen = app.add_subcommand("gen-scene", "write a synthetic scan pair and its ground truth");
  gen->add_option("--kind", g_kind, "structured | semi | unstructured");
  gen->add_option("--overlap", g_overlap, "requested overlap fraction")->check(CLI::Range(0.4, 1.0));
  gen->add_option("--seed", g_seed, "scene seed");
  gen->add_option("--out-dir", g_out, "output directory");
  gen->add_option("--format", g_format, "ply | csv")->check(CLI::IsMember({"ply", "csv"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (pa->parsed()) return run_bench(pa_flags, amb::Study::PoseAvg);
    if (icp->parsed()) return run_bench(icp_flags, amb::Study::Icp);

    if (fit->parsed()) {
      const auto res = amb::load_residuals(fit_file);
      const auto r = amb::adaptive_mb_weights(res, fit_ne, fit_tau);
      nlohmann::json j;
      j["a_star"] = r.fit.a_star;
      j["mode"] = r.fit.mode;
      j["fallback"] = r.fit.fallback;
      j["alpha_star"] = r.alpha.alpha_star.is_negative_infinity() ? nlohmann::json("-inf")
                                                                  : nlohmann::json(r.alpha.alpha_star.value());
      j["below_mode"] = r.below_mode;
      j["weights"] = r.weights;
      std::cout << j.dump(2) << '\n';
      return 0;
    }

    if (wcmd->parsed()) {
      const auto res = amb::load_residuals(w_file);
      amb::RobustLoss loss;
      loss.kind = amb::parse_rlf(w_rlf);
      loss.tau = w_tau;
      const auto r = amb::compute_weights(res, loss, w_ne);
      nlohmann::json j = {{"rlf", w_rlf}, {"diagnostics", diagnostics_json(r.diagnostics)}, {"weights", r.weights}};
      std::cout << j.dump(2) << '\n';
      return 0;
    }

    if (gen->parsed()) {
      const auto scene = amb::generate_scene(amb::parse_scene(g_kind), g_overlap, g_seed);
      std::filesystem::create_directories(g_out);
      const auto dir = std::filesystem::path(g_out);
      if (g_format == "ply") {
        amb::save_ply_cloud(scene.source, (dir / "source.ply").string());
        amb::save_ply_cloud(scene.target, (dir / "target.ply").string());
      } else {
        amb::save_csv_cloud(scene.source, (dir / "source.csv").string());
        amb::save_csv_cloud(scene.target, (dir / "target.csv").string());
      }
      std::ofstream meta(dir / "scene.json");
      meta << nlohmann::json{{"kind", g_kind},
                             {"seed", g_seed},
                             {"overlap_requested", g_overlap},
                             {"overlap_measured", scene.overlap_measured},
                             {"truth", amb::pose_to_row(scene.truth)}}
                  .dump(2)
           << '\n';
      std::printf("wrote %s (overlap %.3f)\n", g_out.c_str(), scene.overlap_measured);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
