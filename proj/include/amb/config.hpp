#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "amb/icp.hpp"
#include "amb/pose_averaging.hpp"
#include "amb/robust_loss.hpp"
#include "amb/scene.hpp"

namespace amb {

enum class Study { PoseAvg, Icp };

inline std::string study_name(Study s) { return s == Study::PoseAvg ? "pose_avg" : "icp"; }

inline Study parse_study(const std::string& s) {
  if (s == "pose_avg") return Study::PoseAvg;
  if (s == "icp") return Study::Icp;
  throw std::invalid_argument("unknown study '" + s + "'");
}

inline std::string placement_name(WeightPlacement p) { return p == WeightPlacement::Squared ? "squared" : "linear"; }

inline WeightPlacement parse_placement(const std::string& s) {
  if (s == "squared") return WeightPlacement::Squared;
  if (s == "linear") return WeightPlacement::Linear;
  throw std::invalid_argument("unknown weight placement '" + s + "'");
}

struct PoseAvgStudy {
  int trials = 100;
  std::vector<double> outlier_levels = {0.0, 0.2, 0.4, 0.6, 0.8};
  int n_inliers = 20;
  std::vector<double> sigma_phi = {0.05, 0.10, 0.15};
  std::vector<double> sigma_rho = {0.05, 0.10, 0.15};
  double correlation = 0.2;
  double init_scale = 2.0;
  double outlier_phi_max_deg = 60.0;
  double outlier_rho_max = 1.0;
  int max_iters = 50;
  double tol_phi = 1e-3;
  double tol_rho = 1e-3;
  double tau = 20.0;
  WeightPlacement placement = WeightPlacement::Squared;

  Matrix6 inlier_cov() const {
    if (sigma_phi.size() != 3 || sigma_rho.size() != 3) throw std::invalid_argument("pose_avg: sigma vectors need 3 entries");
    return default_measurement_cov(Vector3(sigma_phi[0], sigma_phi[1], sigma_phi[2]),
                                   Vector3(sigma_rho[0], sigma_rho[1], sigma_rho[2]), correlation);
  }
};

struct IcpStudy {
  int trials = 60;
  std::vector<SceneKind> scenes = {kAllScenes.begin(), kAllScenes.end()};
  double overlap_min = 0.4;
  double overlap_max = 0.7;
  double phi_max_deg = 20.0;
  double r_max = 0.5;
  double grid = 0.10;
  std::size_t normal_k = 15;
  int max_iters = 50;
  double tol_phi = 1e-3;
  double tol_rho = 1e-3;
  double tau = 10.0;
  WeightPlacement placement = WeightPlacement::Squared;
  std::size_t points_per_cloud = 5000;
  double point_noise = 0.01;
  // Optional ingested pair; replaces the synthetic scenes when set.
  std::string source_cloud;
  std::string target_cloud;
  std::vector<double> truth;  ///< 12 numbers, see pose_to_row
};

struct ExperimentConfig {
  Study study = Study::PoseAvg;
  std::uint64_t seed = 1;
  int threads = 1;
  std::vector<RlfKind> rlfs = {kAllRlfs.begin(), kAllRlfs.end()};
  std::string out_dir = "out";
  PoseAvgStudy pose_avg;
  IcpStudy icp;

  int trials() const { return study == Study::PoseAvg ? pose_avg.trials : icp.trials; }

  void validate() const {
    if (trials() < 1) throw std::invalid_argument("config: trial count must be at least 1");
    if (threads < 1) throw std::invalid_argument("config: thread count must be at least 1");
    if (rlfs.empty()) throw std::invalid_argument("config: rlf list is empty");
    for (double f : pose_avg.outlier_levels)
      if (!(f >= 0.0 && f < 1.0)) throw std::invalid_argument("config: outlier levels must lie in [0, 1)");
    if (pose_avg.outlier_levels.empty()) throw std::invalid_argument("config: no outlier levels");
    (void)pose_avg.inlier_cov();
    if (!(icp.overlap_min >= 0.4 && icp.overlap_min <= icp.overlap_max && icp.overlap_max <= 1.0))
      throw std::invalid_argument("config: overlap range must satisfy 0.4 <= min <= max <= 1");
    if (icp.scenes.empty() && icp.source_cloud.empty()) throw std::invalid_argument("config: no scenes");
    if (icp.source_cloud.empty() != icp.target_cloud.empty())
      throw std::invalid_argument("config: source_cloud and target_cloud go together");
    if (!icp.source_cloud.empty() && icp.truth.size() != 12)
      throw std::invalid_argument("config: ingested clouds need a 12-number truth pose");
  }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json rlfs = nlohmann::json::array();
  for (RlfKind k : c.rlfs) rlfs.push_back(std::string(rlf_name(k)));
  nlohmann::json scenes = nlohmann::json::array();
  for (SceneKind k : c.icp.scenes) scenes.push_back(std::string(scene_name(k)));
  const auto& p = c.pose_avg;
  const auto& i = c.icp;
  return {
      {"study", study_name(c.study)},
      {"seed", c.seed},
      {"threads", c.threads},
      {"rlfs", rlfs},
      {"out_dir", c.out_dir},
      {"pose_avg",
       {{"trials", p.trials},
        {"outlier_levels", p.outlier_levels},
        {"n_inliers", p.n_inliers},
        {"sigma_phi", p.sigma_phi},
        {"sigma_rho", p.sigma_rho},
        {"correlation", p.correlation},
        {"init_scale", p.init_scale},
        {"outlier_phi_max_deg", p.outlier_phi_max_deg},
        {"outlier_rho_max", p.outlier_rho_max},
        {"max_iters", p.max_iters},
        {"tol_phi", p.tol_phi},
        {"tol_rho", p.tol_rho},
        {"tau", p.tau},
        {"placement", placement_name(p.placement)}}},
      {"icp",
       {{"trials", i.trials},
        {"scenes", scenes},
        {"overlap_min", i.overlap_min},
        {"overlap_max", i.overlap_max},
        {"phi_max_deg", i.phi_max_deg},
        {"r_max", i.r_max},
        {"grid", i.grid},
        {"normal_k", i.normal_k},
        {"max_iters", i.max_iters},
        {"tol_phi", i.tol_phi},
        {"tol_rho", i.tol_rho},
        {"tau", i.tau},
        {"placement", placement_name(i.placement)},
        {"points_per_cloud", i.points_per_cloud},
        {"point_noise", i.point_noise},
        {"source_cloud", i.source_cloud},
        {"target_cloud", i.target_cloud},
        {"truth", i.truth}}},
  };
}

namespace detail {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* known : keys) ok = ok || k == known;
    if (!ok) throw std::invalid_argument("config: unknown key '" + k + "' in " + where);
  }
}

}  // namespace detail

/// Missing keys keep their defaults; unknown keys are rejected.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::check_keys(j, {"study", "seed", "threads", "rlfs", "out_dir", "pose_avg", "icp"}, "config");
  if (j.contains("study")) c.study = parse_study(j.at("study").get<std::string>());
  detail::read_opt(j, "seed", c.seed);
  detail::read_opt(j, "threads", c.threads);
  detail::read_opt(j, "out_dir", c.out_dir);
  if (j.contains("rlfs")) {
    c.rlfs.clear();
    for (const auto& n : j.at("rlfs")) c.rlfs.push_back(parse_rlf(n.get<std::string>()));
  }
  if (j.contains("pose_avg")) {
    const auto& p = j.at("pose_avg");
    detail::check_keys(p,
                       {"trials", "outlier_levels", "n_inliers", "sigma_phi", "sigma_rho", "correlation", "init_scale",
                        "outlier_phi_max_deg", "outlier_rho_max", "max_iters", "tol_phi", "tol_rho", "tau", "placement"},
                       "pose_avg");
    auto& o = c.pose_avg;
    detail::read_opt(p, "trials", o.trials);
    detail::read_opt(p, "outlier_levels", o.outlier_levels);
    detail::read_opt(p, "n_inliers", o.n_inliers);
    detail::read_opt(p, "sigma_phi", o.sigma_phi);
    detail::read_opt(p, "sigma_rho", o.sigma_rho);
    detail::read_opt(p, "correlation", o.correlation);
    detail::read_opt(p, "init_scale", o.init_scale);
    detail::read_opt(p, "outlier_phi_max_deg", o.outlier_phi_max_deg);
    detail::read_opt(p, "outlier_rho_max", o.outlier_rho_max);
    detail::read_opt(p, "max_iters", o.max_iters);
    detail::read_opt(p, "tol_phi", o.tol_phi);
    detail::read_opt(p, "tol_rho", o.tol_rho);
    detail::read_opt(p, "tau", o.tau);
    if (p.contains("placement")) o.placement = parse_placement(p.at("placement").get<std::string>());
  }
  if (j.contains("icp")) {
    const auto& p = j.at("icp");
    detail::check_keys(p,
                       {"trials", "scenes", "overlap_min", "overlap_max", "phi_max_deg", "r_max", "grid", "normal_k",
                        "max_iters", "tol_phi", "tol_rho", "tau", "placement", "points_per_cloud", "point_noise",
                        "source_cloud", "target_cloud", "truth"},
                       "icp");
    auto& o = c.icp;
    detail::read_opt(p, "trials", o.trials);
    if (p.contains("scenes")) {
      o.scenes.clear();
      for (const auto& n : p.at("scenes")) o.scenes.push_back(parse_scene(n.get<std::string>()));
    }
    detail::read_opt(p, "overlap_min", o.overlap_min);
    detail::read_opt(p, "overlap_max", o.overlap_max);
    detail::read_opt(p, "phi_max_deg", o.phi_max_deg);
    detail::read_opt(p, "r_max", o.r_max);
    detail::read_opt(p, "grid", o.grid);
    detail::read_opt(p, "normal_k", o.normal_k);
    detail::read_opt(p, "max_iters", o.max_iters);
    detail::read_opt(p, "tol_phi", o.tol_phi);
    detail::read_opt(p, "tol_rho", o.tol_rho);
    detail::read_opt(p, "tau", o.tau);
    if (p.contains("placement")) o.placement = parse_placement(p.at("placement").get<std::string>());
    detail::read_opt(p, "points_per_cloud", o.points_per_cloud);
    detail::read_opt(p, "point_noise", o.point_noise);
    detail::read_opt(p, "source_cloud", o.source_cloud);
    detail::read_opt(p, "target_cloud", o.target_cloud);
    detail::read_opt(p, "truth", o.truth);
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

/// FNV-1a over the canonical JSON of every field that affects results
/// (thread count and output directory excluded).
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  auto j = to_json(c);
  j.erase("threads");
  j.erase("out_dir");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace amb
