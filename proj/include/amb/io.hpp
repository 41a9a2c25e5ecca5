#pragma once

#include <array>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "amb/icp.hpp"
#include "amb/lie.hpp"
#include "amb/pose_averaging.hpp"

namespace amb {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class CloudFormat { Auto, Csv, Ply };

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return in;
}

inline void add_point(PointCloud& cloud, const std::vector<double>& v) {
  cloud.points.emplace_back(v[0], v[1], v[2]);
  if (v.size() == 6) {
    Vector3 n(v[3], v[4], v[5]);
    const double len = n.norm();
    cloud.normals.push_back(len > 0.0 ? Vector3(n / len) : Vector3::Zero());
    cloud.normal_valid.push_back(len > 0.0);
  }
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace detail

/// Cloud from CSV rows "x,y,z[,nx,ny,nz]" (optional header line).
inline PointCloud load_csv_cloud(std::istream& in) {
  PointCloud cloud;
  std::string line;
  std::size_t lineno = 0, columns = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto fields = detail::split_fields(line);
    std::vector<double> v(fields.size());
    bool numeric = true;
    for (std::size_t k = 0; k < fields.size(); ++k) numeric = numeric && detail::parse_double(fields[k], v[k]);
    if (!numeric) {
      if (cloud.empty() && columns == 0) {
        columns = fields.size();
        continue;
      }
      throw ParseError("line " + std::to_string(lineno) + ": non-numeric field");
    }
    if (v.size() != 3 && v.size() != 6)
      throw ParseError("line " + std::to_string(lineno) + ": expected 3 or 6 columns, got " + std::to_string(v.size()));
    if (!cloud.empty() && (v.size() == 6) != !cloud.normals.empty())
      throw ParseError("line " + std::to_string(lineno) + ": inconsistent column count");
    detail::add_point(cloud, v);
  }
  return cloud;
}

/// Cloud from an ASCII PLY file with x/y/z (and optionally nx/ny/nz) vertex
/// properties.
inline PointCloud load_ply_cloud(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  auto next = [&]() {
    if (!std::getline(in, line)) throw ParseError("unexpected end of PLY file after line " + std::to_string(lineno));
    ++lineno;
    line = detail::trim(line);
    return line;
  };
  if (next() != "ply") throw ParseError("line 1: missing 'ply' magic");

  std::size_t vertex_count = 0;
  bool in_vertex = false, seen_vertex = false;
  std::vector<std::string> props;
  for (;;) {
    std::istringstream ss(next());
    std::string word;
    ss >> word;
    if (word == "format") {
      std::string enc;
      ss >> enc;
      if (enc != "ascii") throw ParseError("unsupported PLY encoding '" + enc + "'");
    } else if (word == "comment" || word == "obj_info" || word.empty()) {
    } else if (word == "element") {
      std::string name;
      std::size_t count = 0;
      ss >> name >> count;
      in_vertex = name == "vertex";
      if (in_vertex) {
        vertex_count = count;
        seen_vertex = true;
      }
    } else if (word == "property") {
      std::string type, name;
      ss >> type >> name;
      if (!in_vertex) continue;
      if (type == "list") throw ParseError("line " + std::to_string(lineno) + ": list property in vertex element");
      static const std::array<const char*, 6> known = {"x", "y", "z", "nx", "ny", "nz"};
      if (std::find(known.begin(), known.end(), name) == known.end())
        throw ParseError("line " + std::to_string(lineno) + ": unknown PLY property '" + name + "'");
      props.push_back(name);
    } else if (word == "end_header") {
      break;
    } else {
      throw ParseError("line " + std::to_string(lineno) + ": unexpected header keyword '" + word + "'");
    }
  }
  if (!seen_vertex) throw ParseError("PLY file has no vertex element");
  auto index_of = [&](const char* n) {
    const auto it = std::find(props.begin(), props.end(), n);
    return it == props.end() ? -1 : static_cast<int>(it - props.begin());
  };
  const std::array<int, 3> xyz = {index_of("x"), index_of("y"), index_of("z")};
  const std::array<int, 3> nrm = {index_of("nx"), index_of("ny"), index_of("nz")};
  if (xyz[0] < 0 || xyz[1] < 0 || xyz[2] < 0) throw ParseError("PLY vertex element lacks x/y/z");
  const bool has_n = nrm[0] >= 0 && nrm[1] >= 0 && nrm[2] >= 0;

  PointCloud cloud;
  for (std::size_t i = 0; i < vertex_count; ++i) {
    const auto fields = detail::split_fields(next());
    if (fields.size() != props.size())
      throw ParseError("line " + std::to_string(lineno) + ": expected " + std::to_string(props.size()) + " values");
    std::vector<double> vals(fields.size());
    for (std::size_t k = 0; k < fields.size(); ++k)
      if (!detail::parse_double(fields[k], vals[k])) throw ParseError("line " + std::to_string(lineno) + ": non-numeric value");
    std::vector<double> v = {vals[xyz[0]], vals[xyz[1]], vals[xyz[2]]};
    if (has_n) v.insert(v.end(), {vals[nrm[0]], vals[nrm[1]], vals[nrm[2]]});
    detail::add_point(cloud, v);
  }
  return cloud;
}

inline PointCloud load_point_cloud(const std::string& path, CloudFormat format = CloudFormat::Auto) {
  if (format == CloudFormat::Auto) {
    const auto dot = path.rfind('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    format = ext == "ply" ? CloudFormat::Ply : CloudFormat::Csv;
  }
  auto in = detail::open_in(path);
  try {
    return format == CloudFormat::Ply ? load_ply_cloud(in) : load_csv_cloud(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline void save_csv_cloud(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  const bool n = cloud.has_normals();
  out << (n ? "x,y,z,nx,ny,nz\n" : "x,y,z\n");
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    out << detail::fmt(p.x()) << ',' << detail::fmt(p.y()) << ',' << detail::fmt(p.z());
    if (n) {
      const auto& q = cloud.normals[i];
      out << ',' << detail::fmt(q.x()) << ',' << detail::fmt(q.y()) << ',' << detail::fmt(q.z());
    }
    out << '\n';
  }
}

inline void save_ply_cloud(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  for (const auto& p : cloud.points)
    out << detail::fmt(p.x()) << ' ' << detail::fmt(p.y()) << ' ' << detail::fmt(p.z()) << '\n';
}

/// Pose as 12 numbers: rotation row-major, then translation.
inline std::array<double, 12> pose_to_row(const Pose& t) {
  std::array<double, 12> r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[3 * i + j] = t.rotation(i, j);
  for (int i = 0; i < 3; ++i) r[9 + i] = t.translation[i];
  return r;
}

inline Pose pose_from_row(const std::vector<double>& r) {
  if (r.size() != 12) throw ParseError("pose needs 12 numbers, got " + std::to_string(r.size()));
  Pose t;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t.rotation(i, j) = r[3 * i + j];
  for (int i = 0; i < 3; ++i) t.translation[i] = r[9 + i];
  if (!is_rotation(t.rotation, 1e-6)) throw ParseError("pose rotation block is not a rotation matrix");
  return t.normalized();
}

inline nlohmann::json trial_to_json(const PoseTrial& trial) {
  nlohmann::json j;
  j["truth"] = pose_to_row(trial.truth);
  j["initial"] = pose_to_row(trial.initial);
  j["n_inliers"] = trial.n_inliers;
  auto& ms = j["measurements"] = nlohmann::json::array();
  for (const auto& m : trial.measurements) {
    std::vector<double> cov(m.cov.data(), m.cov.data() + 36);
    ms.push_back({{"pose", pose_to_row(m.pose)}, {"cov", cov}});
  }
  return j;
}

inline PoseTrial trial_from_json(const nlohmann::json& j) {
  PoseTrial trial;
  trial.truth = j.contains("truth") ? pose_from_row(j.at("truth").get<std::vector<double>>()) : Pose::identity();
  trial.initial = pose_from_row(j.at("initial").get<std::vector<double>>());
  trial.n_inliers = j.value("n_inliers", std::size_t{0});
  for (const auto& m : j.at("measurements")) {
    const auto cov = m.at("cov").get<std::vector<double>>();
    if (cov.size() != 36) throw ParseError("covariance needs 36 numbers");
    PoseMeasurement pm;
    pm.pose = pose_from_row(m.at("pose").get<std::vector<double>>());
    pm.cov = Eigen::Map<const Matrix6>(cov.data());
    trial.measurements.push_back(pm);
  }
  return trial;
}

/// Whitespace/comma separated numbers, '#' starts a comment line.
inline std::vector<double> load_residuals(std::istream& in) {
  std::vector<double> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    for (const auto& f : detail::split_fields(line)) {
      double v;
      if (!detail::parse_double(f, v)) throw ParseError("line " + std::to_string(lineno) + ": non-numeric value '" + f + "'");
      out.push_back(v);
    }
  }
  return out;
}

inline std::vector<double> load_residuals(const std::string& path) {
  auto in = detail::open_in(path);
  return load_residuals(in);
}

/// Per-iteration ICP trace: iter, step_phi, step_rho, alpha_star, a_star, mode.
inline void write_icp_trace(std::ostream& out, const IcpResult& r) {
  out << "iter,step_phi,step_rho,alpha_star,a_star,mode\n";
  for (std::size_t k = 0; k < r.trace.size(); ++k) {
    const auto& t = r.trace[k];
    out << k + 1 << ',' << detail::fmt(t.step_phi) << ',' << detail::fmt(t.step_rho) << ',';
    if (t.alpha_star) out << detail::fmt(t.alpha_star->value());
    out << ',';
    if (t.a_star) out << detail::fmt(*t.a_star);
    out << ',';
    if (t.mode) out << detail::fmt(*t.mode);
    out << '\n';
  }
}

}  // namespace amb
