#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "amb/icp.hpp"
#include "amb/kdtree.hpp"
#include "amb/lie.hpp"

namespace amb {

enum class SceneKind { Structured, Semi, Unstructured };

inline constexpr std::array<SceneKind, 3> kAllScenes = {SceneKind::Structured, SceneKind::Semi,
                                                         SceneKind::Unstructured};

inline std::string_view scene_name(SceneKind k) {
  switch (k) {
    case SceneKind::Structured: return "structured";
    case SceneKind::Semi: return "semi";
    case SceneKind::Unstructured: return "unstructured";
  }
  return "unknown";
}

inline SceneKind parse_scene(std::string_view name) {
  for (SceneKind k : kAllScenes)
    if (scene_name(k) == name) return k;
  throw std::invalid_argument("unknown scene kind '" + std::string(name) + "'");
}

struct SceneParams {
  double length = 5.0;        ///< extent of each scan window along x (m)
  double width = 5.0;         ///< extent across y (m)
  double sensor_height = 1.5; ///< ground lies at z = -sensor_height
  std::size_t points_per_cloud = 5000;
  double noise = 0.01;        ///< isotropic point noise std (m)
  double max_yaw = 0.2;       ///< ground-truth yaw drawn uniformly in +-max_yaw (rad)
  double overlap_radius = 0.2;
};

struct Scene {
  PointCloud source;  ///< in the source sensor frame
  PointCloud target;  ///< in the target sensor frame (world)
  Pose truth;         ///< maps source-frame points into the target frame
  double overlap_measured = 0.0;
};

namespace detail {

struct Surface {
  double area;
  std::function<Vector3(std::mt19937_64&)> sample;
};

inline double unit(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline Surface rectangle(Vector3 o, Vector3 u, Vector3 v) {
  return {u.cross(v).norm(), [=](std::mt19937_64& rng) {
            const double a = unit(rng), b = unit(rng);
            return Vector3(o + a * u + b * v);
          }};
}

inline void add_box(std::vector<Surface>& s, Vector3 lo, Vector3 size) {
  const Vector3 ex(size.x(), 0, 0), ey(0, size.y(), 0), ez(0, 0, size.z());
  s.push_back(rectangle(lo, ey, ez));
  s.push_back(rectangle(lo + ex, ey, ez));
  s.push_back(rectangle(lo, ex, ez));
  s.push_back(rectangle(lo + ey, ex, ez));
  s.push_back(rectangle(lo + ez, ex, ey));
}

inline Surface height_field(double x0, double x1, double y0, double y1, std::function<double(double, double)> z) {
  return {(x1 - x0) * (y1 - y0), [=](std::mt19937_64& rng) {
            const double x = x0 + (x1 - x0) * unit(rng), y = y0 + (y1 - y0) * unit(rng);
            return Vector3(x, y, z(x, y));
          }};
}

inline Surface cylinder(double cx, double cy, double r, double z0, double z1) {
  return {2.0 * M_PI * r * (z1 - z0), [=](std::mt19937_64& rng) {
            const double t = 2.0 * M_PI * unit(rng);
            return Vector3(cx + r * std::cos(t), cy + r * std::sin(t), z0 + (z1 - z0) * unit(rng));
          }};
}

inline Surface ellipsoid(Vector3 c, Vector3 radii) {
  const double p = 1.6075;
  const double ab = std::pow(radii.x() * radii.y(), p), ac = std::pow(radii.x() * radii.z(), p),
               bc = std::pow(radii.y() * radii.z(), p);
  const double area = 4.0 * M_PI * std::pow((ab + ac + bc) / 3.0, 1.0 / p);
  return {area, [=](std::mt19937_64& rng) {
            std::normal_distribution<double> n01;
            Vector3 d(n01(rng), n01(rng), n01(rng));
            d.normalize();
            return Vector3(c + radii.cwiseProduct(d));
          }};
}

inline std::vector<Surface> build_world(SceneKind kind, const SceneParams& p, std::mt19937_64& rng) {
  std::vector<Surface> s;
  const double x0 = -0.5, x1 = 2.2 * p.length + 0.5;
  const double y0 = -0.5 * p.width, y1 = 0.5 * p.width;
  const double g = -p.sensor_height;
  auto u = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  switch (kind) {
    case SceneKind::Structured: {
      s.push_back(rectangle({x0, y0, g}, {x1 - x0, 0, 0}, {0, y1 - y0, 0}));
      s.push_back(rectangle({x0, y1, g}, {x1 - x0, 0, 0}, {0, 0, 3.0}));
      for (double x = x0 + 0.5; x < x1 - 1.0; x += u(1.0, 1.6))
        add_box(s, {x, u(y0 + 0.3, y1 - 1.2), g}, {u(0.3, 0.9), u(0.3, 0.9), u(0.3, 1.2)});
      // stairs against the wall
      for (double x = x0 + u(0.5, 1.5); x < x1 - 3.0; x += u(3.0, 4.0))
        for (int k = 0; k < 4; ++k) add_box(s, {x + 0.3 * k, y1 - 0.8, g}, {0.3, 0.8, 0.2 * (k + 1)});
      for (int k = 0; k < static_cast<int>(3 * (x1 - x0)); ++k)
        add_box(s, {u(x0, x1 - 0.2), u(y0, y1 - 0.2), g}, Vector3::Constant(u(0.08, 0.2)));
      break;
    }
    case SceneKind::Semi: {
      const double a1 = u(0, 2 * M_PI), a2 = u(0, 2 * M_PI), a3 = u(0, 2 * M_PI);
      s.push_back(height_field(x0, x1, y0, y1, [=](double x, double y) {
        return g + 0.25 * std::sin(1.1 * x + a1) * std::cos(0.9 * y + a2) + 0.12 * std::sin(2.3 * x + 1.7 * y + a3) +
               0.05 * std::sin(5.1 * x - 3.7 * y);
      }));
      for (int k = 0; k < static_cast<int>(1.5 * (x1 - x0)); ++k)
        s.push_back(ellipsoid({u(x0, x1), u(y0, y1), g}, {u(0.15, 0.5), u(0.15, 0.5), u(0.1, 0.3)}));
      break;
    }
    case SceneKind::Unstructured: {
      const double a1 = u(0, 2 * M_PI), a2 = u(0, 2 * M_PI);
      s.push_back(height_field(x0, x1, y0, y1, [=](double x, double y) {
        return g + 0.08 * std::sin(3.1 * x + a1) * std::cos(2.7 * y + a2) + 0.04 * std::sin(7.3 * x + 5.9 * y);
      }));
      for (int k = 0; k < static_cast<int>(1.2 * (x1 - x0)); ++k)
        s.push_back(cylinder(u(x0, x1), u(y0, y1), u(0.1, 0.3), g, g + u(2.0, 4.0)));
      for (int k = 0; k < static_cast<int>(1.5 * (x1 - x0)); ++k)
        s.push_back(ellipsoid({u(x0, x1), u(y0, y1), g + u(0.2, 1.5)}, {u(0.2, 0.6), u(0.2, 0.6), u(0.2, 0.5)}));
      break;
    }
  }
  return s;
}

/// Area-weighted samples restricted to world x in [lo, hi).
inline std::vector<Vector3> sample_window(const std::vector<Surface>& world, double lo, double hi, std::size_t n,
                                          double noise, std::mt19937_64& rng) {
  std::vector<double> areas;
  for (const auto& s : world) areas.push_back(s.area);
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  std::normal_distribution<double> n01;
  std::vector<Vector3> out;
  out.reserve(n);
  while (out.size() < n) {
    const Vector3 p = world[pick(rng)].sample(rng);
    if (p.x() < lo || p.x() >= hi) continue;
    out.push_back(p + noise * Vector3(n01(rng), n01(rng), n01(rng)));
  }
  return out;
}

inline double overlap_fraction(const std::vector<Vector3>& src_world, const KdTree& target, double radius) {
  if (src_world.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& p : src_world) hits += target.nearest(p).dist2 <= radius * radius;
  return static_cast<double>(hits) / static_cast<double>(src_world.size());
}

}  // namespace detail

/// Fraction of source points with a target point within `radius` once the
/// source is mapped through `truth`.
inline double measure_overlap(const PointCloud& source, const PointCloud& target, const Pose& truth, double radius) {
  const KdTree tree(target.points);
  std::vector<Vector3> moved;
  moved.reserve(source.size());
  for (const auto& p : source.points) moved.push_back(truth * p);
  return detail::overlap_fraction(moved, tree, radius);
}

/**
 * \brief Synthetic scan pair.
 *
 * Both scans sample the same world independently. The target window spans
 * world x in [0, L); the source window is shifted along x by the amount that
 * yields the requested overlap (found by bisection on the measured overlap).
 */
inline Scene generate_scene(SceneKind kind, double overlap, std::uint64_t seed, const SceneParams& p = {}) {
  if (!(overlap >= 0.4 && overlap <= 1.0)) throw std::invalid_argument("generate_scene: overlap must lie in [0.4, 1]");
  std::mt19937_64 rng(seed);
  const auto world = detail::build_world(kind, p, rng);

  Scene scene;
  auto target_pts = detail::sample_window(world, 0.0, p.length, p.points_per_cloud, p.noise, rng);
  const KdTree tree(target_pts);

  // source pool covers every admissible shift
  const double pool_hi = 2.0 * p.length;
  const auto pool = detail::sample_window(world, 0.0, pool_hi, 2 * p.points_per_cloud, p.noise, rng);
  auto window = [&](double shift) {
    std::vector<Vector3> w;
    for (const auto& q : pool)
      if (q.x() >= shift && q.x() < shift + p.length) w.push_back(q);
    return w;
  };

  double lo = 0.0, hi = p.length;
  if (overlap < 1.0) {
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (detail::overlap_fraction(window(mid), tree, p.overlap_radius) > overlap) lo = mid; else hi = mid;
    }
  }
  const double shift = overlap < 1.0 ? 0.5 * (lo + hi) : 0.0;
  const auto src_world = window(shift);

  const double yaw = std::uniform_real_distribution<double>(-p.max_yaw, p.max_yaw)(rng);
  const double dy = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
  scene.truth = Pose{so3_exp(Vector3(0.0, 0.0, yaw)), Vector3(shift, dy, 0.0)};
  const Pose inv = scene.truth.inverse();

  scene.overlap_measured = detail::overlap_fraction(src_world, tree, p.overlap_radius);
  scene.target.points = std::move(target_pts);
  scene.source.points.reserve(src_world.size());
  for (const auto& q : src_world) scene.source.points.push_back(inv * q);
  return scene;
}

}  // namespace amb
