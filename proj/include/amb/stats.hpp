#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "amb/lie.hpp"

namespace amb {

/// Linear-interpolation percentile (type 7): position (n - 1) p / 100 in the
/// sorted values.
inline double percentile(std::span<const double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile: empty list");
  if (!(p >= 0.0 && p <= 100.0)) throw std::invalid_argument("percentile: p must lie in [0, 100]");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median(std::span<const double> values) { return percentile(values, 50.0); }

/// A solve succeeds when it strictly reduces both the attitude and the
/// position error of its initial guess.
inline bool success(const ErrorNorms& prior, const ErrorNorms& posterior) {
  return posterior.phi < prior.phi && posterior.rho < prior.rho;
}

}  // namespace amb
