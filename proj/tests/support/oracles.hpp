#pragma once

// Slow reference implementations and random fixtures shared by the unit and
// acceptance tests.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "fbd/dti.hpp"
#include "fbd/metrics.hpp"

namespace fbd::testing {

inline std::vector<std::int32_t> sphere_map(int n, double radius, std::int32_t label = 1) {
  std::vector<std::int32_t> m(static_cast<std::size_t>(n * n * n), 0);
  const double c = (n - 1) / 2.0;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        if ((x - c) * (x - c) + (y - c) * (y - c) + (z - c) * (z - c) <= radius * radius)
          m[static_cast<std::size_t>((z * n + y) * n + x)] = label;
  return m;
}

// Random eigenvalues in [0.1, 3] x 1e-3 mm^2/s with a random rotation.
inline Tensor6 random_spd(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> eig(0.1e-3, 3e-3);
  std::normal_distribution<double> n;
  Eigen::Matrix3d a;
  for (int i = 0; i < 9; ++i) a(i / 3, i % 3) = n(rng);
  Eigen::HouseholderQR<Eigen::Matrix3d> qr(a);
  const Eigen::Matrix3d q = qr.householderQ();
  const Eigen::Vector3d l(eig(rng), eig(rng), eig(rng));
  const Eigen::Matrix3d m = q * l.asDiagonal() * q.transpose();
  return {m(0, 0), m(0, 1), m(0, 2), m(1, 1), m(1, 2), m(2, 2)};
}

// Partially filled ball at a random position.
inline std::vector<std::uint8_t> random_blob(const Grid3& g, std::mt19937& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::uint8_t> m(static_cast<std::size_t>(g[0] * g[1] * g[2]), 0);
  const double cx = u(rng) * g[0], cy = u(rng) * g[1], cz = u(rng) * g[2];
  const double r = 1 + u(rng) * 4, fill = 0.6 + 0.4 * u(rng);
  for (std::int64_t z = 0; z < g[2]; ++z)
    for (std::int64_t y = 0; y < g[1]; ++y)
      for (std::int64_t x = 0; x < g[0]; ++x) {
        const double d = std::hypot(x - cx, y - cy, z - cz);
        m[static_cast<std::size_t>((z * g[1] + y) * g[0] + x)] = d <= r && u(rng) < fill;
      }
  return m;
}

// All-pairs nearest surface distances in both directions, sorted.
inline std::vector<double> brute_force_distances(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b,
                                                 const Grid3& g, const Spacing& s) {
  const auto sa = surface_voxels(a, g), sb = surface_voxels(b, g);
  auto xyz = [&](std::int64_t i) { return std::array<std::int64_t, 3>{i % g[0], (i / g[0]) % g[1], i / (g[0] * g[1])}; };
  std::vector<double> out;
  for (int pass = 0; pass < 2; ++pass) {
    const auto& from = pass ? sb : sa;
    const auto& to = pass ? sa : sb;
    for (auto i : from) {
      double best = INFINITY;
      const auto p = xyz(i);
      for (auto j : to) {
        const auto q = xyz(j);
        best = std::min(best, offset_length(p[0] - q[0], p[1] - q[1], p[2] - q[2], s));
      }
      out.push_back(best);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Linear interpolation between closest ranks of sorted values.
inline double sorted_percentile(const std::vector<double>& sorted, double q) {
  const double h = (static_cast<double>(sorted.size()) - 1) * q / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double brute_dsc(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  std::int64_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    na += a[i] != 0;
    nb += b[i] != 0;
  }
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

}  // namespace fbd::testing
