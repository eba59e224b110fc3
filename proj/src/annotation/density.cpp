#include <algorithm>
#include <cmath>
#include <limits>

#include "fbd/annotation.hpp"
#include "fbd/errors.hpp"
#include "fbd/parallel.hpp"

namespace fbd {

double percentile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("percentile of an empty set");
  if (!(q >= 0 && q <= 100)) throw DataError("percentile must be in [0, 100]");
  std::sort(values.begin(), values.end());
  const double h = static_cast<double>(values.size() - 1) * q / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<std::array<std::int64_t, 3>> traverse_segment(const std::array<double, 3>& a,
                                                          const std::array<double, 3>& b) {
  // Shift so voxel k spans [k, k + 1).
  std::array<double, 3> p0{}, d{};
  std::array<std::int64_t, 3> idx{}, last{}, step{};
  std::array<double, 3> t_max{}, t_delta{};
  std::int64_t remaining = 0;
  for (int ax = 0; ax < 3; ++ax) {
    if (!std::isfinite(a[ax]) || !std::isfinite(b[ax])) throw DataError("non-finite streamline coordinate");
    p0[ax] = a[ax] + 0.5;
    d[ax] = b[ax] - a[ax];
    idx[ax] = static_cast<std::int64_t>(std::floor(p0[ax]));
    last[ax] = static_cast<std::int64_t>(std::floor(b[ax] + 0.5));
    step[ax] = last[ax] > idx[ax] ? 1 : (last[ax] < idx[ax] ? -1 : 0);
    remaining += std::abs(last[ax] - idx[ax]);
    if (step[ax] == 0 || d[ax] == 0) {
      t_max[ax] = t_delta[ax] = std::numeric_limits<double>::infinity();
    } else {
      t_delta[ax] = 1.0 / std::abs(d[ax]);
      const double boundary = step[ax] > 0 ? static_cast<double>(idx[ax] + 1) : static_cast<double>(idx[ax]);
      t_max[ax] = (boundary - p0[ax]) / d[ax];
    }
  }
  std::vector<std::array<std::int64_t, 3>> out;
  out.reserve(static_cast<std::size_t>(remaining + 1));
  out.push_back(idx);
  for (; remaining > 0; --remaining) {
    int ax = -1;
    for (int k = 0; k < 3; ++k) {
      if (idx[k] == last[k]) continue;
      if (ax < 0 || t_max[k] < t_max[ax]) ax = k;
    }
    idx[ax] += step[ax];
    t_max[ax] += t_delta[ax];
    out.push_back(idx);
  }
  return out;
}

DensityResult density_mask(const StreamlineSet& streamlines, const VolumeMeta& meta, double percentile,
                           int threads) {
  if (streamlines.streamlines.empty()) throw DataError("density_mask needs at least one streamline");
  if (meta.dims.size() < 3) throw DataError("density_mask needs a 3-D grid");
  const std::int64_t nx = meta.dims[0], ny = meta.dims[1], nz = meta.dims[2];
  const std::int64_t n = nx * ny * nz;
  const auto count = static_cast<std::int64_t>(streamlines.streamlines.size());
  const auto chunks = chunk_count(count, threads);
  std::vector<std::vector<std::int32_t>> partial(static_cast<std::size_t>(chunks));
  std::vector<std::int64_t> skipped(static_cast<std::size_t>(chunks), 0);

  auto inside = [&](const std::array<std::int64_t, 3>& v) {
    return v[0] >= 0 && v[0] < nx && v[1] >= 0 && v[1] < ny && v[2] >= 0 && v[2] < nz;
  };
  parallel_chunks(count, threads, [&](std::int64_t k, std::int64_t b, std::int64_t e) {
    auto& dens = partial[static_cast<std::size_t>(k)];
    dens.assign(static_cast<std::size_t>(n), 0);
    std::vector<std::int64_t> visited;
    for (std::int64_t s = b; s < e; ++s) {
      const auto& line = streamlines.streamlines[static_cast<std::size_t>(s)];
      visited.clear();
      std::array<double, 3> prev{};
      for (std::size_t p = 0; p < line.size(); ++p) {
        const std::array<double, 3> cur{line[p][0] / meta.voxel_size_mm[0], line[p][1] / meta.voxel_size_mm[1],
                                        line[p][2] / meta.voxel_size_mm[2]};
        const std::array<std::int64_t, 3> cell{static_cast<std::int64_t>(std::floor(cur[0] + 0.5)),
                                               static_cast<std::int64_t>(std::floor(cur[1] + 0.5)),
                                               static_cast<std::int64_t>(std::floor(cur[2] + 0.5))};
        if (!inside(cell)) ++skipped[static_cast<std::size_t>(k)];
        if (p > 0) {
          for (const auto& v : traverse_segment(prev, cur))
            if (inside(v)) visited.push_back((v[2] * ny + v[1]) * nx + v[0]);
        } else if (line.size() == 1 && inside(cell)) {
          visited.push_back((cell[2] * ny + cell[1]) * nx + cell[0]);
        }
        prev = cur;
      }
      std::sort(visited.begin(), visited.end());
      visited.erase(std::unique(visited.begin(), visited.end()), visited.end());
      for (auto v : visited) ++dens[static_cast<std::size_t>(v)];
    }
  });

  DensityResult r;
  r.density.assign(static_cast<std::size_t>(n), 0);
  for (std::size_t k = 0; k < partial.size(); ++k) {
    for (std::size_t i = 0; i < r.density.size(); ++i) r.density[i] += partial[k][i];
    r.skipped_points += skipped[k];
  }
  std::vector<double> positive;
  for (auto d : r.density)
    if (d > 0) positive.push_back(d);
  if (positive.empty()) throw DataError("streamline density is empty (no streamline crosses the grid)");
  r.threshold = percentile_linear(std::move(positive), percentile);
  r.mask.resize(r.density.size());
  for (std::size_t i = 0; i < r.density.size(); ++i) {
    r.mask[i] = r.density[i] > 0 && static_cast<double>(r.density[i]) >= r.threshold ? 1 : 0;
  }
  return r;
}

}  // namespace fbd
