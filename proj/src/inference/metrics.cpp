#include "fbd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "fbd/annotation.hpp"
#include "fbd/errors.hpp"

namespace fbd {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_size(std::size_t a, std::size_t b, std::int64_t expected = -1) {
  if (a != b || (expected >= 0 && static_cast<std::int64_t>(a) != expected)) {
    throw ShapeError("mask sizes differ: " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

bool isotropic(const Spacing& s) { return s[0] == s[1] && s[1] == s[2]; }

// One pass of the separable squared distance transform along a line of m
// samples: f holds squared distances so far (inf = no feature), id the
// feature reached. weight2 scales squared offsets along this axis.
void envelope_1d(std::vector<double>& f, std::vector<std::int64_t>& id, double weight2, std::vector<std::int64_t>& v,
                 std::vector<double>& z, std::vector<double>& out_f, std::vector<std::int64_t>& out_id) {
  const auto m = static_cast<std::int64_t>(f.size());
  int k = -1;
  for (std::int64_t q = 0; q < m; ++q) {
    if (f[static_cast<std::size_t>(q)] == kInf) continue;
    const double fq = f[static_cast<std::size_t>(q)] + weight2 * static_cast<double>(q * q);
    double s = -kInf;
    while (k >= 0) {
      const auto vk = v[static_cast<std::size_t>(k)];
      const double fv = f[static_cast<std::size_t>(vk)] + weight2 * static_cast<double>(vk * vk);
      s = (fq - fv) / (2.0 * weight2 * static_cast<double>(q - vk));
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
        s = -kInf;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = kInf;
  }
  if (k < 0) return;  // no features on this line; leave f as inf
  int j = 0;
  for (std::int64_t p = 0; p < m; ++p) {
    while (z[static_cast<std::size_t>(j) + 1] < static_cast<double>(p)) ++j;
    const auto vj = v[static_cast<std::size_t>(j)];
    const double d = static_cast<double>(p - vj);
    out_f[static_cast<std::size_t>(p)] = weight2 * d * d + f[static_cast<std::size_t>(vj)];
    out_id[static_cast<std::size_t>(p)] = id[static_cast<std::size_t>(vj)];
  }
  std::copy(out_f.begin(), out_f.end(), f.begin());
  std::copy(out_id.begin(), out_id.end(), id.begin());
}

// Nearest feature (index into the box) for every voxel of an nx*ny*nz box.
std::vector<std::int64_t> feature_transform(const std::vector<std::uint8_t>& feature, const Grid3& box,
                                            const Spacing& spacing) {
  const std::int64_t nx = box[0], ny = box[1], nz = box[2];
  std::vector<double> f(feature.size());
  std::vector<std::int64_t> id(feature.size(), -1);
  for (std::size_t i = 0; i < feature.size(); ++i) {
    f[i] = feature[i] ? 0.0 : kInf;
    if (feature[i]) id[i] = static_cast<std::int64_t>(i);
  }
  // Integer arithmetic when isotropic keeps tie-breaking exact.
  const bool iso = isotropic(spacing);
  const std::int64_t dims[3] = {nx, ny, nz};
  const std::int64_t strides[3] = {1, nx, nx * ny};
  for (int axis = 0; axis < 3; ++axis) {
    const std::int64_t m = dims[axis], stride = strides[axis];
    const double w2 = iso ? 1.0 : spacing[static_cast<std::size_t>(axis)] * spacing[static_cast<std::size_t>(axis)];
    std::vector<double> lf(static_cast<std::size_t>(m)), of(static_cast<std::size_t>(m)), z(static_cast<std::size_t>(m) + 1);
    std::vector<std::int64_t> lid(static_cast<std::size_t>(m)), oid(static_cast<std::size_t>(m)), v(static_cast<std::size_t>(m));
    const std::int64_t lines = nx * ny * nz / m;
    for (std::int64_t l = 0; l < lines; ++l) {
      // Base index of line l with the axis coordinate zero.
      std::int64_t base;
      if (axis == 0) base = l * nx;
      else if (axis == 1) base = (l / nx) * nx * ny + (l % nx);
      else base = l;
      for (std::int64_t q = 0; q < m; ++q) {
        lf[static_cast<std::size_t>(q)] = f[static_cast<std::size_t>(base + q * stride)];
        lid[static_cast<std::size_t>(q)] = id[static_cast<std::size_t>(base + q * stride)];
      }
      envelope_1d(lf, lid, w2, v, z, of, oid);
      for (std::int64_t q = 0; q < m; ++q) {
        f[static_cast<std::size_t>(base + q * stride)] = lf[static_cast<std::size_t>(q)];
        id[static_cast<std::size_t>(base + q * stride)] = lid[static_cast<std::size_t>(q)];
      }
    }
  }
  return id;
}

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "NA";
  std::ostringstream s;
  s << std::setprecision(10) << *v;
  return s.str();
}

nlohmann::json json_opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

std::optional<double> dsc(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  check_size(a.size(), b.size());
  std::int64_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return std::nullopt;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::vector<std::int64_t> surface_voxels(const std::vector<std::uint8_t>& mask, const Grid3& grid) {
  const std::int64_t nx = grid[0], ny = grid[1], nz = grid[2];
  check_size(mask.size(), mask.size(), nx * ny * nz);
  std::vector<std::int64_t> out;
  auto fg = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) return false;
    return mask[static_cast<std::size_t>((z * ny + y) * nx + x)] != 0;
  };
  for (std::int64_t z = 0; z < nz; ++z)
    for (std::int64_t y = 0; y < ny; ++y)
      for (std::int64_t x = 0; x < nx; ++x) {
        if (!fg(x, y, z)) continue;
        if (!fg(x - 1, y, z) || !fg(x + 1, y, z) || !fg(x, y - 1, z) || !fg(x, y + 1, z) || !fg(x, y, z - 1) ||
            !fg(x, y, z + 1)) {
          out.push_back((z * ny + y) * nx + x);
        }
      }
  return out;
}

double offset_length(std::int64_t dx, std::int64_t dy, std::int64_t dz, const Spacing& s) {
  if (isotropic(s)) return s[0] * std::sqrt(static_cast<double>(dx * dx + dy * dy + dz * dz));
  const double x = static_cast<double>(dx) * s[0], y = static_cast<double>(dy) * s[1], z = static_cast<double>(dz) * s[2];
  return std::sqrt(x * x + y * y + z * z);
}

std::optional<std::vector<double>> surface_distances(const std::vector<std::uint8_t>& a,
                                                     const std::vector<std::uint8_t>& b, const Grid3& grid,
                                                     const Spacing& spacing) {
  const std::int64_t nx = grid[0], ny = grid[1];
  check_size(a.size(), b.size(), grid[0] * grid[1] * grid[2]);
  const auto sa = surface_voxels(a, grid);
  const auto sb = surface_voxels(b, grid);
  if (sa.empty() || sb.empty()) return std::nullopt;

  // All surface voxels lie inside the bounding box of their union.
  std::array<std::int64_t, 3> lo{nx, ny, grid[2]}, hi{-1, -1, -1};
  auto coords = [&](std::int64_t i) { return std::array<std::int64_t, 3>{i % nx, (i / nx) % ny, i / (nx * ny)}; };
  for (const auto* s : {&sa, &sb})
    for (auto i : *s) {
      const auto c = coords(i);
      for (std::size_t k = 0; k < 3; ++k) {
        lo[k] = std::min(lo[k], c[k]);
        hi[k] = std::max(hi[k], c[k]);
      }
    }
  const Grid3 box{hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
  auto to_box = [&](std::int64_t i) {
    const auto c = coords(i);
    return ((c[2] - lo[2]) * box[1] + (c[1] - lo[1])) * box[0] + (c[0] - lo[0]);
  };
  auto box_coords = [&](std::int64_t j) {
    return std::array<std::int64_t, 3>{j % box[0], (j / box[0]) % box[1], j / (box[0] * box[1])};
  };

  std::vector<double> out;
  out.reserve(sa.size() + sb.size());
  auto one_way = [&](const std::vector<std::int64_t>& from, const std::vector<std::int64_t>& to) {
    std::vector<std::uint8_t> feature(static_cast<std::size_t>(box[0] * box[1] * box[2]), 0);
    for (auto i : to) feature[static_cast<std::size_t>(to_box(i))] = 1;
    const auto nearest = feature_transform(feature, box, spacing);
    for (auto i : from) {
      const auto j = to_box(i);
      const auto p = box_coords(j), q = box_coords(nearest[static_cast<std::size_t>(j)]);
      out.push_back(offset_length(p[0] - q[0], p[1] - q[1], p[2] - q[2], spacing));
    }
  };
  one_way(sa, sb);
  one_way(sb, sa);
  std::sort(out.begin(), out.end());
  return out;
}

DistanceMetrics distance_metrics(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b,
                                 const Grid3& grid, const Spacing& spacing) {
  DistanceMetrics m;
  const auto d = surface_distances(a, b, grid, spacing);
  if (!d) return m;
  m.hd95 = percentile_linear(*d, 95.0);
  double sum = 0;
  for (double v : *d) sum += v;
  m.asd = sum / static_cast<double>(d->size());
  return m;
}

Aggregate aggregate(const std::vector<std::optional<double>>& values) {
  Aggregate a;
  double sum = 0;
  for (const auto& v : values)
    if (v) {
      sum += *v;
      ++a.count;
    }
  if (!a.count) {
    a.mean = a.std = std::nan("");
    return a;
  }
  a.mean = sum / a.count;
  double ss = 0;
  for (const auto& v : values)
    if (v) ss += (*v - a.mean) * (*v - a.mean);
  a.std = std::sqrt(ss / a.count);
  return a;
}

void TaskReport::finalize() {
  std::vector<std::optional<double>> d, h, s;
  for (const auto& l : labels) {
    d.push_back(l.dsc);
    h.push_back(l.hd95);
    s.push_back(l.asd);
  }
  dsc = aggregate(d);
  hd95 = aggregate(h);
  asd = aggregate(s);
}

namespace {

LabelMetrics label_metrics(std::int32_t id, const std::string& name, const std::vector<std::uint8_t>& a,
                           const std::vector<std::uint8_t>& b, const VolumeMeta& meta) {
  LabelMetrics m;
  m.id = id;
  m.name = name;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m.pred_voxels += a[i] != 0;
    m.ref_voxels += b[i] != 0;
  }
  m.dsc = dsc(a, b);
  if (m.pred_voxels && m.ref_voxels) {
    const auto d = distance_metrics(a, b, {meta.dims[0], meta.dims[1], meta.dims[2]}, meta.voxel_size_mm);
    m.hd95 = d.hd95;
    m.asd = d.asd;
  }
  return m;
}

}  // namespace

TaskReport evaluate_labels(const Volume& pred, const Volume& ref, const LabelSchema& schema) {
  if (!pred.meta().same_grid(ref.meta()) || pred.meta().channels() != 1 || ref.meta().channels() != 1) {
    throw ShapeError("prediction and reference label maps are on different grids");
  }
  const auto p = pred.to_labels();
  const auto r = ref.to_labels();
  for (const auto* v : {&p, &r})
    for (auto id : *v)
      if (id != 0 && !schema.find_id(id)) {
        throw DataError("label " + std::to_string(id) + " is not in the " + schema.name + " schema");
      }
  TaskReport t;
  t.task = schema.name;
  std::vector<std::uint8_t> a(p.size()), b(p.size());
  for (const auto& l : schema.labels) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      a[i] = p[i] == l.id;
      b[i] = r[i] == l.id;
    }
    t.labels.push_back(label_metrics(l.id, l.abbreviation, a, b, pred.meta()));
  }
  t.finalize();
  return t;
}

TaskReport evaluate_masks(const std::vector<std::vector<std::uint8_t>>& pred,
                          const std::vector<std::vector<std::uint8_t>>& ref, const std::vector<std::string>& names,
                          const VolumeMeta& meta) {
  if (pred.size() != names.size() || ref.size() != names.size()) {
    throw DataError("mask sets and names differ in length");
  }
  TaskReport t;
  t.task = "tract";
  for (std::size_t k = 0; k < names.size(); ++k) {
    check_size(pred[k].size(), ref[k].size(), meta.spatial_size());
    const Label* l = tract_schema().find_abbreviation(names[k]);
    t.labels.push_back(label_metrics(l ? l->id : static_cast<std::int32_t>(k + 1), names[k], pred[k], ref[k], meta));
  }
  t.finalize();
  return t;
}

std::string report_csv(const MetricReport& report) {
  std::ostringstream out;
  out << "case,task,label_id,label,pred_voxels,ref_voxels,dsc,hd95_mm,asd_mm\n";
  for (const auto& t : report.tasks)
    for (const auto& l : t.labels) {
      out << report.case_id << "," << t.task << "," << l.id << "," << l.name << "," << l.pred_voxels << ","
          << l.ref_voxels << "," << fmt_opt(l.dsc) << "," << fmt_opt(l.hd95) << "," << fmt_opt(l.asd) << "\n";
    }
  return out.str();
}

nlohmann::json report_json(const MetricReport& report) {
  nlohmann::json tasks = nlohmann::json::object();
  auto agg = [](const Aggregate& a) {
    return nlohmann::json{{"mean", a.count ? nlohmann::json(a.mean) : nlohmann::json(nullptr)},
                          {"std", a.count ? nlohmann::json(a.std) : nlohmann::json(nullptr)},
                          {"count", a.count}};
  };
  for (const auto& t : report.tasks) {
    nlohmann::json labels = nlohmann::json::array();
    for (const auto& l : t.labels) {
      labels.push_back({{"id", l.id},
                        {"label", l.name},
                        {"pred_voxels", l.pred_voxels},
                        {"ref_voxels", l.ref_voxels},
                        {"dsc", json_opt(l.dsc)},
                        {"hd95_mm", json_opt(l.hd95)},
                        {"asd_mm", json_opt(l.asd)}});
    }
    tasks[t.task] = {{"labels", labels}, {"dsc", agg(t.dsc)}, {"hd95_mm", agg(t.hd95)}, {"asd_mm", agg(t.asd)}};
  }
  return {{"case_id", report.case_id}, {"tasks", tasks}};
}

std::string report_table(const MetricReport& report) {
  std::ostringstream out;
  auto cell = [](const Aggregate& a, int precision) {
    std::ostringstream s;
    if (!a.count) return std::string("n/a");
    s << std::fixed << std::setprecision(precision) << a.mean << " ± " << a.std;
    return s.str();
  };
  out << std::left << std::setw(14) << "task" << std::setw(20) << "DSC" << std::setw(20) << "HD95 (mm)"
      << "ASD (mm)\n";
  for (const auto& t : report.tasks) {
    out << std::left << std::setw(14) << t.task << std::setw(21) << cell(t.dsc, 4) << std::setw(21) << cell(t.hd95, 3)
        << cell(t.asd, 3) << "\n";
  }
  return out.str();
}

}  // namespace fbd
