#include "fbd/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "fbd/errors.hpp"
#include "fbd/label_schema.hpp"

namespace fbd {

namespace {

using V3 = std::array<double, 3>;

V3 sub(const V3& a, const V3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double dot3(const V3& a, const V3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

bool inside(const TissuePrimitive& p, const V3& v) {
  if (p.shape == "box") {
    for (int a = 0; a < 3; ++a)
      if (std::abs(v[static_cast<std::size_t>(a)] - p.center[static_cast<std::size_t>(a)]) > p.radii[static_cast<std::size_t>(a)]) return false;
    return true;
  }
  double r = 0;
  for (int a = 0; a < 3; ++a) {
    const double d = (v[static_cast<std::size_t>(a)] - p.center[static_cast<std::size_t>(a)]) / p.radii[static_cast<std::size_t>(a)];
    r += d * d;
  }
  return r <= 1.0;
}

// Distance to the polyline and the unit tangent of the nearest segment.
std::pair<double, V3> nearest_on_tube(const TractTube& t, const V3& v) {
  double best = std::numeric_limits<double>::infinity();
  V3 tangent{1, 0, 0};
  for (std::size_t k = 0; k + 1 < t.points.size(); ++k) {
    const V3 seg = sub(t.points[k + 1], t.points[k]);
    const double len2 = dot3(seg, seg);
    const double s = std::clamp(dot3(sub(v, t.points[k]), seg) / len2, 0.0, 1.0);
    const V3 q{t.points[k][0] + s * seg[0], t.points[k][1] + s * seg[1], t.points[k][2] + s * seg[2]};
    const V3 d = sub(v, q);
    const double dist = std::sqrt(dot3(d, d));
    if (dist < best) {
      best = dist;
      const double len = std::sqrt(len2);
      tangent = {seg[0] / len, seg[1] / len, seg[2] / len};
    }
  }
  return {best, tangent};
}

}  // namespace

PhantomSpec PhantomSpec::default_spec() { return scaled({32, 32, 32}); }

PhantomSpec PhantomSpec::scaled(std::array<std::int64_t, 3> dims) {
  PhantomSpec s;
  s.dims = dims;
  V3 c{}, f{};
  for (std::size_t a = 0; a < 3; ++a) {
    c[a] = (static_cast<double>(dims[a]) - 1) / 2;
    f[a] = static_cast<double>(dims[a]) / 32.0;
  }
  auto at = [&](double dx, double dy, double dz) { return V3{c[0] + dx * f[0], c[1] + dy * f[1], c[2] + dz * f[2]}; };
  auto rad = [&](double rx, double ry, double rz) { return V3{rx * f[0], ry * f[1], rz * f[2]}; };
  s.tissues = {
      {4, "ellipsoid", c, rad(14, 14, 13)},
      {2, "ellipsoid", c, rad(12, 12, 11)},
      {1, "ellipsoid", c, rad(9.5, 9.5, 8.5)},
      {3, "ellipsoid", c, rad(4, 3, 3)},
  };
  const double r = 1.8 * std::min({f[0], f[1], f[2]});
  s.tracts = {
      {"CC_4", {at(-8.5, 5, 2), at(8.5, 5, 2)}, r},
      {"CST", {at(-5, 0, -9.5), at(-5, 0, 9.5)}, r},
      {"ATR", {at(5, -8.5, -3), at(5, 8.5, -3)}, r},
      {"IFO", {at(-7.5, -5.5, -5), at(0, -2, -6), at(7.5, 6.5, -5)}, r},
  };
  return s;
}

void PhantomSpec::validate() const {
  for (std::size_t a = 0; a < 3; ++a) {
    if (dims[a] < 2) throw UsageError("phantom dims must be at least 2");
    if (!(voxel_size_mm[a] > 0)) throw UsageError("phantom voxel sizes must be positive");
  }
  auto within = [&](const V3& p, const V3& r, const std::string& what) {
    for (std::size_t a = 0; a < 3; ++a) {
      if (p[a] - r[a] < 0 || p[a] + r[a] > static_cast<double>(dims[a] - 1)) {
        throw DataError(what + " extends outside the phantom volume");
      }
    }
  };
  for (const auto& t : tissues) {
    if (t.label < 1 || t.label > 4) throw DataError("tissue primitive label must be in 1..4");
    if (t.shape != "ellipsoid" && t.shape != "box") throw UsageError("unknown primitive shape '" + t.shape + "'");
    for (double r : t.radii)
      if (!(r > 0)) throw DataError("primitive radii must be positive");
    within(t.center, t.radii, "tissue primitive");
  }
  for (double md : tissue_md)
    if (!(md >= 0)) throw DataError("tissue MD must be non-negative");
  if (!(tract_eigenvalues[0] > 0 && tract_eigenvalues[1] > 0)) throw DataError("tract eigenvalues must be positive");
  std::set<std::string> seen;
  for (const auto& t : tracts) {
    if (!tract_schema().find_abbreviation(t.name)) throw DataError("unknown tract '" + t.name + "'");
    if (!seen.insert(t.name).second) throw DataError("duplicate tract '" + t.name + "'");
    if (t.points.size() < 2) throw DataError("tract tube '" + t.name + "' needs at least two points");
    if (!(t.radius > 0)) throw DataError("tract tube radius must be positive");
    for (std::size_t k = 0; k < t.points.size(); ++k) {
      within(t.points[k], {0, 0, 0}, "tract tube '" + t.name + "'");
      if (k && dot3(sub(t.points[k], t.points[k - 1]), sub(t.points[k], t.points[k - 1])) == 0) {
        throw DataError("tract tube '" + t.name + "' has repeated points");
      }
    }
  }
  if (parcel_tissue < 1 || parcel_tissue > 4) throw DataError("parcel tissue must be in 1..4");
  if (parcel_sectors < 1) throw DataError("parcel sectors must be positive");
  if (!(tensor_noise >= 0) || !(signal_noise >= 0) || !(s0 > 0)) throw DataError("invalid noise or S0 settings");
  if (simulate_signals && gradient_directions < 6) throw DataError("at least 6 gradient directions are needed");
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
  nlohmann::json tissues = nlohmann::json::array();
  for (const auto& t : s.tissues) {
    tissues.push_back({{"label", t.label}, {"shape", t.shape}, {"center", t.center}, {"radii", t.radii}});
  }
  nlohmann::json tracts = nlohmann::json::array();
  for (const auto& t : s.tracts) tracts.push_back({{"name", t.name}, {"points", t.points}, {"radius", t.radius}});
  j = nlohmann::json{{"dims", s.dims},
                     {"voxel_size_mm", s.voxel_size_mm},
                     {"tissues", tissues},
                     {"tissue_md", s.tissue_md},
                     {"tracts", tracts},
                     {"tract_eigenvalues", s.tract_eigenvalues},
                     {"parcel_tissue", s.parcel_tissue},
                     {"parcel_sectors", s.parcel_sectors},
                     {"parcel_split_z", s.parcel_split_z},
                     {"parcel_md_step", s.parcel_md_step},
                     {"tensor_noise", s.tensor_noise},
                     {"simulate_signals", s.simulate_signals},
                     {"s0", s.s0},
                     {"signal_noise", s.signal_noise},
                     {"gradient_directions", s.gradient_directions},
                     {"bvalue", s.bvalue}};
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
  // Missing keys keep the defaults of the (scaled) default phantom.
  const auto dims = j.value("dims", std::array<std::int64_t, 3>{32, 32, 32});
  s = PhantomSpec::scaled(dims);
  s.voxel_size_mm = j.value("voxel_size_mm", s.voxel_size_mm);
  if (j.contains("tissues")) {
    s.tissues.clear();
    for (const auto& t : j.at("tissues")) {
      s.tissues.push_back({t.at("label").get<std::int32_t>(), t.value("shape", std::string("ellipsoid")),
                           t.at("center").get<V3>(), t.at("radii").get<V3>()});
    }
  }
  s.tissue_md = j.value("tissue_md", s.tissue_md);
  if (j.contains("tracts")) {
    s.tracts.clear();
    for (const auto& t : j.at("tracts")) {
      s.tracts.push_back({t.at("name").get<std::string>(), t.at("points").get<std::vector<V3>>(), t.value("radius", 2.0)});
    }
  }
  s.tract_eigenvalues = j.value("tract_eigenvalues", s.tract_eigenvalues);
  s.parcel_tissue = j.value("parcel_tissue", s.parcel_tissue);
  s.parcel_sectors = j.value("parcel_sectors", s.parcel_sectors);
  s.parcel_split_z = j.value("parcel_split_z", s.parcel_split_z);
  s.parcel_md_step = j.value("parcel_md_step", s.parcel_md_step);
  s.tensor_noise = j.value("tensor_noise", s.tensor_noise);
  s.simulate_signals = j.value("simulate_signals", s.simulate_signals);
  s.s0 = j.value("s0", s.s0);
  s.signal_noise = j.value("signal_noise", s.signal_noise);
  s.gradient_directions = j.value("gradient_directions", s.gradient_directions);
  s.bvalue = j.value("bvalue", s.bvalue);
}

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::int64_t nx = spec.dims[0], ny = spec.dims[1], nz = spec.dims[2];
  const std::int64_t n = nx * ny * nz;
  const V3 c{(nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;

  std::vector<std::int32_t> sg(static_cast<std::size_t>(n), 0), pc(static_cast<std::size_t>(n), 0);
  TractMaskSet tracts;
  for (const auto& t : spec.tracts) {
    tracts.names.push_back(t.name);
    tracts.masks.emplace_back(static_cast<std::size_t>(n), 0);
    tracts.present.push_back(1);
    tracts.partial.push_back(0);
  }
  Phantom ph;
  ph.dti.meta.dims = {nx, ny, nz, 6};
  ph.dti.meta.voxel_size_mm = spec.voxel_size_mm;
  ph.dti.components.assign(static_cast<std::size_t>(6 * n), 0.0);
  ph.dti.ln_s0.assign(static_cast<std::size_t>(n), 0.0);
  ph.dti.status.assign(static_cast<std::size_t>(n), FitStatus::Masked);
  ph.dti.negative_eigenvalue.assign(static_cast<std::size_t>(n), 0);

  const double pi = std::acos(-1.0);
  for (std::int64_t z = 0; z < nz; ++z)
    for (std::int64_t y = 0; y < ny; ++y)
      for (std::int64_t x = 0; x < nx; ++x) {
        const auto i = static_cast<std::size_t>((z * ny + y) * nx + x);
        const V3 v{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
        for (const auto& p : spec.tissues)
          if (inside(p, v)) sg[i] = p.label;
        double md = spec.tissue_md[static_cast<std::size_t>(sg[i])];
        if (sg[i] == spec.parcel_tissue) {
          const double angle = std::atan2(v[1] - c[1], v[0] - c[0]);
          int sector = static_cast<int>(std::floor((angle + pi) / (2 * pi) * spec.parcel_sectors));
          sector = std::clamp(sector, 0, spec.parcel_sectors - 1);
          const int half = spec.parcel_split_z && v[2] > c[2] ? 1 : 0;
          const int k = sector + spec.parcel_sectors * half;
          pc[i] = k + 1;
          md += spec.parcel_md_step * k;
        }
        Tensor6 d{md, 0, 0, md, 0, md};
        for (std::size_t t = 0; t < spec.tracts.size(); ++t) {
          const auto [dist, dir] = nearest_on_tube(spec.tracts[t], v);
          if (dist > spec.tracts[t].radius) continue;
          if (!tracts.masks[t][i]) {
            // The first tube containing the voxel sets its orientation.
            bool first = true;
            for (std::size_t u = 0; u < t; ++u) first = first && !tracts.masks[u][i];
            if (first) {
              const double la = spec.tract_eigenvalues[0], lr = spec.tract_eigenvalues[1];
              d = {lr + (la - lr) * dir[0] * dir[0], (la - lr) * dir[0] * dir[1], (la - lr) * dir[0] * dir[2],
                   lr + (la - lr) * dir[1] * dir[1], (la - lr) * dir[1] * dir[2], lr + (la - lr) * dir[2] * dir[2]};
            }
          }
          tracts.masks[t][i] = 1;
        }
        const bool tissue = sg[i] != 0 || d[0] != 0;
        if (tissue) {
          for (auto& e : d) e += spec.tensor_noise * gauss(rng);
          ph.dti.ln_s0[i] = std::log(spec.s0);
          ph.dti.status[i] = FitStatus::Ok;
          ph.dti.negative_eigenvalue[i] = tensor_eigenvalues(d)[0] < 0;
        }
        for (std::size_t k = 0; k < 6; ++k) ph.dti.components[k * static_cast<std::size_t>(n) + i] = d[k];
      }

  const std::vector<std::int64_t> grid{nx, ny, nz};
  ph.y_sg = Volume::from_labels(grid, sg, spec.voxel_size_mm);
  ph.y_pc = Volume::from_labels(grid, pc, spec.voxel_size_mm);
  ph.dti.meta.voxel_size_mm = ph.y_sg.meta().voxel_size_mm;
  ph.tracts = std::move(tracts);

  if (spec.simulate_signals) {
    ph.table = default_gradient_table(spec.gradient_directions, spec.bvalue, 1);
    const auto k = static_cast<std::int64_t>(ph.table.size());
    std::vector<float> sig(static_cast<std::size_t>(k * n), 0.0f);
    for (std::int64_t i = 0; i < n; ++i) {
      if (ph.dti.status[static_cast<std::size_t>(i)] != FitStatus::Ok) continue;
      const auto s = simulate_signal(ph.dti.tensor(i), spec.s0, ph.table);
      for (std::int64_t q = 0; q < k; ++q) {
        double value = s[static_cast<std::size_t>(q)];
        if (spec.signal_noise > 0) value = std::abs(value + spec.signal_noise * gauss(rng));
        sig[static_cast<std::size_t>(q * n + i)] = static_cast<float>(value);
      }
    }
    ph.signals = Volume::from_floats({nx, ny, nz, k}, std::move(sig), spec.voxel_size_mm);
  }
  return ph;
}

TrainingCase make_training_case(const DtiVolume& dti, const Volume& y_sg, const TractMaskSet& tracts,
                                const Volume& y_pc, double input_scale) {
  const auto& dims = dti.meta.dims;
  if (dims.size() != 4 || dims[3] != 6) throw DataError("DTI volume must have 6 components");
  VolumeMeta grid = dti.meta;
  if (!grid.same_grid(y_sg.meta()) || !grid.same_grid(y_pc.meta())) throw DataError("label maps do not match the DTI grid");
  TrainingCase c;
  c.dims = {dims[2], dims[1], dims[0]};
  const auto n = c.voxels();
  c.x.resize(dti.components.size());
  for (std::size_t i = 0; i < c.x.size(); ++i) c.x[i] = static_cast<float>(dti.components[i] * input_scale);
  c.y_sg = y_sg.to_labels();
  c.y_pc = y_pc.to_labels();
  for (const auto& m : tracts.masks) {
    if (static_cast<std::int64_t>(m.size()) != n) throw DataError("tract mask does not match the DTI grid");
    c.y_tr.insert(c.y_tr.end(), m.begin(), m.end());
  }
  c.m_tr = tracts.present;
  return c;
}

}  // namespace fbd
