#include "fbd/dti.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "fbd/errors.hpp"
#include "fbd/parallel.hpp"

namespace fbd {

namespace {

using Matrix7 = Eigen::Matrix<double, Eigen::Dynamic, 7>;

Eigen::Matrix3d to_matrix(const Tensor6& d) {
  Eigen::Matrix3d m;
  m << d[0], d[1], d[2], d[1], d[3], d[4], d[2], d[4], d[5];
  return m;
}

// Row k: ln S_k = ln S0 - b_k g^T D g, unknowns (ln S0, Dxx, Dxy, Dxz, Dyy, Dyz, Dzz).
Matrix7 design_matrix(const GradientTable& t) {
  Matrix7 x(static_cast<Eigen::Index>(t.size()), 7);
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double b = t.bvalues[k];
    const auto& g = t.directions[k];
    x.row(static_cast<Eigen::Index>(k)) << 1.0, -b * g[0] * g[0], -2 * b * g[0] * g[1], -2 * b * g[0] * g[2],
        -b * g[1] * g[1], -2 * b * g[1] * g[2], -b * g[2] * g[2];
  }
  return x;
}

bool solve_weighted(const Matrix7& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w, Eigen::Matrix<double, 7, 1>& beta) {
  const Eigen::VectorXd sw = w.cwiseSqrt();
  const Matrix7 a = sw.asDiagonal() * x;
  Eigen::ColPivHouseholderQR<Matrix7> qr(a);
  if (qr.rank() < 7) return false;
  beta = qr.solve(sw.cwiseProduct(y));
  return beta.allFinite();
}

double mean_b0(const std::vector<double>& s, const GradientTable& t) {
  double sum = 0;
  int n = 0;
  for (std::size_t k = 0; k < t.size(); ++k)
    if (t.bvalues[k] == 0) {
      sum += s[k];
      ++n;
    }
  return n ? sum / n : 0.0;
}

VoxelFit fit_with_design(const std::vector<double>& s, const GradientTable& t, const Matrix7& x,
                         const WllsOptions& opt) {
  VoxelFit fit;
  if (mean_b0(s, t) <= opt.b0_threshold) return fit;
  const auto n = static_cast<Eigen::Index>(t.size());
  Eigen::VectorXd y(n), w(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double v = s[static_cast<std::size_t>(k)];
    if (!(v > 0) || !std::isfinite(v)) {
      fit.status = FitStatus::NonPositive;
      return fit;
    }
    y[k] = std::log(v);
    w[k] = opt.weighted ? v * v : 1.0;
  }
  Eigen::Matrix<double, 7, 1> beta;
  if (!solve_weighted(x, y, w, beta)) {
    fit.status = FitStatus::Singular;
    return fit;
  }
  if (opt.weighted && opt.second_pass) {
    const Eigen::VectorXd pred = (x * beta).array().exp();
    Eigen::Matrix<double, 7, 1> refined;
    if (solve_weighted(x, y, pred.cwiseProduct(pred), refined)) beta = refined;
  }
  fit.ln_s0 = beta[0];
  for (int i = 0; i < 6; ++i) fit.d[static_cast<std::size_t>(i)] = beta[i + 1];
  fit.status = FitStatus::Ok;
  return fit;
}

}  // namespace

void GradientTable::validate() const {
  if (directions.size() != bvalues.size()) throw DataError("gradient table: directions and b-values differ in length");
  bool has_b0 = false;
  std::vector<Vec3> distinct;
  for (std::size_t k = 0; k < size(); ++k) {
    const double b = bvalues[k];
    if (!(b >= 0) || !std::isfinite(b)) throw DataError("gradient table: invalid b-value in row " + std::to_string(k));
    if (b == 0) {
      has_b0 = true;
      continue;
    }
    const auto& g = directions[k];
    const double norm = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    if (std::abs(norm - 1.0) > 1e-6) {
      throw DataError("gradient table: direction in row " + std::to_string(k) + " is not unit length");
    }
    bool seen = false;
    for (const auto& q : distinct) {
      const double dot = std::abs(g[0] * q[0] + g[1] * q[1] + g[2] * q[2]);
      if (dot > 1.0 - 1e-9) seen = true;
    }
    if (!seen) distinct.push_back(g);
  }
  if (!has_b0) throw DataError("gradient table needs at least one b=0 measurement");
  if (distinct.size() < 6) {
    throw DataError("gradient table needs at least 6 distinct b>0 directions, has " + std::to_string(distinct.size()));
  }
}

GradientTable parse_gradient_table(const std::string& text) {
  GradientTable t;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream row(line);
    double v[4];
    int n = 0;
    while (n < 4 && row >> v[n]) ++n;
    if (n == 0 && row.eof()) continue;
    std::string extra;
    if (n != 4 || (row >> extra)) {
      throw FormatError("gradient table line " + std::to_string(lineno) + ": expected \"gx gy gz b\"");
    }
    t.directions.push_back({v[0], v[1], v[2]});
    t.bvalues.push_back(v[3]);
  }
  return t;
}

GradientTable read_gradient_table(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open gradient table " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_gradient_table(ss.str());
}

std::string format_gradient_table(const GradientTable& table) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (std::size_t k = 0; k < table.size(); ++k) {
    const auto& g = table.directions[k];
    out << g[0] << ' ' << g[1] << ' ' << g[2] << ' ' << table.bvalues[k] << '\n';
  }
  return out.str();
}

GradientTable default_gradient_table(int n_dirs, double bvalue, int n_b0) {
  GradientTable t;
  for (int i = 0; i < n_b0; ++i) {
    t.directions.push_back({0, 0, 0});
    t.bvalues.push_back(0);
  }
  // Fibonacci lattice on the upper hemisphere.
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n_dirs; ++i) {
    const double z = 1.0 - (i + 0.5) / n_dirs;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    t.directions.push_back({r * std::cos(phi), r * std::sin(phi), z});
    t.bvalues.push_back(bvalue);
  }
  return t;
}

std::vector<double> simulate_signal(const Tensor6& d, double s0, const GradientTable& table) {
  if (!(s0 > 0)) throw DataError("simulate_signal: S0 must be positive");
  if (table.directions.size() != table.bvalues.size()) throw DataError("gradient table is inconsistent");
  const Eigen::Matrix3d m = to_matrix(d);
  std::vector<double> s(table.size());
  for (std::size_t k = 0; k < table.size(); ++k) {
    const Eigen::Vector3d g(table.directions[k][0], table.directions[k][1], table.directions[k][2]);
    s[k] = s0 * std::exp(-table.bvalues[k] * g.dot(m * g));
  }
  return s;
}

VoxelFit fit_voxel(const std::vector<double>& signals, const GradientTable& table, const WllsOptions& options) {
  if (signals.size() != table.size()) throw DataError("signal count does not match the gradient table");
  return fit_with_design(signals, table, design_matrix(table), options);
}

Tensor6 DtiVolume::tensor(std::int64_t voxel) const {
  Tensor6 d;
  const auto n = voxel_count();
  for (std::size_t c = 0; c < 6; ++c) d[c] = components[static_cast<std::size_t>(static_cast<std::int64_t>(c) * n + voxel)];
  return d;
}

Volume DtiVolume::to_volume() const {
  std::vector<float> v(components.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(components[i]);
  return Volume(VolumeMeta{meta.dims, meta.voxel_size_mm, DataType::Float32}, std::move(v));
}

DtiVolume DtiVolume::from_volume(const Volume& v) {
  if (v.meta().dims.size() != 4 || v.meta().channels() != 6) throw DataError("DTI volume must have 6 channels");
  DtiVolume d;
  d.meta = v.meta();
  const auto f = v.to_floats();
  d.components.assign(f.begin(), f.end());
  const auto n = static_cast<std::size_t>(d.voxel_count());
  d.ln_s0.assign(n, 0.0);
  d.status.assign(n, FitStatus::Ok);
  d.negative_eigenvalue.assign(n, 0);
  return d;
}

DtiVolume fit_wlls(const Volume& signals, const GradientTable& table, const WllsOptions& options) {
  table.validate();
  const auto& m = signals.meta();
  if (m.dims.size() != 4 || m.channels() != static_cast<std::int64_t>(table.size())) {
    throw DataError("signal volume has " + std::to_string(m.channels()) + " channels, gradient table has " +
                    std::to_string(table.size()) + " rows");
  }
  const Matrix7 x = design_matrix(table);
  const auto n = m.spatial_size();
  const auto k_count = table.size();
  const auto values = signals.to_floats();

  DtiVolume out;
  out.meta = VolumeMeta{{m.dims[0], m.dims[1], m.dims[2], 6}, m.voxel_size_mm, DataType::Float32};
  out.components.assign(static_cast<std::size_t>(6 * n), 0.0);
  out.ln_s0.assign(static_cast<std::size_t>(n), 0.0);
  out.status.assign(static_cast<std::size_t>(n), FitStatus::Masked);
  out.negative_eigenvalue.assign(static_cast<std::size_t>(n), 0);

  parallel_chunks(n, options.threads, [&](std::int64_t begin, std::int64_t end) {
    std::vector<double> s(k_count);
    for (std::int64_t i = begin; i < end; ++i) {
      for (std::size_t k = 0; k < k_count; ++k) s[k] = values[static_cast<std::size_t>(static_cast<std::int64_t>(k) * n + i)];
      const VoxelFit fit = fit_with_design(s, table, x, options);
      const auto iu = static_cast<std::size_t>(i);
      out.status[iu] = fit.status;
      if (fit.status != FitStatus::Ok) continue;
      out.ln_s0[iu] = fit.ln_s0;
      for (std::size_t c = 0; c < 6; ++c) out.components[static_cast<std::size_t>(static_cast<std::int64_t>(c) * n + i)] = fit.d[c];
      out.negative_eigenvalue[iu] = tensor_eigenvalues(fit.d)[0] < 0 ? 1 : 0;
    }
  });
  return out;
}

Vec3 tensor_eigenvalues(const Tensor6& d) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(to_matrix(d), Eigen::EigenvaluesOnly);
  const auto& e = es.eigenvalues();
  return {e[0], e[1], e[2]};
}

Vec3 principal_direction(const Tensor6& d) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(to_matrix(d));
  const Eigen::Vector3d v = es.eigenvectors().col(2);
  return {v[0], v[1], v[2]};
}

double mean_diffusivity(const Tensor6& d) { return (d[0] + d[3] + d[5]) / 3.0; }

double fractional_anisotropy(const Tensor6& d) {
  const Vec3 l = tensor_eigenvalues(d);
  const double md = (l[0] + l[1] + l[2]) / 3.0;
  const double num = std::sqrt((l[0] - md) * (l[0] - md) + (l[1] - md) * (l[1] - md) + (l[2] - md) * (l[2] - md));
  const double den = std::sqrt(l[0] * l[0] + l[1] * l[1] + l[2] * l[2]);
  if (den == 0) return 0.0;
  return std::clamp(std::sqrt(1.5) * num / den, 0.0, 1.0);
}

ScalarMaps tensor_scalars(const DtiVolume& dti) {
  const auto n = dti.voxel_count();
  ScalarMaps maps;
  maps.md.resize(static_cast<std::size_t>(n));
  maps.fa.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const Tensor6 d = dti.tensor(i);
    maps.md[static_cast<std::size_t>(i)] = mean_diffusivity(d);
    maps.fa[static_cast<std::size_t>(i)] = fractional_anisotropy(d);
  }
  return maps;
}

}  // namespace fbd
