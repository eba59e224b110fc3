#include <algorithm>
#include <cmath>
#include <limits>

#include "fbd/annotation.hpp"
#include "fbd/errors.hpp"
#include "fbd/parallel.hpp"

namespace fbd {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Posteriors closer than this are treated as tied in the hard map.
constexpr double kTieTolerance = 1e-12;

struct Workspace {
  std::vector<double> stats;  // R * L * L numerators
  std::vector<double> denom;  // L
  double log_likelihood = 0.0;
};

// Log posterior of one voxel into w (normalized in place). Returns the log
// marginal likelihood of the voxel's observations.
double voxel_posterior(const std::vector<const std::int32_t*>& cand, std::int64_t i, int L,
                       const std::vector<double>& log_prior, const std::vector<std::vector<double>>& log_theta,
                       const std::vector<double>& prior, double* w) {
  double mx = kNegInf;
  for (int s = 0; s < L; ++s) {
    double v = log_prior[static_cast<std::size_t>(s)];
    if (v != kNegInf) {
      for (std::size_t j = 0; j < cand.size(); ++j) {
        v += log_theta[j][static_cast<std::size_t>(s * L + cand[j][i])];
      }
    }
    w[s] = v;
    mx = std::max(mx, v);
  }
  if (mx == kNegInf) {
    for (int s = 0; s < L; ++s) w[s] = prior[static_cast<std::size_t>(s)];
    return kNegInf;
  }
  double sum = 0.0;
  for (int s = 0; s < L; ++s) {
    w[s] = std::exp(w[s] - mx);
    sum += w[s];
  }
  for (int s = 0; s < L; ++s) w[s] /= sum;
  return mx + std::log(sum);
}

std::vector<double> logs(const std::vector<double>& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0 ? std::log(v[i]) : kNegInf;
  return out;
}

}  // namespace

FusionResult staple_fuse(const std::vector<std::vector<std::int32_t>>& candidates, int num_labels,
                         const StapleOptions& options) {
  if (candidates.size() < 2) throw DataError("STAPLE needs at least 2 candidate label maps");
  if (num_labels < 1) throw DataError("STAPLE needs at least one label");
  const int L = num_labels;
  const auto R = candidates.size();
  const auto N = static_cast<std::int64_t>(candidates[0].size());
  std::vector<const std::int32_t*> cand;
  std::vector<double> counts(static_cast<std::size_t>(L), 0.0);
  for (const auto& c : candidates) {
    if (static_cast<std::int64_t>(c.size()) != N) throw DataError("STAPLE candidates have different sizes");
    for (auto v : c) {
      if (v < 0 || v >= L) throw DataError("label " + std::to_string(v) + " outside [0, " + std::to_string(L) + ")");
      counts[static_cast<std::size_t>(v)] += 1.0;
    }
    cand.push_back(c.data());
  }

  FusionResult r;
  r.num_labels = L;
  r.voxels = N;
  if (!options.prior.empty()) {
    if (options.prior.size() != static_cast<std::size_t>(L)) throw DataError("STAPLE prior has the wrong length");
    double total = 0;
    for (double p : options.prior) {
      if (!(p >= 0)) throw DataError("STAPLE prior entries must be non-negative");
      total += p;
    }
    if (!(total > 0)) throw DataError("STAPLE prior sums to zero");
    for (double p : options.prior) r.prior.push_back(p / total);
  } else {
    const double total = static_cast<double>(R) * static_cast<double>(N);
    for (double c : counts) r.prior.push_back(total > 0 ? c / total : 1.0 / L);
  }
  for (int s = 0; s < L; ++s)
    if (counts[static_cast<std::size_t>(s)] == 0) r.absent_labels.push_back(s);

  const double diag = L == 1 ? 1.0 : options.init_diagonal;
  const double off = L == 1 ? 0.0 : (1.0 - diag) / (L - 1);
  r.confusion.assign(R, std::vector<double>(static_cast<std::size_t>(L * L), off));
  for (auto& th : r.confusion)
    for (int s = 0; s < L; ++s) th[static_cast<std::size_t>(s * L + s)] = diag;

  const auto log_prior = logs(r.prior);
  const int threads = std::max(1, options.threads);
  const auto LL = static_cast<std::size_t>(L) * static_cast<std::size_t>(L);

  for (int it = 0; it < options.max_iter; ++it) {
    std::vector<std::vector<double>> log_theta;
    for (const auto& th : r.confusion) log_theta.push_back(logs(th));

    // E-step, accumulating M-step sufficient statistics per chunk.
    std::vector<Workspace> ws(static_cast<std::size_t>(chunk_count(N, threads)));
    parallel_chunks(N, threads, [&](std::int64_t k, std::int64_t b, std::int64_t e) {
      auto& w = ws[static_cast<std::size_t>(k)];
      w.stats.assign(R * LL, 0.0);
      w.denom.assign(static_cast<std::size_t>(L), 0.0);
      std::vector<double> post(static_cast<std::size_t>(L));
      for (std::int64_t i = b; i < e; ++i) {
        w.log_likelihood += voxel_posterior(cand, i, L, log_prior, log_theta, r.prior, post.data());
        for (int s = 0; s < L; ++s) {
          const double p = post[static_cast<std::size_t>(s)];
          if (p == 0) continue;
          w.denom[static_cast<std::size_t>(s)] += p;
          for (std::size_t j = 0; j < R; ++j) w.stats[j * LL + static_cast<std::size_t>(s * L + cand[j][i])] += p;
        }
      }
    });

    std::vector<double> stats(R * LL, 0.0), denom(static_cast<std::size_t>(L), 0.0);
    double ll = 0.0;
    for (const auto& w : ws) {
      if (w.stats.empty()) continue;
      for (std::size_t k = 0; k < stats.size(); ++k) stats[k] += w.stats[k];
      for (std::size_t k = 0; k < denom.size(); ++k) denom[k] += w.denom[k];
      ll += w.log_likelihood;
    }
    r.log_likelihood.push_back(ll);

    // M-step; rows of labels with no posterior mass keep their values.
    double delta = 0.0;
    for (std::size_t j = 0; j < R; ++j) {
      for (int s = 0; s < L; ++s) {
        const double d = denom[static_cast<std::size_t>(s)];
        if (!(d > 0)) continue;
        for (int t = 0; t < L; ++t) {
          const auto k = static_cast<std::size_t>(s * L + t);
          const double v = stats[j * LL + k] / d;
          delta = std::max(delta, std::abs(v - r.confusion[j][k]));
          r.confusion[j][k] = v;
        }
      }
    }
    r.iterations = it + 1;
    if (delta < options.tol) {
      r.converged = true;
      break;
    }
  }

  // Final posterior under the returned parameters.
  std::vector<std::vector<double>> log_theta;
  for (const auto& th : r.confusion) log_theta.push_back(logs(th));
  r.posterior.assign(static_cast<std::size_t>(N) * static_cast<std::size_t>(L), 0.0);
  r.hard.assign(static_cast<std::size_t>(N), 0);
  parallel_chunks(N, threads, [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i) {
      double* w = r.posterior.data() + i * L;
      voxel_posterior(cand, i, L, log_prior, log_theta, r.prior, w);
      int best = 0;
      for (int s = 1; s < L; ++s)
        if (w[s] > w[best] + kTieTolerance) best = s;
      r.hard[static_cast<std::size_t>(i)] = best;
    }
  });
  return r;
}

FusionResult staple_fuse(const std::vector<Volume>& candidates, const LabelSchema& schema,
                         const StapleOptions& options) {
  if (candidates.size() < 2) throw DataError("STAPLE needs at least 2 candidate label maps");
  std::vector<std::vector<std::int32_t>> maps;
  const int L = schema.max_id() + 1;
  for (const auto& v : candidates) {
    if (v.meta().dims.size() != 3 || !v.meta().same_grid(candidates[0].meta())) {
      throw DataError("STAPLE candidates must be 3-D label maps on identical grids");
    }
    maps.push_back(v.to_labels());
    for (auto id : maps.back()) {
      if (id != 0 && !schema.find_id(id)) {
        throw DataError("label " + std::to_string(id) + " is not part of schema " + schema.name);
      }
    }
  }
  return staple_fuse(maps, L, options);
}

}  // namespace fbd
