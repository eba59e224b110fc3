#include "fbd/inference.hpp"

#include <algorithm>
#include <cmath>

#include "fbd/errors.hpp"
#include "fbd/parallel.hpp"

namespace fbd {

std::vector<std::int64_t> axis_corners(std::int64_t dim, std::int64_t window, std::int64_t stride) {
  if (window < 1 || stride < 1) throw UsageError("window and stride must be positive");
  if (window > dim) {
    throw ShapeError("window " + std::to_string(window) + " exceeds volume extent " + std::to_string(dim));
  }
  std::vector<std::int64_t> out;
  for (std::int64_t c = 0;; c += stride) {
    const std::int64_t clamped = std::min(c, dim - window);
    if (out.empty() || out.back() != clamped) out.push_back(clamped);
    if (c + window >= dim) break;
  }
  return out;
}

WindowPlan plan_windows(const std::array<std::int64_t, 3>& dims, std::int64_t window, double overlap) {
  if (!(overlap >= 0.0 && overlap < 1.0)) throw UsageError("overlap must be in [0, 1)");
  WindowPlan p;
  p.dims = dims;
  p.window = window;
  p.stride = window - static_cast<std::int64_t>(std::llround(overlap * static_cast<double>(window)));
  if (p.stride < 1) p.stride = 1;
  const auto cz = axis_corners(dims[0], window, p.stride);
  const auto cy = axis_corners(dims[1], window, p.stride);
  const auto cx = axis_corners(dims[2], window, p.stride);
  for (auto z : cz)
    for (auto y : cy)
      for (auto x : cx) p.corners.push_back({z, y, x});
  return p;
}

WindowPredictor model_predictor(const CascadeModel<float>& model) {
  return [&model](const Tensor<float>& x) {
    NoGradGuard guard;
    const auto out = model.forward(x);
    return std::array<Tensor<float>, 3>{out.y_sg, out.y_tr, out.y_pc};
  };
}

InferenceResult sliding_window_infer(const std::vector<float>& x, std::int64_t input_channels,
                                     const WindowPlan& plan, const WindowPredictor& predictor,
                                     const InferenceOptions& options) {
  const std::int64_t D = plan.dims[0], H = plan.dims[1], W = plan.dims[2], n = D * H * W;
  const std::int64_t w = plan.window, w3 = w * w * w;
  if (static_cast<std::int64_t>(x.size()) != input_channels * n) {
    throw ShapeError("inference input has " + std::to_string(x.size()) + " values, expected " +
                     std::to_string(input_channels * n));
  }
  for (const auto& c : plan.corners)
    for (int a = 0; a < 3; ++a)
      if (c[static_cast<std::size_t>(a)] < 0 || c[static_cast<std::size_t>(a)] + w > plan.dims[static_cast<std::size_t>(a)]) {
        throw ShapeError("window plan does not fit the volume");
      }

  std::vector<double> weight(static_cast<std::size_t>(w3), 1.0);
  if (options.gaussian) {
    const double sigma = options.gaussian_sigma * static_cast<double>(w);
    const double mid = (static_cast<double>(w) - 1) / 2;
    std::vector<double> g(static_cast<std::size_t>(w));
    for (std::int64_t i = 0; i < w; ++i) {
      const double d = (static_cast<double>(i) - mid) / sigma;
      g[static_cast<std::size_t>(i)] = std::exp(-0.5 * d * d);
    }
    for (std::int64_t z = 0; z < w; ++z)
      for (std::int64_t y = 0; y < w; ++y)
        for (std::int64_t xx = 0; xx < w; ++xx) {
          weight[static_cast<std::size_t>((z * w + y) * w + xx)] =
              g[static_cast<std::size_t>(z)] * g[static_cast<std::size_t>(y)] * g[static_cast<std::size_t>(xx)];
        }
  }

  InferenceResult r;
  r.dims = plan.dims;
  r.windows = plan.corners.size();
  r.weight_sum.assign(static_cast<std::size_t>(n), 0.0);
  std::array<std::vector<double>, 3> acc;

  const auto group = static_cast<std::size_t>(std::max(1, options.threads));
  for (std::size_t start = 0; start < plan.corners.size(); start += group) {
    const std::size_t count = std::min(group, plan.corners.size() - start);
    std::vector<std::array<Tensor<float>, 3>> preds(count);
    parallel_chunks(static_cast<std::int64_t>(count), options.threads, [&](std::int64_t b, std::int64_t e) {
      for (std::int64_t k = b; k < e; ++k) {
        const auto& c = plan.corners[start + static_cast<std::size_t>(k)];
        std::vector<float> patch(static_cast<std::size_t>(input_channels * w3));
        for (std::int64_t ch = 0; ch < input_channels; ++ch)
          for (std::int64_t z = 0; z < w; ++z)
            for (std::int64_t y = 0; y < w; ++y) {
              const auto src = x.begin() + ((ch * D + c[0] + z) * H + c[1] + y) * W + c[2];
              std::copy(src, src + w, patch.begin() + ((ch * w + z) * w + y) * w);
            }
        preds[static_cast<std::size_t>(k)] = predictor(Tensor<float>({input_channels, w, w, w}, std::move(patch)));
      }
    });
    for (std::size_t k = 0; k < count; ++k) {
      const auto& c = plan.corners[start + k];
      for (std::size_t t = 0; t < 3; ++t) {
        const auto& p = preds[k][t];
        if (!p.defined()) continue;
        const std::int64_t ch = p.shape().at(0);
        if (p.shape() != Shape{ch, w, w, w}) throw ShapeError("predictor returned " + shape_str(p.shape()));
        if (acc[t].empty()) {
          r.channels[t] = ch;
          acc[t].assign(static_cast<std::size_t>(ch * n), 0.0);
        } else if (r.channels[t] != ch) {
          throw ShapeError("predictor changed its channel count between windows");
        }
        const auto data = p.data();
        for (std::int64_t q = 0; q < ch; ++q)
          for (std::int64_t z = 0; z < w; ++z)
            for (std::int64_t y = 0; y < w; ++y)
              for (std::int64_t xx = 0; xx < w; ++xx) {
                const auto li = (z * w + y) * w + xx;
                const auto gi = ((q * D + c[0] + z) * H + c[1] + y) * W + c[2] + xx;
                acc[t][static_cast<std::size_t>(gi)] +=
                    weight[static_cast<std::size_t>(li)] * static_cast<double>(data[static_cast<std::size_t>(q * w3 + li)]);
              }
      }
      for (std::int64_t z = 0; z < w; ++z)
        for (std::int64_t y = 0; y < w; ++y)
          for (std::int64_t xx = 0; xx < w; ++xx) {
            r.weight_sum[static_cast<std::size_t>(((c[0] + z) * H + c[1] + y) * W + c[2] + xx)] +=
                weight[static_cast<std::size_t>((z * w + y) * w + xx)];
          }
    }
  }
  for (double s : r.weight_sum)
    if (!(s > 0)) throw ShapeError("window plan leaves voxels uncovered");
  for (std::size_t t = 0; t < 3; ++t) {
    r.probs[t].resize(acc[t].size());
    for (std::size_t i = 0; i < acc[t].size(); ++i) {
      r.probs[t][i] = static_cast<float>(acc[t][i] / r.weight_sum[i % static_cast<std::size_t>(n)]);
    }
  }
  return r;
}

std::vector<std::int32_t> argmax_labels(const std::vector<float>& probs, std::int64_t channels) {
  if (channels < 1 || probs.size() % static_cast<std::size_t>(channels) != 0) {
    throw ShapeError("probability map size is not a multiple of the channel count");
  }
  const std::size_t n = probs.size() / static_cast<std::size_t>(channels);
  std::vector<std::int32_t> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    float best = probs[i];
    for (std::int64_t c = 1; c < channels; ++c) {
      const float v = probs[static_cast<std::size_t>(c) * n + i];
      if (v > best) {
        best = v;
        out[i] = static_cast<std::int32_t>(c);
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> threshold_masks(const std::vector<float>& probs, double threshold) {
  std::vector<std::uint8_t> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] >= threshold;
  return out;
}

}  // namespace fbd
