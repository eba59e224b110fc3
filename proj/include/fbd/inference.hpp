#pragma once

// Whole-volume inference by overlapping cubic windows.

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "fbd/model.hpp"

namespace fbd {

struct WindowPlan {
  std::array<std::int64_t, 3> dims{};  // D, H, W
  std::int64_t window = 0;
  std::int64_t stride = 0;
  std::vector<std::array<std::int64_t, 3>> corners;  // z, y, x; z slowest
};

// Corners 0, stride, 2*stride, ... per axis with the last one clamped to
// dim - window. stride = window - round(overlap * window). ShapeError if the
// window exceeds a dimension; UsageError for overlap outside [0, 1).
std::vector<std::int64_t> axis_corners(std::int64_t dim, std::int64_t window, std::int64_t stride);
WindowPlan plan_windows(const std::array<std::int64_t, 3>& dims, std::int64_t window, double overlap);

// Per-window prediction: input [C, w, w, w] -> {y_sg, y_tr, y_pc}; entries
// for disabled tasks stay undefined.
using WindowPredictor = std::function<std::array<Tensor<float>, 3>(const Tensor<float>& x)>;

WindowPredictor model_predictor(const CascadeModel<float>& model);

struct InferenceOptions {
  bool gaussian = false;  // center-weighted aggregation instead of uniform averaging
  double gaussian_sigma = 0.125;  // fraction of the window
  int threads = 1;
};

// Full-volume probabilities, channel-major [C, D, H, W] per task.
struct InferenceResult {
  std::array<std::int64_t, 3> dims{};
  std::array<std::int64_t, 3> channels{};  // per task, 0 when disabled
  std::array<std::vector<float>, 3> probs;
  std::vector<double> weight_sum;  // per voxel
  std::size_t windows = 0;

  const std::vector<float>& task(Task t) const { return probs[static_cast<std::size_t>(t)]; }
};

// x: [C, D, H, W] channel-major. Windows are evaluated in groups of `threads`
// and accumulated in plan order, so the result does not depend on the
// thread count.
InferenceResult sliding_window_infer(const std::vector<float>& x, std::int64_t input_channels,
                                     const WindowPlan& plan, const WindowPredictor& predictor,
                                     const InferenceOptions& options = {});

// Per-voxel argmax over channels (lowest index on ties); channel index is the label id.
std::vector<std::int32_t> argmax_labels(const std::vector<float>& probs, std::int64_t channels);
// Channel-major masks: probability >= threshold.
std::vector<std::uint8_t> threshold_masks(const std::vector<float>& probs, double threshold = 0.5);

}  // namespace fbd
