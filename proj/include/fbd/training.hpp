#pragma once

// Multi-task soft-Dice loss with learned task weights, patch sampling, SGD
// and the plateau learning-rate schedule.

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "fbd/model.hpp"

namespace fbd {

enum class LossVariant { Paper, Bounded };
const char* loss_variant_name(LossVariant v);
LossVariant loss_variant_from_name(const std::string& name);  // UsageError on unknown names

struct LossOptions {
  LossVariant variant = LossVariant::Bounded;
  double epsilon = 1e-5;
};

// (2 sum(p t) + eps) / (sum p + sum t + eps) per leading-axis channel -> [C].
template <typename T>
Tensor<T> soft_dice(const Tensor<T>& pred, const Tensor<T>& target, double epsilon = 1e-5);

// Targets for one cube. Softmax tasks are one-hot including the background
// channel; tract masks have one channel per tract.
template <typename T>
struct TrainingPatch {
  Tensor<T> x;
  Tensor<T> y_sg, y_tr, y_pc;
  std::vector<std::uint8_t> m_tr;  // per tract: 1 = annotated
  std::array<std::int64_t, 3> corner{};  // z, y, x
};

struct LossBreakdown {
  double total = 0.0;
  std::vector<double> dice_sg, dice_tr, dice_pc;     // DSC per Dice label
  std::vector<double> terms_sg, terms_tr, terms_pc;  // weighted Dice terms as added to the loss
  double reg_sg = 0.0, reg_tr = 0.0, reg_pc = 0.0;   // regularizer sums
  std::vector<std::uint8_t> m_tr;
  bool background = false;  // dice_sg / dice_pc start with the background term

  // Mean DSC over the task's foreground labels (annotated tracts only); NaN when none.
  double mean_dice(Task task) const;
  double parts_sum() const;
  std::string describe() const;  // one line per term, for diagnostics
};

template <typename T>
struct LossResult {
  Tensor<T> total;
  LossBreakdown breakdown;
};

template <typename T>
LossResult<T> mtl_loss(const CascadeOutput<T>& output, const TrainingPatch<T>& targets, const Tensor<T>& w,
                       const ModelConfig& config, const LossOptions& options = {});

// ---- data ----

// One subject in tensor layout: x is [6, D, H, W]; label maps are D*H*W.
struct TrainingCase {
  std::array<std::int64_t, 3> dims{};  // D, H, W
  std::vector<float> x;
  std::vector<std::int32_t> y_sg;
  std::vector<std::uint8_t> y_tr;      // [l_tr, D, H, W]
  std::vector<std::uint8_t> m_tr;      // per tract
  std::vector<std::int32_t> y_pc;

  std::int64_t voxels() const { return dims[0] * dims[1] * dims[2]; }
  void validate(const ModelConfig& config) const;  // DataError
};

// Uniform corner in [0, dim - cube] per axis; ShapeError if the case is too small.
std::array<std::int64_t, 3> sample_corner(const std::array<std::int64_t, 3>& dims, int cube, std::mt19937_64& rng);

template <typename T>
TrainingPatch<T> extract_patch(const TrainingCase& c, const std::array<std::int64_t, 3>& corner,
                               const ModelConfig& config);

template <typename T>
TrainingPatch<T> sample_patch(const TrainingCase& c, const ModelConfig& config, std::mt19937_64& rng);

// ---- optimisation ----

struct TrainState {
  int epoch = 0;
  double lr = 1e-4;
  double best_val = std::numeric_limits<double>::infinity();
  int since_improvement = 0;
  int patience = 3;
  double factor = 0.9;
};

TrainState lr_schedule_update(TrainState state, double val_loss);

struct StepOptions {
  double momentum = 0.0;
  bool freeze_theta = false;
  bool freeze_w = false;
  double clip_norm = 0.0;  // rescale the updated gradients to this global L2 norm; 0 = off
  LossOptions loss;
};

template <typename T>
class SgdOptimizer {
 public:
  explicit SgdOptimizer(const CascadeModel<T>& model);
  // p <- p - lr * v, v <- momentum * v + g. Skipped entirely when lr == 0.
  // Returns the gradient norm before clipping (0 when skipped).
  double apply(CascadeModel<T>& model, double lr, const StepOptions& options);

 private:
  std::vector<std::vector<T>> velocity_;  // theta entries then w
};

// forward -> loss -> backward -> SGD. Throws DataError with a per-term dump
// when the loss is not finite.
template <typename T>
LossBreakdown train_step(CascadeModel<T>& model, SgdOptimizer<T>& optimizer, const TrainingPatch<T>& patch,
                         double lr, const StepOptions& options = {});

// Loss without parameter updates or graph recording.
template <typename T>
LossBreakdown evaluate_loss(const CascadeModel<T>& model, const TrainingPatch<T>& patch, const LossOptions& options = {});

// ---- run loop ----

struct TrainConfig {
  int steps = 2000;
  int steps_per_epoch = 50;
  double lr = 1e-4;
  double momentum = 0.0;
  LossVariant loss = LossVariant::Bounded;
  int validation_patches = 4;
  int checkpoint_every = 10;          // epochs; 0 = only the final checkpoint
  double early_stop_dice = 0.0;       // stop once every task's training DSC exceeds this (0 = off)
  double clip_norm = 0.0;             // global gradient norm limit (0 = off)
  bool freeze_w = false;              // keep the task weights at their initial values
  std::uint64_t seed = 1;
};

void to_json(nlohmann::json& j, const TrainConfig& config);
void from_json(const nlohmann::json& j, TrainConfig& config);

struct TrainResult {
  int steps_run = 0;
  int epochs = 0;
  TrainState state;
  LossBreakdown last;
  std::vector<double> step_losses;
  bool early_stopped = false;
};

using TrainLogger = std::function<void(const std::string&)>;

// Writes config.json, metrics.csv and checkpoints into run_dir (skipped when empty).
TrainResult train_model(CascadeModel<float>& model, const std::vector<TrainingCase>& train_cases,
                        const std::vector<TrainingCase>& val_cases, const TrainConfig& config,
                        const std::string& run_dir = {}, const TrainLogger& log = {});

}  // namespace fbd
