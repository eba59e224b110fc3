#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "fbd/checkpoint.hpp"
#include "fbd/ops.hpp"
#include "fbd/training.hpp"

namespace fbd {

// ---- data ----

void TrainingCase::validate(const ModelConfig& config) const {
  const auto n = voxels();
  for (auto d : dims)
    if (d < 1) throw DataError("training case has empty dims");
  if (static_cast<std::int64_t>(x.size()) != config.input_channels * n) {
    throw DataError("training input has " + std::to_string(x.size()) + " values, expected " +
                    std::to_string(config.input_channels * n));
  }
  auto check_labels = [&](const std::vector<std::int32_t>& y, int max_label, const char* what) {
    if (static_cast<std::int64_t>(y.size()) != n) throw DataError(std::string(what) + " label map has the wrong size");
    for (auto v : y)
      if (v < 0 || v > max_label) {
        throw DataError(std::string(what) + " label " + std::to_string(v) + " outside [0, " + std::to_string(max_label) + "]");
      }
  };
  if (config.has_task(Task::Tissue)) check_labels(y_sg, config.l_sg, "tissue");
  if (config.has_task(Task::Parcellation)) check_labels(y_pc, config.l_pc, "parcellation");
  if (config.has_task(Task::Tract)) {
    if (static_cast<std::int64_t>(y_tr.size()) != config.l_tr * n) throw DataError("tract masks have the wrong size");
    if (static_cast<int>(m_tr.size()) != config.l_tr) throw DataError("tract annotation flags have the wrong length");
  }
}

std::array<std::int64_t, 3> sample_corner(const std::array<std::int64_t, 3>& dims, int cube, std::mt19937_64& rng) {
  std::array<std::int64_t, 3> c{};
  for (int a = 0; a < 3; ++a) {
    if (dims[static_cast<std::size_t>(a)] < cube) {
      throw ShapeError("volume extent " + std::to_string(dims[static_cast<std::size_t>(a)]) +
                       " is smaller than the cube size " + std::to_string(cube));
    }
  }
  for (int a = 0; a < 3; ++a) {
    std::uniform_int_distribution<std::int64_t> u(0, dims[static_cast<std::size_t>(a)] - cube);
    c[static_cast<std::size_t>(a)] = u(rng);
  }
  return c;
}

template <typename T>
TrainingPatch<T> extract_patch(const TrainingCase& c, const std::array<std::int64_t, 3>& corner,
                               const ModelConfig& config) {
  const std::int64_t S = config.cube_size;
  const std::int64_t D = c.dims[0], H = c.dims[1], W = c.dims[2];
  for (int a = 0; a < 3; ++a) {
    if (corner[static_cast<std::size_t>(a)] < 0 || corner[static_cast<std::size_t>(a)] + S > c.dims[static_cast<std::size_t>(a)]) {
      throw ShapeError("patch corner outside the volume");
    }
  }
  const std::int64_t s3 = S * S * S;
  auto src_index = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
    return ((corner[0] + z) * H + (corner[1] + y)) * W + (corner[2] + x);
  };
  const std::int64_t n = D * H * W;
  auto crop_channels = [&](auto&& value_at, std::int64_t channels) {
    std::vector<T> out(static_cast<std::size_t>(channels * s3));
    for (std::int64_t ch = 0; ch < channels; ++ch)
      for (std::int64_t z = 0; z < S; ++z)
        for (std::int64_t y = 0; y < S; ++y)
          for (std::int64_t x = 0; x < S; ++x)
            out[static_cast<std::size_t>(((ch * S + z) * S + y) * S + x)] = value_at(ch, src_index(z, y, x));
    return out;
  };
  auto one_hot = [&](const std::vector<std::int32_t>& labels, int classes) {
    std::vector<T> out(static_cast<std::size_t>(classes * s3), T(0));
    for (std::int64_t z = 0; z < S; ++z)
      for (std::int64_t y = 0; y < S; ++y)
        for (std::int64_t x = 0; x < S; ++x) {
          const auto lab = labels[static_cast<std::size_t>(src_index(z, y, x))];
          out[static_cast<std::size_t>(((lab * S + z) * S + y) * S + x)] = T(1);
        }
    return out;
  };

  TrainingPatch<T> p;
  p.corner = corner;
  const Shape spatial{S, S, S};
  auto shape_with = [&](std::int64_t ch) { return Shape{ch, S, S, S}; };
  (void)spatial;
  p.x = Tensor<T>(shape_with(config.input_channels),
                  crop_channels([&](std::int64_t ch, std::int64_t i) { return static_cast<T>(c.x[static_cast<std::size_t>(ch * n + i)]); },
                                config.input_channels));
  if (config.has_task(Task::Tissue)) p.y_sg = Tensor<T>(shape_with(config.l_sg + 1), one_hot(c.y_sg, config.l_sg + 1));
  if (config.has_task(Task::Tract)) {
    p.y_tr = Tensor<T>(shape_with(config.l_tr),
                       crop_channels([&](std::int64_t ch, std::int64_t i) { return static_cast<T>(c.y_tr[static_cast<std::size_t>(ch * n + i)]); },
                                     config.l_tr));
    p.m_tr = c.m_tr;
  }
  if (config.has_task(Task::Parcellation)) p.y_pc = Tensor<T>(shape_with(config.l_pc + 1), one_hot(c.y_pc, config.l_pc + 1));
  return p;
}

template <typename T>
TrainingPatch<T> sample_patch(const TrainingCase& c, const ModelConfig& config, std::mt19937_64& rng) {
  return extract_patch<T>(c, sample_corner(c.dims, config.cube_size, rng), config);
}

// ---- optimisation ----

TrainState lr_schedule_update(TrainState s, double val_loss) {
  if (!std::isfinite(val_loss)) throw DataError("validation loss is not finite");
  ++s.epoch;
  if (val_loss < s.best_val) {
    s.best_val = val_loss;
    s.since_improvement = 0;
    return s;
  }
  if (++s.since_improvement >= s.patience) {
    s.lr *= s.factor;
    s.since_improvement = 0;
  }
  return s;
}

template <typename T>
SgdOptimizer<T>::SgdOptimizer(const CascadeModel<T>& model) {
  for (const auto& p : model.parameters()) velocity_.emplace_back(static_cast<std::size_t>(p.tensor.size()), T(0));
  velocity_.emplace_back(static_cast<std::size_t>(model.task_weights().size()), T(0));
}

template <typename T>
double SgdOptimizer<T>::apply(CascadeModel<T>& model, double lr, const StepOptions& options) {
  if (lr == 0.0) return 0.0;
  const auto& params = model.parameters();
  double sq = 0.0;
  auto accumulate = [&](Tensor<T> handle) {
    for (T g : handle.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  };
  if (!options.freeze_theta)
    for (const auto& p : params) accumulate(p.tensor);
  if (!options.freeze_w) accumulate(model.task_weights());
  const double norm = std::sqrt(sq);
  const T gscale = options.clip_norm > 0 && norm > options.clip_norm ? static_cast<T>(options.clip_norm / norm) : T(1);

  const T rate = static_cast<T>(lr);
  const T mu = static_cast<T>(options.momentum);
  auto update = [&](Tensor<T> handle, std::vector<T>& v) {
    const auto g = handle.grad();
    auto d = handle.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      v[i] = mu * v[i] + gscale * g[i];
      d[i] -= rate * v[i];
    }
  };
  if (!options.freeze_theta) {
    for (std::size_t k = 0; k < params.size(); ++k) update(params[k].tensor, velocity_[k]);
  }
  if (!options.freeze_w) update(model.task_weights(), velocity_.back());
  return norm;
}

template <typename T>
LossBreakdown train_step(CascadeModel<T>& model, SgdOptimizer<T>& optimizer, const TrainingPatch<T>& patch, double lr,
                         const StepOptions& options) {
  for (const auto& p : model.parameters()) {
    Tensor<T> h = p.tensor;
    h.zero_grad();
  }
  model.task_weights().zero_grad();
  const auto out = model.forward(patch.x);
  const auto loss = mtl_loss(out, patch, model.task_weights(), model.config(), options.loss);
  if (!std::isfinite(loss.breakdown.total)) {
    throw DataError("non-finite training loss; per-term values:\n" + loss.breakdown.describe());
  }
  backward(loss.total);
  optimizer.apply(model, lr, options);
  return loss.breakdown;
}

template <typename T>
LossBreakdown evaluate_loss(const CascadeModel<T>& model, const TrainingPatch<T>& patch, const LossOptions& options) {
  NoGradGuard guard;
  const auto out = model.forward(patch.x);
  return mtl_loss(out, patch, model.task_weights(), model.config(), options).breakdown;
}

// ---- run loop ----

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"steps", c.steps},
                     {"steps_per_epoch", c.steps_per_epoch},
                     {"lr", c.lr},
                     {"momentum", c.momentum},
                     {"loss", loss_variant_name(c.loss)},
                     {"validation_patches", c.validation_patches},
                     {"checkpoint_every", c.checkpoint_every},
                     {"early_stop_dice", c.early_stop_dice},
                     {"clip_norm", c.clip_norm},
                     {"freeze_w", c.freeze_w},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.steps = j.value("steps", c.steps);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.loss = loss_variant_from_name(j.value("loss", std::string(loss_variant_name(c.loss))));
  c.validation_patches = j.value("validation_patches", c.validation_patches);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.early_stop_dice = j.value("early_stop_dice", c.early_stop_dice);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.freeze_w = j.value("freeze_w", c.freeze_w);
  c.seed = j.value("seed", c.seed);
  if (!(c.clip_norm >= 0) || c.steps < 0 || c.steps_per_epoch < 1 || !(c.lr >= 0) || c.momentum < 0 || c.momentum >= 1 ||
      c.validation_patches < 1 || c.checkpoint_every < 0) {
    throw UsageError("invalid training configuration");
  }
}

namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(9) << v;
  return s.str();
}

}  // namespace

TrainResult train_model(CascadeModel<float>& model, const std::vector<TrainingCase>& train_cases,
                        const std::vector<TrainingCase>& val_cases, const TrainConfig& config,
                        const std::string& run_dir, const TrainLogger& log) {
  if (train_cases.empty()) throw DataError("no training cases");
  const ModelConfig& mc = model.config();
  for (const auto& c : train_cases) c.validate(mc);
  for (const auto& c : val_cases) c.validate(mc);

  namespace fs = std::filesystem;
  std::ofstream metrics;
  if (!run_dir.empty()) {
    fs::create_directories(run_dir);
    nlohmann::json snapshot{{"model", mc}, {"train", config}};
    std::ofstream(fs::path(run_dir) / "config.json") << snapshot.dump(2) << "\n";
    metrics.open(fs::path(run_dir) / "metrics.csv");
    if (!metrics) throw IoError("cannot write metrics.csv in " + run_dir);
    metrics << "epoch,lr,total";
    for (Task t : mc.tasks) metrics << ",dsc_" << task_name(t);
    metrics << "\n";
  }
  auto say = [&](const std::string& m) {
    if (log) log(m);
  };

  std::mt19937_64 rng(config.seed);
  std::mt19937_64 val_rng(config.seed ^ 0x9E3779B97F4A7C15ull);
  const auto& val_source = val_cases.empty() ? train_cases : val_cases;
  std::vector<TrainingPatch<float>> val_patches;
  for (int i = 0; i < config.validation_patches; ++i) {
    const auto& c = val_source[static_cast<std::size_t>(i) % val_source.size()];
    val_patches.push_back(sample_patch<float>(c, mc, val_rng));
  }

  SgdOptimizer<float> optimizer(model);
  StepOptions step_opt;
  step_opt.momentum = config.momentum;
  step_opt.loss.variant = config.loss;
  step_opt.clip_norm = config.clip_norm;
  step_opt.freeze_w = config.freeze_w;
  TrainResult result;
  result.state.lr = config.lr;
  std::uniform_int_distribution<std::size_t> pick(0, train_cases.size() - 1);

  auto end_epoch = [&]() {
    double val = 0.0;
    std::vector<double> dsc(mc.tasks.size(), 0.0);
    for (const auto& p : val_patches) {
      const auto b = evaluate_loss(model, p, step_opt.loss);
      val += b.total;
      for (std::size_t t = 0; t < mc.tasks.size(); ++t) dsc[t] += b.mean_dice(mc.tasks[t]);
    }
    val /= static_cast<double>(val_patches.size());
    for (auto& d : dsc) d /= static_cast<double>(val_patches.size());
    const double lr_used = result.state.lr;
    result.state = lr_schedule_update(result.state, val);
    ++result.epochs;
    std::string line = "epoch " + std::to_string(result.epochs) + " lr " + fmt(lr_used) + " val_loss " + fmt(val);
    if (metrics) metrics << result.epochs << "," << fmt(lr_used) << "," << fmt(val);
    for (std::size_t t = 0; t < dsc.size(); ++t) {
      if (metrics) metrics << "," << fmt(dsc[t]);
      line += std::string(" dsc_") + task_name(mc.tasks[t]) + " " + fmt(dsc[t]);
    }
    if (metrics) metrics << "\n" << std::flush;
    say(line);
    if (!run_dir.empty() && config.checkpoint_every > 0 && result.epochs % config.checkpoint_every == 0) {
      std::ostringstream name;
      name << "checkpoint_epoch_" << std::setw(4) << std::setfill('0') << result.epochs << ".ckpt";
      save_checkpoint((fs::path(run_dir) / name.str()).string(), model);
    }
  };

  for (int step = 0; step < config.steps; ++step) {
    const auto& c = train_cases[train_cases.size() == 1 ? 0 : pick(rng)];
    const auto patch = sample_patch<float>(c, mc, rng);
    result.last = train_step(model, optimizer, patch, result.state.lr, step_opt);
    result.step_losses.push_back(result.last.total);
    ++result.steps_run;

    bool done = false;
    if (config.early_stop_dice > 0) {
      done = true;
      for (Task t : mc.tasks) done = done && result.last.mean_dice(t) > config.early_stop_dice;
    }
    if (done) {
      result.early_stopped = true;
      say("early stop at step " + std::to_string(step + 1) + ": every task above DSC " + fmt(config.early_stop_dice));
    }
    if ((step + 1) % config.steps_per_epoch == 0 || step + 1 == config.steps || done) end_epoch();
    if (done) break;
  }
  if (!run_dir.empty()) save_checkpoint((fs::path(run_dir) / "final.ckpt").string(), model);
  return result;
}

template TrainingPatch<float> extract_patch(const TrainingCase&, const std::array<std::int64_t, 3>&, const ModelConfig&);
template TrainingPatch<double> extract_patch(const TrainingCase&, const std::array<std::int64_t, 3>&, const ModelConfig&);
template TrainingPatch<float> sample_patch(const TrainingCase&, const ModelConfig&, std::mt19937_64&);
template TrainingPatch<double> sample_patch(const TrainingCase&, const ModelConfig&, std::mt19937_64&);
template class SgdOptimizer<float>;
template class SgdOptimizer<double>;
template LossBreakdown train_step(CascadeModel<float>&, SgdOptimizer<float>&, const TrainingPatch<float>&, double,
                                  const StepOptions&);
template LossBreakdown train_step(CascadeModel<double>&, SgdOptimizer<double>&, const TrainingPatch<double>&, double,
                                  const StepOptions&);
template LossBreakdown evaluate_loss(const CascadeModel<float>&, const TrainingPatch<float>&, const LossOptions&);
template LossBreakdown evaluate_loss(const CascadeModel<double>&, const TrainingPatch<double>&, const LossOptions&);

}  // namespace fbd
