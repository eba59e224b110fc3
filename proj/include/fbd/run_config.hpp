#pragma once

// Run configuration shared by every CLI subcommand. Serialized as JSON; the
// defaults printed by `fbd --print-config` are the values of RunConfig{}.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "fbd/model_config.hpp"
#include "fbd/phantom.hpp"
#include "fbd/training.hpp"

namespace fbd {

struct PathConfig {
  std::vector<std::string> train_cases;  // case directories
  std::vector<std::string> val_cases;
  std::string run_dir = "run";
  std::string checkpoint;                // model to load for inference or to resume from
};

struct FitConfig {
  bool second_pass = false;
  bool weighted = true;
  double b0_threshold = 0.0;
};

struct StapleConfig {
  int max_iter = 100;
  double tol = 1e-6;
  double init_diagonal = 0.9;
};

struct DensityConfig {
  double percentile = 5.0;
};

struct InferConfig {
  std::int64_t window = 0;  // 0 = the model's cube size
  double overlap = 0.25;
  bool gaussian = false;
  double gaussian_sigma = 0.125;  // fraction of the window
  double tract_threshold = 0.5;
};

struct RunConfig {
  std::uint64_t seed = 1;   // also seeds training; train.seed is ignored
  int threads = 0;          // 0 = available cores
  double input_scale = 1000.0;  // DTI components (mm^2/s) are multiplied by this before the network
  ModelConfig model = ModelConfig::desk();
  TrainConfig train;
  FitConfig fit;
  StapleConfig staple;
  DensityConfig density;
  InferConfig infer;
  PhantomSpec phantom = PhantomSpec::default_spec();
  PathConfig paths;

  int resolved_threads() const;
  void validate() const;  // UsageError
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);  // missing keys keep their defaults

RunConfig load_run_config(const std::string& path);  // IoError / UsageError

}  // namespace fbd
