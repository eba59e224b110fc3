#include "fbd/run_config.hpp"

#include <fstream>
#include <sstream>
#include <thread>

#include "fbd/errors.hpp"

namespace fbd {

int RunConfig::resolved_threads() const {
  if (threads > 0) return threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw UsageError("invalid run config: " + what);
  };
  model.validate();
  require(threads >= 0, "threads must be >= 0");
  require(input_scale > 0, "input_scale must be positive");
  require(fit.b0_threshold >= 0, "fit.b0_threshold must be >= 0");
  require(staple.max_iter >= 1 && staple.tol > 0, "staple.max_iter must be >= 1 and staple.tol > 0");
  require(staple.init_diagonal > 0 && staple.init_diagonal <= 1, "staple.init_diagonal must be in (0, 1]");
  require(density.percentile >= 0 && density.percentile <= 100, "density.percentile must be in [0, 100]");
  require(infer.window >= 0, "infer.window must be >= 0");
  require(infer.overlap >= 0 && infer.overlap < 1, "infer.overlap must be in [0, 1)");
  require(infer.gaussian_sigma > 0, "infer.gaussian_sigma must be positive");
  require(infer.tract_threshold > 0 && infer.tract_threshold < 1, "infer.tract_threshold must be in (0, 1)");
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  nlohmann::json train = c.train;
  train.erase("seed");
  j = nlohmann::json{
      {"seed", c.seed},
      {"threads", c.threads},
      {"input_scale", c.input_scale},
      {"model", c.model},
      {"train", train},
      {"fit", {{"second_pass", c.fit.second_pass}, {"weighted", c.fit.weighted}, {"b0_threshold", c.fit.b0_threshold}}},
      {"staple", {{"max_iter", c.staple.max_iter}, {"tol", c.staple.tol}, {"init_diagonal", c.staple.init_diagonal}}},
      {"density", {{"percentile", c.density.percentile}}},
      {"infer",
       {{"window", c.infer.window},
        {"overlap", c.infer.overlap},
        {"gaussian", c.infer.gaussian},
        {"gaussian_sigma", c.infer.gaussian_sigma},
        {"tract_threshold", c.infer.tract_threshold}}},
      {"phantom", c.phantom},
      {"paths",
       {{"train_cases", c.paths.train_cases},
        {"val_cases", c.paths.val_cases},
        {"run_dir", c.paths.run_dir},
        {"checkpoint", c.paths.checkpoint}}},
  };
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  if (!j.is_object()) throw UsageError("run config must be a JSON object");
  static const char* known[] = {"seed",   "threads", "input_scale", "model",   "train", "fit",
                                "staple", "density", "infer",       "phantom", "paths"};
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || item.key() == k;
    if (!ok) throw UsageError("unknown run config key '" + item.key() + "'");
  }
  const RunConfig d;
  c = d;
  try {
    c.seed = j.value("seed", d.seed);
    c.threads = j.value("threads", d.threads);
    c.input_scale = j.value("input_scale", d.input_scale);
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    c.train.seed = c.seed;
    if (j.contains("fit")) {
      const auto& f = j.at("fit");
      c.fit.second_pass = f.value("second_pass", d.fit.second_pass);
      c.fit.weighted = f.value("weighted", d.fit.weighted);
      c.fit.b0_threshold = f.value("b0_threshold", d.fit.b0_threshold);
    }
    if (j.contains("staple")) {
      const auto& s = j.at("staple");
      c.staple.max_iter = s.value("max_iter", d.staple.max_iter);
      c.staple.tol = s.value("tol", d.staple.tol);
      c.staple.init_diagonal = s.value("init_diagonal", d.staple.init_diagonal);
    }
    if (j.contains("density")) c.density.percentile = j.at("density").value("percentile", d.density.percentile);
    if (j.contains("infer")) {
      const auto& i = j.at("infer");
      c.infer.window = i.value("window", d.infer.window);
      c.infer.overlap = i.value("overlap", d.infer.overlap);
      c.infer.gaussian = i.value("gaussian", d.infer.gaussian);
      c.infer.gaussian_sigma = i.value("gaussian_sigma", d.infer.gaussian_sigma);
      c.infer.tract_threshold = i.value("tract_threshold", d.infer.tract_threshold);
    }
    if (j.contains("phantom")) c.phantom = j.at("phantom").get<PhantomSpec>();
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      c.paths.train_cases = p.value("train_cases", d.paths.train_cases);
      c.paths.val_cases = p.value("val_cases", d.paths.val_cases);
      c.paths.run_dir = p.value("run_dir", d.paths.run_dir);
      c.paths.checkpoint = p.value("checkpoint", d.paths.checkpoint);
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("run config: ") + e.what());
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream text;
  text << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text.str());
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return j.get<RunConfig>();
}

}  // namespace fbd
