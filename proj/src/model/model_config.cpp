#include "fbd/model_config.hpp"

#include <algorithm>

#include "fbd/errors.hpp"

namespace fbd {

const char* task_name(Task task) {
  switch (task) {
    case Task::Tissue: return "tissue";
    case Task::Tract: return "tract";
    case Task::Parcellation: return "parcellation";
  }
  return "?";
}

Task task_from_name(const std::string& name) {
  if (name == "tissue" || name == "sg") return Task::Tissue;
  if (name == "tract" || name == "tr") return Task::Tract;
  if (name == "parcellation" || name == "pc") return Task::Parcellation;
  throw UsageError("unknown task '" + name + "'");
}

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.cube_size = 64;
  c.patch_size = 8;
  c.n_encoders = 4;
  c.embed_dim = 512;
  c.n_heads = 4;
  c.fcn_base_features = 32;
  c.fcn_depth = 5;
  c.l_sg = 4;
  c.l_tr = 31;
  c.l_pc = 96;
  return c;
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw UsageError("invalid model config: " + what);
  };
  require(cube_size >= 1 && patch_size >= 1 && n_encoders >= 1 && embed_dim >= 1 && n_heads >= 1 &&
              mlp_ratio >= 1 && input_channels >= 1 && att_out_channels >= 1 && fcn_base_features >= 1 &&
              fcn_depth >= 1 && fcn_max_features >= 1,
          "all sizes and counts must be >= 1");
  require(fcn_max_features >= fcn_base_features, "fcn_max_features must be >= fcn_base_features");
  require(cube_size % patch_size == 0, "cube_size must be divisible by patch_size");
  require(embed_dim % n_heads == 0, "embed_dim must be divisible by n_heads");
  require(cube_size % (1 << (fcn_depth - 1)) == 0, "cube_size must be divisible by 2^(fcn_depth-1)");
  require(l_sg >= 1 && l_tr >= 1 && l_pc >= 1, "label counts must be >= 1");
  require(!tasks.empty(), "at least one task must be enabled");
  for (std::size_t i = 1; i < tasks.size(); ++i) {
    require(static_cast<int>(tasks[i - 1]) < static_cast<int>(tasks[i]), "tasks must be unique and in cascade order");
  }
}

bool ModelConfig::has_task(Task task) const { return std::find(tasks.begin(), tasks.end(), task) != tasks.end(); }

std::int64_t ModelConfig::tokens() const {
  const std::int64_t g = cube_size / patch_size;
  return g * g * g;
}

std::int64_t ModelConfig::token_length() const {
  return std::int64_t{patch_size} * patch_size * patch_size * input_channels;
}

std::int64_t ModelConfig::token_out_length() const {
  return std::int64_t{patch_size} * patch_size * patch_size * att_out_channels;
}

int ModelConfig::fcn_features(int level) const {
  std::int64_t f = fcn_base_features;
  for (int l = 0; l < level; ++l) f *= 2;
  return static_cast<int>(std::min<std::int64_t>(f, fcn_max_features));
}

int ModelConfig::fcn_input_channels(Task task) const {
  int channels = input_channels + att_out_channels;
  for (Task earlier : tasks) {
    if (static_cast<int>(earlier) >= static_cast<int>(task)) break;
    channels += fcn_base_features;
  }
  return channels;
}

int ModelConfig::output_channels(Task task) const {
  switch (task) {
    case Task::Tissue: return l_sg + 1;
    case Task::Tract: return l_tr;
    case Task::Parcellation: return l_pc + 1;
  }
  return 0;
}

int ModelConfig::label_count(Task task) const {
  switch (task) {
    case Task::Tissue: return l_sg;
    case Task::Tract: return l_tr;
    case Task::Parcellation: return l_pc;
  }
  return 0;
}

int ModelConfig::dice_count(Task task) const {
  return label_count(task) + (dice_background && task != Task::Tract ? 1 : 0);
}

int ModelConfig::w_offset(Task task) const {
  int offset = 0;
  for (Task t : tasks) {
    if (t == task) return offset;
    offset += dice_count(t);
  }
  throw UsageError(std::string("task not enabled: ") + task_name(task));
}

int ModelConfig::w_length() const {
  int n = 0;
  for (Task t : tasks) n += dice_count(t);
  return n;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  std::vector<std::string> task_names;
  for (Task t : c.tasks) task_names.emplace_back(task_name(t));
  j = nlohmann::json{{"cube_size", c.cube_size},
                     {"patch_size", c.patch_size},
                     {"n_encoders", c.n_encoders},
                     {"embed_dim", c.embed_dim},
                     {"n_heads", c.n_heads},
                     {"mlp_ratio", c.mlp_ratio},
                     {"input_channels", c.input_channels},
                     {"att_out_channels", c.att_out_channels},
                     {"fcn_base_features", c.fcn_base_features},
                     {"fcn_depth", c.fcn_depth},
                     {"fcn_max_features", c.fcn_max_features},
                     {"l_sg", c.l_sg},
                     {"l_tr", c.l_tr},
                     {"l_pc", c.l_pc},
                     {"tasks", task_names},
                     {"dice_background", c.dice_background}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.cube_size = j.value("cube_size", d.cube_size);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.n_encoders = j.value("n_encoders", d.n_encoders);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.input_channels = j.value("input_channels", d.input_channels);
  c.att_out_channels = j.value("att_out_channels", d.att_out_channels);
  c.fcn_base_features = j.value("fcn_base_features", d.fcn_base_features);
  c.fcn_depth = j.value("fcn_depth", d.fcn_depth);
  c.fcn_max_features = j.value("fcn_max_features", d.fcn_max_features);
  c.l_sg = j.value("l_sg", d.l_sg);
  c.l_tr = j.value("l_tr", d.l_tr);
  c.l_pc = j.value("l_pc", d.l_pc);
  c.dice_background = j.value("dice_background", d.dice_background);
  if (j.contains("tasks")) {
    c.tasks.clear();
    for (const auto& name : j.at("tasks")) c.tasks.push_back(task_from_name(name.get<std::string>()));
  } else {
    c.tasks = d.tasks;
  }
}

std::int64_t expected_parameter_count(const ModelConfig& c) {
  const std::int64_t e = c.embed_dim;
  const std::int64_t hidden = e * c.mlp_ratio;
  std::int64_t att = c.token_length() * e + e   // embedding
                     + c.tokens() * e;          // positional
  const std::int64_t block = 2 * e               // ln1
                             + e * 3 * e + 3 * e // qkv
                             + e * e + e         // proj
                             + 2 * e             // ln2
                             + e * hidden + hidden + hidden * e + e;
  att += c.n_encoders * block;
  att += 2 * e + e * c.token_out_length() + c.token_out_length();  // final norm + output

  auto conv = [](std::int64_t in, std::int64_t out) { return out * in * 27 + 2 * out; };
  std::int64_t total = att;
  for (Task task : c.tasks) {
    std::int64_t fcn = 0;
    std::int64_t in = c.fcn_input_channels(task);
    for (int level = 0; level < c.fcn_depth; ++level) {
      const std::int64_t f = c.fcn_features(level);
      fcn += conv(in, f) + conv(f, f);
      in = f;
    }
    for (int level = c.fcn_depth - 2; level >= 0; --level) {
      const std::int64_t f = c.fcn_features(level);
      const std::int64_t below = c.fcn_features(level + 1);
      fcn += below * f * 8;              // transposed conv, kernel 2
      fcn += conv(2 * f, f) + conv(f, f);
    }
    fcn += std::int64_t{c.output_channels(task)} * c.fcn_base_features + c.output_channels(task);
    total += fcn;
  }
  return total;
}

}  // namespace fbd
