#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace fbd {

// Cascade order is fixed: tissue -> tract -> parcellation.
enum class Task { Tissue = 0, Tract = 1, Parcellation = 2 };

const char* task_name(Task task);
Task task_from_name(const std::string& name);

struct ModelConfig {
  int cube_size = 32;
  int patch_size = 4;
  int n_encoders = 2;
  int embed_dim = 128;
  int n_heads = 2;
  int mlp_ratio = 4;
  int input_channels = 6;
  int att_out_channels = 6;
  int fcn_base_features = 8;
  int fcn_depth = 3;
  int fcn_max_features = 320;
  // Foreground label counts. Exclusive tasks get one extra background channel.
  int l_sg = 4;
  int l_tr = 4;
  int l_pc = 6;
  std::vector<Task> tasks{Task::Tissue, Task::Tract, Task::Parcellation};
  // Adds the background channel of tissue and parcellation to the Dice loss,
  // with its own task weight.
  bool dice_background = false;

  // 64^3 cubes, 8^3 patches, 4 encoders of width 512 with 4 heads, 32 base
  // features, 4+bg tissues, 31 tracts, 96+bg parcels.
  static ModelConfig paper();
  // Desk-scale default used by the CLI and tests.
  static ModelConfig desk();

  void validate() const;  // throws UsageError

  bool has_task(Task task) const;
  std::int64_t tokens() const;           // (cube/patch)^3
  std::int64_t token_length() const;     // patch^3 * input_channels
  std::int64_t token_out_length() const; // patch^3 * att_out_channels
  int fcn_features(int level) const;     // min(base * 2^level, max)
  int fcn_input_channels(Task task) const;
  int output_channels(Task task) const;
  int label_count(Task task) const;
  int dice_count(Task task) const;  // Dice terms (and task weights) of the task
  // Offset of the task's block inside the task-uncertainty vector.
  int w_offset(Task task) const;
  int w_length() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& config);
void from_json(const nlohmann::json& j, ModelConfig& config);

// Parameter count derived from the config alone, without building weights.
std::int64_t expected_parameter_count(const ModelConfig& config);

}  // namespace fbd
