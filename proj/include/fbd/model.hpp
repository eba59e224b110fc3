#pragma once

// Cascaded multi-task network: a patch-wise transformer module produces
// shared full-resolution features F_att, then one U-Net per task. Each FCN
// sees [x; F_att] plus the penultimate features of every earlier task.

#include <cstdint>
#include <string>
#include <vector>

#include "fbd/model_config.hpp"
#include "fbd/tensor.hpp"

namespace fbd {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct EncoderBlockWeights {
  Tensor<T> ln1_gamma, ln1_beta;
  Tensor<T> qkv_w, qkv_b;    // [E, 3E], [3E]
  Tensor<T> proj_w, proj_b;  // [E, E], [E]
  Tensor<T> ln2_gamma, ln2_beta;
  Tensor<T> fc1_w, fc1_b;    // [E, rE], [rE]
  Tensor<T> fc2_w, fc2_b;    // [rE, E], [E]
};

template <typename T>
struct AttentionWeights {
  Tensor<T> embed_w, embed_b;  // [p^3*C, E], [E]
  Tensor<T> pos;               // [N, E]
  std::vector<EncoderBlockWeights<T>> blocks;
  Tensor<T> norm_gamma, norm_beta;
  Tensor<T> out_w, out_b;      // [E, p^3*C_att], [p^3*C_att]
};

template <typename T>
struct ConvNormWeights {
  Tensor<T> kernel;  // [Co, Ci, 3, 3, 3]
  Tensor<T> gamma, beta;
  int stride = 1;
};

template <typename T>
struct FcnWeights {
  std::vector<std::vector<ConvNormWeights<T>>> encoder;  // per level, two blocks
  std::vector<Tensor<T>> upsample;                       // [f_{l+1}, f_l, 2, 2, 2], index l
  std::vector<std::vector<ConvNormWeights<T>>> decoder;  // index l, two blocks
  Tensor<T> out_w, out_b;                                // [out, base, 1, 1, 1], [out]
};

template <typename T>
struct FcnOutput {
  Tensor<T> logits;       // [out, S, S, S]
  Tensor<T> penultimate;  // [base, S, S, S]
};

template <typename T>
struct CascadeOutput {
  Tensor<T> y_sg, y_tr, y_pc;              // probabilities; undefined when the task is disabled
  Tensor<T> logits_sg, logits_tr, logits_pc;
  Tensor<T> f_att, f_sg, f_tr;
};

// Output shape of each stage for a given config, derived arithmetically.
struct CascadeShapes {
  Shape input, tokens, embedded, f_att;
  std::vector<std::pair<Task, Shape>> fcn_inputs, logits, penultimate;
};
CascadeShapes cascade_shapes(const ModelConfig& config);

template <typename T>
Tensor<T> attention_forward(const Tensor<T>& x, const AttentionWeights<T>& weights, const ModelConfig& config);

template <typename T>
FcnOutput<T> fcn_forward(const Tensor<T>& input, const FcnWeights<T>& weights);

template <typename T>
class CascadeModel {
 public:
  // Weights are drawn in double from a seeded generator and then cast, so
  // float and double models built with one seed agree up to rounding.
  CascadeModel(ModelConfig config, std::uint64_t seed);
  // Weight structs hold shared handles, so copying would alias storage.
  CascadeModel(const CascadeModel&) = delete;
  CascadeModel& operator=(const CascadeModel&) = delete;
  CascadeModel(CascadeModel&&) noexcept = default;
  CascadeModel& operator=(CascadeModel&&) noexcept = default;

  CascadeOutput<T> forward(const Tensor<T>& x) const;

  const ModelConfig& config() const { return config_; }
  // Network weights in a stable order (theta).
  const std::vector<NamedTensor<T>>& parameters() const { return params_; }
  // Task-uncertainty vector w, stored apart from theta.
  Tensor<T>& task_weights() { return w_; }
  const Tensor<T>& task_weights() const { return w_; }
  std::int64_t parameter_count() const;

  const AttentionWeights<T>& attention() const { return attention_; }
  AttentionWeights<T>& attention() { return attention_; }
  const FcnWeights<T>& fcn(Task task) const;
  FcnWeights<T>& fcn(Task task);

  // Copies values (not graph state) from another model with the same config.
  template <typename U>
  void copy_values_from(const CascadeModel<U>& other);

 private:
  ModelConfig config_;
  AttentionWeights<T> attention_;
  FcnWeights<T> fcns_[3];
  std::vector<NamedTensor<T>> params_;
  Tensor<T> w_;
};

extern template class CascadeModel<float>;
extern template class CascadeModel<double>;

}  // namespace fbd
