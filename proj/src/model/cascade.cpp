#include <cmath>
#include <random>

#include "fbd/errors.hpp"
#include "fbd/model.hpp"
#include "fbd/ops.hpp"

namespace fbd {

namespace {

constexpr double kLeakySlope = 0.01;

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  template <typename T>
  Tensor<T> normal(Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> data(static_cast<std::size_t>(numel(shape)));
    for (auto& v : data) v = static_cast<T>(dist(rng_));
    return Tensor<T>(std::move(shape), std::move(data), true);
  }

  template <typename T>
  Tensor<T> constant(Shape shape, double value) {
    return Tensor<T>(std::move(shape), static_cast<T>(value), true);
  }

 private:
  std::mt19937_64 rng_;
};

double he_std(std::int64_t fan_in) {
  return std::sqrt(2.0 / ((1.0 + kLeakySlope * kLeakySlope) * static_cast<double>(fan_in)));
}

template <typename T>
ConvNormWeights<T> make_conv(Initializer& init, std::int64_t in, std::int64_t out, int stride) {
  ConvNormWeights<T> b;
  b.kernel = init.normal<T>({out, in, 3, 3, 3}, he_std(in * 27));
  b.gamma = init.constant<T>({out}, 1.0);
  b.beta = init.constant<T>({out}, 0.0);
  b.stride = stride;
  return b;
}

}  // namespace

CascadeShapes cascade_shapes(const ModelConfig& c) {
  c.validate();
  const std::int64_t s = c.cube_size;
  CascadeShapes shapes;
  shapes.input = {c.input_channels, s, s, s};
  shapes.tokens = {c.tokens(), c.token_length()};
  shapes.embedded = {c.tokens(), c.embed_dim};
  shapes.f_att = {c.att_out_channels, s, s, s};
  for (Task t : c.tasks) {
    shapes.fcn_inputs.emplace_back(t, Shape{c.fcn_input_channels(t), s, s, s});
    shapes.logits.emplace_back(t, Shape{c.output_channels(t), s, s, s});
    shapes.penultimate.emplace_back(t, Shape{c.fcn_base_features, s, s, s});
  }
  return shapes;
}

template <typename T>
CascadeModel<T>::CascadeModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Initializer init(seed);
  auto reg = [this](std::string name, const Tensor<T>& t) { params_.push_back({std::move(name), t}); };
  const std::int64_t e = config_.embed_dim;
  const std::int64_t hidden = e * config_.mlp_ratio;
  const double lin_std = 0.02;

  auto& a = attention_;
  a.embed_w = init.normal<T>({config_.token_length(), e}, lin_std);
  a.embed_b = init.constant<T>({e}, 0.0);
  a.pos = init.normal<T>({config_.tokens(), e}, lin_std);
  reg("att.embed_w", a.embed_w);
  reg("att.embed_b", a.embed_b);
  reg("att.pos", a.pos);
  for (int i = 0; i < config_.n_encoders; ++i) {
    EncoderBlockWeights<T> b;
    b.ln1_gamma = init.constant<T>({e}, 1.0);
    b.ln1_beta = init.constant<T>({e}, 0.0);
    b.qkv_w = init.normal<T>({e, 3 * e}, lin_std);
    b.qkv_b = init.constant<T>({3 * e}, 0.0);
    b.proj_w = init.normal<T>({e, e}, lin_std);
    b.proj_b = init.constant<T>({e}, 0.0);
    b.ln2_gamma = init.constant<T>({e}, 1.0);
    b.ln2_beta = init.constant<T>({e}, 0.0);
    b.fc1_w = init.normal<T>({e, hidden}, lin_std);
    b.fc1_b = init.constant<T>({hidden}, 0.0);
    b.fc2_w = init.normal<T>({hidden, e}, lin_std);
    b.fc2_b = init.constant<T>({e}, 0.0);
    const std::string p = "att.block" + std::to_string(i) + ".";
    reg(p + "ln1_gamma", b.ln1_gamma);
    reg(p + "ln1_beta", b.ln1_beta);
    reg(p + "qkv_w", b.qkv_w);
    reg(p + "qkv_b", b.qkv_b);
    reg(p + "proj_w", b.proj_w);
    reg(p + "proj_b", b.proj_b);
    reg(p + "ln2_gamma", b.ln2_gamma);
    reg(p + "ln2_beta", b.ln2_beta);
    reg(p + "fc1_w", b.fc1_w);
    reg(p + "fc1_b", b.fc1_b);
    reg(p + "fc2_w", b.fc2_w);
    reg(p + "fc2_b", b.fc2_b);
    a.blocks.push_back(std::move(b));
  }
  a.norm_gamma = init.constant<T>({e}, 1.0);
  a.norm_beta = init.constant<T>({e}, 0.0);
  a.out_w = init.normal<T>({e, config_.token_out_length()}, lin_std);
  a.out_b = init.constant<T>({config_.token_out_length()}, 0.0);
  reg("att.norm_gamma", a.norm_gamma);
  reg("att.norm_beta", a.norm_beta);
  reg("att.out_w", a.out_w);
  reg("att.out_b", a.out_b);

  for (Task task : config_.tasks) {
    FcnWeights<T>& f = fcns_[static_cast<int>(task)];
    const std::string p = std::string("fcn_") + task_name(task) + ".";
    const int depth = config_.fcn_depth;
    std::int64_t in = config_.fcn_input_channels(task);
    for (int l = 0; l < depth; ++l) {
      const std::int64_t feat = config_.fcn_features(l);
      f.encoder.push_back({make_conv<T>(init, in, feat, l == 0 ? 1 : 2), make_conv<T>(init, feat, feat, 1)});
      in = feat;
      for (int k = 0; k < 2; ++k) {
        const std::string q = p + "enc" + std::to_string(l) + "." + std::to_string(k) + ".";
        reg(q + "kernel", f.encoder[l][k].kernel);
        reg(q + "gamma", f.encoder[l][k].gamma);
        reg(q + "beta", f.encoder[l][k].beta);
      }
    }
    f.upsample.resize(static_cast<std::size_t>(depth > 1 ? depth - 1 : 0));
    f.decoder.resize(f.upsample.size());
    for (int l = depth - 2; l >= 0; --l) {
      const std::int64_t feat = config_.fcn_features(l);
      const std::int64_t below = config_.fcn_features(l + 1);
      f.upsample[l] = init.normal<T>({below, feat, 2, 2, 2}, he_std(below * 8));
      reg(p + "up" + std::to_string(l), f.upsample[l]);
      f.decoder[l] = {make_conv<T>(init, 2 * feat, feat, 1), make_conv<T>(init, feat, feat, 1)};
      for (int k = 0; k < 2; ++k) {
        const std::string q = p + "dec" + std::to_string(l) + "." + std::to_string(k) + ".";
        reg(q + "kernel", f.decoder[l][k].kernel);
        reg(q + "gamma", f.decoder[l][k].gamma);
        reg(q + "beta", f.decoder[l][k].beta);
      }
    }
    const std::int64_t out = config_.output_channels(task);
    f.out_w = init.normal<T>({out, config_.fcn_base_features, 1, 1, 1}, he_std(config_.fcn_base_features));
    f.out_b = init.constant<T>({out}, 0.0);
    reg(p + "out_w", f.out_w);
    reg(p + "out_b", f.out_b);
  }

  w_ = Tensor<T>({config_.w_length()}, T(0), true);
}

template <typename T>
std::int64_t CascadeModel<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

template <typename T>
const FcnWeights<T>& CascadeModel<T>::fcn(Task task) const {
  if (!config_.has_task(task)) throw UsageError(std::string("task not enabled: ") + task_name(task));
  return fcns_[static_cast<int>(task)];
}

template <typename T>
FcnWeights<T>& CascadeModel<T>::fcn(Task task) {
  if (!config_.has_task(task)) throw UsageError(std::string("task not enabled: ") + task_name(task));
  return fcns_[static_cast<int>(task)];
}

template <typename T>
CascadeOutput<T> CascadeModel<T>::forward(const Tensor<T>& x) const {
  const std::int64_t s = config_.cube_size;
  if (x.ndim() != 4 || x.dim(0) != config_.input_channels || x.dim(1) != s || x.dim(2) != s || x.dim(3) != s) {
    throw ShapeError("cascade input " + shape_str(x.shape()) + " does not match config cube [" +
                     std::to_string(config_.input_channels) + "," + std::to_string(s) + "," + std::to_string(s) +
                     "," + std::to_string(s) + "]");
  }
  CascadeOutput<T> out;
  out.f_att = attention_forward(x, attention_, config_);
  std::vector<Tensor<T>> stack{x, out.f_att};
  for (Task task : config_.tasks) {
    FcnOutput<T> r = fcn_forward(ops::concat(stack), fcns_[static_cast<int>(task)]);
    switch (task) {
      case Task::Tissue:
        out.logits_sg = r.logits;
        out.y_sg = ops::softmax_channels(r.logits);
        out.f_sg = r.penultimate;
        break;
      case Task::Tract:
        out.logits_tr = r.logits;
        out.y_tr = ops::sigmoid(r.logits);
        out.f_tr = r.penultimate;
        break;
      case Task::Parcellation:
        out.logits_pc = r.logits;
        out.y_pc = ops::softmax_channels(r.logits);
        break;
    }
    stack.push_back(r.penultimate);
  }
  return out;
}

template <typename T>
template <typename U>
void CascadeModel<T>::copy_values_from(const CascadeModel<U>& other) {
  if (!(other.config() == config_)) throw UsageError("cannot copy weights between models of different configs");
  const auto& src = other.parameters();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i].tensor.mutable_data();
    auto s = src[i].tensor.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(s[k]);
  }
  auto dw = w_.mutable_data();
  auto sw = other.task_weights().data();
  for (std::size_t k = 0; k < dw.size(); ++k) dw[k] = static_cast<T>(sw[k]);
}

template class CascadeModel<float>;
template class CascadeModel<double>;
template void CascadeModel<float>::copy_values_from(const CascadeModel<float>&);
template void CascadeModel<float>::copy_values_from(const CascadeModel<double>&);
template void CascadeModel<double>::copy_values_from(const CascadeModel<float>&);
template void CascadeModel<double>::copy_values_from(const CascadeModel<double>&);

}  // namespace fbd
