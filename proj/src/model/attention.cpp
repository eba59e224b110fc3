#include <cmath>

#include "fbd/errors.hpp"
#include "fbd/model.hpp"
#include "fbd/ops.hpp"

namespace fbd {

namespace {

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return ops::add_row_bias(ops::matmul(x, w), b);
}

template <typename T>
Tensor<T> self_attention(const Tensor<T>& h, const EncoderBlockWeights<T>& blk, int n_heads) {
  const std::int64_t e = blk.proj_w.dim(0);
  const std::int64_t dh = e / n_heads;
  const T scale = T(1) / std::sqrt(T(dh));
  Tensor<T> qkv = linear(h, blk.qkv_w, blk.qkv_b);
  std::vector<Tensor<T>> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int i = 0; i < n_heads; ++i) {
    Tensor<T> q = ops::slice_cols(qkv, i * dh, dh);
    Tensor<T> k = ops::slice_cols(qkv, e + i * dh, dh);
    Tensor<T> v = ops::slice_cols(qkv, 2 * e + i * dh, dh);
    Tensor<T> scores = ops::mul_scalar(ops::matmul(q, k, false, true), scale);
    heads.push_back(ops::matmul(ops::softmax_rows(scores), v));
  }
  Tensor<T> merged = n_heads == 1 ? heads.front() : ops::concat_cols(heads);
  return linear(merged, blk.proj_w, blk.proj_b);
}

}  // namespace

template <typename T>
Tensor<T> attention_forward(const Tensor<T>& x, const AttentionWeights<T>& w, const ModelConfig& config) {
  if (x.ndim() != 4 || x.dim(0) != config.input_channels) {
    throw ShapeError("attention input must be [" + std::to_string(config.input_channels) + ",S,S,S], got " +
                     shape_str(x.shape()));
  }
  const int p = config.patch_size;
  for (std::size_t a = 1; a < 4; ++a) {
    if (x.dim(a) % p != 0) {
      throw ShapeError("spatial extent " + std::to_string(x.dim(a)) + " not divisible by patch size " +
                       std::to_string(p));
    }
  }
  Tensor<T> tokens = ops::patchify(x, p);
  if (tokens.dim(0) != w.pos.dim(0)) {
    throw ShapeError("token count " + std::to_string(tokens.dim(0)) + " does not match positional table " +
                     std::to_string(w.pos.dim(0)));
  }
  Tensor<T> h = ops::add(linear(tokens, w.embed_w, w.embed_b), w.pos);
  for (const auto& blk : w.blocks) {
    h = ops::add(h, self_attention(ops::layer_norm_rows(h, blk.ln1_gamma, blk.ln1_beta), blk, config.n_heads));
    Tensor<T> m = ops::layer_norm_rows(h, blk.ln2_gamma, blk.ln2_beta);
    m = linear(ops::gelu(linear(m, blk.fc1_w, blk.fc1_b)), blk.fc2_w, blk.fc2_b);
    h = ops::add(h, m);
  }
  h = ops::layer_norm_rows(h, w.norm_gamma, w.norm_beta);
  Tensor<T> out = linear(h, w.out_w, w.out_b);
  return ops::unpatchify(out, config.att_out_channels, x.dim(1), x.dim(2), x.dim(3), p);
}

template Tensor<float> attention_forward(const Tensor<float>&, const AttentionWeights<float>&, const ModelConfig&);
template Tensor<double> attention_forward(const Tensor<double>&, const AttentionWeights<double>&,
                                          const ModelConfig&);

}  // namespace fbd
