#include "fbd/errors.hpp"
#include "fbd/model.hpp"
#include "fbd/ops.hpp"

namespace fbd {

namespace {

template <typename T>
Tensor<T> conv_block(const Tensor<T>& x, const ConvNormWeights<T>& b) {
  Tensor<T> y = ops::conv3d(x, b.kernel, b.stride, 1);
  return ops::leaky_relu(ops::instance_norm(y, b.gamma, b.beta));
}

template <typename T>
Tensor<T> conv_pair(Tensor<T> x, const std::vector<ConvNormWeights<T>>& blocks) {
  for (const auto& b : blocks) x = conv_block(x, b);
  return x;
}

}  // namespace

template <typename T>
FcnOutput<T> fcn_forward(const Tensor<T>& input, const FcnWeights<T>& w) {
  const std::size_t depth = w.encoder.size();
  if (depth == 0) throw ShapeError("FCN has no levels");
  if (input.ndim() != 4) throw ShapeError("FCN input must be [C,D,H,W], got " + shape_str(input.shape()));
  const std::int64_t expected_c = w.encoder[0][0].kernel.dim(1);
  if (input.dim(0) != expected_c) {
    throw ShapeError("FCN expects " + std::to_string(expected_c) + " input channels, got " +
                     std::to_string(input.dim(0)));
  }
  const std::int64_t factor = std::int64_t{1} << (depth - 1);
  for (std::size_t a = 1; a < 4; ++a) {
    if (input.dim(a) % factor != 0) {
      throw ShapeError("spatial extent " + std::to_string(input.dim(a)) + " not divisible by " +
                       std::to_string(factor));
    }
  }

  std::vector<Tensor<T>> skips;
  Tensor<T> h = input;
  for (std::size_t level = 0; level < depth; ++level) {
    h = conv_pair(h, w.encoder[level]);
    skips.push_back(h);
  }
  for (std::size_t l = depth - 1; l-- > 0;) {
    Tensor<T> up = ops::conv_transpose3d(h, w.upsample[l], 2, 0);
    h = conv_pair(ops::concat(std::vector<Tensor<T>>{up, skips[l]}), w.decoder[l]);
  }
  FcnOutput<T> out;
  out.penultimate = h;
  out.logits = ops::add_channel_bias(ops::conv3d(h, w.out_w, 1, 0), w.out_b);
  return out;
}

template FcnOutput<float> fcn_forward(const Tensor<float>&, const FcnWeights<float>&);
template FcnOutput<double> fcn_forward(const Tensor<double>&, const FcnWeights<double>&);

}  // namespace fbd
