#include <algorithm>
#include <cmath>

#include "fbd/ops.hpp"

namespace fbd::ops {

namespace {

template <typename T>
std::vector<T>& parent_grad(detail::Node<T>& out, std::size_t i) {
  auto& p = *out.parents[i];
  p.ensure_grad();
  return p.grad;
}

}  // namespace

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape shape = parts[0].shape();
  if (shape.empty()) throw ShapeError("concat requires at least one axis");
  std::int64_t lead = 0;
  for (const auto& p : parts) {
    if (p.ndim() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      throw ShapeError("concat: trailing shape mismatch " + shape_str(shape) + " vs " + shape_str(p.shape()));
    }
    lead += p.dim(0);
  }
  shape[0] = lead;
  std::vector<T> y;
  y.reserve(static_cast<std::size_t>(numel(shape)));
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(y.size());
    y.insert(y.end(), p.vec().begin(), p.vec().end());
  }
  return Tensor<T>::make_result(std::move(shape), std::move(y), parts,
                                [offsets](detail::Node<T>& out) {
                                  for (std::size_t k = 0; k < out.parents.size(); ++k) {
                                    if (!out.parents[k]->requires_grad) continue;
                                    auto& g = parent_grad(out, k);
                                    const T* src = out.grad.data() + offsets[k];
                                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
                                  }
                                });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::int64_t start, std::int64_t length) {
  if (a.ndim() < 1 || start < 0 || length < 0 || start + length > a.dim(0)) {
    throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") of " +
                     shape_str(a.shape()));
  }
  Shape shape = a.shape();
  const std::int64_t inner = a.dim(0) ? a.size() / a.dim(0) : 0;
  shape[0] = length;
  const auto begin = a.vec().begin() + start * inner;
  std::vector<T> y(begin, begin + length * inner);
  const std::size_t offset = static_cast<std::size_t>(start * inner);
  return Tensor<T>::make_result(std::move(shape), std::move(y), {a}, [offset](detail::Node<T>& out) {
    auto& g = parent_grad(out, 0);
    for (std::size_t i = 0; i < out.grad.size(); ++i) g[offset + i] += out.grad[i];
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::int64_t start, std::int64_t length) {
  if (a.ndim() != 2 || start < 0 || length < 0 || start + length > a.dim(1)) {
    throw ShapeError("slice_cols on " + shape_str(a.shape()));
  }
  const auto rows = a.dim(0);
  const auto cols = a.dim(1);
  std::vector<T> y(static_cast<std::size_t>(rows * length));
  const auto& x = a.vec();
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy_n(x.begin() + r * cols + start, length, y.begin() + r * length);
  }
  return Tensor<T>::make_result(Shape{rows, length}, std::move(y), {a},
                                [rows, cols, start, length](detail::Node<T>& out) {
                                  auto& g = parent_grad(out, 0);
                                  for (std::int64_t r = 0; r < rows; ++r) {
                                    for (std::int64_t c = 0; c < length; ++c) {
                                      g[r * cols + start + c] += out.grad[r * length + c];
                                    }
                                  }
                                });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of zero tensors");
  const auto rows = parts[0].dim(0);
  std::int64_t cols = 0;
  std::vector<std::int64_t> starts;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.dim(0) != rows) throw ShapeError("concat_cols: row mismatch");
    starts.push_back(cols);
    cols += p.dim(1);
  }
  std::vector<T> y(static_cast<std::size_t>(rows * cols));
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto w = parts[k].dim(1);
    const auto& x = parts[k].vec();
    for (std::int64_t r = 0; r < rows; ++r) {
      std::copy_n(x.begin() + r * w, w, y.begin() + r * cols + starts[k]);
    }
  }
  return Tensor<T>::make_result(Shape{rows, cols}, std::move(y), parts,
                                [rows, cols, starts](detail::Node<T>& out) {
                                  for (std::size_t k = 0; k < out.parents.size(); ++k) {
                                    if (!out.parents[k]->requires_grad) continue;
                                    auto& g = parent_grad(out, k);
                                    const auto w = out.parents[k]->shape[1];
                                    for (std::int64_t r = 0; r < rows; ++r) {
                                      for (std::int64_t c = 0; c < w; ++c) {
                                        g[r * w + c] += out.grad[r * cols + starts[k] + c];
                                      }
                                    }
                                  }
                                });
}

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& a) {
  if (a.ndim() < 1 || a.dim(0) < 1) throw ShapeError("softmax_channels requires C >= 1");
  const auto channels = a.dim(0);
  const auto voxels = a.size() / channels;
  const auto& x = a.vec();
  for (const T v : x) {
    if (!std::isfinite(v)) throw DataError("softmax_channels: non-finite input");
  }
  std::vector<T> y(x.size());
  for (std::int64_t v = 0; v < voxels; ++v) {
    T peak = x[v];
    for (std::int64_t c = 1; c < channels; ++c) peak = std::max(peak, x[c * voxels + v]);
    T total = 0;
    for (std::int64_t c = 0; c < channels; ++c) {
      const T e = std::exp(x[c * voxels + v] - peak);
      y[c * voxels + v] = e;
      total += e;
    }
    const T inv = T(1) / total;
    for (std::int64_t c = 0; c < channels; ++c) y[c * voxels + v] *= inv;
  }
  return Tensor<T>::make_result(a.shape(), std::move(y), {a}, [channels, voxels](detail::Node<T>& out) {
    auto& g = parent_grad(out, 0);
    for (std::int64_t v = 0; v < voxels; ++v) {
      T inner = 0;
      for (std::int64_t c = 0; c < channels; ++c) inner += out.grad[c * voxels + v] * out.data[c * voxels + v];
      for (std::int64_t c = 0; c < channels; ++c) {
        const auto i = c * voxels + v;
        g[i] += out.data[i] * (out.grad[i] - inner);
      }
    }
  });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  if (a.ndim() != 2) throw ShapeError("softmax_rows requires a 2-D tensor");
  const auto rows = a.dim(0);
  const auto cols = a.dim(1);
  const auto& x = a.vec();
  std::vector<T> y(x.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* in = x.data() + r * cols;
    T* o = y.data() + r * cols;
    const T peak = *std::max_element(in, in + cols);
    T total = 0;
    for (std::int64_t c = 0; c < cols; ++c) total += (o[c] = std::exp(in[c] - peak));
    const T inv = T(1) / total;
    for (std::int64_t c = 0; c < cols; ++c) o[c] *= inv;
  }
  return Tensor<T>::make_result(a.shape(), std::move(y), {a}, [rows, cols](detail::Node<T>& out) {
    auto& g = parent_grad(out, 0);
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* go = out.grad.data() + r * cols;
      const T* yo = out.data.data() + r * cols;
      T inner = 0;
      for (std::int64_t c = 0; c < cols; ++c) inner += go[c] * yo[c];
      T* gi = g.data() + r * cols;
      for (std::int64_t c = 0; c < cols; ++c) gi[c] += yo[c] * (go[c] - inner);
    }
  });
}

template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& a, const Tensor<T>& bias) {
  if (a.ndim() != 2 || bias.size() != a.dim(1)) {
    throw ShapeError("add_row_bias: " + shape_str(a.shape()) + " + " + shape_str(bias.shape()));
  }
  const auto rows = a.dim(0);
  const auto cols = a.dim(1);
  std::vector<T> y(a.vec());
  const auto& b = bias.vec();
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) y[r * cols + c] += b[c];
  }
  return Tensor<T>::make_result(a.shape(), std::move(y), {a, bias}, [rows, cols](detail::Node<T>& out) {
    if (out.parents[0]->requires_grad) {
      auto& g = parent_grad(out, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (out.parents[1]->requires_grad) {
      auto& g = parent_grad(out, 1);
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < cols; ++c) g[c] += out.grad[r * cols + c];
      }
    }
  });
}

template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& a, const Tensor<T>& bias) {
  if (a.ndim() < 1 || bias.size() != a.dim(0)) {
    throw ShapeError("add_channel_bias: " + shape_str(a.shape()) + " + " + shape_str(bias.shape()));
  }
  const auto channels = a.dim(0);
  const auto inner = a.size() / std::max<std::int64_t>(channels, 1);
  std::vector<T> y(a.vec());
  const auto& b = bias.vec();
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t i = 0; i < inner; ++i) y[c * inner + i] += b[c];
  }
  return Tensor<T>::make_result(a.shape(), std::move(y), {a, bias}, [channels, inner](detail::Node<T>& out) {
    if (out.parents[0]->requires_grad) {
      auto& g = parent_grad(out, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (out.parents[1]->requires_grad) {
      auto& g = parent_grad(out, 1);
      for (std::int64_t c = 0; c < channels; ++c) {
        T s = 0;
        for (std::int64_t i = 0; i < inner; ++i) s += out.grad[c * inner + i];
        g[c] += s;
      }
    }
  });
}

namespace {

// Index map between the [C,D,H,W] volume and the [N, C*p^3] token matrix.
// Entry k of the returned table holds the volume offset of token element k.
std::vector<std::int64_t> patch_index(std::int64_t channels, std::int64_t depth, std::int64_t height,
                                      std::int64_t width, int patch) {
  const std::int64_t p = patch;
  const auto gd = depth / p, gh = height / p, gw = width / p;
  const auto token_len = channels * p * p * p;
  std::vector<std::int64_t> index(static_cast<std::size_t>(gd * gh * gw * token_len));
  std::size_t k = 0;
  for (std::int64_t bz = 0; bz < gd; ++bz)
    for (std::int64_t by = 0; by < gh; ++by)
      for (std::int64_t bx = 0; bx < gw; ++bx)
        for (std::int64_t c = 0; c < channels; ++c)
          for (std::int64_t z = 0; z < p; ++z)
            for (std::int64_t y = 0; y < p; ++y)
              for (std::int64_t x = 0; x < p; ++x) {
                index[k++] = ((c * depth + bz * p + z) * height + by * p + y) * width + bx * p + x;
              }
  return index;
}

void check_patch_grid(std::int64_t depth, std::int64_t height, std::int64_t width, int patch) {
  if (patch < 1 || depth % patch || height % patch || width % patch) {
    throw ShapeError("spatial extent (" + std::to_string(depth) + "," + std::to_string(height) + "," +
                     std::to_string(width) + ") is not divisible by patch size " + std::to_string(patch));
  }
}

}  // namespace

template <typename T>
Tensor<T> patchify(const Tensor<T>& a, int patch) {
  if (a.ndim() != 4) throw ShapeError("patchify expects [C,D,H,W], got " + shape_str(a.shape()));
  check_patch_grid(a.dim(1), a.dim(2), a.dim(3), patch);
  auto index = patch_index(a.dim(0), a.dim(1), a.dim(2), a.dim(3), patch);
  const std::int64_t token_len = a.dim(0) * patch * patch * patch;
  const std::int64_t tokens = a.size() / token_len;
  std::vector<T> y(index.size());
  const auto& x = a.vec();
  for (std::size_t k = 0; k < index.size(); ++k) y[k] = x[index[k]];
  return Tensor<T>::make_result(Shape{tokens, token_len}, std::move(y), {a},
                                [index = std::move(index)](detail::Node<T>& out) {
                                  auto& g = parent_grad(out, 0);
                                  for (std::size_t k = 0; k < index.size(); ++k) g[index[k]] += out.grad[k];
                                });
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, std::int64_t channels, std::int64_t depth,
                     std::int64_t height, std::int64_t width, int patch) {
  check_patch_grid(depth, height, width, patch);
  const Shape shape{channels, depth, height, width};
  const std::int64_t token_len = channels * patch * patch * patch;
  if (tokens.ndim() != 2 || tokens.dim(1) != token_len || tokens.size() != numel(shape)) {
    throw ShapeError("unpatchify: tokens " + shape_str(tokens.shape()) + " do not tile " + shape_str(shape));
  }
  auto index = patch_index(channels, depth, height, width, patch);
  std::vector<T> y(index.size());
  const auto& x = tokens.vec();
  for (std::size_t k = 0; k < index.size(); ++k) y[index[k]] = x[k];
  return Tensor<T>::make_result(shape, std::move(y), {tokens},
                                [index = std::move(index)](detail::Node<T>& out) {
                                  auto& g = parent_grad(out, 0);
                                  for (std::size_t k = 0; k < index.size(); ++k) g[k] += out.grad[index[k]];
                                });
}

#define FBD_INSTANTIATE(T)                                                                     \
  template Tensor<T> concat(const std::vector<Tensor<T>>&);                                    \
  template Tensor<T> slice(const Tensor<T>&, std::int64_t, std::int64_t);                      \
  template Tensor<T> slice_cols(const Tensor<T>&, std::int64_t, std::int64_t);                 \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                               \
  template Tensor<T> softmax_channels(const Tensor<T>&);                                       \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                           \
  template Tensor<T> add_row_bias(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> add_channel_bias(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> patchify(const Tensor<T>&, int);                                          \
  template Tensor<T> unpatchify(const Tensor<T>&, std::int64_t, std::int64_t, std::int64_t,    \
                                std::int64_t, int);

FBD_INSTANTIATE(float)
FBD_INSTANTIATE(double)
#undef FBD_INSTANTIATE

}  // namespace fbd::ops
