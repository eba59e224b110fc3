#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

#include "fbd/ops.hpp"
#include "conv_direct.hpp"

namespace fbd::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <typename T>
using StridedCols = Eigen::Map<ColMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedCols = Eigen::Map<const ColMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
std::vector<T>& parent_grad(detail::Node<T>& out, std::size_t i) {
  auto& p = *out.parents[i];
  p.ensure_grad();
  return p.grad;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a, bool transpose_b) {
  if (a.ndim() != 2 || b.ndim() != 2) throw ShapeError("matmul expects 2-D operands");
  const auto m = transpose_a ? a.dim(1) : a.dim(0);
  const auto ka = transpose_a ? a.dim(0) : a.dim(1);
  const auto kb = transpose_b ? b.dim(1) : b.dim(0);
  const auto n = transpose_b ? b.dim(0) : b.dim(1);
  if (ka != kb) {
    throw ShapeError("matmul inner dimension mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<T> y(static_cast<std::size_t>(m * n));
  Eigen::Map<const RowMat<T>> am(a.vec().data(), a.dim(0), a.dim(1));
  Eigen::Map<const RowMat<T>> bm(b.vec().data(), b.dim(0), b.dim(1));
  Eigen::Map<RowMat<T>> ym(y.data(), m, n);
  if (!transpose_a && !transpose_b) ym.noalias() = am * bm;
  else if (transpose_a && !transpose_b) ym.noalias() = am.transpose() * bm;
  else if (!transpose_a && transpose_b) ym.noalias() = am * bm.transpose();
  else ym.noalias() = am.transpose() * bm.transpose();

  return Tensor<T>::make_result(Shape{m, n}, std::move(y), {a, b},
                                [transpose_a, transpose_b, m, n](detail::Node<T>& out) {
    auto& an = *out.parents[0];
    auto& bn = *out.parents[1];
    Eigen::Map<const RowMat<T>> am(an.data.data(), an.shape[0], an.shape[1]);
    Eigen::Map<const RowMat<T>> bm(bn.data.data(), bn.shape[0], bn.shape[1]);
    Eigen::Map<const RowMat<T>> gy(out.grad.data(), m, n);
    if (an.requires_grad) {
      auto& g = parent_grad(out, 0);
      Eigen::Map<RowMat<T>> ga(g.data(), an.shape[0], an.shape[1]);
      // d(op(A)) = dY op(B)^T
      if (!transpose_a) {
        if (!transpose_b) ga.noalias() += gy * bm.transpose();
        else ga.noalias() += gy * bm;
      } else {
        if (!transpose_b) ga.noalias() += bm * gy.transpose();
        else ga.noalias() += bm.transpose() * gy.transpose();
      }
    }
    if (bn.requires_grad) {
      auto& g = parent_grad(out, 1);
      Eigen::Map<RowMat<T>> gb(g.data(), bn.shape[0], bn.shape[1]);
      // d(op(B)) = op(A)^T dY
      if (!transpose_b) {
        if (!transpose_a) gb.noalias() += am.transpose() * gy;
        else gb.noalias() += am * gy;
      } else {
        if (!transpose_a) gb.noalias() += gy.transpose() * am;
        else gb.noalias() += gy.transpose() * am.transpose();
      }
    }
  });
}

namespace {

// Normalized activations and per-group 1/sigma kept for the backward pass.
template <typename T>
struct NormSaved {
  std::vector<T> xhat;
  std::vector<T> inv_std;
};

}  // namespace

template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (a.ndim() != 2 || gamma.size() != a.dim(1) || beta.size() != a.dim(1)) {
    throw ShapeError("layer_norm_rows: bad shapes " + shape_str(a.shape()));
  }
  const auto rows = a.dim(0);
  const auto cols = a.dim(1);
  const auto& x = a.vec();
  const auto& gm = gamma.vec();
  const auto& bt = beta.vec();
  auto saved = std::make_shared<NormSaved<T>>();
  saved->xhat.resize(x.size());
  saved->inv_std.resize(static_cast<std::size_t>(rows));
  std::vector<T> y(x.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* in = x.data() + r * cols;
    T mu = 0;
    for (std::int64_t c = 0; c < cols; ++c) mu += in[c];
    mu /= static_cast<T>(cols);
    T var = 0;
    for (std::int64_t c = 0; c < cols; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<T>(cols);
    const T inv = T(1) / std::sqrt(var + eps);
    saved->inv_std[r] = inv;
    for (std::int64_t c = 0; c < cols; ++c) {
      const T h = (in[c] - mu) * inv;
      saved->xhat[r * cols + c] = h;
      y[r * cols + c] = gm[c] * h + bt[c];
    }
  }
  return Tensor<T>::make_result(a.shape(), std::move(y), {a, gamma, beta},
                                [saved, rows, cols](detail::Node<T>& out) {
    const auto& gm = out.parents[1]->data;
    if (out.parents[1]->requires_grad || out.parents[2]->requires_grad) {
      auto& gg = parent_grad(out, 1);
      auto& gb = parent_grad(out, 2);
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < cols; ++c) {
          gg[c] += out.grad[r * cols + c] * saved->xhat[r * cols + c];
          gb[c] += out.grad[r * cols + c];
        }
      }
    }
    if (out.parents[0]->requires_grad) {
      auto& gx = parent_grad(out, 0);
      for (std::int64_t r = 0; r < rows; ++r) {
        T mean_d = 0, mean_dx = 0;
        for (std::int64_t c = 0; c < cols; ++c) {
          const T d = out.grad[r * cols + c] * gm[c];
          mean_d += d;
          mean_dx += d * saved->xhat[r * cols + c];
        }
        mean_d /= static_cast<T>(cols);
        mean_dx /= static_cast<T>(cols);
        for (std::int64_t c = 0; c < cols; ++c) {
          const T d = out.grad[r * cols + c] * gm[c];
          gx[r * cols + c] += saved->inv_std[r] * (d - mean_d - saved->xhat[r * cols + c] * mean_dx);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (a.ndim() < 2 || gamma.size() != a.dim(0) || beta.size() != a.dim(0)) {
    throw ShapeError("instance_norm: bad shapes " + shape_str(a.shape()));
  }
  const auto channels = a.dim(0);
  const auto count = a.size() / channels;
  const auto& x = a.vec();
  const auto& gm = gamma.vec();
  const auto& bt = beta.vec();
  auto saved = std::make_shared<NormSaved<T>>();
  saved->xhat.resize(x.size());
  saved->inv_std.resize(static_cast<std::size_t>(channels));
  std::vector<T> y(x.size());
  for (std::int64_t c = 0; c < channels; ++c) {
    const T* in = x.data() + c * count;
    // Accumulate moments in double; float32 sums over 32^3 voxels drift.
    double mu = 0;
    for (std::int64_t i = 0; i < count; ++i) mu += in[i];
    mu /= static_cast<double>(count);
    double var = 0;
    for (std::int64_t i = 0; i < count; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= static_cast<double>(count);
    const T inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    const T mu_t = static_cast<T>(mu);
    saved->inv_std[c] = inv;
    T* h = saved->xhat.data() + c * count;
    T* o = y.data() + c * count;
    for (std::int64_t i = 0; i < count; ++i) {
      h[i] = (in[i] - mu_t) * inv;
      o[i] = gm[c] * h[i] + bt[c];
    }
  }
  return Tensor<T>::make_result(a.shape(), std::move(y), {a, gamma, beta},
                                [saved, channels, count](detail::Node<T>& out) {
    const auto& gm = out.parents[1]->data;
    const bool want_affine = out.parents[1]->requires_grad || out.parents[2]->requires_grad;
    const bool want_x = out.parents[0]->requires_grad;
    std::vector<T>* gg = want_affine ? &parent_grad(out, 1) : nullptr;
    std::vector<T>* gb = want_affine ? &parent_grad(out, 2) : nullptr;
    std::vector<T>* gx = want_x ? &parent_grad(out, 0) : nullptr;
    for (std::int64_t c = 0; c < channels; ++c) {
      const T* go = out.grad.data() + c * count;
      const T* h = saved->xhat.data() + c * count;
      double sum_g = 0, sum_gh = 0;
      for (std::int64_t i = 0; i < count; ++i) {
        sum_g += go[i];
        sum_gh += static_cast<double>(go[i]) * h[i];
      }
      if (want_affine) {
        (*gg)[c] += static_cast<T>(sum_gh);
        (*gb)[c] += static_cast<T>(sum_g);
      }
      if (want_x) {
        const T mean_d = static_cast<T>(gm[c] * sum_g / static_cast<double>(count));
        const T mean_dh = static_cast<T>(gm[c] * sum_gh / static_cast<double>(count));
        const T scale = gm[c] * saved->inv_std[c];
        const T inv = saved->inv_std[c];
        T* gi = gx->data() + c * count;
        for (std::int64_t i = 0; i < count; ++i) {
          gi[i] += scale * go[i] - inv * (mean_d + h[i] * mean_dh);
        }
      }
    }
  });
}

namespace {

// Geometry of a strided 3-D correlation between an "image" volume
// [Cimg, Di, Hi, Wi] and a "grid" volume [Cgrid, Dg, Hg, Wg] with
// grid(o, z, y, x) = sum W[o, c, a, b, e] * image(c, z*s - p + a, ...).
// conv3d maps image -> grid; conv_transpose3d maps grid -> image.
struct ConvGeometry {
  std::int64_t img_channels, di, hi, wi;
  std::int64_t grid_channels, dg, hg, wg;
  int k, stride, pad;

  std::int64_t taps() const { return static_cast<std::int64_t>(k) * k * k; }
  std::int64_t col_width() const { return img_channels * taps(); }
  std::int64_t grid_plane() const { return hg * wg; }
  std::int64_t img_volume() const { return di * hi * wi; }
  std::int64_t grid_volume() const { return dg * hg * wg; }

  // Number of grid depth slices per im2col chunk (col buffer ~ 1M entries).
  std::int64_t slab() const {
    const std::int64_t per_slice = grid_plane() * col_width();
    return std::clamp<std::int64_t>((std::int64_t{1} << 20) / std::max<std::int64_t>(per_slice, 1), 1, dg);
  }
};

// col is column-major [rows = voxels of grid slices z0..z1, cols = col_width].
template <typename T>
void im2col(const ConvGeometry& g, const T* image, std::int64_t z0, std::int64_t z1, T* col) {
  const std::int64_t rows = (z1 - z0) * g.grid_plane();
  const int k = g.k;
  for (std::int64_t c = 0; c < g.img_channels; ++c) {
    const T* img_c = image + c * g.img_volume();
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b)
        for (int e = 0; e < k; ++e) {
          const std::int64_t kk = ((c * k + a) * k + b) * k + e;
          T* dst = col + kk * rows;
          // Valid x range: 0 <= x*s - p + e < wi.
          std::int64_t x_lo = 0;
          while (x_lo < g.wg && x_lo * g.stride - g.pad + e < 0) ++x_lo;
          std::int64_t x_hi = g.wg;
          while (x_hi > x_lo && (x_hi - 1) * g.stride - g.pad + e >= g.wi) --x_hi;
          for (std::int64_t z = z0; z < z1; ++z) {
            const std::int64_t iz = z * g.stride - g.pad + a;
            for (std::int64_t y = 0; y < g.hg; ++y) {
              T* row = dst + ((z - z0) * g.hg + y) * g.wg;
              const std::int64_t iy = y * g.stride - g.pad + b;
              if (iz < 0 || iz >= g.di || iy < 0 || iy >= g.hi) {
                std::fill(row, row + g.wg, T(0));
                continue;
              }
              const T* src = img_c + (iz * g.hi + iy) * g.wi;
              std::fill(row, row + x_lo, T(0));
              if (g.stride == 1) {
                const std::int64_t base = x_lo - g.pad + e;
                std::copy(src + base, src + base + (x_hi - x_lo), row + x_lo);
              } else {
                for (std::int64_t x = x_lo; x < x_hi; ++x) row[x] = src[x * g.stride - g.pad + e];
              }
              std::fill(row + x_hi, row + g.wg, T(0));
            }
          }
        }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, std::int64_t z0, std::int64_t z1, T* image) {
  const std::int64_t rows = (z1 - z0) * g.grid_plane();
  const int k = g.k;
  for (std::int64_t c = 0; c < g.img_channels; ++c) {
    T* img_c = image + c * g.img_volume();
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b)
        for (int e = 0; e < k; ++e) {
          const std::int64_t kk = ((c * k + a) * k + b) * k + e;
          const T* src = col + kk * rows;
          std::int64_t x_lo = 0;
          while (x_lo < g.wg && x_lo * g.stride - g.pad + e < 0) ++x_lo;
          std::int64_t x_hi = g.wg;
          while (x_hi > x_lo && (x_hi - 1) * g.stride - g.pad + e >= g.wi) --x_hi;
          for (std::int64_t z = z0; z < z1; ++z) {
            const std::int64_t iz = z * g.stride - g.pad + a;
            if (iz < 0 || iz >= g.di) continue;
            for (std::int64_t y = 0; y < g.hg; ++y) {
              const std::int64_t iy = y * g.stride - g.pad + b;
              if (iy < 0 || iy >= g.hi) continue;
              const T* row = src + ((z - z0) * g.hg + y) * g.wg;
              T* dst = img_c + (iz * g.hi + iy) * g.wi;
              if (g.stride == 1) {
                T* d = dst - g.pad + e;
                for (std::int64_t x = x_lo; x < x_hi; ++x) d[x] += row[x];
              } else {
                for (std::int64_t x = x_lo; x < x_hi; ++x) dst[x * g.stride - g.pad + e] += row[x];
              }
            }
          }
        }
  }
}

// grid = correlate(image, W); W is [Cgrid, col_width] row-major.
template <typename T>
void grid_from_image(const ConvGeometry& g, const T* image, const T* weight, T* grid) {
  const std::int64_t slab = g.slab();
  std::vector<T> col;
  Eigen::Map<const ColMat<T>> wm(weight, g.col_width(), g.grid_channels);
  for (std::int64_t z0 = 0; z0 < g.dg; z0 += slab) {
    const std::int64_t z1 = std::min(g.dg, z0 + slab);
    const std::int64_t rows = (z1 - z0) * g.grid_plane();
    col.resize(static_cast<std::size_t>(rows * g.col_width()));
    im2col(g, image, z0, z1, col.data());
    Eigen::Map<const ColMat<T>> cm(col.data(), rows, g.col_width());
    StridedCols<T> om(grid + z0 * g.grid_plane(), rows, g.grid_channels, Eigen::OuterStride<>(g.grid_volume()));
    om.noalias() = cm * wm;
  }
}

// image += correlate^T(grid, W).
template <typename T>
void image_from_grid_add(const ConvGeometry& g, const T* grid, const T* weight, T* image) {
  const std::int64_t slab = g.slab();
  std::vector<T> col;
  Eigen::Map<const ColMat<T>> wm(weight, g.col_width(), g.grid_channels);
  for (std::int64_t z0 = 0; z0 < g.dg; z0 += slab) {
    const std::int64_t z1 = std::min(g.dg, z0 + slab);
    const std::int64_t rows = (z1 - z0) * g.grid_plane();
    col.resize(static_cast<std::size_t>(rows * g.col_width()));
    ConstStridedCols<T> gm(grid + z0 * g.grid_plane(), rows, g.grid_channels, Eigen::OuterStride<>(g.grid_volume()));
    Eigen::Map<ColMat<T>> cm(col.data(), rows, g.col_width());
    cm.noalias() = gm * wm.transpose();
    col2im_add(g, col.data(), z0, z1, image);
  }
}

// dW += im2col(image)^T * grid, accumulated chunk by chunk in a fixed order.
template <typename T>
void weight_grad_add(const ConvGeometry& g, const T* image, const T* grid, T* weight_grad) {
  const std::int64_t slab = g.slab();
  std::vector<T> col;
  ColMat<T> partial(g.col_width(), g.grid_channels);
  Eigen::Map<ColMat<T>> gw(weight_grad, g.col_width(), g.grid_channels);
  for (std::int64_t z0 = 0; z0 < g.dg; z0 += slab) {
    const std::int64_t z1 = std::min(g.dg, z0 + slab);
    const std::int64_t rows = (z1 - z0) * g.grid_plane();
    col.resize(static_cast<std::size_t>(rows * g.col_width()));
    im2col(g, image, z0, z1, col.data());
    Eigen::Map<const ColMat<T>> cm(col.data(), rows, g.col_width());
    ConstStridedCols<T> gm(grid + z0 * g.grid_plane(), rows, g.grid_channels, Eigen::OuterStride<>(g.grid_volume()));
    partial.noalias() = cm.transpose() * gm;
    gw += partial;
  }
}

direct::Dims direct_dims(const ConvGeometry& g) {
  return {g.img_channels, g.di, g.hi, g.wi, g.grid_channels, g.dg, g.hg, g.wg, g.pad};
}

// Unit-stride k=1/k=3 correlations take the direct kernel; the rest go through im2col.
template <typename T>
void correlate(const ConvGeometry& g, const T* image, const T* weight, T* grid) {
  if (g.stride == 1 && g.k == 3) {
    direct::forward<T, 3>(direct_dims(g), image, weight, grid);
  } else if (g.stride == 1 && g.k == 1) {
    direct::forward<T, 1>(direct_dims(g), image, weight, grid);
  } else {
    grid_from_image(g, image, weight, grid);
  }
}

std::int64_t conv_extent(std::int64_t in, int k, int stride, int pad) {
  const std::int64_t span = in + 2 * pad - k;
  if (span < 0) return 0;
  return span / stride + 1;
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, int stride, int padding) {
  if (input.ndim() != 4 || kernel.ndim() != 5) {
    throw ShapeError("conv3d expects input [C,D,H,W] and kernel [Co,Ci,k,k,k], got " +
                     shape_str(input.shape()) + " and " + shape_str(kernel.shape()));
  }
  const int k = static_cast<int>(kernel.dim(2));
  if (kernel.dim(3) != k || kernel.dim(4) != k || k % 2 == 0) {
    throw ShapeError("conv3d requires a cubic kernel of odd size");
  }
  if (kernel.dim(1) != input.dim(0)) {
    throw ShapeError("conv3d channel mismatch: input has " + std::to_string(input.dim(0)) +
                     " channels, kernel expects " + std::to_string(kernel.dim(1)));
  }
  if (stride < 1 || padding < 0 || k < 1) throw ShapeError("conv3d: invalid stride/padding/kernel");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
                 kernel.dim(0), conv_extent(input.dim(1), k, stride, padding),
                 conv_extent(input.dim(2), k, stride, padding), conv_extent(input.dim(3), k, stride, padding),
                 k, stride, padding};
  if (g.dg < 1 || g.hg < 1 || g.wg < 1) {
    throw ShapeError("conv3d: non-positive output extent for input " + shape_str(input.shape()));
  }
  std::vector<T> y(static_cast<std::size_t>(g.grid_channels * g.grid_volume()));
  correlate(g, input.vec().data(), kernel.vec().data(), y.data());
  return Tensor<T>::make_result(Shape{g.grid_channels, g.dg, g.hg, g.wg}, std::move(y), {input, kernel},
                                [g](detail::Node<T>& out) {
    auto& in = *out.parents[0];
    auto& w = *out.parents[1];
    if (w.requires_grad) weight_grad_add(g, in.data.data(), out.grad.data(), parent_grad(out, 1).data());
    if (!in.requires_grad) return;
    if (g.stride == 1 && g.pad <= g.k - 1) {
      // Unit stride: the input gradient is a correlation of the output
      // gradient with the flipped, channel-transposed kernel.
      const ConvGeometry gt{g.grid_channels, g.dg, g.hg, g.wg, g.img_channels, g.di, g.hi, g.wi,
                            g.k, 1, g.k - 1 - g.pad};
      const std::int64_t taps = g.taps();
      std::vector<T> flipped(w.data.size());
      for (std::int64_t co = 0; co < g.grid_channels; ++co)
        for (std::int64_t ci = 0; ci < g.img_channels; ++ci)
          for (std::int64_t t = 0; t < taps; ++t)
            flipped[static_cast<std::size_t>((ci * g.grid_channels + co) * taps + (taps - 1 - t))] =
                w.data[static_cast<std::size_t>((co * g.img_channels + ci) * taps + t)];
      auto& gi = parent_grad(out, 0);
      std::vector<T> tmp(gi.size());
      correlate(gt, out.grad.data(), flipped.data(), tmp.data());
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += tmp[i];
    } else {
      image_from_grid_add(g, out.grad.data(), w.data.data(), parent_grad(out, 0).data());
    }
  });
}

template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& input, const Tensor<T>& kernel, int stride, int padding,
                           int output_padding) {
  if (input.ndim() != 4 || kernel.ndim() != 5) {
    throw ShapeError("conv_transpose3d expects input [C,D,H,W] and kernel [Ci,Co,k,k,k]");
  }
  const int k = static_cast<int>(kernel.dim(2));
  if (kernel.dim(3) != k || kernel.dim(4) != k) throw ShapeError("conv_transpose3d requires a cubic kernel");
  if (kernel.dim(0) != input.dim(0)) throw ShapeError("conv_transpose3d channel mismatch");
  if (stride < 1 || padding < 0 || output_padding < 0 || output_padding >= stride) {
    throw ShapeError("conv_transpose3d: invalid stride/padding/output_padding");
  }
  auto extent = [&](std::int64_t n) { return (n - 1) * stride - 2 * padding + k + output_padding; };
  ConvGeometry g{kernel.dim(1), extent(input.dim(1)), extent(input.dim(2)), extent(input.dim(3)),
                 input.dim(0), input.dim(1), input.dim(2), input.dim(3),
                 k, stride, padding};
  if (g.di < 1 || g.hi < 1 || g.wi < 1) throw ShapeError("conv_transpose3d: non-positive output extent");
  std::vector<T> y(static_cast<std::size_t>(g.img_channels * g.img_volume()), T(0));
  image_from_grid_add(g, input.vec().data(), kernel.vec().data(), y.data());
  return Tensor<T>::make_result(Shape{g.img_channels, g.di, g.hi, g.wi}, std::move(y), {input, kernel},
                                [g](detail::Node<T>& out) {
    auto& in = *out.parents[0];
    auto& w = *out.parents[1];
    if (w.requires_grad) weight_grad_add(g, out.grad.data(), in.data.data(), parent_grad(out, 1).data());
    if (in.requires_grad) {
      auto& gi = parent_grad(out, 0);
      std::vector<T> tmp(gi.size());
      grid_from_image(g, out.grad.data(), w.data.data(), tmp.data());
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += tmp[i];
    }
  });
}

#define FBD_INSTANTIATE(T)                                                                 \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, bool, bool);               \
  template Tensor<T> layer_norm_rows(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T); \
  template Tensor<T> instance_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);   \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, int, int);                  \
  template Tensor<T> conv_transpose3d(const Tensor<T>&, const Tensor<T>&, int, int, int);

FBD_INSTANTIATE(float)
FBD_INSTANTIATE(double)
#undef FBD_INSTANTIATE

}  // namespace fbd::ops
