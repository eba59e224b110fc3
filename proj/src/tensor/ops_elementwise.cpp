#include <cmath>
#include <numeric>

#include "fbd/ops.hpp"

namespace fbd::ops {

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T>
std::vector<T>& parent_grad(detail::Node<T>& out, std::size_t i) {
  auto& p = *out.parents[i];
  p.ensure_grad();
  return p.grad;
}

template <typename T, typename F, typename G>
Tensor<T> unary(const Tensor<T>& a, F forward, G derivative) {
  // derivative(x, y) -> dy/dx given input x and output y.
  const auto& x = a.vec();
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = forward(x[i]);
  return Tensor<T>::make_result(a.shape(), std::move(y), {a}, [derivative](detail::Node<T>& out) {
    auto& in = *out.parents[0];
    if (!in.requires_grad) return;
    auto& g = parent_grad(out, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * derivative(in.data[i], out.data[i]);
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> y(a.vec());
  const auto& bv = b.vec();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return Tensor<T>::make_result(a.shape(), std::move(y), {a, b}, [](detail::Node<T>& out) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!out.parents[p]->requires_grad) continue;
      auto& g = parent_grad(out, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> y(a.vec());
  const auto& bv = b.vec();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return Tensor<T>::make_result(a.shape(), std::move(y), {a, b}, [](detail::Node<T>& out) {
    if (out.parents[0]->requires_grad) {
      auto& g = parent_grad(out, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (out.parents[1]->requires_grad) {
      auto& g = parent_grad(out, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= out.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> y(a.vec());
  const auto& bv = b.vec();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return Tensor<T>::make_result(a.shape(), std::move(y), {a, b}, [](detail::Node<T>& out) {
    const auto& av = out.parents[0]->data;
    const auto& bv = out.parents[1]->data;
    if (out.parents[0]->requires_grad) {
      auto& g = parent_grad(out, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * bv[i];
    }
    if (out.parents[1]->requires_grad) {
      auto& g = parent_grad(out, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * av[i];
    }
  });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "div");
  std::vector<T> y(a.vec());
  const auto& bv = b.vec();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= bv[i];
  return Tensor<T>::make_result(a.shape(), std::move(y), {a, b}, [](detail::Node<T>& out) {
    const auto& bv = out.parents[1]->data;
    if (out.parents[0]->requires_grad) {
      auto& g = parent_grad(out, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] / bv[i];
    }
    if (out.parents[1]->requires_grad) {
      auto& g = parent_grad(out, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= out.grad[i] * out.data[i] / bv[i];
    }
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return mul_scalar(a, T(-1));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T negative_slope) {
  return unary(
      a, [negative_slope](T x) { return x > T(0) ? x : negative_slope * x; },
      [negative_slope](T x, T) { return x > T(0) ? T(1) : negative_slope; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary(
      a,
      [](T x) {
        // Branches keep exp() from overflowing for large |x|.
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * T(kInvSqrt2))); },
      [](T x, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(x * T(kInvSqrt2)));
        const T pdf = T(kInvSqrt2Pi) * std::exp(T(-0.5) * x * x);
        return cdf + x * pdf;
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  const auto& x = a.vec();
  T total = std::accumulate(x.begin(), x.end(), T(0));
  return Tensor<T>::make_result(Shape{}, {total}, {a}, [](detail::Node<T>& out) {
    auto& g = parent_grad(out, 0);
    const T go = out.grad[0];
    for (auto& v : g) v += go;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  return mul_scalar(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Tensor<T> channel_sum(const Tensor<T>& a) {
  if (a.ndim() < 1) throw ShapeError("channel_sum requires at least one axis");
  const auto channels = a.dim(0);
  const auto inner = channels ? a.size() / channels : 0;
  const auto& x = a.vec();
  std::vector<T> y(static_cast<std::size_t>(channels), T(0));
  for (std::int64_t c = 0; c < channels; ++c) {
    T s = 0;
    const T* p = x.data() + c * inner;
    for (std::int64_t i = 0; i < inner; ++i) s += p[i];
    y[static_cast<std::size_t>(c)] = s;
  }
  return Tensor<T>::make_result(Shape{channels}, std::move(y), {a}, [inner](detail::Node<T>& out) {
    auto& g = parent_grad(out, 0);
    for (std::size_t c = 0; c < out.grad.size(); ++c) {
      const T go = out.grad[c];
      T* p = g.data() + static_cast<std::int64_t>(c) * inner;
      for (std::int64_t i = 0; i < inner; ++i) p[i] += go;
    }
  });
}

template <typename T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "dot");
  const auto& av = a.vec();
  const auto& bv = b.vec();
  T total = 0;
  for (std::size_t i = 0; i < av.size(); ++i) total += av[i] * bv[i];
  return Tensor<T>::make_result(Shape{}, {total}, {a, b}, [](detail::Node<T>& out) {
    const T go = out.grad[0];
    const auto& av = out.parents[0]->data;
    const auto& bv = out.parents[1]->data;
    if (out.parents[0]->requires_grad) {
      auto& g = parent_grad(out, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go * bv[i];
    }
    if (out.parents[1]->requires_grad) {
      auto& g = parent_grad(out, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go * av[i];
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  return Tensor<T>::make_result(std::move(shape), a.vec(), {a}, [](detail::Node<T>& out) {
    auto& g = parent_grad(out, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
  });
}

#define FBD_INSTANTIATE(T)                                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                        \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                        \
  template Tensor<T> neg(const Tensor<T>&);                                  \
  template Tensor<T> exp(const Tensor<T>&);                                  \
  template Tensor<T> log(const Tensor<T>&);                                  \
  template Tensor<T> square(const Tensor<T>&);                               \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                        \
  template Tensor<T> sigmoid(const Tensor<T>&);                              \
  template Tensor<T> gelu(const Tensor<T>&);                                 \
  template Tensor<T> sum(const Tensor<T>&);                                  \
  template Tensor<T> mean(const Tensor<T>&);                                 \
  template Tensor<T> channel_sum(const Tensor<T>&);                          \
  template Tensor<T> dot(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> reshape(const Tensor<T>&, Shape);

FBD_INSTANTIATE(float)
FBD_INSTANTIATE(double)
#undef FBD_INSTANTIATE

}  // namespace fbd::ops
