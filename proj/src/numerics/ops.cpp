#include "rsvp/numerics/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "rsvp/error.hpp"

namespace rsvp::num {

namespace {

template <typename T>
using NodeT = detail::Node<T>;
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const Mat<T>>;
template <typename T>
using MMap = Eigen::Map<Mat<T>>;
template <typename T>
using CStrided = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MStrided = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> inputs,
                  std::function<void(NodeT<T>&)> fn) {
  auto node = std::make_shared<NodeT<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (GradMode::enabled()) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto& t : inputs) node->parents.push_back(t.node());
      node->backward_fn = std::move(fn);
    }
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
CMap<T> as_matrix(const NodeT<T>& n) {
  return CMap<T>(n.value.data(), static_cast<Eigen::Index>(n.shape[0]),
                 static_cast<Eigen::Index>(n.shape[1]));
}

template <typename T>
MMap<T> grad_matrix(NodeT<T>& n) {
  return MMap<T>(n.grad.data(), static_cast<Eigen::Index>(n.shape[0]),
                 static_cast<Eigen::Index>(n.shape[1]));
}

template <typename T>
CMap<T> grad_matrix_const(const NodeT<T>& n) {
  return CMap<T>(n.grad.data(), static_cast<Eigen::Index>(n.shape[0]),
                 static_cast<Eigen::Index>(n.shape[1]));
}

// Unary element-wise op with derivative expressed through input x, output y.
template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, F f, D dfdx) {
  std::vector<T> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_op<T>(x.shape(), std::move(out), {x}, [dfdx](NodeT<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      p.grad[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
    }
  });
}

// Strides of the slices along `axis`.
struct AxisLayout {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(shape));
  }
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  if (l.extent == 0) throw DimensionError(std::string(op) + ": empty axis");
  return l;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), n = b.dim(1);
  std::vector<T> out(m * n);
  MMap<T>(out.data(), m, n).noalias() = as_matrix(*a.node()) * as_matrix(*b.node());
  return make_op<T>({m, n}, std::move(out), {a, b}, [](NodeT<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    auto dc = grad_matrix_const(self);
    if (pa.requires_grad) grad_matrix(pa).noalias() += dc * as_matrix(pb).transpose();
    if (pb.requires_grad) grad_matrix(pb).noalias() += as_matrix(pa).transpose() * dc;
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  MMap<T>(out.data(), n, m) = as_matrix(*a.node()).transpose();
  return make_op<T>({n, m}, std::move(out), {a}, [](NodeT<T>& self) {
    auto& p = *self.parents[0];
    grad_matrix(p) += grad_matrix_const(self).transpose();
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_op<T>(std::move(shape), std::move(out), {a}, [](NodeT<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_op<T>(a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_op<T>(a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_op<T>(a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.value[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.value[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return make_op<T>(a.shape(), std::move(out), {a}, [factor](NodeT<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank(x, 2, "add_bias");
  require_rank(bias, 1, "add_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.dim(0) != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  const auto b = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
  return make_op<T>(x.shape(), std::move(out), {x, bias}, [m, n](NodeT<T>& self) {
    auto& px = *self.parents[0];
    auto& pb = *self.parents[1];
    if (px.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) pb.grad[j] += self.grad[i * n + j];
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt_2pi = T(0.39894228040143267794);
  return unary(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-T(0.5) * v * v);
      });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) {
        return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
      });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (auto v : x.data()) s += v;
  return make_op<T>({1}, {s}, {x}, [](NodeT<T>& self) {
    auto& p = *self.parents[0];
    const T g = self.grad[0];
    for (auto& gi : p.grad) gi += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  T s = 0;
  for (auto v : x.data()) s += v;
  const T inv = T(1) / static_cast<T>(x.size());
  return make_op<T>({1}, {s * inv}, {x}, [inv](NodeT<T>& self) {
    auto& p = *self.parents[0];
    const T g = self.grad[0] * inv;
    for (auto& gi : p.grad) gi += g;
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto l = axis_layout(x.shape(), axis, "softmax");
  const auto in = x.data();
  std::vector<T> out(x.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t j = 0; j < l.inner; ++j) {
      const std::size_t base = o * l.extent * l.inner + j;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < l.extent; ++i) mx = std::max(mx, in[base + i * l.inner]);
      T s = 0;
      for (std::size_t i = 0; i < l.extent; ++i) {
        const T e = std::exp(in[base + i * l.inner] - mx);
        out[base + i * l.inner] = e;
        s += e;
      }
      for (std::size_t i = 0; i < l.extent; ++i) out[base + i * l.inner] /= s;
    }
  }
  return make_op<T>(x.shape(), std::move(out), {x}, [l](NodeT<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t j = 0; j < l.inner; ++j) {
        const std::size_t base = o * l.extent * l.inner + j;
        T dot = 0;
        for (std::size_t i = 0; i < l.extent; ++i) {
          const auto k = base + i * l.inner;
          dot += self.grad[k] * self.value[k];
        }
        for (std::size_t i = 0; i < l.extent; ++i) {
          const auto k = base + i * l.inner;
          p.grad[k] += self.value[k] * (self.grad[k] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis) {
  const auto l = axis_layout(x.shape(), axis, "log_softmax");
  const auto in = x.data();
  std::vector<T> out(x.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t j = 0; j < l.inner; ++j) {
      const std::size_t base = o * l.extent * l.inner + j;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < l.extent; ++i) mx = std::max(mx, in[base + i * l.inner]);
      T s = 0;
      for (std::size_t i = 0; i < l.extent; ++i) s += std::exp(in[base + i * l.inner] - mx);
      const T lse = mx + std::log(s);
      for (std::size_t i = 0; i < l.extent; ++i) out[base + i * l.inner] = in[base + i * l.inner] - lse;
    }
  }
  return make_op<T>(x.shape(), std::move(out), {x}, [l](NodeT<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t j = 0; j < l.inner; ++j) {
        const std::size_t base = o * l.extent * l.inner + j;
        T gsum = 0;
        for (std::size_t i = 0; i < l.extent; ++i) gsum += self.grad[base + i * l.inner];
        for (std::size_t i = 0; i < l.extent; ++i) {
          const auto k = base + i * l.inner;
          p.grad[k] += self.grad[k] - std::exp(self.value[k]) * gsum;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    throw DimensionError("layer_norm: affine parameters must have shape [" + std::to_string(n) +
                         "], got " + shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  }
  const auto in = x.data();
  const auto g = gamma.data();
  const auto b = beta.data();
  std::vector<T> xhat(m * n), rstd(m), out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += in[i * n + j];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const T d = in[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<T>(n);
    rstd[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (in[i * n + j] - mu) * rstd[i];
      xhat[i * n + j] = h;
      out[i * n + j] = h * g[j] + b[j];
    }
  }
  return make_op<T>(
      x.shape(), std::move(out), {x, gamma, beta},
      [m, n, xhat = std::move(xhat), rstd = std::move(rstd)](NodeT<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& gv = pg.value;
        for (std::size_t i = 0; i < m; ++i) {
          const T* dy = self.grad.data() + i * n;
          const T* h = xhat.data() + i * n;
          if (pg.requires_grad)
            for (std::size_t j = 0; j < n; ++j) pg.grad[j] += dy[j] * h[j];
          if (pb.requires_grad)
            for (std::size_t j = 0; j < n; ++j) pb.grad[j] += dy[j];
          if (!px.requires_grad) continue;
          T s1 = 0, s2 = 0;
          for (std::size_t j = 0; j < n; ++j) {
            const T dh = dy[j] * gv[j];
            s1 += dh;
            s2 += dh * h[j];
          }
          const T nn = static_cast<T>(n);
          for (std::size_t j = 0; j < n; ++j) {
            const T dh = dy[j] * gv[j];
            px.grad[i * n + j] += rstd[i] * (dh - s1 / nn - h[j] * s2 / nn);
          }
        }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw std::invalid_argument("dropout: probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  const T keep_scale = T(1) / static_cast<T>(1.0 - p);
  std::vector<T> mask(x.size());
  std::vector<T> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() >= p ? keep_scale : T(0);
    out[i] = in[i] * mask[i];
  }
  return make_op<T>(x.shape(), std::move(out), {x}, [mask = std::move(mask)](NodeT<T>& self) {
    auto& px = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i] * mask[i];
  });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw DimensionError("embedding: empty id sequence");
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<T> out(idx.size() * d);
  const auto t = table.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= vocab) {
      throw DimensionError("embedding: id " + std::to_string(idx[r]) + " outside table of " +
                           std::to_string(vocab) + " rows");
    }
    std::copy_n(t.begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d, out.begin() + r * d);
  }
  Shape shape{idx.size(), d};
  return make_op<T>(std::move(shape), std::move(out), {table}, [d, idx = std::move(idx)](NodeT<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t r = 0; r < idx.size(); ++r) {
      T* dst = p.grad.data() + static_cast<std::size_t>(idx[r]) * d;
      const T* src = self.grad.data() + r * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Tensor<T> select_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "select_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (rows.empty()) throw DimensionError("select_rows: no rows requested");
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<T> out(idx.size() * n);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= m) {
      throw DimensionError("select_rows: row " + std::to_string(idx[r]) + " outside " +
                           shape_str(x.shape()));
    }
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * n), n, out.begin() + r * n);
  }
  Shape shape{idx.size(), n};
  return make_op<T>(std::move(shape), std::move(out), {x}, [n, idx = std::move(idx)](NodeT<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) p.grad[idx[r] * n + j] += self.grad[r * n + j];
  });
}

template <typename T>
Tensor<T> pick(const Tensor<T>& x, std::span<const int> cols) {
  require_rank(x, 2, "pick");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (cols.size() != m) {
    throw DimensionError("pick: " + std::to_string(cols.size()) + " indices for " +
                         shape_str(x.shape()));
  }
  std::vector<int> idx(cols.begin(), cols.end());
  std::vector<T> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= n) {
      throw DimensionError("pick: column " + std::to_string(idx[i]) + " outside " +
                           shape_str(x.shape()));
    }
    out[i] = x[i * n + static_cast<std::size_t>(idx[i])];
  }
  return make_op<T>({m}, std::move(out), {x}, [n, idx = std::move(idx)](NodeT<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t i = 0; i < idx.size(); ++i)
      p.grad[i * n + static_cast<std::size_t>(idx[i])] += self.grad[i];
  });
}

template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b, T eps) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine_similarity: lengths differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const std::size_t d = a.size();
  auto ra = reshape(a, {1, d});
  auto rb = reshape(b, {1, d});
  return reshape(cosine_matrix(ra, rb, eps), {1});
}

template <typename T>
Tensor<T> cosine_matrix(const Tensor<T>& a, const Tensor<T>& b, T eps) {
  require_rank(a, 2, "cosine_matrix");
  require_rank(b, 2, "cosine_matrix");
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("cosine_matrix: embedding widths differ: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  if (!(eps > T(0))) throw std::invalid_argument("cosine_matrix: eps must be positive");
  const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  const auto A = as_matrix(*a.node());
  const auto B = as_matrix(*b.node());
  Eigen::Matrix<T, Eigen::Dynamic, 1> na = A.rowwise().norm();
  Eigen::Matrix<T, Eigen::Dynamic, 1> nb = B.rowwise().norm();
  Mat<T> dots = A * B.transpose();
  std::vector<T> out(n * m);
  std::vector<T> denom(n * m);
  std::vector<std::uint8_t> clamped(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const T prod = na[i] * nb[j];
      clamped[i * m + j] = prod < eps;
      denom[i * m + j] = std::max(prod, eps);
      out[i * m + j] = dots(i, j) / denom[i * m + j];
    }
  }
  std::vector<T> na2(n), nb2(m);
  for (std::size_t i = 0; i < n; ++i) na2[i] = na[i] * na[i];
  for (std::size_t j = 0; j < m; ++j) nb2[j] = nb[j] * nb[j];
  return make_op<T>(
      {n, m}, std::move(out), {a, b},
      [n, m, d, denom = std::move(denom), clamped = std::move(clamped), na2 = std::move(na2),
       nb2 = std::move(nb2)](NodeT<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t i = 0; i < n; ++i) {
          const T* ai = pa.value.data() + i * d;
          for (std::size_t j = 0; j < m; ++j) {
            const T g = self.grad[i * m + j];
            if (g == T(0)) continue;
            const T* bj = pb.value.data() + j * d;
            const T den = denom[i * m + j];
            const T s = self.value[i * m + j];
            // A clamped denominator is constant; only the dot product varies.
            const bool flat = clamped[i * m + j] != 0;
            const T ca = flat ? T(0) : s / na2[i];
            const T cb = flat ? T(0) : s / nb2[j];
            if (pa.requires_grad) {
              T* ga = pa.grad.data() + i * d;
              for (std::size_t k = 0; k < d; ++k) ga[k] += g * (bj[k] / den - ca * ai[k]);
            }
            if (pb.requires_grad) {
              T* gb = pb.grad.data() + j * d;
              for (std::size_t k = 0; k < d; ++k) gb[k] += g * (ai[k] / den - cb * bj[k]);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    const AttentionSpec& spec) {
  require_rank(q, 2, "attention");
  require_rank(k, 2, "attention");
  require_rank(v, 2, "attention");
  const std::size_t B = spec.batch, Lq = spec.query_len, Lk = spec.key_len, H = spec.heads;
  const std::size_t D = q.dim(1);
  if (H == 0 || D % H != 0) {
    throw DimensionError("attention: width " + std::to_string(D) + " not divisible by " +
                         std::to_string(H) + " heads");
  }
  if (q.dim(0) != B * Lq || k.dim(0) != B * Lk || v.dim(0) != B * Lk || k.dim(1) != D ||
      v.dim(1) != D) {
    throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()) + " inconsistent with batch " +
                         std::to_string(B) + ", lengths " + std::to_string(Lq) + "/" +
                         std::to_string(Lk));
  }
  if (!spec.key_valid.empty() && spec.key_valid.size() != B * Lk) {
    throw DimensionError("attention: key mask has " + std::to_string(spec.key_valid.size()) +
                         " entries, expected " + std::to_string(B * Lk));
  }
  const std::size_t dh = D / H;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<std::uint8_t> valid(spec.key_valid.begin(), spec.key_valid.end());
  if (valid.empty()) valid.assign(B * Lk, 1);
  const bool causal = spec.causal;

  std::vector<T> probs(B * H * Lq * Lk, T(0));
  std::vector<T> out(B * Lq * D, T(0));
  const T* qd = q.data().data();
  const T* kd = k.data().data();
  const T* vd = v.data().data();
  const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(D));
  Mat<T> scores(Lq, Lk);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      CStrided<T> Q(qd + b * Lq * D + h * dh, Lq, dh, stride);
      CStrided<T> K(kd + b * Lk * D + h * dh, Lk, dh, stride);
      CStrided<T> V(vd + b * Lk * D + h * dh, Lk, dh, stride);
      scores.noalias() = Q * K.transpose();
      MMap<T> P(probs.data() + (b * H + h) * Lq * Lk, Lq, Lk);
      for (std::size_t i = 0; i < Lq; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < Lk; ++j) {
          const bool visible = valid[b * Lk + j] && !(causal && j > i);
          if (visible) mx = std::max(mx, scores(i, j) * scale_factor);
        }
        if (mx == -std::numeric_limits<T>::infinity()) continue;
        T s = 0;
        for (std::size_t j = 0; j < Lk; ++j) {
          const bool visible = valid[b * Lk + j] && !(causal && j > i);
          const T e = visible ? std::exp(scores(i, j) * scale_factor - mx) : T(0);
          P(i, j) = e;
          s += e;
        }
        for (std::size_t j = 0; j < Lk; ++j) P(i, j) /= s;
      }
      MStrided<T> O(out.data() + b * Lq * D + h * dh, Lq, dh, stride);
      O.noalias() = P * V;
    }
  }
  return make_op<T>(
      {B * Lq, D}, std::move(out), {q, k, v},
      [B, Lq, Lk, H, D, dh, scale_factor, probs = std::move(probs)](NodeT<T>& self) {
        auto& pq = *self.parents[0];
        auto& pk = *self.parents[1];
        auto& pv = *self.parents[2];
        const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(D));
        Mat<T> dP(Lq, Lk), dS(Lq, Lk);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < H; ++h) {
            const std::size_t qoff = b * Lq * D + h * dh;
            const std::size_t koff = b * Lk * D + h * dh;
            CStrided<T> dO(self.grad.data() + qoff, Lq, dh, stride);
            CStrided<T> Q(pq.value.data() + qoff, Lq, dh, stride);
            CStrided<T> K(pk.value.data() + koff, Lk, dh, stride);
            CStrided<T> V(pv.value.data() + koff, Lk, dh, stride);
            CMap<T> P(probs.data() + (b * H + h) * Lq * Lk, Lq, Lk);
            if (pv.requires_grad) {
              MStrided<T> dV(pv.grad.data() + koff, Lk, dh, stride);
              dV.noalias() += P.transpose() * dO;
            }
            if (!pq.requires_grad && !pk.requires_grad) continue;
            dP.noalias() = dO * V.transpose();
            for (std::size_t i = 0; i < Lq; ++i) {
              T dot = 0;
              for (std::size_t j = 0; j < Lk; ++j) dot += dP(i, j) * P(i, j);
              for (std::size_t j = 0; j < Lk; ++j) dS(i, j) = P(i, j) * (dP(i, j) - dot) * scale_factor;
            }
            if (pq.requires_grad) {
              MStrided<T> dQ(pq.grad.data() + qoff, Lq, dh, stride);
              dQ.noalias() += dS * K;
            }
            if (pk.requires_grad) {
              MStrided<T> dK(pk.grad.data() + koff, Lk, dh, stride);
              dK.noalias() += dS.transpose() * Q;
            }
          }
        }
      });
}

#define RSVP_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> transpose(const Tensor<T>&);                                            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                       \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> tanh(const Tensor<T>&);                                                 \
  template Tensor<T> gelu(const Tensor<T>&);                                                 \
  template Tensor<T> softplus(const Tensor<T>&);                                             \
  template Tensor<T> log(const Tensor<T>&);                                                  \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                 \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> log_softmax(const Tensor<T>&, std::size_t);                             \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);    \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng&, bool);                          \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const int>);                      \
  template Tensor<T> select_rows(const Tensor<T>&, std::span<const std::size_t>);            \
  template Tensor<T> pick(const Tensor<T>&, std::span<const int>);                           \
  template Tensor<T> cosine_similarity(const Tensor<T>&, const Tensor<T>&, T);               \
  template Tensor<T> cosine_matrix(const Tensor<T>&, const Tensor<T>&, T);                   \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                               const AttentionSpec&);

RSVP_INSTANTIATE_OPS(float)
RSVP_INSTANTIATE_OPS(double)

#undef RSVP_INSTANTIATE_OPS

}  // namespace rsvp::num
