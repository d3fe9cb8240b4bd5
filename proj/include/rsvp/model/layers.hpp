#pragma once

#include <string>
#include <vector>

#include "rsvp/numerics/ops.hpp"
#include "rsvp/numerics/optim.hpp"

namespace rsvp::model {

// Dropout state for one forward pass.
struct ForwardContext {
  bool training = false;
  double dropout_p = 0.0;
  num::Rng* rng = nullptr;

  static ForwardContext eval() { return {}; }
  static ForwardContext train(double p, num::Rng& rng) { return {true, p, &rng}; }
};

template <typename T>
num::Tensor<T> apply_dropout(const num::Tensor<T>& x, ForwardContext& ctx) {
  if (!ctx.training || ctx.dropout_p == 0.0) return x;
  return num::dropout(x, ctx.dropout_p, *ctx.rng, true);
}

inline constexpr double kInitStddev = 0.02;

// The static visit(self, f) helpers below take `Self` as either const or
// mutable so one body serves both parameter walks.

template <typename T>
struct Linear {
  num::Parameter<T> weight;  // in x out
  num::Parameter<T> bias;    // out

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, num::Rng& rng)
      : weight(num::Parameter<T>::normal(name + ".weight", {in, out}, kInitStddev, rng)),
        bias(num::Parameter<T>::zeros(name + ".bias", {out})) {}

  num::Tensor<T> operator()(const num::Tensor<T>& x) const {
    return num::add_bias(num::matmul(x, weight.tensor()), bias.tensor());
  }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f(self.weight);
    f(self.bias);
  }
};

template <typename T>
struct LayerNorm {
  num::Parameter<T> gamma;
  num::Parameter<T> beta;

  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t width)
      : gamma(num::Parameter<T>::ones(name + ".gamma", {width})),
        beta(num::Parameter<T>::zeros(name + ".beta", {width})) {}

  num::Tensor<T> operator()(const num::Tensor<T>& x) const {
    return num::layer_norm(x, gamma.tensor(), beta.tensor(), T(1e-12));
  }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f(self.gamma);
    f(self.beta);
  }
};

template <typename T>
struct MultiHeadAttention {
  Linear<T> query, key, value, output;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, std::size_t width, std::size_t n_heads, num::Rng& rng)
      : query(name + ".query", width, width, rng),
        key(name + ".key", width, width, rng),
        value(name + ".value", width, width, rng),
        output(name + ".output", width, width, rng),
        heads(n_heads) {}

  // spec.heads is overwritten with this layer's head count.
  num::Tensor<T> operator()(const num::Tensor<T>& x_query, const num::Tensor<T>& x_kv,
                            num::AttentionSpec spec) const {
    spec.heads = heads;
    return output(num::attention(query(x_query), key(x_kv), value(x_kv), spec));
  }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    Linear<T>::visit(self.query, f);
    Linear<T>::visit(self.key, f);
    Linear<T>::visit(self.value, f);
    Linear<T>::visit(self.output, f);
  }
};

template <typename T>
struct FeedForward {
  Linear<T> in, out;

  FeedForward() = default;
  FeedForward(const std::string& name, std::size_t width, std::size_t hidden, num::Rng& rng)
      : in(name + ".in", width, hidden, rng), out(name + ".out", hidden, width, rng) {}

  num::Tensor<T> operator()(const num::Tensor<T>& x) const { return out(num::gelu(in(x))); }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    Linear<T>::visit(self.in, f);
    Linear<T>::visit(self.out, f);
  }
};

// Swaps a leading `from` in the parameter name for `to`.
template <typename T>
void rename_prefix(num::Parameter<T>& p, const std::string& from, const std::string& to) {
  if (p.name().rfind(from, 0) == 0) p.set_name(to + p.name().substr(from.size()));
}

}  // namespace rsvp::model
