#include "rsvp/numerics/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace rsvp::num {

template <typename T>
Parameter<T>::Parameter(std::string name, Shape shape, std::vector<T> init)
    : name_(std::move(name)), tensor_(std::move(shape), std::move(init), true) {
  reset_optimizer_state();
}

template <typename T>
Parameter<T> Parameter<T>::zeros(std::string name, Shape shape) {
  const auto n = numel(shape);
  return Parameter(std::move(name), std::move(shape), std::vector<T>(n, T(0)));
}

template <typename T>
Parameter<T> Parameter<T>::ones(std::string name, Shape shape) {
  const auto n = numel(shape);
  return Parameter(std::move(name), std::move(shape), std::vector<T>(n, T(1)));
}

template <typename T>
Parameter<T> Parameter<T>::normal(std::string name, Shape shape, double stddev, Rng& rng) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal(0.0, stddev));
  return Parameter(std::move(name), std::move(shape), std::move(v));
}

template <typename T>
Parameter<T>::Parameter(const Parameter& other)
    : name_(other.name_),
      tensor_(other.tensor_.defined() ? other.tensor_.clone() : Tensor<T>()),
      m_(other.m_),
      v_(other.v_),
      step_(other.step_) {}

template <typename T>
Parameter<T>& Parameter<T>::operator=(const Parameter& other) {
  if (this != &other) {
    Parameter tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

template <typename T>
void Parameter<T>::reset_optimizer_state() {
  m_.assign(tensor_.size(), T(0));
  v_.assign(tensor_.size(), T(0));
  step_ = 0;
}

template <typename T>
void adamw_step(std::span<Parameter<T>* const> params, const AdamWOptions& opts) {
  for (Parameter<T>* p : params) {
    auto& t = p->tensor();
    if (!t.has_grad()) {
      throw std::logic_error("adamw_step: parameter '" + p->name() + "' has no gradient");
    }
  }
  for (Parameter<T>* p : params) {
    auto& t = p->tensor();
    p->set_step(p->step() + 1);
    const double step = static_cast<double>(p->step());
    const T bc1 = static_cast<T>(1.0 - std::pow(opts.beta1, step));
    const T bc2 = static_cast<T>(1.0 - std::pow(opts.beta2, step));
    const T b1 = static_cast<T>(opts.beta1), b2 = static_cast<T>(opts.beta2);
    const T lr = static_cast<T>(opts.lr), eps = static_cast<T>(opts.eps);
    const T decay = static_cast<T>(opts.lr * opts.weight_decay);
    auto w = t.mutable_data();
    auto g = t.grad();
    auto& m = p->first_moment();
    auto& v = p->second_moment();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T mhat = m[i] / bc1;
      const T vhat = v[i] / bc2;
      w[i] -= decay * w[i];
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template <typename T>
void zero_grad(std::span<Parameter<T>* const> params) {
  for (Parameter<T>* p : params) p->tensor().zero_grad();
}

template <typename T>
double clip_grad_norm(std::span<Parameter<T>* const> params, double max_norm) {
  double sq = 0.0;
  for (Parameter<T>* p : params) {
    if (!p->tensor().has_grad()) continue;
    for (auto g : p->tensor().grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (Parameter<T>* p : params) {
      if (!p->tensor().has_grad()) continue;
      for (auto& g : p->tensor().mutable_grad()) g *= factor;
    }
  }
  return norm;
}

template class Parameter<float>;
template class Parameter<double>;
template void adamw_step<float>(std::span<Parameter<float>* const>, const AdamWOptions&);
template void adamw_step<double>(std::span<Parameter<double>* const>, const AdamWOptions&);
template void zero_grad<float>(std::span<Parameter<float>* const>);
template void zero_grad<double>(std::span<Parameter<double>* const>);
template double clip_grad_norm<float>(std::span<Parameter<float>* const>, double);
template double clip_grad_norm<double>(std::span<Parameter<double>* const>, double);

}  // namespace rsvp::num
