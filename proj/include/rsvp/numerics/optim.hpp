#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rsvp/numerics/rng.hpp"
#include "rsvp/numerics/tensor.hpp"

namespace rsvp::num {

// Trainable leaf plus AdamW moments. Copies are deep: a copied Parameter owns
// fresh storage and shares nothing with its source.
template <typename T>
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Shape shape, std::vector<T> init);

  static Parameter zeros(std::string name, Shape shape);
  static Parameter ones(std::string name, Shape shape);
  static Parameter normal(std::string name, Shape shape, double stddev, Rng& rng);

  Parameter(const Parameter& other);
  Parameter& operator=(const Parameter& other);
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  const std::string& name() const { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }
  const Tensor<T>& tensor() const { return tensor_; }
  Tensor<T>& tensor() { return tensor_; }
  const Shape& shape() const { return tensor_.shape(); }
  std::size_t size() const { return tensor_.size(); }

  std::vector<T>& first_moment() { return m_; }
  const std::vector<T>& first_moment() const { return m_; }
  std::vector<T>& second_moment() { return v_; }
  const std::vector<T>& second_moment() const { return v_; }
  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t step) { step_ = step; }

  void reset_optimizer_state();

 private:
  std::string name_;
  Tensor<T> tensor_;
  std::vector<T> m_;
  std::vector<T> v_;
  std::uint64_t step_ = 0;
};

struct AdamWOptions {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay (Loshchilov & Hutter). Grads are read, not cleared.
template <typename T>
void adamw_step(std::span<Parameter<T>* const> params, const AdamWOptions& opts);

template <typename T>
void zero_grad(std::span<Parameter<T>* const> params);

// Rescales all grads so their joint L2 norm is at most max_norm. Returns the
// norm before clipping.
template <typename T>
double clip_grad_norm(std::span<Parameter<T>* const> params, double max_norm);

}  // namespace rsvp::num
