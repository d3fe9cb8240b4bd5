#include <cmath>
#include <cstring>

#include "doctest.h"
#include "rsvp/error.hpp"
#include "rsvp/numerics/ops.hpp"
#include "rsvp/numerics/optim.hpp"
#include "support/gradcheck.hpp"

using namespace rsvp;
using num::Tensor;
using testing::check_gradients;
using testing::probe;
using testing::random_tensor;

TEST_CASE("matmul identity and mismatch") {
  Tensor<float> eye({2, 2}, {1, 0, 0, 1});
  Tensor<float> m({2, 2}, {3, 4, 5, 6});
  auto out = num::matmul(eye, m);
  CHECK(std::vector<float>(out.data().begin(), out.data().end()) == std::vector<float>{3, 4, 5, 6});

  auto a = Tensor<float>::zeros({2, 3});
  auto b = Tensor<float>::zeros({4, 2});
  try {
    num::matmul(a, b);
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradients in 32-bit against central differences") {
  num::Rng rng(11);
  auto a = random_tensor<float>({3, 4}, rng);
  auto b = random_tensor<float>({4, 2}, rng);
  auto res = check_gradients<float>({a, b}, [&] { return num::sum(num::matmul(a, b)); }, 1e-2, 1e-3);
  CHECK(res.worst_relative_error < 1e-3);
}

TEST_CASE("softmax cases") {
  auto u = num::softmax(Tensor<double>({3}, {0, 0, 0}), 0);
  for (auto v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  auto big = num::softmax(Tensor<float>({2}, {1000.f, 0.f}), 0);
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] == doctest::Approx(0.0));

  num::Rng rng(3);
  auto x = random_tensor<double>({5}, rng, 3.0, false);
  auto y = num::softmax(x, 0);
  long double s = 0;
  for (auto v : x.data()) s += std::exp(static_cast<long double>(v));
  for (std::size_t i = 0; i < 5; ++i) {
    const long double ref = std::exp(static_cast<long double>(x[i])) / s;
    CHECK(std::abs(static_cast<long double>(y[i]) - ref) < 1e-6L);
  }

  CHECK_THROWS_AS(num::softmax(x, 1), DimensionError);
}

TEST_CASE("softmax slices sum to one along any axis") {
  num::Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor<float>({3, 4, 5}, rng, 4.0, false);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      auto y = num::softmax(x, axis);
      for (auto v : y.data()) CHECK(v > 0.f);
      const std::size_t stride = axis == 0 ? 20 : axis == 1 ? 5 : 1;
      const std::size_t extent = x.dim(axis);
      for (std::size_t start = 0; start < 60; ++start) {
        // only visit the first element of each slice
        if ((start / stride) % extent != 0) continue;
        double s = 0;
        for (std::size_t i = 0; i < extent; ++i) s += y[start + i * stride];
        CHECK(std::abs(s - 1.0) < 1e-6);
      }
    }
  }
}

TEST_CASE("cosine similarity cases") {
  auto sim = [](std::vector<double> a, std::vector<double> b) {
    const auto n = a.size();
    return num::cosine_similarity(Tensor<double>({n}, a), Tensor<double>({n}, b)).item();
  };
  CHECK(sim({1, 0}, {0, 1}) == 0.0);
  CHECK(sim({2, 2}, {1, 1}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sim({0, 0}, {1, 1}) == 0.0);
  CHECK_THROWS_AS(sim({1, 2}, {1, 2, 3}), DimensionError);

  num::Rng rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    auto a = random_tensor<double>({8}, rng, 1.0, false);
    auto b = random_tensor<double>({8}, rng, 1.0, false);
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < 8; ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    const double s = num::cosine_similarity(a, b).item();
    CHECK(std::abs(s - dot / std::sqrt(na * nb)) < 1e-6);
    CHECK(s <= 1.0);
    CHECK(s >= -1.0);
    const double c = 0.01 + 50.0 * rng.uniform();
    CHECK(std::abs(num::cosine_similarity(num::scale(a, c), b).item() - s) < 1e-6);
    CHECK(num::cosine_similarity(a, a).item() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("dropout semantics") {
  num::Rng rng(23);
  auto x = random_tensor<float>({100, 100}, rng, 1.0, false);
  auto same = num::dropout(x, 0.0, rng, true);
  CHECK(std::memcmp(same.data().data(), x.data().data(), x.size() * sizeof(float)) == 0);
  auto eval = num::dropout(x, 0.7, rng, false);
  CHECK(std::memcmp(eval.data().data(), x.data().data(), x.size() * sizeof(float)) == 0);

  auto ones = Tensor<float>::full({10000}, 1.f);
  auto dropped = num::dropout(ones, 0.5, rng, true);
  std::size_t zeros = 0;
  for (auto v : dropped.data()) {
    if (v == 0.f) {
      ++zeros;
    } else {
      CHECK(v == 2.f);
    }
  }
  const double frac = static_cast<double>(zeros) / 10000.0;
  CHECK(frac > 0.48);
  CHECK(frac < 0.52);

  CHECK_THROWS_AS(num::dropout(x, 1.0, rng, true), std::invalid_argument);
  CHECK_THROWS_AS(num::dropout(x, -0.1, rng, true), std::invalid_argument);

  // Distinct substreams give distinct views of the same input.
  auto r1 = rng.substream("a");
  auto r2 = rng.substream("b");
  auto v1 = num::dropout(ones, 0.1, r1, true);
  auto v2 = num::dropout(ones, 0.1, r2, true);
  CHECK(std::memcmp(v1.data().data(), v2.data().data(), v1.size() * sizeof(float)) != 0);
}

TEST_CASE("backward contracts") {
  auto w = Tensor<double>({4}, {1, 2, 3, 4}, true);
  num::backward(num::sum(w));
  for (auto g : w.grad()) CHECK(g == 1.0);

  auto v = Tensor<double>({3}, {0.5, -1, 2}, true);
  auto loss = num::sum(num::mul(v, v));
  num::backward(loss);
  std::vector<double> first(v.grad().begin(), v.grad().end());
  num::backward(loss);
  for (std::size_t i = 0; i < 3; ++i) CHECK(v.grad()[i] == 2.0 * first[i]);
  v.zero_grad();
  for (auto g : v.grad()) CHECK(g == 0.0);

  CHECK_THROWS_AS(num::backward(num::mul(v, v)), DimensionError);
}

TEST_CASE("no-grad mode records nothing") {
  auto w = Tensor<double>({2}, {1, 2}, true);
  num::NoGradGuard guard;
  auto y = num::sum(num::mul(w, w));
  CHECK_FALSE(y.requires_grad());
  CHECK(y.is_leaf());
}

TEST_CASE("adamw closed-form steps") {
  using P = num::Parameter<double>;
  num::AdamWOptions opts;
  opts.lr = 2e-5;
  opts.weight_decay = 0.0;

  P w("w", {1}, {1.0});
  w.tensor().mutable_grad()[0] = 1.0;
  std::vector<P*> ps{&w};
  num::adamw_step<double>(ps, opts);
  // Bias-corrected first step moves by lr * g / (|g| + eps).
  CHECK(w.tensor()[0] == doctest::Approx(1.0 - 2e-5 / (1.0 + 1e-8)).epsilon(1e-14));
  CHECK(w.step() == 1);
  CHECK(w.tensor().grad()[0] == 1.0);

  P z("z", {3}, {0.3, -0.2, 1.5});
  z.tensor().zero_grad();
  std::vector<P*> zs{&z};
  num::adamw_step<double>(zs, opts);
  CHECK(z.tensor()[0] == 0.3);
  CHECK(z.tensor()[1] == -0.2);
  CHECK(z.tensor()[2] == 1.5);

  opts.weight_decay = 0.1;
  opts.lr = 1e-2;
  num::adamw_step<double>(zs, opts);
  CHECK(z.tensor()[2] == doctest::Approx(1.5 - 1e-2 * 0.1 * 1.5).epsilon(1e-14));

  P missing("decoder.lm_head.weight", {2}, {1, 1});
  std::vector<P*> ms{&missing};
  try {
    num::adamw_step<double>(ms, opts);
    FAIL("expected error");
  } catch (const std::logic_error& e) {
    CHECK(std::string(e.what()).find("decoder.lm_head.weight") != std::string::npos);
  }
  for (auto v : z.second_moment()) CHECK(v >= 0.0);
}

TEST_CASE("parameter copies are independent") {
  num::Rng rng(1);
  auto p = num::Parameter<float>::normal("p", {3, 3}, 0.1, rng);
  auto q = p;
  q.tensor().mutable_data()[0] += 1.f;
  CHECK(p.tensor()[0] != q.tensor()[0]);
}

TEST_CASE("clip_grad_norm bounds the joint norm") {
  num::Parameter<double> a("a", {2}, {0, 0});
  a.tensor().mutable_grad()[0] = 3.0;
  a.tensor().mutable_grad()[1] = 4.0;
  std::vector<num::Parameter<double>*> ps{&a};
  CHECK(num::clip_grad_norm<double>(ps, 1.0) == doctest::Approx(5.0));
  CHECK(a.tensor().grad()[0] == doctest::Approx(0.6));
}

TEST_CASE("rng substreams are independent of parent draws") {
  num::Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) a.next_u64();
  CHECK(a.substream("dropout").next_u64() == b.substream("dropout").next_u64());
  CHECK(a.substream("dropout").next_u64() != b.substream("shuffle").next_u64());
}

#include "support/op_grad_suite.hpp"

TEST_CASE("every differentiable op passes the finite-difference oracle in 64-bit") {
  for (const auto& r : testing::run_op_gradient_suite(10)) {
    CAPTURE(r.op);
    CHECK(r.instances >= 10);
    CHECK(r.worst <= 1e-5);
  }
}

TEST_CASE("ops are deterministic") {
  auto run = [] {
    num::Rng rng(99);
    auto x = random_tensor<float>({4, 8}, rng);
    auto g = Tensor<float>::full({8}, 1.f);
    auto b = Tensor<float>::zeros({8});
    auto y = num::layer_norm(num::dropout(num::gelu(x), 0.2, rng, true), g, b);
    return std::vector<float>(y.data().begin(), y.data().end());
  };
  auto a = run();
  auto b = run();
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}
