#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "mua/autodiff.hpp"
#include "mua/rng.hpp"

using namespace mua;
using namespace mua::nn;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Central finite differences of a scalar-valued graph builder with respect to
// every entry of every listed input tensor, compared against one analytic
// backward pass.
void check_gradients(const std::function<Value(const std::vector<Value>&)>& build,
                     std::vector<Tensor> inputs, double step = 1e-5, double tol = 1e-6) {
  std::vector<Value> vars;
  vars.reserve(inputs.size());
  for (auto& t : inputs) vars.push_back(variable(t));
  Value loss = build(vars);
  REQUIRE(loss->val.numel() == 1);
  backward(loss);

  for (std::size_t vi = 0; vi < vars.size(); ++vi) {
    Tensor& base = inputs[vi];
    for (std::size_t i = 0; i < base.numel(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Value> probe;
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          Tensor t = inputs[k];
          if (k == vi) t[i] += delta;
          probe.push_back(constant(std::move(t)));
        }
        // constants carry no graph; rebuild with one variable to reuse the op path
        probe[vi]->requires_grad = false;
        return build(probe)->val[0];
      };
      double fd = (eval(step) - eval(-step)) / (2.0 * step);
      double an = vars[vi]->grad.numel() ? vars[vi]->grad[i] : 0.0;
      double denom = std::max({std::fabs(fd), std::fabs(an), 1.0});
      INFO("input ", vi, " coord ", i, " analytic=", an, " fd=", fd);
      CHECK(std::fabs(an - fd) / denom < tol);
    }
  }
}

}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
  Rng rng(11);
  Tensor a = random_tensor({2, 5}, rng);
  Tensor b = random_tensor({2, 5}, rng);

  check_gradients([](const std::vector<Value>& v) { return sum_all(add(v[0], v[1])); }, {a, b});
  check_gradients([](const std::vector<Value>& v) { return sum_all(sub(v[0], v[1])); }, {a, b});
  check_gradients([](const std::vector<Value>& v) { return sum_all(mul(v[0], v[1])); }, {a, b});
  check_gradients([](const std::vector<Value>& v) { return mean_all(scale(v[0], -2.5)); }, {a});
  check_gradients([](const std::vector<Value>& v) { return mean_all(add_scalar(v[0], 0.3)); },
                  {a});
  check_gradients([](const std::vector<Value>& v) { return sum_all(tanh_(v[0])); }, {a});
  check_gradients([](const std::vector<Value>& v) { return sum_all(sigmoid_(v[0])); }, {a});
  check_gradients(
      [](const std::vector<Value>& v) { return sum_all(leaky_relu(v[0], 0.1)); }, {a});
}

TEST_CASE("clamp passes gradient only strictly inside the interval") {
  Tensor t = Tensor::from({4}, {-0.5, 0.2, 0.8, 1.5});
  auto v = variable(t);
  backward(sum_all(clamp_(v, 0.0, 1.0)));
  CHECK(v->grad[0] == 0.0);
  CHECK(v->grad[1] == 1.0);
  CHECK(v->grad[2] == 1.0);
  CHECK(v->grad[3] == 0.0);
}

TEST_CASE("log gradient") {
  Rng rng(12);
  Tensor a = random_tensor({3, 3}, rng, 0.2, 2.0);
  check_gradients([](const std::vector<Value>& v) { return sum_all(log_(v[0])); }, {a});
}

TEST_CASE("conv2d forward matches a hand-computed 1-channel case") {
  // 2x2 image, 2x2 kernel, stride 1, pad 0 -> single output value
  Tensor x = Tensor::from({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor w = Tensor::from({1, 1, 2, 2}, {0.5, -1.0, 0.25, 2.0});
  Tensor b = Tensor::from({1}, {0.125});
  auto out = conv2d(constant(x), constant(w), constant(b), 1, 0);
  CHECK(out->val.numel() == 1);
  CHECK(out->val[0] == doctest::Approx(0.5 - 2.0 + 0.75 + 8.0 + 0.125).epsilon(1e-12));
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(13);
  for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 1}, std::pair{1, 0}}) {
    Tensor x = random_tensor({2, 3, 6, 4}, rng);
    Tensor w = random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5);
    Tensor b = random_tensor({4}, rng, -0.2, 0.2);
    check_gradients(
        [stride, pad](const std::vector<Value>& v) {
          return mean_all(tanh_(conv2d(v[0], v[1], v[2], stride, pad)));
        },
        {x, w, b}, 1e-5, 1e-5);
  }
}

TEST_CASE("pooling and upsampling gradients") {
  Rng rng(14);
  Tensor x = random_tensor({2, 3, 4, 6}, rng);
  check_gradients([](const std::vector<Value>& v) { return sum_all(tanh_(avg_pool2(v[0]))); },
                  {x});
  check_gradients([](const std::vector<Value>& v) { return sum_all(tanh_(upsample2(v[0]))); },
                  {x});
  check_gradients(
      [](const std::vector<Value>& v) { return sum_all(tanh_(global_avg_pool(v[0]))); }, {x});
}

TEST_CASE("instance norm gradients") {
  Rng rng(15);
  Tensor x = random_tensor({2, 3, 4, 4}, rng);
  Tensor g = random_tensor({3}, rng, 0.5, 1.5);
  Tensor b = random_tensor({3}, rng, -0.3, 0.3);
  check_gradients(
      [](const std::vector<Value>& v) {
        return mean_all(tanh_(instance_norm(v[0], v[1], v[2])));
      },
      {x, g, b}, 1e-5, 1e-5);
}

TEST_CASE("linear gradients and forward") {
  Rng rng(16);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor w = random_tensor({2, 4}, rng);
  Tensor b = random_tensor({2}, rng);
  check_gradients(
      [](const std::vector<Value>& v) { return mean_all(tanh_(linear(v[0], v[1], v[2]))); },
      {x, w, b});
}

TEST_CASE("concat gradients for 2-d and 4-d") {
  Rng rng(17);
  Tensor a2 = random_tensor({2, 3}, rng), b2 = random_tensor({2, 5}, rng);
  check_gradients([](const std::vector<Value>& v) { return sum_all(tanh_(concat_c(v[0], v[1]))); },
                  {a2, b2});
  Tensor a4 = random_tensor({2, 2, 3, 3}, rng), b4 = random_tensor({2, 4, 3, 3}, rng);
  check_gradients([](const std::vector<Value>& v) { return sum_all(tanh_(concat_c(v[0], v[1]))); },
                  {a4, b4});
}

TEST_CASE("l2 normalization: unit rows, gradient, zero guard") {
  Rng rng(18);
  Tensor x = random_tensor({3, 6}, rng, 0.2, 1.0);
  auto v = constant(x);
  auto y = l2_normalize_rows(v);
  for (int n = 0; n < 3; ++n) {
    double s = 0.0;
    for (int d = 0; d < 6; ++d) s += y->val[y->val.idx2(n, d)] * y->val[y->val.idx2(n, d)];
    CHECK(std::fabs(std::sqrt(s) - 1.0) < 1e-12);
  }
  check_gradients(
      [](const std::vector<Value>& v) { return sum_all(tanh_(l2_normalize_rows(v[0]))); }, {x});

  Tensor z({2, 4});
  z[z.idx2(1, 2)] = 0.5;
  auto guarded = l2_normalize_rows(constant(z));
  CHECK(guarded->aux_i == 1);
  for (int d = 0; d < 4; ++d) CHECK(guarded->val[guarded->val.idx2(0, d)] == 0.0);
}

TEST_CASE("rowwise distance value and gradient") {
  Tensor a = Tensor::from({1, 2}, {0.0, 0.0});
  Tensor b = Tensor::from({1, 2}, {3.0, 4.0});
  auto d = rowwise_distance(constant(a), constant(b));
  CHECK(d->val[0] == doctest::Approx(5.0).epsilon(1e-12));

  Rng rng(19);
  Tensor u = random_tensor({4, 5}, rng);
  Tensor v = random_tensor({4, 5}, rng);
  check_gradients(
      [](const std::vector<Value>& w) { return mean_all(rowwise_distance(w[0], w[1])); }, {u, v});
}

TEST_CASE("softmax cross entropy value and gradient") {
  Tensor logits = Tensor::from({2, 3}, {1.0, 2.0, 0.5, -1.0, 0.0, 3.0});
  std::vector<int> labels{1, 2};
  auto ce = softmax_cross_entropy(constant(logits), labels);
  // direct evaluation
  double expect = 0.0;
  {
    double z0 = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
    expect -= std::log(std::exp(2.0) / z0);
    double z1 = std::exp(-1.0) + std::exp(0.0) + std::exp(3.0);
    expect -= std::log(std::exp(3.0) / z1);
    expect /= 2.0;
  }
  CHECK(ce->val[0] == doctest::Approx(expect).epsilon(1e-12));

  Rng rng(20);
  Tensor l = random_tensor({3, 4}, rng);
  check_gradients(
      [&labels](const std::vector<Value>& v) {
        return softmax_cross_entropy(v[0], {0, 3, 1});
      },
      {l});
}

TEST_CASE("channel adaptation ops") {
  Rng rng(21);
  Tensor x1 = random_tensor({2, 1, 3, 3}, rng);
  auto rep = replicate_channels(constant(x1), 3);
  CHECK(rep->val.shape() == std::vector<int>{2, 3, 3, 3});
  for (int c = 0; c < 3; ++c)
    CHECK(rep->val[rep->val.idx4(0, c, 1, 2)] == x1[x1.idx4(0, 0, 1, 2)]);
  check_gradients(
      [](const std::vector<Value>& v) { return sum_all(tanh_(replicate_channels(v[0], 3))); },
      {x1});

  Tensor x3 = random_tensor({2, 3, 3, 3}, rng);
  auto lum = luminance(constant(x3));
  double expect = kLuminanceR * x3[x3.idx4(1, 0, 2, 1)] + kLuminanceG * x3[x3.idx4(1, 1, 2, 1)] +
                  kLuminanceB * x3[x3.idx4(1, 2, 2, 1)];
  CHECK(lum->val[lum->val.idx4(1, 0, 2, 1)] == doctest::Approx(expect).epsilon(1e-12));
  check_gradients([](const std::vector<Value>& v) { return sum_all(tanh_(luminance(v[0]))); },
                  {x3});
}

TEST_CASE("no-grad inputs build no graph") {
  Rng rng(22);
  Tensor x = random_tensor({2, 3}, rng);
  auto c = constant(x);
  auto y = tanh_(add(c, c));
  CHECK_FALSE(y->requires_grad);
  CHECK(y->parents.empty());
}

TEST_CASE("adam descends a quadratic") {
  ParamStore ps;
  auto p = ps.add("p", Tensor::from({2}, {4.0, -3.0}));
  Adam opt(0.1);
  for (int i = 0; i < 400; ++i) {
    Adam::zero_grad(ps.items);
    auto loss = sum_all(mul(p, p));
    backward(loss);
    opt.step(ps.items);
  }
  CHECK(std::fabs(p->val[0]) < 1e-2);
  CHECK(std::fabs(p->val[1]) < 1e-2);
}

TEST_CASE("backward accumulates through shared subgraphs") {
  // f(x) = sum(x*x + x*x) -> grad should be 4x
  Tensor x = Tensor::from({2}, {1.5, -2.0});
  auto v = variable(x);
  auto sq = mul(v, v);
  backward(sum_all(add(sq, sq)));
  CHECK(v->grad[0] == doctest::Approx(4.0 * 1.5).epsilon(1e-12));
  CHECK(v->grad[1] == doctest::Approx(4.0 * -2.0).epsilon(1e-12));
}
