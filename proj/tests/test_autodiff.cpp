#include <doctest.h>

#include <cmath>
#include <functional>

#include "ssmic/entropy.hpp"
#include "ssmic/ops.hpp"

using namespace ssmic;
using ad::Tape;
using ad::Var;

namespace {

using Fn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Compares tape gradients of mse(fn(inputs), target) with central differences.
double worst_relative_error(const std::vector<Tensor>& inputs, const Fn& fn, std::uint64_t seed) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.parameter(t));
  const Var out = fn(tape, vars);
  Rng rng(seed);
  const Tensor target = random_normal(out.shape(), rng);
  const Var loss = ops::mse(out, tape.constant(target));
  tape.backward(loss);

  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape t2(false);
    std::vector<Var> v2;
    for (const Tensor& x : xs) v2.push_back(t2.parameter(x));
    return ops::mse(fn(t2, v2), t2.constant(target)).value()[0];
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor g = tape.grad(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double h = 1e-5;
      std::vector<Tensor> up = inputs, dn = inputs;
      std::vector<double> u = inputs[k].to_vector(), d = u;
      u[i] += h;
      d[i] -= h;
      up[k] = Tensor(inputs[k].shape(), u);
      dn[k] = Tensor(inputs[k].shape(), d);
      const double fd = (eval(up) - eval(dn)) / (2 * h);
      worst = std::max(worst, std::fabs(fd - g[i]) / std::max(1e-3, std::fabs(fd) + std::fabs(g[i])));
    }
  }
  return worst;
}

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("tape basics") {
    Tape tape;
    const Var a = tape.parameter(Tensor({2}, {1.0, 2.0}));
    const Var c = tape.constant(Tensor({2}, {3.0, 4.0}));
    const Var m = ops::mul(a, c);
    const Var loss = ops::mse(m, tape.constant(Tensor::zeros({2})));
    tape.backward(loss);
    // d/da mean((a c)^2) = a c^2
    CHECK(tape.grad(a).to_vector() == std::vector<double>{9.0, 32.0});
    CHECK_FALSE(tape.reached(c));
    CHECK(tape.reached(a));
    tape.zero_grad();
    CHECK(tape.grad(a).to_vector() == std::vector<double>{0.0, 0.0});
  }

  TEST_CASE("tensor and tape forward values agree bit for bit") {
    Rng rng(40);
    const Tensor x = random_normal({4, 5, 3}, rng), w = random_normal({3, 6}, rng), b = random_normal({6}, rng);
    const Tensor k = random_normal({3, 3, 6}, rng), g = random_normal({6}, rng);
    Tape tape;
    const Var vx = tape.parameter(x), vw = tape.parameter(w), vb = tape.parameter(b), vk = tape.parameter(k);
    const Var vg = tape.parameter(g);
    const Var out = ops::silu(ops::dwconv(ops::rms_norm(ops::linear(vx, vw, vb), vg, 1e-6), vk));
    const Tensor ref = ops::silu(ops::dwconv(ops::rms_norm(ops::linear(x, w, b), g, 1e-6), k));
    CHECK(bit_equal(out.value(), ref));
  }

  TEST_CASE("linear, add, mul, scale") {
    Rng rng(41);
    const double e = worst_relative_error(
        {random_normal({3, 4}, rng), random_normal({4, 2}, rng), random_normal({2}, rng), random_normal({3, 2}, rng)},
        [](Tape&, const std::vector<Var>& v) {
          return ops::scale(ops::mul(ops::add(ops::linear(v[0], v[1], v[2]), v[3]), v[3]), 0.7);
        },
        1);
    CHECK(e <= 1e-6);
  }

  TEST_CASE("activations and bounds") {
    Rng rng(42);
    const double e = worst_relative_error({random_normal({10}, rng)},
                                          [](Tape&, const std::vector<Var>& v) {
                                            return ops::add(ops::silu(v[0]), ops::lower_bound(ops::softplus(v[0]), 0.5));
                                          },
                                          2);
    CHECK(e <= 1e-6);
  }

  TEST_CASE("rms norm and depthwise conv") {
    Rng rng(43);
    const double e = worst_relative_error(
        {random_normal({3, 4, 2}, rng), random_normal({2}, rng), random_normal({3, 3, 2}, rng)},
        [](Tape&, const std::vector<Var>& v) { return ops::dwconv(ops::rms_norm(v[0], v[1], 1e-6), v[2]); }, 3);
    CHECK(e <= 1e-6);
  }

  TEST_CASE("gather, reshape, concat and slice") {
    Rng rng(44);
    const double e = worst_relative_error(
        {random_normal({2, 3, 2}, rng), random_normal({2, 3, 1}, rng)},
        [](Tape&, const std::vector<Var>& v) {
          const Var c = ops::concat_channels(v[0], v[1]);
          const Var s = ops::slice_channels(c, 1, 3);
          ops::IndexMap idx;
          for (std::size_t i = 0; i < 12; ++i) idx.push_back((i * 5) % 12);
          return ops::reshape(ops::gather(s, idx, {12}), {3, 4});
        },
        4);
    CHECK(e <= 1e-6);
  }

  TEST_CASE("selective scan") {
    Rng rng(45);
    for (auto mode : {ssm::ScanDiscretization::kSimplified, ssm::ScanDiscretization::kZoh}) {
      const double e = worst_relative_error(
          {random_normal({5, 2}, rng), random_uniform({5, 2}, rng, 0.1, 0.8), random_normal({5, 3}, rng),
           random_normal({5, 3}, rng), random_normal({2, 3}, rng, 0.3), random_normal({2}, rng)},
          [mode](Tape&, const std::vector<Var>& v) {
            return ops::selective_scan(v[0], v[1], v[2], v[3], v[4], v[5], mode);
          },
          5);
      CHECK(e <= 1e-6);
    }
  }

  TEST_CASE("masked convolution") {
    Rng rng(46);
    std::vector<double> w = random_normal({3, 3, 2, 3}, rng).to_vector();
    for (std::size_t dy = 0; dy < 3; ++dy)
      for (std::size_t dx = 0; dx < 3; ++dx)
        if (!entropy::causal_tap(dy, dx, 3))
          for (std::size_t i = 0; i < 6; ++i) w[(dy * 3 + dx) * 6 + i] = 0.0;
    const double e = worst_relative_error(
        {random_normal({4, 3, 2}, rng), Tensor({3, 3, 2, 3}, w), random_normal({3}, rng)},
        [](Tape&, const std::vector<Var>& v) { return ops::masked_conv2d(v[0], v[1], v[2]); }, 6);
    CHECK(e <= 1e-6);
  }

  TEST_CASE("gaussian likelihood and rate") {
    Rng rng(47);
    const double e = worst_relative_error(
        {random_uniform({12}, rng, -3, 3), random_uniform({12}, rng, -1, 1), random_uniform({12}, rng, 0.3, 2.0)},
        [](Tape&, const std::vector<Var>& v) {
          const Var p = ops::gaussian_likelihood(v[0], v[1], v[2]);
          return ops::add(ops::reshape(ops::sum_neg_log2(p), {1}), ops::reshape(ops::sum_neg_log2(p), {1}));
        },
        7);
    CHECK(e <= 1e-6);
  }

  TEST_CASE("factorized likelihood") {
    Rng rng(48);
    const auto widths = entropy::prior_widths();
    std::vector<Tensor> in{random_uniform({3, 2}, rng, -2, 2)};
    const std::size_t c = 2, layers = widths.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) in.push_back(random_normal({c, widths[l + 1], widths[l]}, rng, 0.5));
    for (std::size_t l = 0; l < layers; ++l) in.push_back(random_normal({c, widths[l + 1], 1}, rng, 0.5));
    for (std::size_t l = 0; l + 1 < layers; ++l) in.push_back(random_normal({c, widths[l + 1], 1}, rng, 0.5));
    const double e = worst_relative_error(
        in,
        [layers](Tape&, const std::vector<Var>& v) {
          std::vector<Var> m(v.begin() + 1, v.begin() + 1 + layers), b(v.begin() + 1 + layers, v.begin() + 1 + 2 * layers),
              f(v.begin() + 1 + 2 * layers, v.end());
          return ops::factorized_likelihood(v[0], m, b, f);
        },
        8);
    CHECK(e <= 1e-6);
  }
}
