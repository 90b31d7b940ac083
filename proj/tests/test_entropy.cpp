#include <doctest.h>

#include <cmath>
#include <map>

#include "oracles.hpp"
#include "ssmic/entropy.hpp"
#include "ssmic/error.hpp"

using namespace ssmic;
using namespace ssmic::entropy;

namespace {

FactorizedPrior random_prior(Rng& rng, std::size_t channels) {
  const auto w = prior_widths();
  FactorizedPrior p;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    p.matrices.push_back(random_normal({channels, w[l + 1], w[l]}, rng, 0.6));
    p.biases.push_back(random_normal({channels, w[l + 1], 1}, rng, 0.6));
    if (l + 2 < w.size()) p.factors.push_back(random_normal({channels, w[l + 1], 1}, rng, 0.6));
  }
  return p;
}

double oracle_logit(const FactorizedPrior& p, std::size_t ch, double x) {
  std::vector<double> v{x};
  for (std::size_t l = 0; l < p.matrices.size(); ++l) {
    const std::size_t out = p.matrices[l].dim(1), in = p.matrices[l].dim(2);
    std::vector<double> nv(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < in; ++i) s += oracle::softplus(p.matrices[l].at({ch, o, i})) * v[i];
      nv[o] = s + p.biases[l].at({ch, o, 0});
      if (l < p.factors.size()) nv[o] += std::tanh(p.factors[l].at({ch, o, 0})) * std::tanh(nv[o]);
    }
    v = nv;
  }
  return v[0];
}

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

ContextParams random_context(Rng& rng, std::size_t c) {
  std::vector<double> w = random_normal({kContextKernel, kContextKernel, c, 2 * c}, rng, 0.3).to_vector();
  for (std::size_t dy = 0; dy < kContextKernel; ++dy)
    for (std::size_t dx = 0; dx < kContextKernel; ++dx)
      if (!causal_tap(dy, dx, kContextKernel))
        for (std::size_t i = 0; i < 2 * c * c; ++i) w[(dy * kContextKernel + dx) * 2 * c * c + i] = 0.0;
  return make_context_params(Tensor({kContextKernel, kContextKernel, c, 2 * c}, w), random_normal({2 * c}, rng));
}

}  // namespace

TEST_SUITE("entropy") {
  TEST_CASE("quantization modes") {
    const Tensor y({4}, {2.4, -1.5, 0.5, 1.5});
    CHECK(quantize(y, QuantizeMode::kRound).to_vector() == std::vector<double>{2, -2, 0, 2});
    Rng rng(1);
    const Tensor big = random_normal({1000}, rng, 3.0);
    const Tensor n = quantize(big, QuantizeMode::kNoise, &rng);
    for (std::size_t i = 0; i < big.size(); ++i) {
      CHECK(n[i] >= big[i] - 0.5);
      CHECK(n[i] < big[i] + 0.5);
    }
    CHECK_THROWS_AS(quantize(big, QuantizeMode::kNoise, nullptr), Error);
  }

  TEST_CASE("noise rate exceeds the rounded rate") {
    // Discrete entropy of round(y) versus the mean -log2 density of y + u
    // under the bin-integrated model, with y ~ N(0, 2^2).
    Rng rng(2);
    const std::size_t n = 10000;
    const Tensor y = random_normal({n}, rng, 2.0);
    const Tensor yr = quantize(y, QuantizeMode::kRound), yn = quantize(y, QuantizeMode::kNoise, &rng);
    std::map<long, std::size_t> hist;
    for (double v : yr.data()) ++hist[std::lround(v)];
    double h_round = 0.0;
    for (const auto& [k, c] : hist) {
      const double p = static_cast<double>(c) / n;
      h_round -= p * std::log2(p);
    }
    const Tensor mu = Tensor::zeros({n}), sigma = Tensor::full({n}, 2.0);
    const double noisy = rate_estimate(gaussian_likelihood(yn, mu, sigma)) / n;
    CHECK(noisy >= h_round - 0.02);
  }

  TEST_CASE("gaussian likelihood values") {
    const Tensor p0 = gaussian_likelihood(Tensor({1}, {0.0}), Tensor({1}, {0.0}), Tensor({1}, {1.0}));
    CHECK(p0[0] == doctest::Approx(oracle::normal_cdf(0.5) - oracle::normal_cdf(-0.5)).epsilon(1e-14));
    CHECK(p0[0] == doctest::Approx(0.38292492254802624).epsilon(1e-14));
    double total = 0.0;
    for (int k = -30; k <= 30; ++k) {
      const double pk = gaussian_likelihood(Tensor({1}, {double(k)}), Tensor({1}, {0.0}), Tensor({1}, {1.0}), 0.0)[0];
      const double pm = gaussian_likelihood(Tensor({1}, {double(-k)}), Tensor({1}, {0.0}), Tensor({1}, {1.0}), 0.0)[0];
      CHECK(pk == pm);
      total += pk;
    }
    CHECK(std::fabs(total - 1.0) <= 1e-12);
    const Tensor far = gaussian_likelihood(Tensor({1}, {40.0}), Tensor({1}, {0.0}), Tensor({1}, {1.0}));
    CHECK(far[0] == kLikelihoodFloor);
  }

  TEST_CASE("gaussian likelihood is translation consistent") {
    Rng rng(3);
    for (int t = 0; t < 200; ++t) {
      const double k = static_cast<double>(static_cast<long>(rng.below(21)) - 10);
      const double mu = rng.uniform(-3, 3), s = rng.uniform(0.11, 5);
      const double a = gaussian_likelihood(Tensor({1}, {k}), Tensor({1}, {mu + 1}), Tensor({1}, {s}))[0];
      const double b = gaussian_likelihood(Tensor({1}, {k - 1}), Tensor({1}, {mu}), Tensor({1}, {s}))[0];
      CHECK(std::fabs(a - b) <= 1e-15);
    }
  }

  TEST_CASE("gaussian backward matches finite differences") {
    Rng rng(4);
    const Tensor y = random_uniform({20}, rng, -4, 4), mu = random_uniform({20}, rng, -1, 1);
    const Tensor s = random_uniform({20}, rng, 0.2, 3), gp = random_normal({20}, rng);
    const auto g = gaussian_likelihood_backward(y, mu, s, gp, 0.0);
    for (std::size_t i = 0; i < 20; ++i) {
      const double h = 1e-6;
      auto f = [&](double dy, double dm, double ds) {
        return gaussian_likelihood(Tensor({1}, {y[i] + dy}), Tensor({1}, {mu[i] + dm}), Tensor({1}, {s[i] + ds}), 0.0)[0] *
               gp[i];
      };
      CHECK(g.y[i] == doctest::Approx((f(h, 0, 0) - f(-h, 0, 0)) / (2 * h)).epsilon(1e-6));
      CHECK(g.mu[i] == doctest::Approx((f(0, h, 0) - f(0, -h, 0)) / (2 * h)).epsilon(1e-6));
      CHECK(g.sigma[i] == doctest::Approx((f(0, 0, h) - f(0, 0, -h)) / (2 * h)).epsilon(1e-6));
    }
  }

  TEST_CASE("factorized prior against the cdf-difference oracle") {
    Rng rng(5);
    const FactorizedPrior p = random_prior(rng, 3);
    CHECK_NOTHROW(validate(p));
    CHECK(channels(p) == 3);
    const Tensor z = random_uniform({4, 3}, rng, -5, 5);
    const Tensor zr = quantize(z, QuantizeMode::kRound);
    const Tensor lik = factorized_likelihood(zr, p, 0.0);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < 3; ++c) {
        const double k = zr.at({i, c});
        const double want = sigmoid_ref(oracle_logit(p, c, k + 0.5)) - sigmoid_ref(oracle_logit(p, c, k - 0.5));
        CHECK(std::fabs(lik.at({i, c}) - want) <= 1e-12);
        CHECK(std::fabs(factorized_logit(p, c, k) - oracle_logit(p, c, k)) <= 1e-12);
      }
  }

  TEST_CASE("factorized prior is monotone with bounded tails") {
    Rng rng(6);
    const FactorizedPrior p = random_prior(rng, 2);
    for (std::size_t c = 0; c < 2; ++c) {
      // The cdf saturates in double precision, so strictness is probed on the logit.
      double prev_logit = -INFINITY, prev_cdf = -1.0;
      for (int i = 0; i < 1000; ++i) {
        const double x = -20.0 + 40.0 * i / 999.0;
        const double l = factorized_logit(p, c, x), v = factorized_cdf(p, c, x);
        CHECK(l > prev_logit);
        CHECK(v >= prev_cdf);
        prev_logit = l;
        prev_cdf = v;
      }
      CHECK(factorized_cdf(p, c, -1e6) <= 1e-9);
      CHECK(factorized_cdf(p, c, 1e6) >= 1 - 1e-9);
    }
  }

  TEST_CASE("factorized backward matches finite differences") {
    Rng rng(7);
    const FactorizedPrior p = random_prior(rng, 2);
    const Tensor z = quantize(random_uniform({3, 2}, rng, -2, 2), QuantizeMode::kRound);
    const Tensor gp = random_normal({3, 2}, rng);
    const auto g = factorized_likelihood_backward(z, p, gp, 0.0);
    auto loss = [&](const FactorizedPrior& q) {
      const Tensor l = factorized_likelihood(z, q, 0.0);
      double s = 0.0;
      for (std::size_t i = 0; i < l.size(); ++i) s += l[i] * gp[i];
      return s;
    };
    for (std::size_t l = 0; l < p.matrices.size(); ++l)
      for (std::size_t i = 0; i < p.matrices[l].size(); ++i) {
        FactorizedPrior a = p, b = p;
        std::vector<double> u = p.matrices[l].to_vector(), d = u;
        u[i] += 1e-6;
        d[i] -= 1e-6;
        a.matrices[l] = Tensor(p.matrices[l].shape(), u);
        b.matrices[l] = Tensor(p.matrices[l].shape(), d);
        CHECK(g.matrices[l][i] == doctest::Approx((loss(a) - loss(b)) / 2e-6).epsilon(1e-5));
      }
    for (std::size_t l = 0; l < p.factors.size(); ++l)
      for (std::size_t i = 0; i < p.factors[l].size(); ++i) {
        FactorizedPrior a = p, b = p;
        std::vector<double> u = p.factors[l].to_vector(), d = u;
        u[i] += 1e-6;
        d[i] -= 1e-6;
        a.factors[l] = Tensor(p.factors[l].shape(), u);
        b.factors[l] = Tensor(p.factors[l].shape(), d);
        CHECK(g.factors[l][i] == doctest::Approx((loss(a) - loss(b)) / 2e-6).epsilon(1e-5));
      }
  }

  TEST_CASE("context model causality") {
    Rng rng(8);
    const std::size_t c = 2;
    const ContextParams p = random_context(rng, c);
    const Tensor zero = context_forward(Tensor::zeros({4, 5, c}), p);
    for (std::size_t i = 0; i < zero.size(); ++i) CHECK(zero[i] == p.bias[i % (2 * c)]);
    const Tensor one = context_forward(random_normal({1, 1, c}, rng), p);
    CHECK(one.to_vector() == p.bias.to_vector());

    const Tensor y = random_normal({5, 6, c}, rng);
    const Tensor base = context_forward(y, p);
    for (std::size_t pos = 0; pos < 30; pos += 7) {
      std::vector<double> v = y.to_vector();
      v[pos * c] += 1.0;
      const Tensor out = context_forward(Tensor(y.shape(), v), p);
      for (std::size_t q = 0; q <= pos; ++q)
        for (std::size_t k = 0; k < 2 * c; ++k) CHECK(out[q * 2 * c + k] == base[q * 2 * c + k]);
    }
  }

  TEST_CASE("serial context equals the full convolution") {
    Rng rng(9);
    const std::size_t c = 3, h = 4, w = 6;
    const ContextParams p = random_context(rng, c);
    const Tensor y = quantize(random_normal({h, w, c}, rng, 2.0), QuantizeMode::kRound);
    const Tensor full = context_forward(y, p);
    // Fill the buffer in raster order, as the decoder does.
    std::vector<double> buf(h * w * c, 0.0), out(2 * c);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col) {
        context_at(buf, h, w, p, r, col, out);
        for (std::size_t k = 0; k < 2 * c; ++k) CHECK(out[k] == full[(r * w + col) * 2 * c + k]);
        for (std::size_t k = 0; k < c; ++k) buf[(r * w + col) * c + k] = y[(r * w + col) * c + k];
      }
  }

  TEST_CASE("context mask validation") {
    Rng rng(10);
    CHECK(causal_tap(0, 0, 5));
    CHECK(causal_tap(2, 1, 5));
    CHECK_FALSE(causal_tap(2, 2, 5));
    CHECK_FALSE(causal_tap(3, 0, 5));
    Tensor w = random_normal({5, 5, 1, 2}, rng);
    CHECK_THROWS_AS(make_context_params(w, Tensor::zeros({2})), Error);
  }

  TEST_CASE("entropy parameters") {
    Rng rng(11);
    const std::size_t cy = 3;
    const auto widths = entropy_parameter_widths(cy);
    CHECK(widths == std::vector<std::size_t>{12, 10, 8, 6});
    EntropyParameters p;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      p.weights.push_back(random_normal({widths[l], widths[l + 1]}, rng, 0.5));
      p.biases.push_back(random_normal({widths[l + 1]}, rng, 0.5));
    }
    const Tensor psi = random_normal({2, 3, 2 * cy}, rng, 2.0), phi = random_normal({2, 3, 2 * cy}, rng, 2.0);
    const auto [mu, sigma] = entropy_parameters(psi, phi, p);
    CHECK(mu.shape() == Shape{2, 3, cy});
    CHECK(sigma.shape() == Shape{2, 3, cy});
    for (double s : sigma.data()) CHECK(s >= kSigmaMin);
    for (std::size_t t = 0; t < 6; ++t) {
      std::vector<double> h(psi.data().begin() + t * 2 * cy, psi.data().begin() + (t + 1) * 2 * cy);
      h.insert(h.end(), phi.data().begin() + t * 2 * cy, phi.data().begin() + (t + 1) * 2 * cy);
      for (std::size_t l = 0; l < 3; ++l) {
        h = oracle::linear(h, 1, widths[l], p.weights[l], &p.biases[l]);
        if (l < 2)
          for (double& v : h) v = oracle::silu(v);
      }
      for (std::size_t k = 0; k < cy; ++k) {
        CHECK(std::fabs(mu[t * cy + k] - h[k]) <= 1e-12);
        CHECK(std::fabs(sigma[t * cy + k] - std::max(oracle::softplus(h[cy + k]), kSigmaMin)) <= 1e-12);
      }
    }
  }

  TEST_CASE("rate estimate") {
    CHECK(rate_estimate(Tensor::full({17}, 0.5)) == 17.0);
    CHECK(rate_estimate(Tensor::full({5}, 1.0)) == 0.0);
    Rng rng(12);
    const Tensor p = random_uniform({100}, rng, 0.01, 1.0);
    double want = 0.0;
    for (double v : p.data()) want -= std::log2(v);
    CHECK(std::fabs(rate_estimate(p) - want) <= 1e-10);
    CHECK_THROWS_AS(rate_estimate(Tensor({1}, {0.0})), Error);
    CHECK_THROWS_AS(rate_estimate(Tensor({1}, {1.5})), Error);
    CHECK(bits_per_pixel(512.0, 16, 16) == 2.0);
  }
}
