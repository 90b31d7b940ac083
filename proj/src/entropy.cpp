#include "ssmic/entropy.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "ssmic/error.hpp"

namespace ssmic::entropy {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

namespace {

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

void check_aligned(const Tensor& y, const Tensor& mu, const Tensor& sigma) {
  require(same_shape(y, mu) && same_shape(y, sigma), ErrorCode::kShapeMismatch,
          "gaussian_likelihood: y " + shape_str(y.shape()) + ", mu " + shape_str(mu.shape()) + ", sigma " +
              shape_str(sigma.shape()));
}

}  // namespace

Tensor gaussian_likelihood(const Tensor& y, const Tensor& mu, const Tensor& sigma, double p_min) {
  check_aligned(y, mu, sigma);
  std::vector<double> p(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double v = std::abs(y[i] - mu[i]);
    const double s = sigma[i];
    p[i] = std::max(normal_cdf((0.5 - v) / s) - normal_cdf((-0.5 - v) / s), p_min);
  }
  return Tensor(y.shape(), std::move(p));
}

GaussianGrads gaussian_likelihood_backward(const Tensor& y, const Tensor& mu, const Tensor& sigma,
                                           const Tensor& grad_p, double p_min) {
  check_aligned(y, mu, sigma);
  std::vector<double> gy(y.size()), gmu(y.size()), gs(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double diff = y[i] - mu[i];
    const double v = std::abs(diff);
    const double s = sigma[i];
    const double hi = (0.5 - v) / s;
    const double lo = (-0.5 - v) / s;
    const double p = normal_cdf(hi) - normal_cdf(lo);
    if (p < p_min) {
      gy[i] = gmu[i] = gs[i] = 0.0;
      continue;
    }
    const double dp_dv = (-normal_pdf(hi) + normal_pdf(lo)) / s;
    const double dp_ds = (-normal_pdf(hi) * hi + normal_pdf(lo) * lo) / s;
    const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
    gy[i] = grad_p[i] * dp_dv * sign;
    gmu[i] = -gy[i];
    gs[i] = grad_p[i] * dp_ds;
  }
  return {Tensor(y.shape(), std::move(gy)), Tensor(y.shape(), std::move(gmu)), Tensor(y.shape(), std::move(gs))};
}

// ---------------------------------------------------------------------------
// Factorized prior

std::vector<std::size_t> prior_widths() {
  std::vector<std::size_t> w{1};
  for (std::size_t k = 0; k + 1 < kPriorLayers; ++k) w.push_back(kPriorWidth);
  w.push_back(1);
  return w;
}

std::size_t channels(const FactorizedPrior& prior) {
  require(!prior.matrices.empty(), ErrorCode::kInvalidArgument, "factorized prior has no layers");
  return prior.matrices[0].dim(0);
}

void validate(const FactorizedPrior& prior) {
  const std::size_t K = prior.matrices.size();
  require(K >= 1 && prior.biases.size() == K && prior.factors.size() + 1 == K, ErrorCode::kInvalidArgument,
          "factorized prior: expected K matrices, K biases and K-1 factors");
  const std::size_t C = channels(prior);
  std::size_t in = 1;
  for (std::size_t k = 0; k < K; ++k) {
    const Tensor& m = prior.matrices[k];
    require(m.rank() == 3 && m.dim(0) == C && m.dim(2) == in, ErrorCode::kShapeMismatch,
            "factorized prior: matrix " + std::to_string(k) + " has shape " + shape_str(m.shape()));
    const std::size_t out = m.dim(1);
    require_shape(prior.biases[k], {C, out, 1}, "factorized prior: bias");
    if (k + 1 < K) require_shape(prior.factors[k], {C, out, 1}, "factorized prior: factor");
    in = out;
  }
  require(in == 1, ErrorCode::kShapeMismatch, "factorized prior: last layer must have width 1");
}

namespace {

// Per-channel activations cached for the backward sweep: pre[k] (width
// out_k) and the input v[k] (width in_k) of layer k.
struct PriorTrace {
  std::vector<std::vector<double>> v;
  std::vector<std::vector<double>> pre;
  double logit = 0.0;
};

void prior_forward(const FactorizedPrior& prior, std::size_t c, double x, PriorTrace& tr) {
  const std::size_t K = prior.matrices.size();
  tr.v.resize(K);
  tr.pre.resize(K);
  tr.v[0].assign(1, x);
  for (std::size_t k = 0; k < K; ++k) {
    const Tensor& m = prior.matrices[k];
    const std::size_t out = m.dim(1), in = m.dim(2);
    const double* mrow = m.raw() + c * out * in;
    const double* brow = prior.biases[k].raw() + c * out;
    std::vector<double>& pre = tr.pre[k];
    pre.assign(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < in; ++i) s += softplus(mrow[o * in + i]) * tr.v[k][i];
      pre[o] = s + brow[o];
    }
    if (k + 1 < K) {
      const double* frow = prior.factors[k].raw() + c * out;
      std::vector<double>& nxt = tr.v[k + 1];
      nxt.resize(out);
      for (std::size_t o = 0; o < out; ++o) nxt[o] = pre[o] + std::tanh(frow[o]) * std::tanh(pre[o]);
    }
  }
  tr.logit = tr.pre[K - 1][0];
}

struct PriorGradBuffers {
  std::vector<std::vector<double>> matrices;
  std::vector<std::vector<double>> biases;
  std::vector<std::vector<double>> factors;
};

// Accumulates d(g * logit)/d(params) into buf and returns d(g * logit)/dx.
double prior_backward(const FactorizedPrior& prior, std::size_t c, const PriorTrace& tr, double g,
                      PriorGradBuffers& buf) {
  const std::size_t K = prior.matrices.size();
  std::vector<double> g_pre{g};
  std::vector<double> g_v;
  for (std::size_t k = K; k-- > 0;) {
    const Tensor& m = prior.matrices[k];
    const std::size_t out = m.dim(1), in = m.dim(2);
    const double* mrow = m.raw() + c * out * in;
    double* gm = buf.matrices[k].data() + c * out * in;
    double* gb = buf.biases[k].data() + c * out;
    g_v.assign(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      gb[o] += g_pre[o];
      for (std::size_t i = 0; i < in; ++i) {
        const double w = mrow[o * in + i];
        gm[o * in + i] += g_pre[o] * tr.v[k][i] * sigmoid(w);
        g_v[i] += softplus(w) * g_pre[o];
      }
    }
    if (k == 0) return g_v[0];
    // v[k] = pre[k-1] + tanh(a) * tanh(pre[k-1])
    const double* frow = prior.factors[k - 1].raw() + c * in;
    double* gf = buf.factors[k - 1].data() + c * in;
    g_pre.assign(in, 0.0);
    for (std::size_t j = 0; j < in; ++j) {
      const double ta = std::tanh(frow[j]);
      const double tp = std::tanh(tr.pre[k - 1][j]);
      g_pre[j] = g_v[j] * (1.0 + ta * (1.0 - tp * tp));
      gf[j] += g_v[j] * (1.0 - ta * ta) * tp;
    }
  }
  return 0.0;
}

// Bin mass from the two logits; the sign flip keeps both sigmoids in their
// accurate half when the bin sits far in a tail.
double bin_mass(double upper, double lower) {
  const double s = (upper + lower) > 0 ? -1.0 : 1.0;
  return std::abs(sigmoid(s * upper) - sigmoid(s * lower));
}

double sigmoid_grad(double x) { return sigmoid(x) * sigmoid(-x); }

}  // namespace

double factorized_logit(const FactorizedPrior& prior, std::size_t channel, double x) {
  PriorTrace tr;
  prior_forward(prior, channel, x, tr);
  return tr.logit;
}

double factorized_cdf(const FactorizedPrior& prior, std::size_t channel, double x) {
  return sigmoid(factorized_logit(prior, channel, x));
}

Tensor factorized_likelihood(const Tensor& z, const FactorizedPrior& prior, double p_min) {
  validate(prior);
  const std::size_t C = channels(prior);
  require(z.rank() >= 1 && z.shape().back() == C, ErrorCode::kShapeMismatch,
          "factorized_likelihood: z " + shape_str(z.shape()) + " does not have " + std::to_string(C) +
              " channels");
  std::vector<double> p(z.size());
  PriorTrace up, lo;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const std::size_t c = i % C;
    prior_forward(prior, c, z[i] + 0.5, up);
    prior_forward(prior, c, z[i] - 0.5, lo);
    require(up.logit > lo.logit, ErrorCode::kNumeric,
            "factorized_likelihood: CDF is not increasing in channel " + std::to_string(c));
    p[i] = std::max(bin_mass(up.logit, lo.logit), p_min);
  }
  return Tensor(z.shape(), std::move(p));
}

FactorizedGrads factorized_likelihood_backward(const Tensor& z, const FactorizedPrior& prior,
                                               const Tensor& grad_p, double p_min) {
  validate(prior);
  const std::size_t C = channels(prior);
  require_shape(grad_p, z.shape(), "factorized_likelihood_backward: grad");
  PriorGradBuffers buf;
  for (const Tensor& t : prior.matrices) buf.matrices.emplace_back(t.size(), 0.0);
  for (const Tensor& t : prior.biases) buf.biases.emplace_back(t.size(), 0.0);
  for (const Tensor& t : prior.factors) buf.factors.emplace_back(t.size(), 0.0);
  std::vector<double> gz(z.size(), 0.0);
  PriorTrace up, lo;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const std::size_t c = i % C;
    prior_forward(prior, c, z[i] + 0.5, up);
    prior_forward(prior, c, z[i] - 0.5, lo);
    if (bin_mass(up.logit, lo.logit) < p_min) continue;
    const double g_up = grad_p[i] * sigmoid_grad(up.logit);
    const double g_lo = -grad_p[i] * sigmoid_grad(lo.logit);
    gz[i] = prior_backward(prior, c, up, g_up, buf) + prior_backward(prior, c, lo, g_lo, buf);
  }
  FactorizedGrads out{Tensor(z.shape(), std::move(gz)), {}, {}, {}};
  for (std::size_t k = 0; k < prior.matrices.size(); ++k)
    out.matrices.emplace_back(prior.matrices[k].shape(), std::move(buf.matrices[k]));
  for (std::size_t k = 0; k < prior.biases.size(); ++k)
    out.biases.emplace_back(prior.biases[k].shape(), std::move(buf.biases[k]));
  for (std::size_t k = 0; k < prior.factors.size(); ++k)
    out.factors.emplace_back(prior.factors[k].shape(), std::move(buf.factors[k]));
  return out;
}

// ---------------------------------------------------------------------------
// Context model

bool causal_tap(std::size_t dy, std::size_t dx, std::size_t k) {
  const std::size_t centre = k / 2;
  return dy < centre || (dy == centre && dx < centre);
}

void validate(const ContextParams& p) {
  const Tensor& w = p.weight;
  require(w.rank() == 4 && w.dim(0) == w.dim(1) && w.dim(0) % 2 == 1, ErrorCode::kShapeMismatch,
          "context model: weight must be k x k x C x 2C with odd k, got " + shape_str(w.shape()));
  require(w.dim(3) == 2 * w.dim(2), ErrorCode::kShapeMismatch,
          "context model: output width must be twice the latent width");
  require_shape(p.bias, {w.dim(3)}, "context model: bias");
  const std::size_t k = w.dim(0), per_tap = w.dim(2) * w.dim(3);
  for (std::size_t dy = 0; dy < k; ++dy)
    for (std::size_t dx = 0; dx < k; ++dx) {
      if (causal_tap(dy, dx, k)) continue;
      const double* tap = w.raw() + (dy * k + dx) * per_tap;
      for (std::size_t i = 0; i < per_tap; ++i)
        require(tap[i] == 0.0, ErrorCode::kInvalidArgument,
                "context model: non-causal tap (" + std::to_string(dy) + "," + std::to_string(dx) +
                    ") is not zero");
    }
}

ContextParams make_context_params(Tensor weight, Tensor bias) {
  ContextParams p{std::move(weight), std::move(bias)};
  validate(p);
  return p;
}

void context_at(std::span<const double> y_hat, std::size_t height, std::size_t width, const ContextParams& p,
                std::size_t row, std::size_t col, std::span<double> out) {
  const Tensor& w = p.weight;
  const std::size_t k = w.dim(0), cin = w.dim(2), cout = w.dim(3);
  const long r = static_cast<long>(k / 2);
  require(out.size() == cout && y_hat.size() == height * width * cin, ErrorCode::kShapeMismatch,
          "context_at: buffer sizes do not match the context weights");
  std::fill(out.begin(), out.end(), 0.0);
  const double* pw = w.raw();
  for (std::size_t ky = 0; ky < k; ++ky)
    for (std::size_t kx = 0; kx < k; ++kx) {
      if (!causal_tap(ky, kx, k)) continue;
      const long sy = static_cast<long>(row) + static_cast<long>(ky) - r;
      const long sx = static_cast<long>(col) + static_cast<long>(kx) - r;
      if (sy < 0 || sy >= static_cast<long>(height) || sx < 0 || sx >= static_cast<long>(width)) continue;
      const double* in = y_hat.data() + (static_cast<std::size_t>(sy) * width + static_cast<std::size_t>(sx)) * cin;
      const double* tap = pw + (ky * k + kx) * cin * cout;
      for (std::size_t i = 0; i < cin; ++i) {
        const double v = in[i];
        const double* wr = tap + i * cout;
        for (std::size_t o = 0; o < cout; ++o) out[o] += v * wr[o];
      }
    }
  for (std::size_t o = 0; o < cout; ++o) out[o] += p.bias[o];
}

std::vector<std::size_t> entropy_parameter_widths(std::size_t latent_channels) {
  const std::size_t c = latent_channels;
  return {4 * c, std::max<std::size_t>(1, 10 * c / 3), std::max<std::size_t>(1, 8 * c / 3), 2 * c};
}

// ---------------------------------------------------------------------------
// Quantization and rate

Tensor quantize(const Tensor& y, QuantizeMode mode, Rng* rng) {
  if (mode == QuantizeMode::kRound) return round_half_even(y);
  require(rng != nullptr, ErrorCode::kInvalidArgument, "quantize: noise mode needs an Rng");
  return uniform_noise(y, *rng, 0.5);
}

double rate_estimate(std::span<const double> likelihoods) {
  double bits = 0.0;
  for (double p : likelihoods) {
    require(p > 0.0 && p <= 1.0, ErrorCode::kNumeric,
            "rate_estimate: probability " + std::to_string(p) + " outside (0, 1]");
    bits -= std::log2(p);
  }
  return bits;
}

double rate_estimate(const Tensor& likelihoods) { return rate_estimate(likelihoods.data()); }

double bits_per_pixel(double bits, std::size_t height, std::size_t width) {
  require(height > 0 && width > 0, ErrorCode::kInvalidArgument, "bits_per_pixel: empty image");
  return bits / (static_cast<double>(height) * static_cast<double>(width));
}

}  // namespace ssmic::entropy
