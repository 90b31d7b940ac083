#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "ssmic/ops.hpp"
#include "ssmic/tensor.hpp"

namespace ssmic::entropy {

inline constexpr double kSigmaMin = 0.11;
inline constexpr double kLikelihoodFloor = 1.0 / 65536.0;  // 2^-16
inline constexpr double kTailMass = 1e-9;
inline constexpr std::size_t kContextKernel = 5;

double normal_cdf(double x);

// P(y) = Phi((y + 0.5 - mu) / sigma) - Phi((y - 0.5 - mu) / sigma), evaluated
// through |y - mu| for tail accuracy and floored at p_min (0 disables).
Tensor gaussian_likelihood(const Tensor& y, const Tensor& mu, const Tensor& sigma,
                           double p_min = kLikelihoodFloor);

struct GaussianGrads {
  Tensor y;
  Tensor mu;
  Tensor sigma;
};
GaussianGrads gaussian_likelihood_backward(const Tensor& y, const Tensor& mu, const Tensor& sigma,
                                           const Tensor& grad_p, double p_min = kLikelihoodFloor);

// Learned univariate CDF per channel, built from K monotone layers:
//   v <- softplus(H_k) v + b_k,  then v <- v + tanh(a_k) * tanh(v) for k < K-1
// and c(x) = sigmoid(v_K(x)). Shapes: H_k is C x out_k x in_k, b_k and a_k are
// C x out_k x 1, with in_0 = out_{K-1} = 1.
template <class T>
struct FactorizedPriorT {
  std::vector<T> matrices;
  std::vector<T> biases;
  std::vector<T> factors;
};
using FactorizedPrior = FactorizedPriorT<Tensor>;

inline constexpr std::size_t kPriorLayers = 4;
inline constexpr std::size_t kPriorWidth = 3;

// Layer widths (1, 3, 3, 3, 1) for the default K = 4, width 3 family.
std::vector<std::size_t> prior_widths();
void validate(const FactorizedPrior& prior);
std::size_t channels(const FactorizedPrior& prior);

double factorized_logit(const FactorizedPrior& prior, std::size_t channel, double x);
double factorized_cdf(const FactorizedPrior& prior, std::size_t channel, double x);

// P(z = k) = c(k + 0.5) - c(k - 0.5), floored at p_min. z is ... x C.
Tensor factorized_likelihood(const Tensor& z, const FactorizedPrior& prior,
                             double p_min = kLikelihoodFloor);

struct FactorizedGrads {
  Tensor z;
  std::vector<Tensor> matrices;
  std::vector<Tensor> biases;
  std::vector<Tensor> factors;
};
FactorizedGrads factorized_likelihood_backward(const Tensor& z, const FactorizedPrior& prior,
                                               const Tensor& grad_p, double p_min = kLikelihoodFloor);

// Masked k x k convolution over y_hat producing 2 * C_y context features.
template <class T>
struct ContextParamsT {
  T weight;  // k x k x C_y x 2C_y; taps at or after the centre are zero
  T bias;    // 2C_y
};
using ContextParams = ContextParamsT<Tensor>;

// Checks shapes and that every masked tap is exactly zero.
ContextParams make_context_params(Tensor weight, Tensor bias);
void validate(const ContextParams& p);
bool causal_tap(std::size_t dy, std::size_t dx, std::size_t k);

template <class T>
T context_forward(const T& y_hat, const ContextParamsT<T>& p) {
  return ops::masked_conv2d(y_hat, p.weight, p.bias);
}

// Context features at one grid position, reading only raster-earlier cells of
// a partially filled H x W x C buffer. Summation order matches the full
// masked convolution, so both agree bit for bit.
void context_at(std::span<const double> y_hat, std::size_t height, std::size_t width,
                const ContextParams& p, std::size_t row, std::size_t col, std::span<double> out);

template <class T>
struct EntropyParametersT {
  std::vector<T> weights;  // 3 layers
  std::vector<T> biases;
};
using EntropyParameters = EntropyParametersT<Tensor>;

// Hidden widths of the three 1x1 layers for latent width C_y: the input is
// psi (2C_y) ++ phi (2C_y), then 10C_y/3, 8C_y/3 and finally 2C_y.
std::vector<std::size_t> entropy_parameter_widths(std::size_t latent_channels);

// concat(psi, phi) -> linear, SiLU, linear, SiLU, linear -> (mu, sigma) with
// sigma = max(softplus(raw), sigma_min).
template <class T>
std::pair<T, T> entropy_parameters(const T& psi, const T& phi, const EntropyParametersT<T>& p) {
  T h = ops::concat_channels(psi, phi);
  h = ops::silu(ops::linear(h, p.weights[0], p.biases[0]));
  h = ops::silu(ops::linear(h, p.weights[1], p.biases[1]));
  T out = ops::linear(h, p.weights[2], p.biases[2]);
  const std::size_t c2 = out.shape().back();
  T mu = ops::slice_channels(out, 0, c2 / 2);
  T sigma = ops::lower_bound(ops::softplus(ops::slice_channels(out, c2 / 2, c2)), kSigmaMin);
  return {mu, sigma};
}

enum class QuantizeMode { kNoise, kRound };

// Noise: y + U(-0.5, 0.5); round: nearest integer, ties to even.
Tensor quantize(const Tensor& y, QuantizeMode mode, Rng* rng = nullptr);

// -sum log2 p in bits. Every probability must lie in (0, 1].
double rate_estimate(std::span<const double> likelihoods);
double rate_estimate(const Tensor& likelihoods);
double bits_per_pixel(double bits, std::size_t height, std::size_t width);

}  // namespace ssmic::entropy
