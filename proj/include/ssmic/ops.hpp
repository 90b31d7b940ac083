#pragma once

// Differentiable primitives, overloaded for plain tensors (inference) and
// tape variables (training). Composite blocks are written once as templates
// over these overloads, so the forward values of both paths agree bit for
// bit. Channels are always the last axis; leading axes are tokens.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "ssmic/autodiff.hpp"
#include "ssmic/ssm.hpp"
#include "ssmic/tensor.hpp"

namespace ssmic::ops {

using ad::Var;
using IndexMap = std::vector<std::size_t>;

// y = x W (+ b) over the last axis; W is C_in x C_out.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor linear(const Tensor& x, const Tensor& w);
Var linear(const Var& x, const Var& w, const Var& b);
Var linear(const Var& x, const Var& w);

Tensor add(const Tensor& a, const Tensor& b);
Var add(const Var& a, const Var& b);
Tensor mul(const Tensor& a, const Tensor& b);
Var mul(const Var& a, const Var& b);
Tensor scale(const Tensor& a, double s);
Var scale(const Var& a, double s);
Tensor silu(const Tensor& x);
Var silu(const Var& x);
Tensor softplus(const Tensor& x);
Var softplus(const Var& x);
Tensor reshape(const Tensor& x, const Shape& shape);
Var reshape(const Var& x, const Shape& shape);

// x * rsqrt(mean(x^2 over channels) + eps) * scale
Tensor rms_norm(const Tensor& x, const Tensor& scale, double eps);
Var rms_norm(const Var& x, const Var& scale, double eps);

// Depthwise k x k "same" convolution of an H x W x C map.
Tensor dwconv(const Tensor& x, const Tensor& kernel);
Var dwconv(const Var& x, const Var& kernel);

// out.flat[i] = x.flat[index[i]]; index must be a permutation-like gather.
Tensor gather(const Tensor& x, const IndexMap& index, const Shape& out_shape);
Var gather(const Var& x, const IndexMap& index, const Shape& out_shape);

Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& b, const Tensor& c,
                      const Tensor& a_log, const Tensor& d_skip, ssm::ScanDiscretization mode);
Var selective_scan(const Var& x, const Var& delta, const Var& b, const Var& c, const Var& a_log,
                   const Var& d_skip, ssm::ScanDiscretization mode);

// k x k convolution (H x W x C_in -> H x W x C_out) that only reads taps
// strictly before the centre in raster order. Weight: k x k x C_in x C_out.
Tensor masked_conv2d(const Tensor& x, const Tensor& w, const Tensor& b);
Var masked_conv2d(const Var& x, const Var& w, const Var& b);

Tensor concat_channels(const Tensor& a, const Tensor& b);
Var concat_channels(const Var& a, const Var& b);
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end);
Var slice_channels(const Var& x, std::size_t begin, std::size_t end);

Tensor lower_bound(const Tensor& x, double bound);
Var lower_bound(const Var& x, double bound);

// Discretized Gaussian bin mass floored at p_min (see entropy.hpp).
Tensor gaussian_likelihood(const Tensor& y, const Tensor& mu, const Tensor& sigma);
Var gaussian_likelihood(const Var& y, const Var& mu, const Var& sigma);

// Bin mass of the learned monotone per-channel CDF, floored at p_min.
Tensor factorized_likelihood(const Tensor& z, std::span<const Tensor> matrices,
                             std::span<const Tensor> biases, std::span<const Tensor> factors);
Var factorized_likelihood(const Var& z, std::span<const Var> matrices, std::span<const Var> biases,
                          std::span<const Var> factors);

// Scalar reductions.
Tensor sum_neg_log2(const Tensor& p);
Var sum_neg_log2(const Var& p);
Tensor mse(const Tensor& a, const Tensor& b);
Var mse(const Var& a, const Var& b);

}  // namespace ssmic::ops
