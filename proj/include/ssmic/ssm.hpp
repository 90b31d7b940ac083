#pragma once

#include <cstddef>

#include "ssmic/tensor.hpp"

namespace ssmic::ssm {

// Continuous single-input single-output state space model
//   h'(t) = A h(t) + B x(t),  y(t) = C h(t)
// with A: N x N, B: N x 1, C: 1 x N.
struct SsmParams {
  Tensor a;
  Tensor b;
  Tensor c;

  std::size_t state_dim() const { return a.dim(0); }
};

struct DiscreteSsmParams {
  Tensor a_bar;  // N x N
  Tensor b_bar;  // N x 1
  double step = 0.0;
};

// Below this infinity norm of step * A, B_bar comes from the power series of
// (exp(M) - I) / M instead of a linear solve.
inline constexpr double kZohSeriesThreshold = 0.5;

// Zero-order-hold discretization:
//   A_bar = exp(step A),  B_bar = (step A)^-1 (exp(step A) - I) step B.
DiscreteSsmParams discretize_zoh(const SsmParams& p, double step);

// exp(M) for a square matrix: Pade(6,6) with scaling and squaring.
Tensor matrix_exp(const Tensor& m);

// h_t = A_bar h_{t-1} + B_bar x_t, y_t = C h_t, starting from h_{-1} = 0.
Tensor scan_recurrent(const DiscreteSsmParams& d, const Tensor& c, const Tensor& x);

// K = (C B_bar, C A_bar B_bar, ..., C A_bar^{L-1} B_bar).
Tensor build_kernel(const DiscreteSsmParams& d, const Tensor& c, std::size_t length);

// Causal convolution y_t = sum_{k <= t} K_k x_{t-k}.
Tensor scan_convolutional(const Tensor& kernel, const Tensor& x);

enum class ScanDiscretization {
  // A_bar_t = exp(delta_t A), B_bar_t = delta_t B_t.
  kSimplified,
  // A_bar_t = exp(delta_t A), B_bar_t = (exp(delta_t A) - 1) / A * B_t.
  kZoh,
};

// Inputs of one input-dependent (S6) scan over a length-L sequence with
// D channels and a diagonal state of size N per channel.
struct SelectiveScanInputs {
  Tensor x;       // L x D
  Tensor delta;   // L x D, strictly positive
  Tensor b;       // L x N
  Tensor c;       // L x N
  Tensor a_log;   // D x N, A = -exp(a_log)
  Tensor d_skip;  // D

  std::size_t length() const { return x.dim(0); }
  std::size_t channels() const { return x.dim(1); }
  std::size_t state_dim() const { return a_log.dim(1); }
};

void validate(const SelectiveScanInputs& s);

// Per channel d:
//   h_t = A_bar_t * h_{t-1} + B_bar_t x_t   (elementwise over the state)
//   y_t = <C_t, h_t> + d_skip[d] x_t
Tensor selective_scan(const SelectiveScanInputs& s,
                      ScanDiscretization mode = ScanDiscretization::kSimplified);

struct SelectiveScanGrads {
  Tensor x;
  Tensor delta;
  Tensor b;
  Tensor c;
  Tensor a_log;
  Tensor d_skip;
};

// Reverse-mode sweep of selective_scan given dL/dy.
SelectiveScanGrads selective_scan_backward(const SelectiveScanInputs& s, const Tensor& grad_y,
                                           ScanDiscretization mode = ScanDiscretization::kSimplified);

}  // namespace ssmic::ssm
