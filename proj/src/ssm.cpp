#include "ssmic/ssm.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "ssmic/error.hpp"
#include "ssmic/parallel.hpp"

namespace ssmic::ssm {
namespace {

using Mat = std::vector<double>;  // row-major n x n, or n x m for right-hand sides

double inf_norm(const Mat& m, std::size_t rows, std::size_t cols) {
  double best = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::abs(m[i * cols + j]);
    best = std::max(best, s);
  }
  return best;
}

Mat mat_mul(const Mat& a, const Mat& b, std::size_t n, std::size_t m) {
  // a: n x n, b: n x m
  Mat out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      const double av = a[i * n + k];
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += av * b[k * m + j];
    }
  return out;
}

Mat identity(std::size_t n) {
  Mat id(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) id[i * n + i] = 1.0;
  return id;
}

// Solves a X = rhs (a: n x n, rhs: n x m) by LU with partial pivoting.
// Returns false when a pivot falls below tol.
bool solve(Mat a, Mat rhs, std::size_t n, std::size_t m, double tol, Mat& x) {
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    if (!(std::abs(a[piv * n + col]) > tol)) return false;
    if (piv != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a[col * n + j], a[piv * n + j]);
      for (std::size_t j = 0; j < m; ++j) std::swap(rhs[col * m + j], rhs[piv * m + j]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / a[col * n + col];
      if (f == 0.0) continue;
      for (std::size_t j = col; j < n; ++j) a[r * n + j] -= f * a[col * n + j];
      for (std::size_t j = 0; j < m; ++j) rhs[r * m + j] -= f * rhs[col * m + j];
    }
  }
  x.assign(n * m, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = rhs[i * m + j];
      for (std::size_t k = i + 1; k < n; ++k) s -= a[i * n + k] * x[k * m + j];
      x[i * m + j] = s / a[i * n + i];
    }
  }
  return true;
}

Mat pade_exp(const Mat& m, std::size_t n) {
  static constexpr double kCoef[] = {1.0,          1.0 / 2.0,     5.0 / 44.0,      1.0 / 66.0,
                                     1.0 / 792.0,  1.0 / 15840.0, 1.0 / 665280.0};
  int squarings = 0;
  const double norm = inf_norm(m, n, n);
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const double s = std::ldexp(1.0, -squarings);
  Mat x(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) x[i] = m[i] * s;

  Mat num = identity(n);
  Mat den = identity(n);
  Mat power = identity(n);
  for (int k = 1; k <= 6; ++k) {
    power = mat_mul(power, x, n, n);
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    for (std::size_t i = 0; i < n * n; ++i) {
      num[i] += kCoef[k] * power[i];
      den[i] += sign * kCoef[k] * power[i];
    }
  }
  Mat result;
  if (!solve(den, num, n, n, 0.0, result))
    fail(ErrorCode::kNumeric, "matrix_exp: singular Pade denominator");
  for (int i = 0; i < squarings; ++i) result = mat_mul(result, result, n, n);
  return result;
}

}  // namespace

Tensor matrix_exp(const Tensor& m) {
  require(m.rank() == 2 && m.dim(0) == m.dim(1), ErrorCode::kShapeMismatch,
          "matrix_exp needs a square matrix, got " + shape_str(m.shape()));
  const std::size_t n = m.dim(0);
  return Tensor({n, n}, pade_exp(m.to_vector(), n));
}

DiscreteSsmParams discretize_zoh(const SsmParams& p, double step) {
  require(step > 0.0 && std::isfinite(step), ErrorCode::kInvalidArgument,
          "discretize_zoh: step must be positive, got " + std::to_string(step));
  require(p.a.rank() == 2 && p.a.dim(0) == p.a.dim(1), ErrorCode::kShapeMismatch,
          "discretize_zoh: A must be N x N");
  const std::size_t n = p.a.dim(0);
  require_shape(p.b, {n, 1}, "discretize_zoh: B");

  Mat m(n * n);
  for (std::size_t i = 0; i < n * n; ++i) m[i] = step * p.a[i];
  Mat db(n);
  for (std::size_t i = 0; i < n; ++i) db[i] = step * p.b[i];

  Mat a_bar = pade_exp(m, n);
  Mat b_bar(n, 0.0);
  const double norm = inf_norm(m, n, n);
  if (norm < kZohSeriesThreshold) {
    // sum_k M^k / (k+1)! * (step B)
    Mat term = db;
    b_bar = db;
    for (int k = 1; k < 200; ++k) {
      term = mat_mul(m, term, n, 1);
      for (double& v : term) v /= static_cast<double>(k + 1);
      double tnorm = 0.0, snorm = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        b_bar[i] += term[i];
        tnorm = std::max(tnorm, std::abs(term[i]));
        snorm = std::max(snorm, std::abs(b_bar[i]));
      }
      if (tnorm <= 1e-14 * snorm || tnorm == 0.0) break;
    }
  } else {
    Mat rhs(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += (a_bar[i * n + j] - (i == j ? 1.0 : 0.0)) * db[j];
      rhs[i] = s;
    }
    if (!solve(m, rhs, n, 1, 1e-13 * norm, b_bar))
      fail(ErrorCode::kNumeric, "discretize_zoh: step*A is singular outside the series regime");
  }
  return {Tensor({n, n}, std::move(a_bar)), Tensor({n, 1}, std::move(b_bar)), step};
}

Tensor scan_recurrent(const DiscreteSsmParams& d, const Tensor& c, const Tensor& x) {
  const std::size_t n = d.a_bar.dim(0);
  require_shape(d.b_bar, {n, 1}, "scan_recurrent: B_bar");
  require_shape(c, {1, n}, "scan_recurrent: C");
  require(x.rank() == 1, ErrorCode::kShapeMismatch, "scan_recurrent: x must be a length-L vector");
  const std::size_t L = x.dim(0);
  std::vector<double> h(n, 0.0), next(n);
  std::vector<double> y(L);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += d.a_bar[i * n + j] * h[j];
      next[i] = s + d.b_bar[i] * x[t];
    }
    h.swap(next);
    double out = 0.0;
    for (std::size_t i = 0; i < n; ++i) out += c[i] * h[i];
    y[t] = out;
  }
  return Tensor({L}, std::move(y));
}

Tensor build_kernel(const DiscreteSsmParams& d, const Tensor& c, std::size_t length) {
  require(length >= 1, ErrorCode::kInvalidArgument, "build_kernel: length must be >= 1");
  const std::size_t n = d.a_bar.dim(0);
  require_shape(d.b_bar, {n, 1}, "build_kernel: B_bar");
  require_shape(c, {1, n}, "build_kernel: C");
  std::vector<double> v = d.b_bar.to_vector(), next(n);
  std::vector<double> k(length);
  for (std::size_t t = 0; t < length; ++t) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += c[i] * v[i];
    k[t] = s;
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += d.a_bar[i * n + j] * v[j];
      next[i] = acc;
    }
    v.swap(next);
  }
  return Tensor({length}, std::move(k));
}

Tensor scan_convolutional(const Tensor& kernel, const Tensor& x) {
  require(kernel.rank() == 1 && x.rank() == 1, ErrorCode::kShapeMismatch,
          "scan_convolutional: kernel and x must be vectors");
  require(kernel.dim(0) == x.dim(0), ErrorCode::kShapeMismatch,
          "scan_convolutional: kernel length " + std::to_string(kernel.dim(0)) +
              " != input length " + std::to_string(x.dim(0)));
  const std::size_t L = x.dim(0);
  std::vector<double> y(L, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    double s = 0.0;
    for (std::size_t k = 0; k <= t; ++k) s += kernel[k] * x[t - k];
    y[t] = s;
  }
  return Tensor({L}, std::move(y));
}

// ---------------------------------------------------------------------------
// Selective scan

void validate(const SelectiveScanInputs& s) {
  require(s.x.rank() == 2, ErrorCode::kShapeMismatch, "selective_scan: x must be L x D");
  const std::size_t L = s.x.dim(0), D = s.x.dim(1);
  require(s.a_log.rank() == 2 && s.a_log.dim(0) == D, ErrorCode::kShapeMismatch,
          "selective_scan: a_log must be D x N, got " + shape_str(s.a_log.shape()));
  const std::size_t N = s.a_log.dim(1);
  require_shape(s.delta, {L, D}, "selective_scan: delta");
  require_shape(s.b, {L, N}, "selective_scan: B");
  require_shape(s.c, {L, N}, "selective_scan: C");
  require_shape(s.d_skip, {D}, "selective_scan: d_skip");
  for (double v : s.delta.data())
    require(v > 0.0, ErrorCode::kInvalidArgument, "selective_scan: delta must be strictly positive");
}

namespace {

struct Coeffs {
  double a_bar;
  double beta;       // input coefficient, B_bar = beta * B
  double dbeta_dt;   // d beta / d delta
  double dbeta_da;   // d beta / d A
};

inline Coeffs coeffs(double dt, double a, ScanDiscretization mode) {
  const double a_bar = std::exp(dt * a);
  if (mode == ScanDiscretization::kSimplified) return {a_bar, dt, 1.0, 0.0};
  const double beta = std::expm1(dt * a) / a;
  return {a_bar, beta, a_bar, (dt * a_bar - beta) / a};
}

}  // namespace

Tensor selective_scan(const SelectiveScanInputs& s, ScanDiscretization mode) {
  validate(s);
  const std::size_t L = s.length(), D = s.channels(), N = s.state_dim();
  std::vector<double> a(D * N);
  for (std::size_t i = 0; i < D * N; ++i) a[i] = -std::exp(s.a_log[i]);
  std::vector<double> y(L * D);
  const double* x = s.x.raw();
  const double* dt = s.delta.raw();
  const double* b = s.b.raw();
  const double* c = s.c.raw();
  parallel_for(D, 4, [&](std::size_t d0, std::size_t d1) {
    std::vector<double> h(N);
    for (std::size_t d = d0; d < d1; ++d) {
      std::fill(h.begin(), h.end(), 0.0);
      const double* ad = a.data() + d * N;
      for (std::size_t t = 0; t < L; ++t) {
        const double xv = x[t * D + d];
        const double dv = dt[t * D + d];
        double out = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          const Coeffs k = coeffs(dv, ad[n], mode);
          h[n] = k.a_bar * h[n] + k.beta * b[t * N + n] * xv;
          out += c[t * N + n] * h[n];
        }
        y[t * D + d] = out + s.d_skip[d] * xv;
      }
    }
  });
  return Tensor({L, D}, std::move(y));
}

SelectiveScanGrads selective_scan_backward(const SelectiveScanInputs& s, const Tensor& grad_y,
                                           ScanDiscretization mode) {
  validate(s);
  const std::size_t L = s.length(), D = s.channels(), N = s.state_dim();
  require_shape(grad_y, {L, D}, "selective_scan_backward: grad_y");
  std::vector<double> a(D * N);
  for (std::size_t i = 0; i < D * N; ++i) a[i] = -std::exp(s.a_log[i]);

  std::vector<double> gx(L * D, 0.0), gdt(L * D, 0.0), gb(L * N, 0.0), gc(L * N, 0.0);
  std::vector<double> ga(D * N, 0.0), gskip(D, 0.0);
  std::vector<double> states((L + 1) * N);  // states[t+1] = h_t, states[0] = h_{-1} = 0
  std::vector<double> gh(N);

  for (std::size_t d = 0; d < D; ++d) {
    const double* ad = a.data() + d * N;
    std::fill(states.begin(), states.begin() + N, 0.0);
    for (std::size_t t = 0; t < L; ++t) {
      const double xv = s.x[t * D + d];
      const double dv = s.delta[t * D + d];
      for (std::size_t n = 0; n < N; ++n) {
        const Coeffs k = coeffs(dv, ad[n], mode);
        states[(t + 1) * N + n] = k.a_bar * states[t * N + n] + k.beta * s.b[t * N + n] * xv;
      }
    }
    std::fill(gh.begin(), gh.end(), 0.0);
    for (std::size_t t = L; t-- > 0;) {
      const double xv = s.x[t * D + d];
      const double dv = s.delta[t * D + d];
      const double gy = grad_y[t * D + d];
      gskip[d] += gy * xv;
      gx[t * D + d] += gy * s.d_skip[d];
      for (std::size_t n = 0; n < N; ++n) {
        const Coeffs k = coeffs(dv, ad[n], mode);
        const double h_t = states[(t + 1) * N + n];
        const double h_prev = states[t * N + n];
        const double bv = s.b[t * N + n];
        gh[n] += s.c[t * N + n] * gy;
        gc[t * N + n] += gy * h_t;
        const double g_abar = gh[n] * h_prev;
        const double g_beta = gh[n] * bv * xv;
        gb[t * N + n] += gh[n] * k.beta * xv;
        gx[t * D + d] += gh[n] * k.beta * bv;
        gdt[t * D + d] += g_abar * k.a_bar * ad[n] + g_beta * k.dbeta_dt;
        ga[d * N + n] += g_abar * k.a_bar * dv + g_beta * k.dbeta_da;
        gh[n] *= k.a_bar;
      }
    }
  }
  // A = -exp(a_log) so dA/da_log = A.
  for (std::size_t i = 0; i < D * N; ++i) ga[i] *= a[i];
  return {Tensor({L, D}, std::move(gx)),   Tensor({L, D}, std::move(gdt)),
          Tensor({L, N}, std::move(gb)),   Tensor({L, N}, std::move(gc)),
          Tensor({D, N}, std::move(ga)),   Tensor({D}, std::move(gskip))};
}

}  // namespace ssmic::ssm
