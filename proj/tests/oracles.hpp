#pragma once

// Independent reference implementations used by the tests. They favor
// direct transcription over speed and share no code with the library.

#include <cmath>
#include <cstddef>
#include <vector>

#include "ssmic/tensor.hpp"

namespace oracle {

using ssmic::Shape;
using ssmic::Tensor;

inline Tensor make(Shape s, std::vector<double> v) { return Tensor(std::move(s), std::move(v)); }

inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t n,
                                  std::size_t k, std::size_t m) {
  std::vector<double> c(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a[i * k + t] * b[t * m + j];
      c[i * m + j] = s;
    }
  return c;
}

inline std::vector<std::vector<double>> identity(std::size_t n) {
  std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) m[i][i] = 1.0;
  return m;
}

inline std::vector<std::vector<double>> mat_mul(const std::vector<std::vector<double>>& a,
                                                const std::vector<std::vector<double>>& b) {
  const std::size_t n = a.size(), k = b.size(), m = b[0].size();
  std::vector<std::vector<double>> c(n, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t t = 0; t < k; ++t) c[i][j] += a[i][t] * b[t][j];
  return c;
}

// Taylor series with scaling and squaring, carried far past double precision.
inline std::vector<std::vector<double>> expm(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  double norm = 0.0;
  for (const auto& row : a) {
    double s = 0.0;
    for (double v : row) s += std::fabs(v);
    norm = std::max(norm, s);
  }
  int squarings = 0;
  while (norm > 0.125) {
    norm /= 2.0;
    ++squarings;
  }
  const double f = std::ldexp(1.0, -squarings);
  for (auto& row : a)
    for (double& v : row) v *= f;
  auto result = identity(n), term = identity(n);
  for (int k = 1; k <= 30; ++k) {
    term = mat_mul(term, a);
    for (auto& row : term)
      for (double& v : row) v /= k;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) result[i][j] += term[i][j];
  }
  for (int s = 0; s < squarings; ++s) result = mat_mul(result, result);
  return result;
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }

// y = x W + b over rows of an n x cin matrix.
inline std::vector<double> linear(const std::vector<double>& x, std::size_t n, std::size_t cin,
                                  const Tensor& w, const Tensor* b) {
  const std::size_t cout = w.dim(1);
  std::vector<double> y(n * cout, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < cout; ++o) {
      double s = 0.0;
      for (std::size_t c = 0; c < cin; ++c) s += x[i * cin + c] * w[c * cout + o];
      y[i * cout + o] = s + (b ? (*b)[o] : 0.0);
    }
  return y;
}

inline std::vector<double> rms_norm(const std::vector<double>& x, std::size_t n, std::size_t c, const Tensor& g,
                                    double eps) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < n; ++i) {
    double ms = 0.0;
    for (std::size_t j = 0; j < c; ++j) ms += x[i * c + j] * x[i * c + j];
    ms /= static_cast<double>(c);
    const double r = 1.0 / std::sqrt(ms + eps);
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] = x[i * c + j] * r * g[j];
  }
  return y;
}

// Depthwise "same" correlation, H x W x C input, k x k x C kernel.
inline std::vector<double> dwconv(const std::vector<double>& x, std::size_t h, std::size_t w, std::size_t c,
                                  const Tensor& kern) {
  const std::size_t k = kern.dim(0);
  const long r = static_cast<long>(k / 2);
  std::vector<double> y(x.size(), 0.0);
  for (long i = 0; i < static_cast<long>(h); ++i)
    for (long j = 0; j < static_cast<long>(w); ++j)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (long di = -r; di <= r; ++di)
          for (long dj = -r; dj <= r; ++dj) {
            const long ii = i + di, jj = j + dj;
            if (ii < 0 || jj < 0 || ii >= static_cast<long>(h) || jj >= static_cast<long>(w)) continue;
            s += x[(ii * w + jj) * c + ch] * kern[((di + r) * k + (dj + r)) * c + ch];
          }
        y[(i * w + j) * c + ch] = s;
      }
  return y;
}

// Selective scan with the simplified discretization, one channel at a time.
inline std::vector<double> selective_scan(const std::vector<double>& x, const std::vector<double>& delta,
                                          const std::vector<double>& b, const std::vector<double>& c,
                                          const Tensor& a_log, const Tensor& d_skip, std::size_t len,
                                          std::size_t d, std::size_t n, bool zoh = false) {
  std::vector<double> y(len * d, 0.0);
  for (std::size_t ch = 0; ch < d; ++ch) {
    std::vector<double> h(n, 0.0);
    for (std::size_t t = 0; t < len; ++t) {
      const double dt = delta[t * d + ch], xt = x[t * d + ch];
      double out = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const double a = -std::exp(a_log[ch * n + s]);
        const double abar = std::exp(dt * a);
        const double bbar = zoh ? (abar - 1.0) / a * b[t * n + s] : dt * b[t * n + s];
        h[s] = abar * h[s] + bbar * xt;
        out += c[t * n + s] * h[s];
      }
      y[t * d + ch] = out + d_skip[ch] * xt;
    }
  }
  return y;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace oracle
