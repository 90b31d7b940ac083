#include "ssmic/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "ssmic/error.hpp"
#include "ssmic/parallel.hpp"

namespace ssmic {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : shape_{}, data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  for (std::size_t e : shape_)
    require(e > 0, ErrorCode::kShapeMismatch, "tensor extents must be positive, got " + shape_str(shape_));
  require(numel(shape_) == data.size(), ErrorCode::kShapeMismatch,
          "tensor shape " + shape_str(shape_) + " does not match " + std::to_string(data.size()) +
              " values");
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  require(axis < shape_.size(), ErrorCode::kShapeMismatch,
          "axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  return shape_[axis];
}

std::size_t Tensor::offset(std::span<const std::size_t> index) const {
  require(index.size() == shape_.size(), ErrorCode::kShapeMismatch, "index rank mismatch");
  std::size_t off = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] < shape_[i], ErrorCode::kShapeMismatch, "index out of range");
    off = off * shape_[i] + index[i];
  }
  return off;
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  return (*data_)[offset(std::span<const std::size_t>(index.begin(), index.size()))];
}

Tensor Tensor::reshape(Shape shape) const {
  require(numel(shape) == size(), ErrorCode::kShapeMismatch,
          "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

std::vector<std::size_t> strides(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

void require_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected)
    fail(ErrorCode::kShapeMismatch, std::string(what) + ": expected " + shape_str(expected) +
                                        ", got " + shape_str(t.shape()));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(same_shape(a, b), ErrorCode::kShapeMismatch,
          "max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return same_shape(a, b) && std::memcmp(a.raw(), b.raw(), a.size() * sizeof(double)) == 0;
}

// ---------------------------------------------------------------------------
// Rng

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) {
  for (auto& s : s_) s = splitmix64(seed);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = std::rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = std::rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t Rng::below(std::uint64_t bound) {
  require(bound > 0, ErrorCode::kInvalidArgument, "Rng::below needs a positive bound");
  // Rejection sampling avoids modulo bias.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % bound;
}

double Rng::normal() {
  double u1 = uniform();
  double u2 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::truncated_normal(double stddev, double bound_sigmas) {
  for (;;) {
    double v = normal();
    if (std::abs(v) <= bound_sigmas) return v * stddev;
  }
}

Tensor random_uniform(const Shape& shape, Rng& rng, double lo, double hi) {
  std::vector<double> d(numel(shape));
  for (auto& v : d) v = rng.uniform(lo, hi);
  return Tensor(shape, std::move(d));
}

Tensor random_normal(const Shape& shape, Rng& rng, double stddev) {
  std::vector<double> d(numel(shape));
  for (auto& v : d) v = rng.normal() * stddev;
  return Tensor(shape, std::move(d));
}

// ---------------------------------------------------------------------------
// Linear algebra and convolution

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, ErrorCode::kShapeMismatch,
          "matmul needs rank-2 operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, ErrorCode::kShapeMismatch,
          "matmul inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.raw();
  const double* pb = b.raw();
  parallel_for(m, std::max<std::size_t>(1, 16384 / std::max<std::size_t>(1, k * n)),
               [&](std::size_t r0, std::size_t r1) {
                 for (std::size_t i = r0; i < r1; ++i) {
                   double* row = out.data() + i * n;
                   for (std::size_t p = 0; p < k; ++p) {
                     const double av = pa[i * k + p];
                     const double* brow = pb + p * n;
                     for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
                   }
                 }
               });
  return Tensor({m, n}, std::move(out));
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, ErrorCode::kShapeMismatch, "transpose needs rank 2");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return Tensor({n, m}, std::move(out));
}

Tensor conv2d_depthwise(const Tensor& f, const Tensor& kernel) {
  require(f.rank() == 3, ErrorCode::kShapeMismatch, "conv2d_depthwise input must be H x W x C");
  require(kernel.rank() == 3 && kernel.dim(0) == kernel.dim(1), ErrorCode::kShapeMismatch,
          "conv2d_depthwise kernel must be k x k x C, got " + shape_str(kernel.shape()));
  const std::size_t k = kernel.dim(0);
  require(k % 2 == 1, ErrorCode::kInvalidArgument, "conv2d_depthwise kernel size must be odd");
  const std::size_t H = f.dim(0), W = f.dim(1), C = f.dim(2);
  require(kernel.dim(2) == C, ErrorCode::kShapeMismatch, "conv2d_depthwise channel mismatch");
  const long r = static_cast<long>(k / 2);
  std::vector<double> out(H * W * C, 0.0);
  const double* pf = f.raw();
  const double* pk = kernel.raw();
  parallel_for(H, 8, [&](std::size_t y0, std::size_t y1) {
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double* o = out.data() + (y * W + x) * C;
        for (long dy = -r; dy <= r; ++dy) {
          long yy = static_cast<long>(y) + dy;
          if (yy < 0 || yy >= static_cast<long>(H)) continue;
          for (long dx = -r; dx <= r; ++dx) {
            long xx = static_cast<long>(x) + dx;
            if (xx < 0 || xx >= static_cast<long>(W)) continue;
            const double* in = pf + (static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)) * C;
            const double* kw = pk + (static_cast<std::size_t>(dy + r) * k + static_cast<std::size_t>(dx + r)) * C;
            for (std::size_t c = 0; c < C; ++c) o[c] += in[c] * kw[c];
          }
        }
      }
  });
  return Tensor(f.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

template <class F>
Tensor map(const Tensor& a, F f) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return Tensor(a.shape(), std::move(out));
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, const char* what, F f) {
  require(same_shape(a, b), ErrorCode::kShapeMismatch,
          std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return Tensor(a.shape(), std::move(out));
}

}  // namespace

double softplus(double x) {
  // log1p(exp(x)) without overflow.
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double silu(double x) { return x * sigmoid(x); }

double round_half_even(double x) { return std::nearbyint(x); }

double inverse_softplus(double y) {
  require(y > 0, ErrorCode::kInvalidArgument, "inverse_softplus needs y > 0");
  return y + std::log(-std::expm1(-y));
}

Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return zip(a, b, "mul", [](double x, double y) { return x * y; });
}
Tensor scale(const Tensor& a, double s) {
  return map(a, [s](double x) { return x * s; });
}
Tensor exp(const Tensor& a) {
  return map(a, [](double x) { return std::exp(x); });
}
Tensor softplus(const Tensor& a) {
  return map(a, [](double x) { return softplus(x); });
}
Tensor sigmoid(const Tensor& a) {
  return map(a, [](double x) { return sigmoid(x); });
}
Tensor silu(const Tensor& a) {
  return map(a, [](double x) { return silu(x); });
}
Tensor round_half_even(const Tensor& a) {
  return map(a, [](double x) { return round_half_even(x); });
}

Tensor uniform_noise(const Tensor& x, Rng& rng, double half_width) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + rng.uniform(-half_width, half_width);
  return Tensor(x.shape(), std::move(out));
}

}  // namespace ssmic
