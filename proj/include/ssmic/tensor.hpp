#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ssmic {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. Storage is shared and immutable once the
// tensor is constructed, so copies are cheap and safe to hand across threads.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_->size(); }

  std::span<const double> data() const { return *data_; }
  const double* raw() const { return data_->data(); }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::initializer_list<std::size_t> index) const;
  std::size_t offset(std::span<const std::size_t> index) const;

  // Same storage, new extents; element count must match.
  Tensor reshape(Shape shape) const;
  std::vector<double> to_vector() const { return *data_; }

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
};

std::vector<std::size_t> strides(const Shape& shape);
bool same_shape(const Tensor& a, const Tensor& b);
void require_shape(const Tensor& t, const Shape& expected, const char* what);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool bit_equal(const Tensor& a, const Tensor& b);

// xoshiro256** seeded through splitmix64. Only integer arithmetic feeds the
// state, so a seed yields the same stream on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // 53-bit uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  std::uint64_t below(std::uint64_t bound);
  // Box-Muller; consumes two uniforms per sample.
  double normal();
  // Rejection-sampled normal restricted to |x| <= bound_sigmas * stddev.
  double truncated_normal(double stddev, double bound_sigmas = 2.0);

 private:
  std::uint64_t s_[4];
};

Tensor random_uniform(const Shape& shape, Rng& rng, double lo, double hi);
Tensor random_normal(const Shape& shape, Rng& rng, double stddev = 1.0);

// Matrix product of rank-2 tensors, accumulated in ascending inner index.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Depthwise cross-correlation of an H x W x C map with a k x k x C kernel,
// zero "same" padding. k must be odd.
Tensor conv2d_depthwise(const Tensor& f, const Tensor& kernel);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor exp(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor round_half_even(const Tensor& a);
// x + U(-half_width, half_width), one draw per element in flat order.
Tensor uniform_noise(const Tensor& x, Rng& rng, double half_width = 0.5);

double softplus(double x);
double sigmoid(double x);
double silu(double x);
double round_half_even(double x);
double inverse_softplus(double y);

}  // namespace ssmic
