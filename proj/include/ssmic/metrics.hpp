#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ssmic/codec.hpp"
#include "ssmic/transforms.hpp"

namespace ssmic::metrics {

// ---------------------------------------------------------------------------
// Distortion

double mse(const codec::ImageBuffer& a, const codec::ImageBuffer& b);
// 10 log10(255^2 / MSE) over all RGB samples; identical images give +inf.
double psnr(const codec::ImageBuffer& a, const codec::ImageBuffer& b);
double psnr_from_mse(double mse);

// ---------------------------------------------------------------------------
// Rate-distortion curves

struct RdPoint {
  double bpp = 0.0;
  double psnr = 0.0;
};

// Bjontegaard delta rate in percent. Each curve is fitted with a cubic
// polynomial log10(bpp) = p(PSNR); the fits are compared over the shared
// PSNR interval by trapezoidal integration with 1000 samples. Negative
// means the test curve needs fewer bits than the anchor.
double bd_rate(const std::vector<RdPoint>& anchor, const std::vector<RdPoint>& test);

// Least-squares polynomial coefficients, lowest order first.
std::vector<double> polyfit(const std::vector<double>& x, const std::vector<double>& y, std::size_t degree);
double polyval(const std::vector<double>& coeffs, double x);

// CSV with a header containing "bpp" and "psnr" columns; other columns are
// ignored. Rows are returned in file order.
std::vector<RdPoint> read_rd_csv(const std::string& path);
std::vector<RdPoint> parse_rd_csv(const std::string& text);

// Gnuplot script plotting PSNR against bpp for each CSV.
std::string gnuplot_script(const std::vector<std::string>& csv_paths, const std::string& output_png);

// ---------------------------------------------------------------------------
// Complexity

// Costing constants for non-MAC work, in FLOPs per element.
inline constexpr std::uint64_t kFlopsBias = 1;
inline constexpr std::uint64_t kFlopsAdd = 1;
inline constexpr std::uint64_t kFlopsSilu = 4;      // exp, add, divide, multiply
inline constexpr std::uint64_t kFlopsSoftplus = 3;  // exp, add, log
inline constexpr std::uint64_t kFlopsNormPerElement = 4;  // square, accumulate, scale, gain
inline constexpr std::uint64_t kFlopsNormPerToken = 3;    // mean, add eps, rsqrt
inline constexpr std::uint64_t kFlopsDiscretize = 3;      // delta*A, exp, delta*B per state
inline constexpr std::uint64_t kFlopsBound = 1;           // lower bound compare

struct LayerCost {
  std::string name;
  std::string kind;
  std::uint64_t macs = 0;
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
};

struct ComplexityReport {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<LayerCost> layers;
  std::uint64_t macs = 0;
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
};

// Per-layer rules:
//   linear        tokens * in * out MACs, 2 MACs + tokens * out bias FLOPs
//   dwconv        H * W * k^2 * C MACs, FLOPs = 2 MACs
//   selective     per path L * D * N * 3 MACs (two for the state update, one
//   scan          for the readout) + L * D for the skip; FLOPs = 2 MACs +
//                 L * D * N * kFlopsDiscretize + L * D * kFlopsSoftplus
//   context       H * W * T * C_in * C_out MACs with T = (k^2 - 1) / 2 causal
//                 taps, border zeros counted as work
//   rms norm, activations, residual adds and cross merge: FLOPs only
// The factorized prior and the entropy coder are not counted.
ComplexityReport count_complexity(const model::ModelConfig& cfg, std::size_t height, std::size_t width);

// Layer-level helpers, also used by the tests.
LayerCost linear_cost(const std::string& name, std::uint64_t tokens, std::uint64_t in, std::uint64_t out,
                      bool bias);
LayerCost dwconv_cost(const std::string& name, std::uint64_t h, std::uint64_t w, std::uint64_t k,
                      std::uint64_t c);
LayerCost scan_cost(const std::string& name, std::uint64_t length, std::uint64_t d, std::uint64_t n);
void add_layer(ComplexityReport& r, LayerCost layer);

std::string complexity_csv(const ComplexityReport& r);
std::string complexity_table(const ComplexityReport& r);

// ---------------------------------------------------------------------------
// Latency

struct LatencyReport {
  std::size_t warmup = 0;
  std::size_t iterations = 0;
  double mean_ms = 0.0;
  double std_ms = 0.0;
  double min_ms = 0.0;
  std::string machine;
};

std::string machine_descriptor();
// Runs fn warmup times, then times iterations calls with the kernel worker
// count pinned to one.
LatencyReport bench_latency(const std::function<void()>& fn, std::size_t warmup, std::size_t iterations);
std::string latency_csv(const LatencyReport& r, const std::string& label);
std::string latency_table(const LatencyReport& r, const std::string& label);

}  // namespace ssmic::metrics
