#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ssmic/range_coder.hpp"
#include "ssmic/tensor.hpp"
#include "ssmic/transforms.hpp"

namespace ssmic::codec {

// ---------------------------------------------------------------------------
// Images

// 8-bit RGB, row-major, interleaved.
struct ImageBuffer {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> rgb;
};

ImageBuffer read_png(const std::string& path);
void write_png(const ImageBuffer& img, const std::string& path);

// v / 255 into an H x W x 3 tensor.
Tensor to_tensor(const ImageBuffer& img);
// Clamps to [0, 1], scales by 255 and rounds half to even.
ImageBuffer from_tensor(const Tensor& x);

inline constexpr std::size_t kPadMultiple = 256;

struct PaddedImage {
  Tensor x;
  std::size_t height = 0;  // original extents
  std::size_t width = 0;
};

std::size_t padded_extent(std::size_t n, std::size_t multiple = kPadMultiple);
// Zero pads bottom and right up to the next multiple.
PaddedImage pad_image(const Tensor& x, std::size_t multiple = kPadMultiple);
// Top-left height x width window.
Tensor crop_image(const Tensor& x, std::size_t height, std::size_t width);

// ---------------------------------------------------------------------------
// Coding tables

inline constexpr std::size_t kScaleCount = 64;
inline constexpr double kScaleMin = 0.11;
inline constexpr double kScaleMax = 256.0;

// s_i = exp(ln 0.11 + i (ln 256 - ln 0.11) / 63).
const std::array<double, kScaleCount>& scale_table();
// Smallest table scale >= sigma (the last one for anything larger).
std::size_t scale_index(double sigma);

// Residuals r in [-M, M] map to symbol r + M; symbol 2M + 1 is the escape,
// followed by bypass-coded sign and Exp-Golomb magnitude.
struct GaussianTable {
  double scale = 0.0;
  std::int64_t half_width = 0;  // M
  rc::CdfTable cdf;
};
const GaussianTable& gaussian_table(std::size_t index);

// Per-channel table for the hyper-latent: symbols k - lo for k in [lo, hi],
// then the escape symbol.
struct PriorTable {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
  rc::CdfTable cdf;
};
std::vector<PriorTable> prior_tables(const entropy::FactorizedPrior& prior);

// Integer coding through a table with escape. Returns the bits charged,
// i.e. -log2 of the coded probability plus any bypass bits.
double encode_integer(rc::Encoder& enc, const rc::CdfTable& cdf, std::int64_t lo, std::int64_t hi,
                      std::int64_t value);
std::int64_t decode_integer(rc::Decoder& dec, const rc::CdfTable& cdf, std::int64_t lo, std::int64_t hi);

// ---------------------------------------------------------------------------
// Container

inline constexpr std::array<char, 4> kContainerMagic = {'S', 'S', 'M', 'I'};
inline constexpr std::uint8_t kContainerVersion = 1;

struct Container {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t padded_height = 0;
  std::uint32_t padded_width = 0;
  std::uint64_t config_digest = 0;
  std::string lambda_tag;
  std::vector<std::uint8_t> z_stream;
  std::vector<std::uint8_t> y_stream;

  std::size_t total_bits() const { return 8 * (z_stream.size() + y_stream.size()); }
  double bpp() const;
};

std::vector<std::uint8_t> serialize(const Container& c);
Container parse_container(const std::vector<std::uint8_t>& bytes);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_file(const std::string& path);

// ---------------------------------------------------------------------------
// Weights

void save_weights(const model::WeightStore& store, const std::string& path);
model::WeightStore load_weights(const std::string& path);
// Also checks the set against the config, listing every mismatch.
model::WeightStore load_weights(const std::string& path, const model::ModelConfig& cfg);

std::vector<std::uint8_t> serialize_weights(const model::WeightStore& store);
model::WeightStore parse_weights(const std::vector<std::uint8_t>& bytes);

// ---------------------------------------------------------------------------
// Pipeline

struct Model {
  model::ModelConfig config;
  model::ModelParams params;
  std::uint64_t digest = 0;
};
Model make_model(const model::ModelConfig& cfg, const model::WeightStore& store);

struct EncodeResult {
  Container container;
  Tensor y_hat;
  Tensor z_hat;
  Tensor x_hat;  // cropped and clamped; only filled when requested
  // Bits implied by the probabilities the coder used, plus bypass bits.
  double z_bits_estimate = 0.0;
  double y_bits_estimate = 0.0;
};

struct DecodeResult {
  Tensor y_hat;
  Tensor z_hat;
  Tensor x_hat;  // H x W x 3 in [0, 1], cropped
};

// x is H x W x 3 in unit range.
EncodeResult encode_image(const Tensor& x, const Model& m, const std::string& lambda_tag = "",
                          bool reconstruct = false);
DecodeResult decode_image(const Container& c, const Model& m);

}  // namespace ssmic::codec
