#include "ssmic/codec.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "bytes.hpp"
#include "ssmic/entropy.hpp"
#include "ssmic/error.hpp"

namespace ssmic::codec {

// ---------------------------------------------------------------------------
// Images

ImageBuffer read_png(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    fail(ErrorCode::kIo, "cannot read PNG " + path + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  ImageBuffer out;
  out.height = image.height;
  out.width = image.width;
  out.rgb.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.rgb.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorCode::kIo, "cannot decode PNG " + path + ": " + msg);
  }
  return out;
}

void write_png(const ImageBuffer& img, const std::string& path) {
  require(img.rgb.size() == img.height * img.width * 3 && img.height > 0 && img.width > 0,
          ErrorCode::kInvalidArgument, "image buffer size does not match its extents");
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.rgb.data(), 0, nullptr))
    fail(ErrorCode::kIo, "cannot write PNG " + path + ": " + image.message);
}

Tensor to_tensor(const ImageBuffer& img) {
  require(img.rgb.size() == img.height * img.width * 3 && img.height > 0 && img.width > 0,
          ErrorCode::kInvalidArgument, "image buffer size does not match its extents");
  std::vector<double> v(img.rgb.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(img.rgb[i]) / 255.0;
  return Tensor({img.height, img.width, 3}, std::move(v));
}

ImageBuffer from_tensor(const Tensor& x) {
  require(x.rank() == 3 && x.dim(2) == 3, ErrorCode::kShapeMismatch,
          "expected an H x W x 3 image, got " + shape_str(x.shape()));
  ImageBuffer img;
  img.height = x.dim(0);
  img.width = x.dim(1);
  img.rgb.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = std::clamp(x[i], 0.0, 1.0);
    require(!std::isnan(x[i]), ErrorCode::kNumeric, "image contains NaN");
    img.rgb[i] = static_cast<std::uint8_t>(round_half_even(v * 255.0));
  }
  return img;
}

std::size_t padded_extent(std::size_t n, std::size_t multiple) {
  require(n >= 1 && multiple >= 1, ErrorCode::kInvalidArgument, "extents must be positive");
  return (n + multiple - 1) / multiple * multiple;
}

PaddedImage pad_image(const Tensor& x, std::size_t multiple) {
  require(x.rank() == 3, ErrorCode::kShapeMismatch, "pad_image expects H x W x C");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::size_t ph = padded_extent(h, multiple), pw = padded_extent(w, multiple);
  if (ph == h && pw == w) return {x, h, w};
  std::vector<double> v(ph * pw * c, 0.0);
  for (std::size_t i = 0; i < h; ++i) std::copy_n(x.raw() + i * w * c, w * c, v.begin() + static_cast<std::ptrdiff_t>(i * pw * c));
  return {Tensor({ph, pw, c}, std::move(v)), h, w};
}

Tensor crop_image(const Tensor& x, std::size_t height, std::size_t width) {
  require(x.rank() == 3 && height >= 1 && width >= 1 && height <= x.dim(0) && width <= x.dim(1),
          ErrorCode::kShapeMismatch, "crop window exceeds the image");
  const std::size_t w = x.dim(1), c = x.dim(2);
  if (height == x.dim(0) && width == w) return x;
  std::vector<double> v(height * width * c);
  for (std::size_t i = 0; i < height; ++i)
    std::copy_n(x.raw() + i * w * c, width * c, v.begin() + static_cast<std::ptrdiff_t>(i * width * c));
  return Tensor({height, width, c}, std::move(v));
}

// ---------------------------------------------------------------------------
// Tables

const std::array<double, kScaleCount>& scale_table() {
  static const std::array<double, kScaleCount> table = [] {
    std::array<double, kScaleCount> t{};
    const double a = std::log(kScaleMin), b = std::log(kScaleMax);
    for (std::size_t i = 0; i < kScaleCount; ++i)
      t[i] = std::exp(a + static_cast<double>(i) * (b - a) / static_cast<double>(kScaleCount - 1));
    t.front() = kScaleMin;
    t.back() = kScaleMax;
    return t;
  }();
  return table;
}

std::size_t scale_index(double sigma) {
  require(!std::isnan(sigma), ErrorCode::kNumeric, "scale is NaN");
  const auto& t = scale_table();
  const auto it = std::lower_bound(t.begin(), t.end(), sigma);
  return it == t.end() ? kScaleCount - 1 : static_cast<std::size_t>(it - t.begin());
}

namespace {

constexpr std::size_t kMaxPriorAlphabet = 4096;

// Upper standard-normal quantile leaving tail_mass / 2 on one side.
double tail_quantile() {
  double lo = 0.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (entropy::normal_cdf(-mid) > entropy::kTailMass / 2 ? lo : hi) = mid;
  }
  return hi;
}

double floored(double p) { return std::max(p, entropy::kLikelihoodFloor); }

}  // namespace

const GaussianTable& gaussian_table(std::size_t index) {
  static const std::vector<GaussianTable> tables = [] {
    const double q = tail_quantile();
    std::vector<GaussianTable> out;
    for (double s : scale_table()) {
      GaussianTable g;
      g.scale = s;
      g.half_width = static_cast<std::int64_t>(std::ceil(s * q));
      std::vector<double> probs;
      for (std::int64_t r = -g.half_width; r <= g.half_width; ++r) {
        const double v = std::fabs(static_cast<double>(r));
        probs.push_back(floored(entropy::normal_cdf((0.5 - v) / s) - entropy::normal_cdf((-0.5 - v) / s)));
      }
      probs.push_back(floored(2.0 * entropy::normal_cdf(-(static_cast<double>(g.half_width) + 0.5) / s)));
      g.cdf = rc::build_cdf_table(probs);
      out.push_back(std::move(g));
    }
    return out;
  }();
  require(index < tables.size(), ErrorCode::kInvalidArgument, "scale index out of range");
  return tables[index];
}

std::vector<PriorTable> prior_tables(const entropy::FactorizedPrior& prior) {
  entropy::validate(prior);
  const double t = entropy::kTailMass / 2;
  const double target = std::log(t / (1.0 - t));  // logit of the lower quantile
  std::vector<PriorTable> out;
  for (std::size_t ch = 0; ch < entropy::channels(prior); ++ch) {
    auto logit = [&](double x) { return entropy::factorized_logit(prior, ch, x); };
    // x with logit(x) = goal, by bracketing then bisection.
    auto solve = [&](double goal) {
      double lo = -1.0, hi = 1.0;
      while (logit(lo) > goal && lo > -1e6) lo *= 2;
      while (logit(hi) < goal && hi < 1e6) hi *= 2;
      for (int i = 0; i < 80; ++i) {
        const double mid = 0.5 * (lo + hi);
        (logit(mid) < goal ? lo : hi) = mid;
      }
      return 0.5 * (lo + hi);
    };
    PriorTable pt;
    pt.lo = static_cast<std::int64_t>(std::floor(solve(target)));
    pt.hi = static_cast<std::int64_t>(std::ceil(solve(-target)));
    if (pt.hi - pt.lo + 2 > static_cast<std::int64_t>(kMaxPriorAlphabet)) {
      const auto median = static_cast<std::int64_t>(std::llround(solve(0.0)));
      const auto half = static_cast<std::int64_t>(kMaxPriorAlphabet / 2 - 1);
      pt.lo = std::max(pt.lo, median - half);
      pt.hi = std::min(pt.hi, pt.lo + 2 * half);
    }
    std::vector<double> probs;
    for (std::int64_t k = pt.lo; k <= pt.hi; ++k) {
      const double kd = static_cast<double>(k);
      probs.push_back(floored(sigmoid(logit(kd + 0.5)) - sigmoid(logit(kd - 0.5))));
    }
    const double below = sigmoid(logit(static_cast<double>(pt.lo) - 0.5));
    const double above = sigmoid(-logit(static_cast<double>(pt.hi) + 0.5));
    probs.push_back(floored(below + above));
    pt.cdf = rc::build_cdf_table(probs);
    out.push_back(std::move(pt));
  }
  return out;
}

namespace {

constexpr std::int64_t kMaxMagnitude = std::int64_t{1} << 52;

void put_bits(rc::Encoder& enc, std::uint64_t value, unsigned nbits) {
  while (nbits > 0) {
    const unsigned take = std::min(nbits, 16u);
    nbits -= take;
    enc.encode_bits(static_cast<std::uint32_t>((value >> nbits) & ((1u << take) - 1)), take);
  }
}

std::uint64_t get_bits(rc::Decoder& dec, unsigned nbits) {
  std::uint64_t v = 0;
  while (nbits > 0) {
    const unsigned take = std::min(nbits, 16u);
    nbits -= take;
    v = (v << take) | dec.decode_bits(take);
  }
  return v;
}

}  // namespace

double encode_integer(rc::Encoder& enc, const rc::CdfTable& cdf, std::int64_t lo, std::int64_t hi,
                      std::int64_t value) {
  require(value > -kMaxMagnitude && value < kMaxMagnitude, ErrorCode::kNumeric,
          "latent value " + std::to_string(value) + " is too large to code");
  const std::size_t escape = static_cast<std::size_t>(hi - lo + 1);
  if (value >= lo && value <= hi) {
    const auto s = static_cast<std::size_t>(value - lo);
    enc.encode(cdf, s);
    return -std::log2(rc::coded_probability(cdf, s));
  }
  enc.encode(cdf, escape);
  const bool negative = value < lo;
  const std::uint64_t excess = static_cast<std::uint64_t>(negative ? lo - 1 - value : value - hi - 1);
  // Sign, then Exp-Golomb: 6-bit length of excess + 1 and its bits below the MSB.
  const std::uint64_t w = excess + 1;
  const unsigned n = static_cast<unsigned>(std::bit_width(w));
  enc.encode_bits(negative ? 1 : 0, 1);
  enc.encode_bits(n - 1, 6);
  put_bits(enc, w, n - 1);
  return -std::log2(rc::coded_probability(cdf, escape)) + 7.0 + static_cast<double>(n - 1);
}

std::int64_t decode_integer(rc::Decoder& dec, const rc::CdfTable& cdf, std::int64_t lo, std::int64_t hi) {
  const std::size_t s = dec.decode(cdf);
  const std::size_t escape = static_cast<std::size_t>(hi - lo + 1);
  if (s < escape) return lo + static_cast<std::int64_t>(s);
  const bool negative = dec.decode_bits(1) != 0;
  const unsigned n = dec.decode_bits(6) + 1;
  require(n <= 53, ErrorCode::kCorrupt, "escape magnitude out of range");
  const std::uint64_t w = (std::uint64_t{1} << (n - 1)) | get_bits(dec, n - 1);
  const auto excess = static_cast<std::int64_t>(w - 1);
  return negative ? lo - 1 - excess : hi + 1 + excess;
}

// ---------------------------------------------------------------------------
// Container

double Container::bpp() const {
  return static_cast<double>(total_bits()) / (static_cast<double>(height) * static_cast<double>(width));
}

std::vector<std::uint8_t> serialize(const Container& c) {
  require(c.lambda_tag.size() <= 255, ErrorCode::kInvalidArgument, "lambda tag longer than 255 bytes");
  detail::ByteWriter w(true);
  w.bytes(kContainerMagic.data(), kContainerMagic.size());
  w.u8(kContainerVersion);
  w.u32(c.height);
  w.u32(c.width);
  w.u32(c.padded_height);
  w.u32(c.padded_width);
  w.u64(c.config_digest);
  w.u8(static_cast<std::uint8_t>(c.lambda_tag.size()));
  w.bytes(c.lambda_tag.data(), c.lambda_tag.size());
  w.u32(static_cast<std::uint32_t>(c.z_stream.size()));
  w.bytes(c.z_stream.data(), c.z_stream.size());
  w.u32(static_cast<std::uint32_t>(c.y_stream.size()));
  w.bytes(c.y_stream.data(), c.y_stream.size());
  return std::move(w.data());
}

Container parse_container(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, true, "container");
  const std::uint8_t* magic = r.take(4, "the magic");
  require(std::equal(kContainerMagic.begin(), kContainerMagic.end(), magic,
                     [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; }),
          ErrorCode::kMagicMismatch, "not an SSMI container (magic mismatch)");
  const std::uint8_t version = r.u8("the version");
  require(version == kContainerVersion, ErrorCode::kVersionMismatch,
          "unsupported container version " + std::to_string(version) + " (expected " +
              std::to_string(kContainerVersion) + ")");
  Container c;
  c.height = r.u32("the header");
  c.width = r.u32("the header");
  c.padded_height = r.u32("the header");
  c.padded_width = r.u32("the header");
  c.config_digest = r.u64("the header");
  const std::uint8_t tag_len = r.u8("the lambda tag");
  const std::uint8_t* tag = r.take(tag_len, "the lambda tag");
  c.lambda_tag.assign(reinterpret_cast<const char*>(tag), tag_len);
  const std::uint32_t zn = r.u32("the z-stream length");
  const std::uint8_t* z = r.take(zn, "the z-stream");
  c.z_stream.assign(z, z + zn);
  const std::uint32_t yn = r.u32("the y-stream length");
  const std::uint8_t* y = r.take(yn, "the y-stream");
  c.y_stream.assign(y, y + yn);
  require(r.remaining() == 0, ErrorCode::kCorrupt, "container has trailing bytes");
  require(c.height >= 1 && c.width >= 1 && c.padded_height == padded_extent(c.height) &&
              c.padded_width == padded_extent(c.width),
          ErrorCode::kCorrupt, "container extents are inconsistent");
  return c;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::kIo, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorCode::kIo, "failed writing " + path);
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// Weights

namespace {
constexpr std::array<char, 4> kWeightMagic = {'S', 'S', 'M', 'W'};
constexpr std::uint32_t kWeightVersion = 1;
}  // namespace

std::vector<std::uint8_t> serialize_weights(const model::WeightStore& store) {
  detail::ByteWriter w(false);
  w.bytes(kWeightMagic.data(), kWeightMagic.size());
  w.u32(kWeightVersion);
  w.u64(store.size());
  for (const auto& [path, t] : store) {
    w.str32(path);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    for (double v : t.data()) w.f64(v);
  }
  return std::move(w.data());
}

model::WeightStore parse_weights(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, false, "weight file");
  const std::uint8_t* magic = r.take(4, "the magic");
  require(std::equal(kWeightMagic.begin(), kWeightMagic.end(), magic,
                     [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; }),
          ErrorCode::kMagicMismatch, "not an SSMW weight file (magic mismatch)");
  const std::uint32_t version = r.u32("the version");
  require(version == kWeightVersion, ErrorCode::kVersionMismatch,
          "unsupported weight file version " + std::to_string(version));
  const std::uint64_t count = r.u64("the tensor count");
  model::WeightStore store;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string path = r.str32("a parameter path");
    const std::uint32_t rank = r.u32(path);
    Shape shape(rank);
    for (auto& d : shape) d = r.u64(path);
    const std::size_t n = rank == 0 ? 1 : numel(shape);
    require(n <= r.remaining() / 8, ErrorCode::kTruncated, "weight file is truncated in " + path);
    std::vector<double> v(n);
    for (auto& x : v) x = r.f64(path);
    require(!store.count(path), ErrorCode::kCorrupt, "weight file repeats parameter " + path);
    store.emplace(std::move(path), Tensor(std::move(shape), std::move(v)));
  }
  require(r.remaining() == 0, ErrorCode::kCorrupt, "weight file has trailing bytes");
  return store;
}

void save_weights(const model::WeightStore& store, const std::string& path) {
  write_file(path, serialize_weights(store));
}

model::WeightStore load_weights(const std::string& path) { return parse_weights(read_file(path)); }

model::WeightStore load_weights(const std::string& path, const model::ModelConfig& cfg) {
  model::WeightStore store = load_weights(path);
  model::check_complete(store, cfg);
  return store;
}

// ---------------------------------------------------------------------------
// Pipeline

Model make_model(const model::ModelConfig& cfg, const model::WeightStore& store) {
  Model m;
  m.config = model::finalize(cfg);
  m.params = model::bind_model(store, m.config);
  m.digest = model::config_digest(m.config);
  return m;
}

namespace {

// Raster-order walk over the latent grid. At each position the context is
// computed from the already reconstructed y_hat, then (mu, sigma) from the
// hyper features, and code(index, mu, sigma) returns the integer residual.
template <class Code>
Tensor latent_loop(const Tensor& psi, const Model& m, std::size_t hy, std::size_t wy, Code&& code) {
  const std::size_t cy = m.config.latent_channels();
  require(psi.shape() == Shape({hy, wy, 2 * cy}), ErrorCode::kShapeMismatch,
          "hyper decoder output " + shape_str(psi.shape()) + " does not match the latent grid");
  std::vector<double> y_hat(hy * wy * cy, 0.0);
  std::vector<double> phi(2 * cy);
  for (std::size_t row = 0; row < hy; ++row)
    for (std::size_t col = 0; col < wy; ++col) {
      const std::size_t pos = row * wy + col;
      entropy::context_at(y_hat, hy, wy, m.params.context, row, col, phi);
      Tensor psi_tok({1, 1, 2 * cy}, std::vector<double>(psi.raw() + pos * 2 * cy, psi.raw() + (pos + 1) * 2 * cy));
      Tensor phi_tok({1, 1, 2 * cy}, phi);
      const auto [mu, sigma] = entropy::entropy_parameters(psi_tok, phi_tok, m.params.entropy);
      for (std::size_t c = 0; c < cy; ++c) {
        const std::size_t i = pos * cy + c;
        const std::int64_t r = code(i, mu[c], sigma[c]);
        y_hat[i] = mu[c] + static_cast<double>(r);
      }
    }
  return Tensor({hy, wy, cy}, std::move(y_hat));
}

Tensor clamp_unit(const Tensor& x) {
  std::vector<double> v = x.to_vector();
  for (double& e : v) e = std::clamp(e, 0.0, 1.0);
  return Tensor(x.shape(), std::move(v));
}

Shape hyper_shape(const Model& m, std::size_t ph, std::size_t pw) {
  const std::size_t f = m.config.total_downsampling();
  return {ph / f, pw / f, m.config.hyper_channels()};
}

}  // namespace

EncodeResult encode_image(const Tensor& x, const Model& m, const std::string& lambda_tag, bool reconstruct) {
  require(x.rank() == 3 && x.dim(2) == 3, ErrorCode::kShapeMismatch,
          "encode expects an H x W x 3 image, got " + shape_str(x.shape()));
  for (double v : x.data()) require(std::isfinite(v), ErrorCode::kNumeric, "image contains non-finite values");
  const PaddedImage pad = pad_image(x);
  const Tensor y = model::g_a(pad.x, m.params);
  const Tensor z = model::h_a(y, m.params);

  EncodeResult res;
  const std::size_t cz = m.config.hyper_channels();
  const std::vector<PriorTable> tables = prior_tables(m.params.prior);
  rc::Encoder zenc;
  // Rebuilt from the integers so the encoder sees +0.0 exactly as the decoder does.
  std::vector<double> zq(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    require(std::isfinite(z[i]), ErrorCode::kNumeric, "hyper-latent contains non-finite values");
    const PriorTable& t = tables[i % cz];
    const auto k = static_cast<std::int64_t>(round_half_even(z[i]));
    res.z_bits_estimate += encode_integer(zenc, t.cdf, t.lo, t.hi, k);
    zq[i] = static_cast<double>(k);
  }
  const Tensor z_hat(z.shape(), std::move(zq));

  const Tensor psi = model::h_s(z_hat, m.params);
  rc::Encoder yenc;
  res.y_hat = latent_loop(psi, m, y.dim(0), y.dim(1), [&](std::size_t i, double mu, double sigma) {
    const double d = y[i] - mu;
    require(std::isfinite(d), ErrorCode::kNumeric, "latent contains non-finite values");
    const auto r = static_cast<std::int64_t>(round_half_even(d));
    const GaussianTable& g = gaussian_table(scale_index(sigma));
    res.y_bits_estimate += encode_integer(yenc, g.cdf, -g.half_width, g.half_width, r);
    return r;
  });

  Container& c = res.container;
  c.height = static_cast<std::uint32_t>(pad.height);
  c.width = static_cast<std::uint32_t>(pad.width);
  c.padded_height = static_cast<std::uint32_t>(pad.x.dim(0));
  c.padded_width = static_cast<std::uint32_t>(pad.x.dim(1));
  c.config_digest = m.digest;
  c.lambda_tag = lambda_tag;
  c.z_stream = zenc.finish();
  c.y_stream = yenc.finish();
  res.z_hat = z_hat;
  if (reconstruct) res.x_hat = clamp_unit(crop_image(model::g_s(res.y_hat, m.params), pad.height, pad.width));
  return res;
}

DecodeResult decode_image(const Container& c, const Model& m) {
  require(c.config_digest == m.digest, ErrorCode::kDigestMismatch,
          "container was produced with a different model config (digest mismatch)");
  require(c.height >= 1 && c.width >= 1 && c.padded_height == padded_extent(c.height) &&
              c.padded_width == padded_extent(c.width),
          ErrorCode::kCorrupt, "container extents are inconsistent");
  const std::size_t f = m.config.downsampling();
  const Shape zs = hyper_shape(m, c.padded_height, c.padded_width);

  DecodeResult res;
  const std::vector<PriorTable> tables = prior_tables(m.params.prior);
  rc::Decoder zdec(c.z_stream, "z-stream");
  std::vector<double> z(numel(zs));
  for (std::size_t i = 0; i < z.size(); ++i) {
    const PriorTable& t = tables[i % zs[2]];
    z[i] = static_cast<double>(decode_integer(zdec, t.cdf, t.lo, t.hi));
  }
  zdec.finish();
  res.z_hat = Tensor(zs, std::move(z));

  const Tensor psi = model::h_s(res.z_hat, m.params);
  rc::Decoder ydec(c.y_stream, "y-stream");
  res.y_hat = latent_loop(psi, m, c.padded_height / f, c.padded_width / f, [&](std::size_t, double, double sigma) {
    const GaussianTable& g = gaussian_table(scale_index(sigma));
    return decode_integer(ydec, g.cdf, -g.half_width, g.half_width);
  });
  ydec.finish();
  res.x_hat = clamp_unit(crop_image(model::g_s(res.y_hat, m.params), c.height, c.width));
  return res;
}

}  // namespace ssmic::codec
