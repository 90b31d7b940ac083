#include "ssmic/range_coder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "ssmic/error.hpp"

namespace ssmic::rc {
namespace {

constexpr std::uint64_t kTop = std::uint64_t{1} << 48;
constexpr std::uint64_t kBottom = std::uint64_t{1} << 32;

unsigned table_bits(const CdfTable& t) { return static_cast<unsigned>(std::countr_zero(t.cdf.back())); }

}  // namespace

void validate(const CdfTable& t) {
  require(t.cdf.size() >= 2, ErrorCode::kInvalidArgument, "CDF table needs at least one symbol");
  require(t.cdf.front() == 0, ErrorCode::kInvalidArgument, "CDF table must start at 0");
  const std::uint32_t total = t.cdf.back();
  require(std::has_single_bit(total) && total <= kTotal, ErrorCode::kInvalidArgument,
          "CDF table total must be a power of two no larger than 2^16");
  for (std::size_t i = 0; i + 1 < t.cdf.size(); ++i)
    require(t.cdf[i] < t.cdf[i + 1], ErrorCode::kInvalidArgument,
            "CDF table is not strictly increasing at symbol " + std::to_string(i));
}

CdfTable build_cdf_table(std::span<const double> probabilities, unsigned precision) {
  require(precision >= 1 && precision <= kPrecision, ErrorCode::kInvalidArgument,
          "table precision must lie in [1, 16]");
  const std::size_t n = probabilities.size();
  const std::uint64_t total = std::uint64_t{1} << precision;
  require(n >= 1, ErrorCode::kInvalidArgument, "empty alphabet");
  require(n <= total, ErrorCode::kInvalidArgument,
          "alphabet of " + std::to_string(n) + " symbols exceeds 2^" + std::to_string(precision));
  double sum = 0.0;
  for (double p : probabilities) {
    require(std::isfinite(p) && p > 0.0, ErrorCode::kInvalidArgument, "probabilities must be finite and positive");
    sum += p;
  }

  const std::uint64_t spare = total - n;
  std::vector<std::uint64_t> freq(n, 1);
  std::vector<double> remainder(n);
  std::uint64_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double quota = probabilities[i] / sum * static_cast<double>(spare);
    const double whole = std::floor(quota);
    freq[i] += static_cast<std::uint64_t>(whole);
    assigned += static_cast<std::uint64_t>(whole);
    remainder[i] = quota - whole;
  }
  // Rounding in the quotas can push the floor sum a hair past spare.
  while (assigned > spare) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i)
      if (freq[i] > 1 && (best == n || remainder[i] < remainder[best])) best = i;
    --freq[best];
    remainder[best] += 1.0;
    --assigned;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < spare; ++k, ++assigned) ++freq[order[k % n]];

  CdfTable t;
  t.cdf.resize(n + 1);
  t.cdf[0] = 0;
  for (std::size_t i = 0; i < n; ++i) t.cdf[i + 1] = t.cdf[i] + static_cast<std::uint32_t>(freq[i]);
  return t;
}

double coded_probability(const CdfTable& t, std::size_t s) {
  return static_cast<double>(t.freq(s)) / static_cast<double>(t.cdf.back());
}

// ---------------------------------------------------------------------------

Encoder::Encoder() : range_(kTop) {}

void Encoder::carry() {
  if (low_ < kTop) return;
  low_ -= kTop;
  for (std::size_t i = words_.size(); i-- > 0;) {
    if (words_[i] != 0xFFFF) {
      ++words_[i];
      return;
    }
    words_[i] = 0;
  }
  fail(ErrorCode::kInternal, "range coder carry ran past the start of the stream");
}

void Encoder::renormalize() {
  while (range_ < kBottom) {
    words_.push_back(static_cast<std::uint16_t>(low_ >> 32));
    low_ = (low_ & (kBottom - 1)) << 16;
    range_ <<= 16;
  }
}

void Encoder::put(std::uint64_t cum, std::uint64_t freq, unsigned total_bits, bool last) {
  const std::uint64_t r = range_ >> total_bits;
  low_ += r * cum;
  range_ = last ? range_ - r * cum : r * freq;
  carry();
  renormalize();
}

void Encoder::encode(const CdfTable& t, std::size_t symbol) {
  require(!finished_, ErrorCode::kInternal, "encoder already finished");
  require(symbol < t.alphabet(), ErrorCode::kInvalidArgument,
          "symbol " + std::to_string(symbol) + " outside alphabet of size " + std::to_string(t.alphabet()));
  put(t.cdf[symbol], t.freq(symbol), table_bits(t), symbol + 1 == t.alphabet());
}

void Encoder::encode_bits(std::uint32_t value, unsigned nbits) {
  require(!finished_, ErrorCode::kInternal, "encoder already finished");
  require(nbits >= 1 && nbits <= 16, ErrorCode::kInvalidArgument, "bypass width must lie in [1, 16]");
  require(value < (1u << nbits), ErrorCode::kInvalidArgument, "bypass value does not fit its width");
  put(value, 1, nbits, value + 1 == (1u << nbits));
}

std::vector<std::uint8_t> Encoder::finish() {
  require(!finished_, ErrorCode::kInternal, "encoder already finished");
  finished_ = true;
  // Any value in [low, low + range) identifies the interval; round low up so
  // its lowest word is zero and can stay implicit.
  low_ = (low_ + 0xFFFF) & ~std::uint64_t{0xFFFF};
  carry();
  words_.push_back(static_cast<std::uint16_t>(low_ >> 32));
  words_.push_back(static_cast<std::uint16_t>(low_ >> 16));
  std::vector<std::uint8_t> out;
  out.reserve(words_.size() * 2);
  for (std::uint16_t w : words_) {
    out.push_back(static_cast<std::uint8_t>(w >> 8));
    out.push_back(static_cast<std::uint8_t>(w & 0xFF));
  }
  return out;
}

// ---------------------------------------------------------------------------

Decoder::Decoder(std::span<const std::uint8_t> bytes, std::string name)
    : bytes_(bytes), name_(std::move(name)), range_(kTop) {
  require(bytes_.size() % 2 == 0, ErrorCode::kTruncated, name_ + " is truncated (odd byte count)");
  for (int i = 0; i < 3; ++i) code_ = (code_ << 16) | next_word();
}

std::uint16_t Decoder::next_word() {
  if (2 * pos_ < bytes_.size()) {
    const std::uint16_t w = static_cast<std::uint16_t>((bytes_[2 * pos_] << 8) | bytes_[2 * pos_ + 1]);
    ++pos_;
    return w;
  }
  ++past_end_;
  require(past_end_ <= 1, ErrorCode::kTruncated, name_ + " is truncated");
  return 0;
}

void Decoder::renormalize() {
  while (range_ < kBottom) {
    range_ <<= 16;
    code_ = (code_ << 16) | next_word();
  }
}

std::size_t Decoder::decode(const CdfTable& t) {
  const unsigned bits = table_bits(t);
  const std::uint64_t r = range_ >> bits;
  const std::uint64_t target = std::min<std::uint64_t>(code_ / r, t.cdf.back() - 1);
  const auto it = std::upper_bound(t.cdf.begin(), t.cdf.end(), static_cast<std::uint32_t>(target));
  const std::size_t s = static_cast<std::size_t>(it - t.cdf.begin()) - 1;
  code_ -= r * t.cdf[s];
  range_ = s + 1 == t.alphabet() ? range_ - r * t.cdf[s] : r * t.freq(s);
  renormalize();
  return s;
}

std::uint32_t Decoder::decode_bits(unsigned nbits) {
  require(nbits >= 1 && nbits <= 16, ErrorCode::kInvalidArgument, "bypass width must lie in [1, 16]");
  const std::uint64_t top = std::uint64_t{1} << nbits;
  const std::uint64_t r = range_ >> nbits;
  const std::uint64_t v = std::min<std::uint64_t>(code_ / r, top - 1);
  code_ -= r * v;
  range_ = v + 1 == top ? range_ - r * v : r;
  renormalize();
  return static_cast<std::uint32_t>(v);
}

void Decoder::finish() const {
  // A complete stream is always read exactly one implicit word past its end.
  require(2 * pos_ == bytes_.size() && past_end_ == 1, ErrorCode::kCorrupt, name_ + " has trailing data");
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_symbols(std::span<const std::size_t> symbols,
                                         std::span<const CdfTable* const> tables) {
  require(symbols.size() == tables.size(), ErrorCode::kInvalidArgument, "one table per symbol is required");
  Encoder enc;
  for (std::size_t i = 0; i < symbols.size(); ++i) enc.encode(*tables[i], symbols[i]);
  return enc.finish();
}

std::vector<std::size_t> decode_symbols(std::span<const std::uint8_t> bytes,
                                        std::span<const CdfTable* const> tables) {
  Decoder dec(bytes);
  std::vector<std::size_t> out(tables.size());
  for (std::size_t i = 0; i < tables.size(); ++i) out[i] = dec.decode(*tables[i]);
  dec.finish();
  return out;
}

std::vector<std::uint8_t> encode_symbols(std::span<const std::size_t> symbols, const CdfTable& table) {
  Encoder enc;
  for (std::size_t s : symbols) enc.encode(table, s);
  return enc.finish();
}

std::vector<std::size_t> decode_symbols(std::span<const std::uint8_t> bytes, const CdfTable& table,
                                        std::size_t count) {
  Decoder dec(bytes);
  std::vector<std::size_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = dec.decode(table);
  dec.finish();
  return out;
}

}  // namespace ssmic::rc
