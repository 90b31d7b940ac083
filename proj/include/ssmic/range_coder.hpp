#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ssmic::rc {

inline constexpr unsigned kPrecision = 16;
inline constexpr std::uint32_t kTotal = 1u << kPrecision;

// Cumulative frequencies: cdf[0] = 0, cdf[n] = 2^16, each step >= 1.
struct CdfTable {
  std::vector<std::uint32_t> cdf;

  std::size_t alphabet() const { return cdf.empty() ? 0 : cdf.size() - 1; }
  std::uint32_t freq(std::size_t s) const { return cdf[s + 1] - cdf[s]; }
};

void validate(const CdfTable& t);

// Every symbol gets one count, the remaining 2^precision - n counts are
// apportioned by largest remainder of p_i / sum(p); ties go to the lowest
// index. Only precision 16 is supported by the coder.
CdfTable build_cdf_table(std::span<const double> probabilities, unsigned precision = kPrecision);

// Probability the coder actually charges for symbol s.
double coded_probability(const CdfTable& t, std::size_t s);

// Range coder over 16-bit words. low is kept below 2^48 with carries pushed
// into already emitted words, range stays in [2^32, 2^48] after
// renormalization. The final symbol of a table takes the rounding remainder.
// Streams are serialized as big-endian 16-bit words.
class Encoder {
 public:
  Encoder();

  void encode(const CdfTable& t, std::size_t symbol);
  // Raw bits, 1 <= nbits <= 16, coded with a flat distribution.
  void encode_bits(std::uint32_t value, unsigned nbits);
  // Terminates the stream (two words) and returns it.
  std::vector<std::uint8_t> finish();

 private:
  void put(std::uint64_t cum, std::uint64_t freq, unsigned total_bits, bool last);
  void carry();
  void renormalize();

  std::uint64_t low_ = 0;
  std::uint64_t range_;
  std::vector<std::uint16_t> words_;
  bool finished_ = false;
};

class Decoder {
 public:
  // name labels the stream in truncation errors.
  explicit Decoder(std::span<const std::uint8_t> bytes, std::string name = "stream");

  std::size_t decode(const CdfTable& t);
  std::uint32_t decode_bits(unsigned nbits);
  // Fails with kCorrupt when words remain unread. Reading more than one
  // implicit zero word past the end fails earlier with kTruncated.
  void finish() const;

 private:
  std::uint16_t next_word();
  void renormalize();

  std::span<const std::uint8_t> bytes_;
  std::string name_;
  std::size_t pos_ = 0;  // in words
  std::size_t past_end_ = 0;
  std::uint64_t range_;
  std::uint64_t code_ = 0;
};

std::vector<std::uint8_t> encode_symbols(std::span<const std::size_t> symbols,
                                         std::span<const CdfTable* const> tables);
std::vector<std::size_t> decode_symbols(std::span<const std::uint8_t> bytes,
                                        std::span<const CdfTable* const> tables);

// Convenience overloads for a single shared table.
std::vector<std::uint8_t> encode_symbols(std::span<const std::size_t> symbols, const CdfTable& table);
std::vector<std::size_t> decode_symbols(std::span<const std::uint8_t> bytes, const CdfTable& table,
                                        std::size_t count);

}  // namespace ssmic::rc
