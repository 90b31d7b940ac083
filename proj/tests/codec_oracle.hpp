#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ssmic/codec.hpp"
#include "ssmic/entropy.hpp"
#include "ssmic/range_coder.hpp"
#include "ssmic/transforms.hpp"

namespace codec_oracle {

// Bits of one integer under a table with escape, written out from the format.
inline double integer_cost(const ssmic::rc::CdfTable& cdf, std::int64_t lo, std::int64_t hi, std::int64_t v) {
  if (v >= lo && v <= hi) return -std::log2(ssmic::rc::coded_probability(cdf, static_cast<std::size_t>(v - lo)));
  const std::uint64_t excess = static_cast<std::uint64_t>(v < lo ? lo - 1 - v : v - hi - 1);
  const double magnitude_bits = static_cast<double>(std::bit_width(excess + 1) - 1);
  return -std::log2(ssmic::rc::coded_probability(cdf, static_cast<std::size_t>(hi - lo + 1))) + 1.0 + 6.0 + magnitude_bits;
}


struct Recount {
  double y_bits = 0.0;
  double z_bits = 0.0;
  double worst_offset = 0.0;        // largest |y_hat - mu - round(y_hat - mu)|
  std::vector<double> y_probability;  // per element, as charged by the coder
};

// Recomputes mu and sigma in one parallel pass from the finished y_hat and
// charges every coded integer against the tables.
inline Recount recount(const ssmic::codec::EncodeResult& enc, const ssmic::codec::Model& m) {
  using namespace ssmic;
  Recount out;
  const Tensor psi = model::h_s(enc.z_hat, m.params);
  const Tensor phi = entropy::context_forward(enc.y_hat, m.params.context);
  const auto [mu, sigma] = entropy::entropy_parameters(psi, phi, m.params.entropy);
  for (std::size_t i = 0; i < enc.y_hat.size(); ++i) {
    const double d = enc.y_hat[i] - mu[i];
    const double r = std::nearbyint(d);
    out.worst_offset = std::max(out.worst_offset, std::fabs(d - r));
    const codec::GaussianTable& g = codec::gaussian_table(codec::scale_index(sigma[i]));
    const double bits = integer_cost(g.cdf, -g.half_width, g.half_width, static_cast<std::int64_t>(r));
    out.y_bits += bits;
    out.y_probability.push_back(std::exp2(-bits));
  }
  const auto tables = codec::prior_tables(m.params.prior);
  for (std::size_t i = 0; i < enc.z_hat.size(); ++i) {
    const codec::PriorTable& t = tables[i % tables.size()];
    out.z_bits += integer_cost(t.cdf, t.lo, t.hi, static_cast<std::int64_t>(enc.z_hat[i]));
  }
  return out;
}

}  // namespace codec_oracle
