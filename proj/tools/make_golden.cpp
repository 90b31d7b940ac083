// Regenerates tests/data/range_coder_golden.json. Tables are stored as integer
// CDFs so the fixture does not depend on floating-point table construction.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "ssmic/range_coder.hpp"
#include "ssmic/tensor.hpp"

using namespace ssmic;
using nlohmann::json;

namespace {

std::string hex(const std::vector<std::uint8_t>& b) {
  std::string s;
  char buf[3];
  for (auto v : b) {
    std::snprintf(buf, sizeof buf, "%02x", v);
    s += buf;
  }
  return s;
}

json make_case(const std::string& name, Rng& rng, std::size_t tables, std::size_t min_alpha, std::size_t max_alpha, std::size_t count,
               bool with_bits) {
  std::vector<rc::CdfTable> ts;
  json jt = json::array();
  for (std::size_t i = 0; i < tables; ++i) {
    const std::size_t n = min_alpha + rng.below(max_alpha - min_alpha + 1);
    std::vector<double> p(n);
    for (double& v : p) v = std::exp(rng.uniform(-9.0, 0.0));
    ts.push_back(rc::build_cdf_table(p));
    jt.push_back(ts.back().cdf);
  }
  rc::Encoder enc;
  json ops = json::array();
  for (std::size_t i = 0; i < count; ++i) {
    if (with_bits && rng.below(4) == 0) {
      const unsigned nb = 1 + static_cast<unsigned>(rng.below(16));
      const std::uint32_t v = static_cast<std::uint32_t>(rng.below(1u << nb));
      enc.encode_bits(v, nb);
      ops.push_back({"bits", nb, v});
    } else {
      const std::size_t t = rng.below(tables);
      const std::size_t s = rng.below(ts[t].alphabet());
      enc.encode(ts[t], s);
      ops.push_back({"sym", t, s});
    }
  }
  return {{"name", name}, {"tables", jt}, {"ops", ops}, {"stream", hex(enc.finish())}};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_golden OUTPUT.json\n";
    return 1;
  }
  Rng rng(20240601);
  json cases = json::array();
  cases.push_back(make_case("empty", rng, 1, 2, 4, 0, false));
  cases.push_back(make_case("single_table", rng, 1, 8, 16, 500, false));
  cases.push_back(make_case("many_tables", rng, 12, 1, 300, 3000, false));
  cases.push_back(make_case("with_bypass", rng, 5, 2, 64, 2000, true));
  cases.push_back(make_case("tiny_alphabets", rng, 6, 1, 2, 4000, false));
  std::ofstream out(argv[1]);
  out << "[\n";
  for (std::size_t i = 0; i < cases.size(); ++i) out << cases[i].dump() << (i + 1 < cases.size() ? ",\n" : "\n");
  out << "]\n";
  return out ? 0 : 2;
}
