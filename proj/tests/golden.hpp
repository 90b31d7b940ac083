#pragma once

#include <cstdint>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "ssmic/range_coder.hpp"

namespace golden {

struct Op {
  bool bits = false;
  std::size_t table = 0;  // or width for bypass bits
  std::uint32_t value = 0;
};

struct Case {
  std::string name;
  std::vector<ssmic::rc::CdfTable> tables;
  std::vector<Op> ops;
  std::vector<std::uint8_t> stream;
};

inline std::vector<Case> load(const std::string& path) {
  std::ifstream in(path);
  const nlohmann::json j = nlohmann::json::parse(in);
  std::vector<Case> out;
  for (const auto& c : j) {
    Case k;
    k.name = c.at("name").get<std::string>();
    for (const auto& t : c.at("tables")) k.tables.push_back({t.get<std::vector<std::uint32_t>>()});
    for (const auto& o : c.at("ops"))
      k.ops.push_back({o[0] == "bits", o[1].get<std::size_t>(), o[2].get<std::uint32_t>()});
    const std::string hex = c.at("stream").get<std::string>();
    for (std::size_t i = 0; i + 1 < hex.size(); i += 2)
      k.stream.push_back(static_cast<std::uint8_t>(std::stoul(hex.substr(i, 2), nullptr, 16)));
    out.push_back(std::move(k));
  }
  return out;
}

inline std::vector<std::uint8_t> encode(const Case& c) {
  ssmic::rc::Encoder enc;
  for (const Op& o : c.ops) {
    if (o.bits)
      enc.encode_bits(o.value, static_cast<unsigned>(o.table));
    else
      enc.encode(c.tables[o.table], o.value);
  }
  return enc.finish();
}

// True when the stream decodes to exactly the recorded operations.
inline bool decodes(const Case& c) {
  ssmic::rc::Decoder dec(c.stream, c.name);
  for (const Op& o : c.ops) {
    const std::uint32_t v = o.bits ? dec.decode_bits(static_cast<unsigned>(o.table))
                                   : static_cast<std::uint32_t>(dec.decode(c.tables[o.table]));
    if (v != o.value) return false;
  }
  dec.finish();
  return true;
}

}  // namespace golden
