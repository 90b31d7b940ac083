#include "ssmic/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace ssmic::model {

using nlohmann::json;

ModelConfig default_config() {
  ModelConfig cfg;
  cfg.ga_stages = {{96, 2}, {128, 2}, {160, 6}, {192, 2}};
  cfg.ha_stages = {{192, 2}, {192, 2}};
  return finalize(cfg);
}

namespace {

std::vector<StageConfig> mirror(const std::vector<StageConfig>& enc) {
  return {enc.rbegin(), enc.rend()};
}

void check_stages(const std::vector<StageConfig>& stages, const char* name) {
  require(!stages.empty(), ErrorCode::kInvalidArgument, std::string(name) + " must list at least one stage");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    require(stages[i].channels >= 1 && stages[i].depth >= 1, ErrorCode::kInvalidArgument,
            std::string(name) + "[" + std::to_string(i) + "] needs channels >= 1 and depth >= 1");
  }
}

}  // namespace

void validate(const ModelConfig& cfg) {
  check_stages(cfg.ga_stages, "ga_stages");
  check_stages(cfg.ha_stages, "ha_stages");
  check_stages(cfg.gs_stages, "gs_stages");
  check_stages(cfg.hs_stages, "hs_stages");
  require(cfg.gs_stages.size() == cfg.ga_stages.size(), ErrorCode::kInvalidArgument,
          "gs_stages must have as many stages as ga_stages");
  require(cfg.hs_stages.size() == cfg.ha_stages.size(), ErrorCode::kInvalidArgument,
          "hs_stages must have as many stages as ha_stages");
  require(cfg.gs_stages.front().channels == cfg.latent_channels(), ErrorCode::kInvalidArgument,
          "the first gs stage must run at the latent width");
  require(cfg.hs_stages.front().channels == cfg.hyper_channels(), ErrorCode::kInvalidArgument,
          "the first hs stage must run at the hyper-latent width");
  require(cfg.ga_stages.size() + cfg.ha_stages.size() <= 8, ErrorCode::kInvalidArgument,
          "total downsampling must divide the 256 padding multiple");
  require(cfg.state_dim >= 1 && cfg.inner_ratio >= 1 && cfg.mlp_ratio >= 1, ErrorCode::kInvalidArgument,
          "state_dim, inner_ratio and mlp_ratio must be positive");
  require(cfg.dwconv_size % 2 == 1, ErrorCode::kInvalidArgument, "dwconv_size must be odd");
  require(cfg.context_size % 2 == 1, ErrorCode::kInvalidArgument, "context_size must be odd");
}

ModelConfig finalize(ModelConfig cfg) {
  if (cfg.symmetric_decoder) {
    cfg.gs_stages = mirror(cfg.ga_stages);
    cfg.hs_stages = mirror(cfg.ha_stages);
  }
  validate(cfg);
  return cfg;
}

namespace {

std::vector<StageConfig> stages_from(const json& j, const char* key) {
  require(j.contains(key), ErrorCode::kInvalidArgument, std::string("config is missing ") + key);
  const json& arr = j.at(key);
  require(arr.is_array(), ErrorCode::kInvalidArgument, std::string(key) + " must be an array");
  std::vector<StageConfig> out;
  for (const json& s : arr) {
    require(s.is_array() && s.size() == 2 && s[0].is_number_unsigned() && s[1].is_number_unsigned(),
            ErrorCode::kInvalidArgument, std::string(key) + " entries must be [channels, depth]");
    out.push_back({s[0].get<std::size_t>(), s[1].get<std::size_t>()});
  }
  return out;
}

json stages_to(const std::vector<StageConfig>& stages) {
  json arr = json::array();
  for (const auto& s : stages) arr.push_back({s.channels, s.depth});
  return arr;
}

std::size_t uint_field(const json& j, const char* key, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  require(j.at(key).is_number_unsigned(), ErrorCode::kInvalidArgument,
          std::string(key) + " must be a non-negative integer");
  return j.at(key).get<std::size_t>();
}

const std::set<std::string> kKnownKeys = {"ga_stages",   "ha_stages",   "gs_stages",    "hs_stages",
                                          "state_dim",   "inner_ratio", "mlp_ratio",    "dwconv_size",
                                          "context_size", "symmetric_decoder", "scan"};

}  // namespace

ModelConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("config is not valid JSON: ") + e.what());
  }
  require(j.is_object(), ErrorCode::kInvalidArgument, "config must be a JSON object");
  for (const auto& [key, _] : j.items())
    require(kKnownKeys.count(key) > 0, ErrorCode::kInvalidArgument, "unknown config key '" + key + "'");

  ModelConfig cfg;
  cfg.ga_stages = stages_from(j, "ga_stages");
  cfg.ha_stages = stages_from(j, "ha_stages");
  cfg.state_dim = uint_field(j, "state_dim", cfg.state_dim);
  cfg.inner_ratio = uint_field(j, "inner_ratio", cfg.inner_ratio);
  cfg.mlp_ratio = uint_field(j, "mlp_ratio", cfg.mlp_ratio);
  cfg.dwconv_size = uint_field(j, "dwconv_size", cfg.dwconv_size);
  cfg.context_size = uint_field(j, "context_size", cfg.context_size);
  if (j.contains("symmetric_decoder")) {
    require(j.at("symmetric_decoder").is_boolean(), ErrorCode::kInvalidArgument,
            "symmetric_decoder must be a boolean");
    cfg.symmetric_decoder = j.at("symmetric_decoder").get<bool>();
  }
  if (j.contains("scan")) {
    const std::string mode = j.at("scan").is_string() ? j.at("scan").get<std::string>() : "";
    if (mode == "simplified")
      cfg.scan = ssm::ScanDiscretization::kSimplified;
    else if (mode == "zoh")
      cfg.scan = ssm::ScanDiscretization::kZoh;
    else
      fail(ErrorCode::kInvalidArgument, "scan must be \"simplified\" or \"zoh\"");
  }
  if (cfg.symmetric_decoder) {
    require(!j.contains("gs_stages") && !j.contains("hs_stages"), ErrorCode::kInvalidArgument,
            "gs_stages/hs_stages are only allowed with symmetric_decoder = false");
  } else {
    cfg.gs_stages = stages_from(j, "gs_stages");
    cfg.hs_stages = stages_from(j, "hs_stages");
  }
  return finalize(cfg);
}

namespace {

json to_json(const ModelConfig& cfg) {
  // nlohmann::json objects keep keys sorted, which makes the dump canonical.
  json j;
  j["ga_stages"] = stages_to(cfg.ga_stages);
  j["ha_stages"] = stages_to(cfg.ha_stages);
  if (!cfg.symmetric_decoder) {
    j["gs_stages"] = stages_to(cfg.gs_stages);
    j["hs_stages"] = stages_to(cfg.hs_stages);
  }
  j["state_dim"] = cfg.state_dim;
  j["inner_ratio"] = cfg.inner_ratio;
  j["mlp_ratio"] = cfg.mlp_ratio;
  j["dwconv_size"] = cfg.dwconv_size;
  j["context_size"] = cfg.context_size;
  j["symmetric_decoder"] = cfg.symmetric_decoder;
  j["scan"] = cfg.scan == ssm::ScanDiscretization::kZoh ? "zoh" : "simplified";
  return j;
}

}  // namespace

std::string config_to_json(const ModelConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kIo, "cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

void save_config(const ModelConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::kIo, "cannot write config file " + path);
  out << config_to_json(cfg);
  require(out.good(), ErrorCode::kIo, "failed writing config file " + path);
}

std::uint64_t config_digest(const ModelConfig& cfg) {
  const std::string text = to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------

Tensor TensorSource::get(const std::string& path, const Shape& shape) {
  auto it = store_.find(path);
  require(it != store_.end(), ErrorCode::kParameterSet, "missing parameter " + path);
  require(it->second.shape() == shape, ErrorCode::kParameterSet,
          "parameter " + path + " has shape " + shape_str(it->second.shape()) + ", expected " + shape_str(shape));
  return it->second;
}

ad::Var VarSource::get(const std::string& path, const Shape& shape) {
  auto it = store_.find(path);
  require(it != store_.end(), ErrorCode::kParameterSet, "missing parameter " + path);
  require(it->second.shape() == shape, ErrorCode::kParameterSet,
          "parameter " + path + " has shape " + shape_str(it->second.shape()) + ", expected " + shape_str(shape));
  ad::Var v = tape_.parameter(it->second);
  bound_[path] = v;
  return v;
}

Tensor SpecSource::get(const std::string& path, const Shape& shape) {
  specs_.push_back({path, shape});
  return dummy_;
}

std::vector<ParamSpec> SpecSource::take() {
  std::vector<ParamSpec> out = std::move(specs_);
  specs_.clear();
  std::sort(out.begin(), out.end(), [](const ParamSpec& a, const ParamSpec& b) { return a.path < b.path; });
  return out;
}

std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg) {
  SpecSource src;
  bind_model(src, cfg);
  return src.take();
}

std::size_t parameter_count(const WeightStore& store) {
  std::size_t n = 0;
  for (const auto& [_, t] : store) n += t.size();
  return n;
}

void check_complete(const WeightStore& store, const ModelConfig& cfg) {
  std::vector<std::string> missing, unknown, mismatched;
  std::map<std::string, Shape> expected;
  for (auto& s : parameter_specs(cfg)) expected.emplace(s.path, s.shape);
  for (const auto& [path, shape] : expected) {
    auto it = store.find(path);
    if (it == store.end())
      missing.push_back(path);
    else if (it->second.shape() != shape)
      mismatched.push_back(path + " " + shape_str(it->second.shape()) + " != " + shape_str(shape));
  }
  for (const auto& [path, _] : store)
    if (!expected.count(path)) unknown.push_back(path);
  if (missing.empty() && unknown.empty() && mismatched.empty()) return;

  std::string msg = "weight set does not match the model config";
  auto list = [&msg](const char* label, const std::vector<std::string>& items) {
    if (items.empty()) return;
    msg += "; ";
    msg += label;
    msg += " (" + std::to_string(items.size()) + "):";
    for (const auto& s : items) msg += " " + s;
  };
  list("missing", missing);
  list("unknown", unknown);
  list("shape mismatch", mismatched);
  fail(ErrorCode::kParameterSet, msg);
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

WeightStore init_weights(const ModelConfig& cfg, Rng& rng, const InitOptions& opts) {
  const std::vector<std::size_t> widths = entropy::prior_widths();
  const double prior_scale = std::pow(10.0, 1.0 / static_cast<double>(entropy::kPriorLayers));

  WeightStore store;
  for (const ParamSpec& spec : parameter_specs(cfg)) {
    const std::string& p = spec.path;
    const std::size_t n = numel(spec.shape);
    std::vector<double> v(n, 0.0);

    if (starts_with(p, "prior.matrix")) {
      const std::size_t layer = std::stoul(p.substr(std::string("prior.matrix").size()));
      const double init = std::log(std::expm1(1.0 / prior_scale / static_cast<double>(widths[layer + 1])));
      std::fill(v.begin(), v.end(), init);
    } else if (starts_with(p, "prior.bias")) {
      for (std::size_t i = 0; i < n; ++i) v[i] = rng.uniform(-0.5, 0.5);
    } else if (starts_with(p, "prior.factor")) {
      // zeros
    } else if (ends_with(p, ".scale") || ends_with(p, ".d_skip")) {
      std::fill(v.begin(), v.end(), 1.0);
    } else if (ends_with(p, ".delta.bias")) {
      for (std::size_t i = 0; i < n; ++i)
        v[i] = inverse_softplus(std::exp(rng.uniform(std::log(1e-3), std::log(1e-1))));
    } else if (ends_with(p, ".a_log")) {
      const std::size_t states = spec.shape.back();
      for (std::size_t i = 0; i < n; ++i) v[i] = std::log(static_cast<double>(i % states + 1));
    } else if (ends_with(p, ".bias")) {
      // zeros
    } else {
      for (std::size_t i = 0; i < n; ++i) v[i] = rng.truncated_normal(opts.weight_std);
      if (p == "context.weight") {
        const std::size_t k = spec.shape[0], cols = spec.shape[2] * spec.shape[3];
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx)
            if (!entropy::causal_tap(dy, dx, k)) std::fill_n(v.begin() + static_cast<std::ptrdiff_t>((dy * k + dx) * cols), cols, 0.0);
      }
    }
    store.emplace(p, Tensor(spec.shape, std::move(v)));
  }
  return store;
}

ModelParams bind_model(const WeightStore& store, const ModelConfig& cfg) {
  check_complete(store, cfg);
  TensorSource src(store);
  ModelParams m = bind_model(src, cfg);
  entropy::validate(m.context);
  entropy::validate(m.prior);
  return m;
}

}  // namespace ssmic::model
