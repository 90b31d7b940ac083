#pragma once

#include <cstddef>
#include <concepts>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ssmic/autodiff.hpp"
#include "ssmic/entropy.hpp"
#include "ssmic/error.hpp"
#include "ssmic/nn.hpp"
#include "ssmic/ssm.hpp"
#include "ssmic/tensor.hpp"

namespace ssmic::model {

struct StageConfig {
  std::size_t channels = 0;
  std::size_t depth = 0;

  bool operator==(const StageConfig&) const = default;
};

// Architecture hyperparameters. Analysis stages downsample by 2 each;
// synthesis stages run their VSS blocks first and then upsample by 2.
struct ModelConfig {
  std::vector<StageConfig> ga_stages;
  std::vector<StageConfig> ha_stages;
  std::vector<StageConfig> gs_stages;  // derived from ga when symmetric
  std::vector<StageConfig> hs_stages;  // derived from ha when symmetric
  std::size_t state_dim = 16;
  std::size_t inner_ratio = 2;
  std::size_t mlp_ratio = 4;
  std::size_t dwconv_size = 3;
  std::size_t context_size = entropy::kContextKernel;
  bool symmetric_decoder = true;
  ssm::ScanDiscretization scan = ssm::ScanDiscretization::kSimplified;

  std::size_t latent_channels() const { return ga_stages.back().channels; }
  std::size_t hyper_channels() const { return ha_stages.back().channels; }
  std::size_t downsampling() const { return std::size_t{1} << ga_stages.size(); }
  std::size_t hyper_downsampling() const { return std::size_t{1} << ha_stages.size(); }
  std::size_t total_downsampling() const { return downsampling() * hyper_downsampling(); }

  bool operator==(const ModelConfig&) const = default;
};

// g_a (96,2)(128,2)(160,6)(192,2); h_a (192,2)(192,2); N = 16.
ModelConfig default_config();
// Fills gs/hs stages for symmetric configs and checks every invariant.
ModelConfig finalize(ModelConfig cfg);
void validate(const ModelConfig& cfg);

// JSON with keys ga_stages, ha_stages, [gs_stages, hs_stages], state_dim,
// inner_ratio, mlp_ratio, dwconv_size, context_size, symmetric_decoder,
// scan ("simplified" | "zoh"). Stage lists are [[channels, depth], ...].
ModelConfig config_from_json(const std::string& text);
std::string config_to_json(const ModelConfig& cfg);
ModelConfig load_config(const std::string& path);
void save_config(const ModelConfig& cfg, const std::string& path);
// FNV-1a 64 of the compact canonical JSON.
std::uint64_t config_digest(const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Parameters

using WeightStore = std::map<std::string, Tensor>;

struct ParamSpec {
  std::string path;
  Shape shape;
};

// Canonical parameter set, sorted by path.
std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg);
std::size_t parameter_count(const WeightStore& store);

// Throws kParameterSet listing every missing, unknown, and mis-shaped path.
void check_complete(const WeightStore& store, const ModelConfig& cfg);

struct InitOptions {
  double weight_std = 0.02;
};

// Truncated-normal projections, zero biases, unit norm scales, A_n = -(n+1),
// D_skip = 1, delta bias so softplus(bias) lies in [1e-3, 1e-1], and the
// usual monotone-network prior initialization.
WeightStore init_weights(const ModelConfig& cfg, Rng& rng, const InitOptions& opts = {});

// Parameter sources hand out values by canonical path. The expected shape is
// supplied by the binder and checked against the store.
class TensorSource {
 public:
  using value_type = Tensor;
  explicit TensorSource(const WeightStore& store) : store_(store) {}
  Tensor get(const std::string& path, const Shape& shape);

 private:
  const WeightStore& store_;
};

class VarSource {
 public:
  using value_type = ad::Var;
  VarSource(ad::Tape& tape, const WeightStore& store) : tape_(tape), store_(store) {}
  ad::Var get(const std::string& path, const Shape& shape);
  const std::map<std::string, ad::Var>& bound() const { return bound_; }

 private:
  ad::Tape& tape_;
  const WeightStore& store_;
  std::map<std::string, ad::Var> bound_;
};

// Records paths and shapes without touching any store.
class SpecSource {
 public:
  using value_type = Tensor;
  Tensor get(const std::string& path, const Shape& shape);
  std::vector<ParamSpec> take();

 private:
  std::vector<ParamSpec> specs_;
  Tensor dummy_;
};

// ---------------------------------------------------------------------------
// Network parameter structs

template <class T>
struct AnalysisStageT {
  nn::PatchMergeParamsT<T> merge;
  std::vector<nn::VssBlockParamsT<T>> blocks;
};

template <class T>
struct SynthesisStageT {
  std::vector<nn::VssBlockParamsT<T>> blocks;
  nn::PatchExpandParamsT<T> expand;
};

template <class T>
using AnalysisParamsT = std::vector<AnalysisStageT<T>>;
template <class T>
using SynthesisParamsT = std::vector<SynthesisStageT<T>>;

template <class T>
struct ModelParamsT {
  AnalysisParamsT<T> ga;
  SynthesisParamsT<T> gs;
  AnalysisParamsT<T> ha;
  SynthesisParamsT<T> hs;
  entropy::ContextParamsT<T> context;
  entropy::EntropyParametersT<T> entropy;
  entropy::FactorizedPriorT<T> prior;
};
using ModelParams = ModelParamsT<Tensor>;

// ---------------------------------------------------------------------------
// Binding

template <class S>
concept ParamSource = requires(S& s, const std::string& path, const Shape& shape) {
  { s.get(path, shape) } -> std::convertible_to<typename S::value_type>;
};

inline std::string join(const std::string& a, const std::string& b) { return a + "." + b; }

template <ParamSource Source>
nn::VssBlockParamsT<typename Source::value_type> bind_vss_block(Source& src, const std::string& prefix,
                                                              std::size_t c, const ModelConfig& cfg) {
  const std::size_t d = c * cfg.inner_ratio, n = cfg.state_dim, k = cfg.dwconv_size, h = c * cfg.mlp_ratio;
  nn::VssBlockParamsT<typename Source::value_type> p;
  p.norm1 = src.get(join(prefix, "norm1.scale"), {c});
  p.mlp1_weight = src.get(join(prefix, "mlp1.weight"), {c, d});
  p.mlp1_bias = src.get(join(prefix, "mlp1.bias"), {d});
  p.dwconv = src.get(join(prefix, "dwconv.weight"), {k, k, d});
  for (std::size_t q = 0; q < 4; ++q) {
    const std::string pp = join(prefix, "ss2d.path" + std::to_string(q));
    auto& s6 = p.ss2d.paths[q];
    s6.delta_weight = src.get(join(pp, "delta.weight"), {d, d});
    s6.delta_bias = src.get(join(pp, "delta.bias"), {d});
    s6.b_weight = src.get(join(pp, "b_proj.weight"), {d, n});
    s6.c_weight = src.get(join(pp, "c_proj.weight"), {d, n});
    s6.a_log = src.get(join(pp, "a_log"), {d, n});
    s6.d_skip = src.get(join(pp, "d_skip"), {d});
  }
  p.ss2d.mode = cfg.scan;
  p.norm2 = src.get(join(prefix, "norm2.scale"), {d});
  p.mlp2_weight = src.get(join(prefix, "mlp2.weight"), {d, c});
  p.mlp2_bias = src.get(join(prefix, "mlp2.bias"), {c});
  p.norm3 = src.get(join(prefix, "norm3.scale"), {c});
  p.mlp3_fc1_weight = src.get(join(prefix, "mlp3.fc1.weight"), {c, h});
  p.mlp3_fc1_bias = src.get(join(prefix, "mlp3.fc1.bias"), {h});
  p.mlp3_fc2_weight = src.get(join(prefix, "mlp3.fc2.weight"), {h, c});
  p.mlp3_fc2_bias = src.get(join(prefix, "mlp3.fc2.bias"), {c});
  return p;
}

template <ParamSource Source>
AnalysisParamsT<typename Source::value_type> bind_analysis(Source& src, const std::string& net,
                                                           std::size_t in_channels,
                                                           const std::vector<StageConfig>& stages,
                                                           const ModelConfig& cfg) {
  AnalysisParamsT<typename Source::value_type> out;
  std::size_t cin = in_channels;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string sp = net + ".stage" + std::to_string(i);
    const std::size_t c = stages[i].channels;
    AnalysisStageT<typename Source::value_type> st;
    st.merge.norm = src.get(join(sp, "merge.norm.scale"), {4 * cin});
    st.merge.weight = src.get(join(sp, "merge.proj.weight"), {4 * cin, c});
    st.merge.bias = src.get(join(sp, "merge.proj.bias"), {c});
    for (std::size_t j = 0; j < stages[i].depth; ++j)
      st.blocks.push_back(bind_vss_block(src, join(sp, "block" + std::to_string(j)), c, cfg));
    out.push_back(std::move(st));
    cin = c;
  }
  return out;
}

template <ParamSource Source>
SynthesisParamsT<typename Source::value_type> bind_synthesis(Source& src, const std::string& net,
                                                             std::size_t out_channels,
                                                             const std::vector<StageConfig>& stages,
                                                             const ModelConfig& cfg) {
  SynthesisParamsT<typename Source::value_type> out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string sp = net + ".stage" + std::to_string(i);
    const std::size_t c = stages[i].channels;
    const std::size_t next = i + 1 < stages.size() ? stages[i + 1].channels : out_channels;
    SynthesisStageT<typename Source::value_type> st;
    for (std::size_t j = 0; j < stages[i].depth; ++j)
      st.blocks.push_back(bind_vss_block(src, join(sp, "block" + std::to_string(j)), c, cfg));
    st.expand.weight = src.get(join(sp, "expand.proj.weight"), {c, 4 * next});
    st.expand.bias = src.get(join(sp, "expand.proj.bias"), {4 * next});
    out.push_back(std::move(st));
  }
  return out;
}

template <ParamSource Source>
ModelParamsT<typename Source::value_type> bind_model(Source& src, const ModelConfig& cfg) {
  validate(cfg);
  const std::size_t cy = cfg.latent_channels(), k = cfg.context_size;
  ModelParamsT<typename Source::value_type> m;
  m.ga = bind_analysis(src, "ga", 3, cfg.ga_stages, cfg);
  m.gs = bind_synthesis(src, "gs", 3, cfg.gs_stages, cfg);
  m.ha = bind_analysis(src, "ha", cy, cfg.ha_stages, cfg);
  m.hs = bind_synthesis(src, "hs", 2 * cy, cfg.hs_stages, cfg);
  m.context.weight = src.get("context.weight", {k, k, cy, 2 * cy});
  m.context.bias = src.get("context.bias", {2 * cy});
  const std::vector<std::size_t> ew = entropy::entropy_parameter_widths(cy);
  for (std::size_t l = 0; l + 1 < ew.size(); ++l) {
    const std::string lp = "entropy.fc" + std::to_string(l);
    m.entropy.weights.push_back(src.get(join(lp, "weight"), {ew[l], ew[l + 1]}));
    m.entropy.biases.push_back(src.get(join(lp, "bias"), {ew[l + 1]}));
  }
  const std::size_t cz = cfg.hyper_channels();
  const std::vector<std::size_t> pw = entropy::prior_widths();
  for (std::size_t l = 0; l + 1 < pw.size(); ++l) {
    const std::string id = std::to_string(l);
    m.prior.matrices.push_back(src.get("prior.matrix" + id, {cz, pw[l + 1], pw[l]}));
    m.prior.biases.push_back(src.get("prior.bias" + id, {cz, pw[l + 1], 1}));
    if (l + 2 < pw.size()) m.prior.factors.push_back(src.get("prior.factor" + id, {cz, pw[l + 1], 1}));
  }
  return m;
}

// Tensor-valued model with validated context mask.
ModelParams bind_model(const WeightStore& store, const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Transforms

template <class T>
T analysis(const T& x, const AnalysisParamsT<T>& stages) {
  const Shape& s = x.shape();
  const std::size_t factor = std::size_t{1} << stages.size();
  require(s.size() == 3 && s[0] % factor == 0 && s[1] % factor == 0, ErrorCode::kShapeMismatch,
          "analysis transform input " + shape_str(s) + " is not divisible by " + std::to_string(factor));
  T f = x;
  for (const auto& st : stages) {
    f = nn::patch_merge(f, st.merge);
    for (const auto& b : st.blocks) f = nn::vss_block(f, b);
  }
  return f;
}

template <class T>
T synthesis(const T& y, const SynthesisParamsT<T>& stages) {
  T f = y;
  for (const auto& st : stages) {
    for (const auto& b : st.blocks) f = nn::vss_block(f, b);
    f = nn::patch_expand(f, st.expand);
  }
  return f;
}

// y = g_a(x), x is H x W x 3 in unit range.
template <class T>
T g_a(const T& x, const ModelParamsT<T>& m) {
  require(x.shape().size() == 3 && x.shape()[2] == 3, ErrorCode::kShapeMismatch,
          "g_a expects an H x W x 3 image, got " + shape_str(x.shape()));
  return analysis(x, m.ga);
}

// x_hat = g_s(y_hat); no clamping inside the network.
template <class T>
T g_s(const T& y_hat, const ModelParamsT<T>& m) {
  return synthesis(y_hat, m.gs);
}

// z = h_a(y)
template <class T>
T h_a(const T& y, const ModelParamsT<T>& m) {
  return analysis(y, m.ha);
}

// psi = h_s(z_hat), 2 C_y channels at the latent resolution.
template <class T>
T h_s(const T& z_hat, const ModelParamsT<T>& m) {
  return synthesis(z_hat, m.hs);
}

}  // namespace ssmic::model
