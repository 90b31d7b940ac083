#include "ssmic/selftest.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "ssmic/codec.hpp"
#include "ssmic/entropy.hpp"
#include "ssmic/metrics.hpp"
#include "ssmic/nn.hpp"
#include "ssmic/range_coder.hpp"
#include "ssmic/ssm.hpp"

namespace ssmic {
namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

CheckResult ssm_equivalence() {
  Rng rng(11);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(8), len = 1 + rng.below(64);
    std::vector<double> a(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) a[i * n + i] = -rng.uniform(0.1, 2.0);
    ssm::SsmParams p{Tensor({n, n}, a), random_normal({n, 1}, rng), random_normal({1, n}, rng)};
    const auto d = ssm::discretize_zoh(p, rng.uniform(0.01, 0.5));
    const Tensor x = random_normal({len}, rng);
    const Tensor y1 = ssm::scan_recurrent(d, p.c, x);
    const Tensor y2 = ssm::scan_convolutional(ssm::build_kernel(d, p.c, len), x);
    worst = std::max(worst, max_abs_diff(y1, y2));
  }
  return {"ssm recurrent == convolutional", worst <= 1e-10, "max diff " + fmt(worst)};
}

CheckResult zoh_scalar() {
  const ssm::SsmParams p{Tensor({1, 1}, {-1.0}), Tensor({1, 1}, {1.0}), Tensor({1, 1}, {1.0})};
  const auto d = ssm::discretize_zoh(p, std::log(2.0));
  const double e = std::max(std::fabs(d.a_bar[0] - 0.5), std::fabs(d.b_bar[0] - 0.5));
  return {"zoh closed form a=-1 step=ln2", e <= 1e-12, "error " + fmt(e)};
}

CheckResult cross_scan_identity() {
  Rng rng(3);
  double worst = 0.0;
  for (std::size_t h = 1; h <= 5; ++h)
    for (std::size_t w = 1; w <= 5; ++w) {
      const Tensor f = random_normal({h, w, 2}, rng);
      const Tensor back = nn::cross_merge(nn::cross_scan(f), h, w);
      worst = std::max(worst, max_abs_diff(back, scale(f, 4.0)));
    }
  return {"cross_merge(cross_scan(f)) == 4 f", worst == 0.0, "max diff " + fmt(worst)};
}

CheckResult range_coder_roundtrip() {
  Rng rng(5);
  const std::vector<double> probs{0.6, 0.25, 0.1, 0.05};
  const rc::CdfTable t = rc::build_cdf_table(probs);
  std::vector<std::size_t> sym(20000);
  double ideal = 0.0;
  for (auto& s : sym) {
    const double u = rng.uniform();
    s = u < 0.6 ? 0 : u < 0.85 ? 1 : u < 0.95 ? 2 : 3;
    ideal -= std::log2(rc::coded_probability(t, s));
  }
  const auto bytes = rc::encode_symbols(sym, t);
  const bool same = rc::decode_symbols(bytes, t, sym.size()) == sym;
  const double bits = 8.0 * static_cast<double>(bytes.size());
  return {"range coder round trip", same && bits <= ideal * 1.01 + 32,
          fmt(bits) + " bits vs " + fmt(ideal) + " ideal"};
}

CheckResult gaussian_mass() {
  const Tensor p = entropy::gaussian_likelihood(Tensor({1}, {0.0}), Tensor({1}, {0.0}), Tensor({1}, {1.0}));
  const double e = std::fabs(p[0] - 0.38292492254802624);
  return {"gaussian bin mass at 0", e <= 1e-12, "error " + fmt(e)};
}

CheckResult bd_rate_identities() {
  std::vector<metrics::RdPoint> a{{0.4, 30.1}, {0.6, 32.0}, {0.9, 34.2}, {1.2, 35.9}};
  std::vector<metrics::RdPoint> d = a, h = a;
  for (auto& p : d) p.bpp *= 2;
  for (auto& p : h) p.bpp /= 2;
  const double e0 = std::fabs(metrics::bd_rate(a, a));
  const double e1 = std::fabs(metrics::bd_rate(a, d) - 100.0);
  const double e2 = std::fabs(metrics::bd_rate(a, h) + 50.0);
  return {"bd-rate identical/doubled/halved", e0 == 0.0 && e1 <= 1e-6 && e2 <= 1e-6,
          "errors " + fmt(e0) + ", " + fmt(e1) + ", " + fmt(e2)};
}

CheckResult padding_rule() {
  Rng rng(9);
  const Tensor x = random_uniform({500, 300, 3}, rng, 0.0, 1.0);
  const auto p = codec::pad_image(x);
  const bool ok = p.x.shape() == Shape({512, 512, 3}) && bit_equal(codec::crop_image(p.x, 500, 300), x) &&
                  codec::padded_extent(768) == 768 && codec::padded_extent(512) == 512;
  return {"pad to 256 multiples and crop back", ok, shape_str(p.x.shape())};
}

CheckResult codec_roundtrip() {
  model::ModelConfig cfg;
  cfg.ga_stages = {{4, 1}, {4, 1}};
  cfg.ha_stages = {{4, 1}};
  cfg.state_dim = 2;
  cfg.inner_ratio = 1;
  cfg.mlp_ratio = 1;
  cfg = model::finalize(cfg);
  Rng rng(21);
  const auto store = model::init_weights(cfg, rng, {0.5});
  const codec::Model m = codec::make_model(cfg, store);
  const Tensor x = random_uniform({40, 70, 3}, rng, 0.0, 1.0);
  const auto enc = codec::encode_image(x, m, "10", true);
  const auto dec = codec::decode_image(codec::parse_container(codec::serialize(enc.container)), m);
  const bool ok = bit_equal(enc.y_hat, dec.y_hat) && bit_equal(enc.z_hat, dec.z_hat) && bit_equal(enc.x_hat, dec.x_hat);
  return {"codec round trip on a micro model", ok, fmt(enc.container.bpp()) + " bpp"};
}

CheckResult linear_macs() {
  const auto c = metrics::linear_cost("probe", 16 * 16, 64, 128, true);
  return {"linear 64->128 over 256 tokens", c.macs == 2097152, std::to_string(c.macs) + " MACs"};
}

}  // namespace

std::vector<CheckResult> run_selftest() {
  const std::vector<std::function<CheckResult()>> checks = {
      ssm_equivalence, zoh_scalar,   cross_scan_identity, range_coder_roundtrip, gaussian_mass,
      bd_rate_identities, padding_rule, codec_roundtrip,  linear_macs};
  std::vector<CheckResult> out;
  for (const auto& check : checks) {
    try {
      out.push_back(check());
    } catch (const std::exception& e) {
      out.push_back({"check threw", false, e.what()});
    }
  }
  return out;
}

}  // namespace ssmic
