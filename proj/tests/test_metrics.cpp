#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include "ssmic/error.hpp"
#include "ssmic/metrics.hpp"
#include "ssmic/parallel.hpp"

using namespace ssmic;
using namespace ssmic::metrics;

namespace {

codec::ImageBuffer image(std::size_t h, std::size_t w, std::vector<std::uint8_t> rgb) {
  return {h, w, std::move(rgb)};
}

std::vector<RdPoint> curve(const std::vector<double>& psnr, const std::function<double(double)>& log10_rate) {
  std::vector<RdPoint> pts;
  for (double p : psnr) pts.push_back({std::pow(10.0, log10_rate(p)), p});
  return pts;
}

// Exact integral of a polynomial (lowest order first) over [a, b].
double poly_integral(const std::vector<double>& c, double a, double b) {
  double s = 0.0;
  for (std::size_t k = 0; k < c.size(); ++k) {
    const double e = static_cast<double>(k + 1);
    s += c[k] * (std::pow(b, e) - std::pow(a, e)) / e;
  }
  return s;
}

model::ModelConfig micro_config() {
  model::ModelConfig cfg;
  cfg.ga_stages = {{4, 1}, {6, 2}};
  cfg.ha_stages = {{4, 1}};
  cfg.state_dim = 3;
  cfg.inner_ratio = 2;
  cfg.mlp_ratio = 2;
  return model::finalize(cfg);
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("psnr") {
    const auto a = image(2, 2, std::vector<std::uint8_t>(12, 77));
    CHECK(std::isinf(psnr(a, a)));
    CHECK(psnr(a, a) > 0.0);
    CHECK(psnr_from_mse(6502.5) == doctest::Approx(10.0).epsilon(1e-14));
    CHECK(psnr_from_mse(65025.0) == doctest::Approx(0.0).epsilon(1e-14));

    Rng rng(2);
    std::vector<std::uint8_t> x(3 * 17 * 11), y(x.size());
    for (auto& v : x) v = static_cast<std::uint8_t>(rng.below(256));
    for (auto& v : y) v = static_cast<std::uint8_t>(rng.below(256));
    double sse = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) sse += (double(x[i]) - double(y[i])) * (double(x[i]) - double(y[i]));
    const double oracle = 10.0 * std::log10(255.0 * 255.0 * double(x.size()) / sse);
    CHECK(std::fabs(psnr(image(17, 11, x), image(17, 11, y)) - oracle) <= 1e-10);
    // One sample off by one.
    auto z = x;
    z[5] = static_cast<std::uint8_t>(z[5] == 255 ? 254 : z[5] + 1);
    CHECK(mse(image(17, 11, x), image(17, 11, z)) == 1.0 / double(x.size()));

    CHECK_THROWS_AS(psnr(image(17, 11, x), image(11, 17, y)), Error);
  }

  TEST_CASE("polyfit recovers an exact cubic") {
    const std::vector<double> c{0.3, -1.2, 0.05, 0.002};
    std::vector<double> x, y;
    for (double v : {-3.0, -1.0, 0.5, 2.0, 4.0, 7.0}) {
      x.push_back(v);
      y.push_back(c[0] + c[1] * v + c[2] * v * v + c[3] * v * v * v);
    }
    const auto fit = polyfit(x, y, 3);
    REQUIRE(fit.size() == 4);
    for (std::size_t k = 0; k < 4; ++k) CHECK(fit[k] == doctest::Approx(c[k]).epsilon(1e-10));
    CHECK(polyval(fit, 1.5) == doctest::Approx(0.3 - 1.8 + 0.1125 + 0.00675).epsilon(1e-12));
    CHECK_THROWS_AS(polyfit({1.0, 2.0}, {1.0, 2.0}, 3), Error);
  }

  TEST_CASE("bd rate closed forms") {
    const std::vector<double> q{30.1, 32.4, 34.0, 35.8, 37.3};
    const auto base = [](double p) { return -3.0 + 0.09 * p + 0.0004 * (p - 33) * (p - 33); };
    const auto anchor = curve(q, base);
    CHECK(bd_rate(anchor, anchor) == 0.0);
    const auto doubled = curve(q, [&](double p) { return base(p) + std::log10(2.0); });
    const auto halved = curve(q, [&](double p) { return base(p) - std::log10(2.0); });
    CHECK(std::fabs(bd_rate(anchor, doubled) - 100.0) <= 1e-9);
    CHECK(std::fabs(bd_rate(anchor, halved) + 50.0) <= 1e-9);
    CHECK(std::fabs(bd_rate(doubled, anchor) + 50.0) <= 1e-9);
    CHECK(bd_rate(anchor, halved) < 0.0);

    // Typical operating range, 0.4 to 1.2 bpp.
    std::vector<RdPoint> a{{0.4, 31.0}, {0.6, 33.0}, {0.9, 35.0}, {1.2, 36.5}};
    std::vector<RdPoint> b = a;
    for (auto& p : b) p.bpp *= 0.9;
    CHECK(bd_rate(a, b) == doctest::Approx(-10.0).epsilon(1e-9));
  }

  TEST_CASE("bd rate against an analytic integral") {
    // Cubic log-rate curves are reproduced exactly by the fit, so the only
    // discrepancy is the trapezoidal rule at 1000 samples.
    const std::vector<double> ca{-3.1, 0.08, 0.0007, -0.00002};
    const std::vector<double> ct{-3.3, 0.09, 0.0003, -0.00001};
    const auto pa = [&](double p) { return ca[0] + ca[1] * p + ca[2] * p * p + ca[3] * p * p * p; };
    const auto pt = [&](double p) { return ct[0] + ct[1] * p + ct[2] * p * p + ct[3] * p * p * p; };
    const auto anchor = curve({28.0, 30.5, 33.0, 35.0, 38.0}, pa);
    const auto test = curve({29.0, 31.0, 34.5, 36.0, 39.0}, pt);
    const double lo = 29.0, hi = 38.0;
    std::vector<double> diff(4);
    for (std::size_t k = 0; k < 4; ++k) diff[k] = ct[k] - ca[k];
    const double oracle = (std::pow(10.0, poly_integral(diff, lo, hi) / (hi - lo)) - 1.0) * 100.0;
    CHECK(std::fabs(bd_rate(anchor, test) - oracle) <= 1e-5);

    const auto far = curve({50.0, 51.0, 52.0, 53.0}, pa);
    CHECK_THROWS_AS(bd_rate(anchor, far), Error);
    CHECK_THROWS_AS(bd_rate({anchor.begin(), anchor.begin() + 3}, test), Error);
    auto bad = anchor;
    bad[1].bpp = 0.0;
    CHECK_THROWS_AS(bd_rate(bad, test), Error);
  }

  TEST_CASE("rd csv and gnuplot output") {
    const auto pts = parse_rd_csv("image,lambda,bpp,psnr\na.png,1, 0.5,30.25\n\nb.png,1,0.75 ,32.5\n");
    REQUIRE(pts.size() == 2);
    CHECK(pts[0].bpp == 0.5);
    CHECK(pts[0].psnr == 30.25);
    CHECK(pts[1].bpp == 0.75);
    CHECK_THROWS_AS(parse_rd_csv("bpp,quality\n1,2\n"), Error);
    CHECK_THROWS_AS(parse_rd_csv("bpp,psnr\n1,x\n"), Error);
    CHECK_THROWS_AS(parse_rd_csv("bpp,psnr\n1\n"), Error);
    CHECK_THROWS_AS(parse_rd_csv(""), Error);

    const std::string path = (std::filesystem::temp_directory_path() / "ssmic_test_rd.csv").string();
    std::ofstream(path) << "bpp,psnr\n0.4,31\n0.6,33\n0.9,35\n1.2,36.5\n";
    CHECK(read_rd_csv(path).size() == 4);
    std::filesystem::remove(path);

    const std::string script = gnuplot_script({"anchor.csv", "test.csv"}, "rd.png");
    CHECK(script.find("set output 'rd.png'") != std::string::npos);
    CHECK(script.find("'anchor.csv' using 'bpp':'psnr'") != std::string::npos);
    CHECK(script.find("'test.csv' using 'bpp':'psnr'") != std::string::npos);
  }

  TEST_CASE("hand-counted layers") {
    const LayerCost lin = linear_cost("probe", 16 * 16, 64, 128, true);
    CHECK(lin.macs == 2097152);
    CHECK(lin.params == 64 * 128 + 128);
    CHECK(lin.flops == 2 * 2097152 + 256 * 128);
    CHECK(linear_cost("nb", 10, 3, 5, false).params == 15);
    const LayerCost dw = dwconv_cost("dw", 8, 6, 3, 5);
    CHECK(dw.macs == 8 * 6 * 9 * 5);
    CHECK(dw.flops == 2 * dw.macs);
    const LayerCost sc = scan_cost("scan", 100, 8, 4);
    CHECK(sc.macs == 100 * 8 * 4 * 3 + 100 * 8);
    CHECK(sc.flops >= 2 * sc.macs);
  }

  TEST_CASE("complexity report properties") {
    const auto cfg = micro_config();
    const auto r = count_complexity(cfg, 256, 256);
    std::uint64_t macs = 0, flops = 0, params = 0;
    for (const auto& l : r.layers) {
      macs += l.macs;
      flops += l.flops;
      params += l.params;
      CHECK(l.flops >= 2 * l.macs);
    }
    CHECK(macs == r.macs);
    CHECK(flops == r.flops);
    CHECK(params == r.params);
    CHECK(r.flops >= 2 * r.macs);

    Rng rng(1);
    const auto store = model::init_weights(cfg, rng);
    CHECK(r.params == model::parameter_count(store));
    std::uint64_t brute = 0;
    for (const auto& [path, t] : store) brute += t.size();
    CHECK(r.params == brute);

    // Doubling the token count doubles every layer.
    const auto r2 = count_complexity(cfg, 256, 512);
    REQUIRE(r2.layers.size() == r.layers.size());
    for (std::size_t i = 0; i < r.layers.size(); ++i) {
      CAPTURE(r.layers[i].name);
      CHECK(r2.layers[i].name == r.layers[i].name);
      CHECK(r2.layers[i].macs == 2 * r.layers[i].macs);
      CHECK(r2.layers[i].flops == 2 * r.layers[i].flops);
      CHECK(r2.layers[i].params == r.layers[i].params);
    }
    CHECK(count_complexity(cfg, 512, 512).macs == 4 * r.macs);
    CHECK_THROWS_AS(count_complexity(cfg, 100, 256), Error);

    // Appending a layer adds exactly its cost.
    ComplexityReport extra = r;
    add_layer(extra, linear_cost("probe", 256, 64, 128, true));
    CHECK(extra.macs == r.macs + 2097152);
    CHECK(extra.params == r.params + 64 * 128 + 128);

    const std::string csv = complexity_csv(r);
    CHECK(csv.rfind("layer,kind,macs,flops,params\n", 0) == 0);
    CHECK(csv.find("total,total," + std::to_string(r.macs)) != std::string::npos);
    CHECK(complexity_table(r).find("total:") != std::string::npos);
  }

  TEST_CASE("default config parameter count") {
    const auto r = count_complexity(model::default_config(), 512, 768);
    CHECK(r.params >= 30'000'000);
    CHECK(r.params <= 45'000'000);
    for (const auto& l : r.layers)
      if (l.kind == "linear") CHECK(l.macs > 0);
  }

  TEST_CASE("latency harness") {
    set_num_threads(3);
    const auto noop = bench_latency([] {}, 2, 50);
    CHECK(noop.mean_ms >= 0.0);
    CHECK(noop.mean_ms < 1.0);
    CHECK(noop.min_ms <= noop.mean_ms);
    CHECK(num_threads() == 3);
    std::size_t seen = 0;
    bench_latency([&] { seen = num_threads(); }, 0, 1);
    CHECK(seen == 1);
    set_num_threads(0);

    const auto nap = bench_latency([] { std::this_thread::sleep_for(std::chrono::milliseconds(20)); }, 1, 5);
    CHECK(nap.mean_ms >= 20.0);
    CHECK(nap.mean_ms < 40.0);
    CHECK(nap.iterations == 5);
    CHECK(nap.warmup == 1);
    CHECK(!nap.machine.empty());

    const std::string csv = latency_csv(nap, "sleep");
    CHECK(csv.rfind("label,warmup,iterations,mean_ms,std_ms,min_ms,machine\n", 0) == 0);
    CHECK(csv.find("sleep,1,5,") != std::string::npos);
    CHECK(latency_table(nap, "sleep").find("machine:") != std::string::npos);
    CHECK_THROWS_AS(bench_latency([] {}, 0, 0), Error);
  }
}
