#include "ssmic/metrics.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <thread>

#include "ssmic/entropy.hpp"
#include "ssmic/error.hpp"
#include "ssmic/parallel.hpp"

namespace ssmic::metrics {

double mse(const codec::ImageBuffer& a, const codec::ImageBuffer& b) {
  require(a.height == b.height && a.width == b.width && a.rgb.size() == b.rgb.size() && !a.rgb.empty(),
          ErrorCode::kShapeMismatch,
          "psnr: image extents differ (" + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
              std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
  double s = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = static_cast<double>(a.rgb[i]) - static_cast<double>(b.rgb[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.rgb.size());
}

double psnr_from_mse(double m) {
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / m);
}

double psnr(const codec::ImageBuffer& a, const codec::ImageBuffer& b) { return psnr_from_mse(mse(a, b)); }

// ---------------------------------------------------------------------------

std::vector<double> polyfit(const std::vector<double>& x, const std::vector<double>& y, std::size_t degree) {
  const std::size_t n = degree + 1;
  require(x.size() == y.size() && x.size() >= n, ErrorCode::kInvalidArgument,
          "polyfit needs at least degree + 1 points");
  // Normal equations on centred, scaled abscissae keep the system well
  // conditioned for PSNR-sized values.
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double spread = 0.0;
  for (double v : x) spread = std::max(spread, std::fabs(v - mean));
  if (spread == 0.0) spread = 1.0;

  std::vector<double> a(n * (n + 1), 0.0);
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double t = (x[k] - mean) / spread;
    std::vector<double> pw(2 * n, 1.0);
    for (std::size_t i = 1; i < pw.size(); ++i) pw[i] = pw[i - 1] * t;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) a[i * (n + 1) + j] += pw[i + j];
      a[i * (n + 1) + n] += pw[i] * y[k];
    }
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::fabs(a[r * (n + 1) + c]) > std::fabs(a[piv * (n + 1) + c])) piv = r;
    require(std::fabs(a[piv * (n + 1) + c]) > 1e-300, ErrorCode::kInvalidArgument,
            "polyfit: points do not determine the polynomial");
    for (std::size_t j = 0; j <= n; ++j) std::swap(a[c * (n + 1) + j], a[piv * (n + 1) + j]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a[r * (n + 1) + c] / a[c * (n + 1) + c];
      for (std::size_t j = c; j <= n; ++j) a[r * (n + 1) + j] -= f * a[c * (n + 1) + j];
    }
  }
  std::vector<double> scaled(n);
  for (std::size_t i = 0; i < n; ++i) scaled[i] = a[i * (n + 1) + n] / a[i * (n + 1) + i];

  // Expand p((x - mean) / spread) into powers of x.
  std::vector<double> coeffs(n, 0.0);
  std::vector<double> basis{1.0};  // ((x - mean) / spread)^i in powers of x
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < basis.size(); ++j) coeffs[j] += scaled[i] * basis[j];
    std::vector<double> next(basis.size() + 1, 0.0);
    for (std::size_t j = 0; j < basis.size(); ++j) {
      next[j + 1] += basis[j] / spread;
      next[j] -= basis[j] * mean / spread;
    }
    basis = std::move(next);
  }
  return coeffs;
}

double polyval(const std::vector<double>& coeffs, double x) {
  double v = 0.0;
  for (std::size_t i = coeffs.size(); i-- > 0;) v = v * x + coeffs[i];
  return v;
}

namespace {

struct Fit {
  double mean = 0.0, spread = 1.0;
  std::vector<double> scaled;  // coefficients in t = (psnr - mean) / spread
  double lo = 0.0, hi = 0.0;
};

Fit fit_curve(const std::vector<RdPoint>& pts, const char* name) {
  require(pts.size() >= 4, ErrorCode::kInvalidArgument,
          std::string("bd_rate: the ") + name + " curve needs at least 4 points");
  std::vector<double> x, y;
  for (const RdPoint& p : pts) {
    require(p.bpp > 0.0 && std::isfinite(p.bpp) && std::isfinite(p.psnr), ErrorCode::kInvalidArgument,
            std::string("bd_rate: the ") + name + " curve has a non-positive rate or non-finite PSNR");
    x.push_back(p.psnr);
    y.push_back(std::log10(p.bpp));
  }
  Fit f;
  f.lo = *std::min_element(x.begin(), x.end());
  f.hi = *std::max_element(x.begin(), x.end());
  // Fit in normalized coordinates; evaluating there avoids re-expansion error.
  f.mean = 0.5 * (f.lo + f.hi);
  f.spread = f.hi > f.lo ? 0.5 * (f.hi - f.lo) : 1.0;
  std::vector<double> t(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) t[i] = (x[i] - f.mean) / f.spread;
  f.scaled = polyfit(t, y, 3);
  return f;
}

double eval(const Fit& f, double psnr) { return polyval(f.scaled, (psnr - f.mean) / f.spread); }

}  // namespace

double bd_rate(const std::vector<RdPoint>& anchor, const std::vector<RdPoint>& test) {
  const Fit a = fit_curve(anchor, "anchor");
  const Fit t = fit_curve(test, "test");
  const double lo = std::max(a.lo, t.lo), hi = std::min(a.hi, t.hi);
  require(hi > lo, ErrorCode::kInvalidArgument, "bd_rate: the PSNR ranges of the two curves do not overlap");
  constexpr int kSamples = 1000;
  const double step = (hi - lo) / (kSamples - 1);
  double integral = 0.0;
  double prev = 0.0;
  for (int i = 0; i < kSamples; ++i) {
    const double p = i == kSamples - 1 ? hi : lo + step * i;
    const double d = eval(t, p) - eval(a, p);
    if (i > 0) integral += 0.5 * (prev + d) * step;
    prev = d;
  }
  const double mean_diff = integral / (hi - lo);
  return (std::pow(10.0, mean_diff) - 1.0) * 100.0;
}

std::vector<RdPoint> parse_rd_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cell.erase(0, cell.find_first_not_of(" \t\r"));
      cell.erase(cell.find_last_not_of(" \t\r") + 1);
      out.push_back(cell);
    }
    return out;
  };
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::kInvalidArgument, "RD CSV is empty");
  const auto header = split(line);
  const auto col = [&](const char* name) {
    const auto it = std::find(header.begin(), header.end(), name);
    require(it != header.end(), ErrorCode::kInvalidArgument, std::string("RD CSV has no '") + name + "' column");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t ib = col("bpp"), ip = col("psnr");
  std::vector<RdPoint> pts;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split(line);
    require(cells.size() > std::max(ib, ip), ErrorCode::kInvalidArgument,
            "RD CSV row " + std::to_string(row) + " is short");
    try {
      pts.push_back({std::stod(cells[ib]), std::stod(cells[ip])});
    } catch (const std::exception&) {
      fail(ErrorCode::kInvalidArgument, "RD CSV row " + std::to_string(row) + " is not numeric");
    }
  }
  return pts;
}

std::vector<RdPoint> read_rd_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kIo, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_rd_csv(ss.str());
}

std::string gnuplot_script(const std::vector<std::string>& csv_paths, const std::string& output_png) {
  std::ostringstream s;
  s << "set terminal pngcairo size 800,600\n"
    << "set output '" << output_png << "'\n"
    << "set datafile separator ','\n"
    << "set key autotitle columnhead bottom right\n"
    << "set xlabel 'bpp'\nset ylabel 'PSNR (dB)'\nset grid\n"
    << "plot ";
  for (std::size_t i = 0; i < csv_paths.size(); ++i) {
    if (i) s << ", \\\n     ";
    s << "'" << csv_paths[i] << "' using 'bpp':'psnr' with linespoints title '" << csv_paths[i] << "'";
  }
  s << "\n";
  return s.str();
}

// ---------------------------------------------------------------------------
// Complexity

LayerCost linear_cost(const std::string& name, std::uint64_t tokens, std::uint64_t in, std::uint64_t out,
                      bool bias) {
  LayerCost c{name, "linear", tokens * in * out, 0, in * out + (bias ? out : 0)};
  c.flops = 2 * c.macs + (bias ? tokens * out * kFlopsBias : 0);
  return c;
}

LayerCost dwconv_cost(const std::string& name, std::uint64_t h, std::uint64_t w, std::uint64_t k,
                      std::uint64_t c) {
  LayerCost l{name, "dwconv", h * w * k * k * c, 0, k * k * c};
  l.flops = 2 * l.macs;
  return l;
}

LayerCost scan_cost(const std::string& name, std::uint64_t length, std::uint64_t d, std::uint64_t n) {
  LayerCost l{name, "selective_scan", length * d * n * 3 + length * d, 0, d * n + d};
  l.flops = 2 * l.macs + length * d * n * kFlopsDiscretize + length * d * kFlopsSoftplus;
  return l;
}

namespace {

LayerCost elementwise(const std::string& name, const std::string& kind, std::uint64_t flops,
                      std::uint64_t params = 0) {
  return {name, kind, 0, flops, params};
}

LayerCost norm_cost(const std::string& name, std::uint64_t tokens, std::uint64_t c) {
  return elementwise(name, "rms_norm", tokens * c * kFlopsNormPerElement + tokens * kFlopsNormPerToken, c);
}

void vss_block(ComplexityReport& r, const std::string& p, std::uint64_t h, std::uint64_t w, std::uint64_t c,
               const model::ModelConfig& cfg) {
  const std::uint64_t t = h * w, d = c * cfg.inner_ratio, n = cfg.state_dim, hid = c * cfg.mlp_ratio;
  add_layer(r, norm_cost(p + ".norm1", t, c));
  add_layer(r, linear_cost(p + ".mlp1", t, c, d, true));
  add_layer(r, dwconv_cost(p + ".dwconv", h, w, cfg.dwconv_size, d));
  add_layer(r, elementwise(p + ".silu", "activation", t * d * kFlopsSilu));
  for (int q = 0; q < 4; ++q) {
    const std::string pp = p + ".ss2d.path" + std::to_string(q);
    add_layer(r, linear_cost(pp + ".delta", t, d, d, true));
    add_layer(r, linear_cost(pp + ".b_proj", t, d, n, false));
    add_layer(r, linear_cost(pp + ".c_proj", t, d, n, false));
    add_layer(r, scan_cost(pp + ".scan", t, d, n));
  }
  add_layer(r, elementwise(p + ".ss2d.merge", "add", 3 * t * d * kFlopsAdd));
  add_layer(r, norm_cost(p + ".norm2", t, d));
  add_layer(r, linear_cost(p + ".mlp2", t, d, c, true));
  add_layer(r, elementwise(p + ".residual1", "add", t * c * kFlopsAdd));
  add_layer(r, norm_cost(p + ".norm3", t, c));
  add_layer(r, linear_cost(p + ".mlp3.fc1", t, c, hid, true));
  add_layer(r, elementwise(p + ".mlp3.silu", "activation", t * hid * kFlopsSilu));
  add_layer(r, linear_cost(p + ".mlp3.fc2", t, hid, c, true));
  add_layer(r, elementwise(p + ".residual2", "add", t * c * kFlopsAdd));
}

// Returns the output grid.
std::pair<std::uint64_t, std::uint64_t> analysis(ComplexityReport& r, const std::string& net,
                                                 std::uint64_t h, std::uint64_t w, std::uint64_t cin,
                                                 const std::vector<model::StageConfig>& stages,
                                                 const model::ModelConfig& cfg) {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string sp = net + ".stage" + std::to_string(i);
    h /= 2;
    w /= 2;
    add_layer(r, norm_cost(sp + ".merge.norm", h * w, 4 * cin));
    add_layer(r, linear_cost(sp + ".merge.proj", h * w, 4 * cin, stages[i].channels, true));
    for (std::size_t j = 0; j < stages[i].depth; ++j)
      vss_block(r, sp + ".block" + std::to_string(j), h, w, stages[i].channels, cfg);
    cin = stages[i].channels;
  }
  return {h, w};
}

void synthesis(ComplexityReport& r, const std::string& net, std::uint64_t h, std::uint64_t w,
               std::uint64_t cout, const std::vector<model::StageConfig>& stages, const model::ModelConfig& cfg) {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string sp = net + ".stage" + std::to_string(i);
    const std::uint64_t c = stages[i].channels;
    const std::uint64_t next = i + 1 < stages.size() ? stages[i + 1].channels : cout;
    for (std::size_t j = 0; j < stages[i].depth; ++j) vss_block(r, sp + ".block" + std::to_string(j), h, w, c, cfg);
    add_layer(r, linear_cost(sp + ".expand.proj", h * w, c, 4 * next, true));
    h *= 2;
    w *= 2;
  }
}

}  // namespace

void add_layer(ComplexityReport& r, LayerCost layer) {
  r.macs += layer.macs;
  r.flops += layer.flops;
  r.params += layer.params;
  r.layers.push_back(std::move(layer));
}

ComplexityReport count_complexity(const model::ModelConfig& cfg_in, std::size_t height, std::size_t width) {
  const model::ModelConfig cfg = model::finalize(cfg_in);
  const std::size_t f = cfg.total_downsampling();
  require(height > 0 && width > 0 && height % f == 0 && width % f == 0, ErrorCode::kInvalidArgument,
          "complexity input " + std::to_string(height) + "x" + std::to_string(width) + " is not divisible by " +
              std::to_string(f));
  ComplexityReport r;
  r.height = height;
  r.width = width;
  const std::uint64_t cy = cfg.latent_channels(), cz = cfg.hyper_channels();
  const auto [hy, wy] = analysis(r, "ga", height, width, 3, cfg.ga_stages, cfg);
  const auto [hz, wz] = analysis(r, "ha", hy, wy, cy, cfg.ha_stages, cfg);
  synthesis(r, "hs", hz, wz, 2 * cy, cfg.hs_stages, cfg);

  const std::uint64_t ty = hy * wy, k = cfg.context_size;
  LayerCost ctx{"context", "masked_conv", ty * ((k * k - 1) / 2) * cy * 2 * cy, 0, k * k * cy * 2 * cy + 2 * cy};
  ctx.flops = 2 * ctx.macs + ty * 2 * cy * kFlopsBias;
  add_layer(r, ctx);
  const std::vector<std::size_t> ew = entropy::entropy_parameter_widths(cy);
  for (std::size_t l = 0; l + 1 < ew.size(); ++l) {
    const std::string name = "entropy.fc" + std::to_string(l);
    add_layer(r, linear_cost(name, ty, ew[l], ew[l + 1], true));
    if (l + 2 < ew.size()) add_layer(r, elementwise(name + ".silu", "activation", ty * ew[l + 1] * kFlopsSilu));
  }
  add_layer(r, elementwise("entropy.sigma", "activation", ty * cy * (kFlopsSoftplus + kFlopsBound)));

  std::uint64_t prior_params = 0;
  const std::vector<std::size_t> pw = entropy::prior_widths();
  for (std::size_t l = 0; l + 1 < pw.size(); ++l) {
    prior_params += cz * (pw[l + 1] * pw[l] + pw[l + 1]);
    if (l + 2 < pw.size()) prior_params += cz * pw[l + 1];
  }
  add_layer(r, LayerCost{"prior", "factorized_prior", 0, 0, prior_params});

  synthesis(r, "gs", hy, wy, 3, cfg.gs_stages, cfg);
  return r;
}

std::string complexity_csv(const ComplexityReport& r) {
  std::ostringstream s;
  s << "layer,kind,macs,flops,params\n";
  for (const LayerCost& l : r.layers) s << l.name << ',' << l.kind << ',' << l.macs << ',' << l.flops << ',' << l.params << '\n';
  s << "total,total," << r.macs << ',' << r.flops << ',' << r.params << '\n';
  return s.str();
}

std::string complexity_table(const ComplexityReport& r) {
  std::size_t width = 5;
  for (const LayerCost& l : r.layers) width = std::max(width, l.name.size());
  std::ostringstream s;
  s << "input " << r.width << "x" << r.height << "\n";
  s << std::left << std::setw(static_cast<int>(width) + 2) << "layer" << std::setw(18) << "kind" << std::right
    << std::setw(16) << "MACs" << std::setw(16) << "FLOPs" << std::setw(12) << "params" << "\n";
  for (const LayerCost& l : r.layers)
    s << std::left << std::setw(static_cast<int>(width) + 2) << l.name << std::setw(18) << l.kind << std::right
      << std::setw(16) << l.macs << std::setw(16) << l.flops << std::setw(12) << l.params << "\n";
  s << std::fixed << std::setprecision(3) << "total: " << static_cast<double>(r.macs) / 1e9 << " G MACs, "
    << static_cast<double>(r.flops) / 1e9 << " G FLOPs, " << static_cast<double>(r.params) / 1e6 << " M params\n";
  return s.str();
}

// ---------------------------------------------------------------------------
// Latency

std::string machine_descriptor() {
  std::ostringstream s;
  utsname u{};
  if (uname(&u) == 0) s << u.sysname << ' ' << u.release << ' ' << u.machine;
  std::ifstream cpu("/proc/cpuinfo");
  std::string line;
  while (std::getline(cpu, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto pos = line.find(':');
      if (pos != std::string::npos) s << "; cpu" << line.substr(pos + 1);
      break;
    }
  }
  s << "; hw threads " << std::thread::hardware_concurrency();
#if defined(__VERSION__)
  s << "; compiler " << __VERSION__;
#endif
  return s.str();
}

LatencyReport bench_latency(const std::function<void()>& fn, std::size_t warmup, std::size_t iterations) {
  require(iterations >= 1, ErrorCode::kInvalidArgument, "bench needs at least one iteration");
  const std::size_t saved = num_threads();
  set_num_threads(1);
  LatencyReport r;
  r.warmup = warmup;
  r.iterations = iterations;
  r.machine = machine_descriptor();
  std::vector<double> ms;
  try {
    for (std::size_t i = 0; i < warmup; ++i) fn();
    for (std::size_t i = 0; i < iterations; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      fn();
      const auto t1 = std::chrono::steady_clock::now();
      ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
  } catch (...) {
    set_num_threads(saved);
    throw;
  }
  set_num_threads(saved);
  double sum = 0.0;
  for (double v : ms) sum += v;
  r.mean_ms = sum / static_cast<double>(ms.size());
  double var = 0.0;
  for (double v : ms) var += (v - r.mean_ms) * (v - r.mean_ms);
  r.std_ms = ms.size() > 1 ? std::sqrt(var / static_cast<double>(ms.size() - 1)) : 0.0;
  r.min_ms = *std::min_element(ms.begin(), ms.end());
  return r;
}

std::string latency_csv(const LatencyReport& r, const std::string& label) {
  std::ostringstream s;
  s << "label,warmup,iterations,mean_ms,std_ms,min_ms,machine\n";
  s << label << ',' << r.warmup << ',' << r.iterations << ',' << std::setprecision(9) << r.mean_ms << ','
    << r.std_ms << ',' << r.min_ms << ",\"" << r.machine << "\"\n";
  return s.str();
}

std::string latency_table(const LatencyReport& r, const std::string& label) {
  std::ostringstream s;
  s << label << ": mean " << std::fixed << std::setprecision(3) << r.mean_ms << " ms, std " << r.std_ms
    << " ms, min " << r.min_ms << " ms over " << r.iterations << " runs (" << r.warmup << " warmup)\n"
    << "machine: " << r.machine << "\n";
  return s.str();
}

}  // namespace ssmic::metrics
