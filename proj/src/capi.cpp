#include "ssmic/ssmic.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <new>
#include <sstream>
#include <string>

#include "ssmic/codec.hpp"
#include "ssmic/metrics.hpp"
#include "ssmic/parallel.hpp"
#include "ssmic/selftest.hpp"
#include "ssmic/trainer.hpp"

using namespace ssmic;

struct ssmic_config {
  model::ModelConfig cfg;
};

struct ssmic_model {
  model::WeightStore weights;
  codec::Model model;
};

namespace {

thread_local std::string g_last_error;

ssmic_status to_status(ErrorCode c) { return static_cast<ssmic_status>(static_cast<int>(c)); }

template <class Fn>
ssmic_status guard(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return SSMIC_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return SSMIC_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SSMIC_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  require(p != nullptr, ErrorCode::kInvalidArgument, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

ssmic_model* make_handle(const model::ModelConfig& cfg, model::WeightStore store) {
  auto* h = new ssmic_model;
  try {
    h->model = codec::make_model(cfg, store);
    h->weights = std::move(store);
  } catch (...) {
    delete h;
    throw;
  }
  return h;
}

}  // namespace

extern "C" {

const char* ssmic_last_error(void) { return g_last_error.c_str(); }

const char* ssmic_status_name(ssmic_status status) {
  switch (status) {
    case SSMIC_OK: return "SSMIC_OK";
    case SSMIC_ERR_INVALID_ARGUMENT: return "SSMIC_ERR_INVALID_ARGUMENT";
    case SSMIC_ERR_SHAPE: return "SSMIC_ERR_SHAPE";
    case SSMIC_ERR_IO: return "SSMIC_ERR_IO";
    case SSMIC_ERR_MAGIC: return "SSMIC_ERR_MAGIC";
    case SSMIC_ERR_VERSION: return "SSMIC_ERR_VERSION";
    case SSMIC_ERR_DIGEST: return "SSMIC_ERR_DIGEST";
    case SSMIC_ERR_TRUNCATED: return "SSMIC_ERR_TRUNCATED";
    case SSMIC_ERR_CORRUPT: return "SSMIC_ERR_CORRUPT";
    case SSMIC_ERR_PARAMETER_SET: return "SSMIC_ERR_PARAMETER_SET";
    case SSMIC_ERR_DIVERGENCE: return "SSMIC_ERR_DIVERGENCE";
    case SSMIC_ERR_NUMERIC: return "SSMIC_ERR_NUMERIC";
    case SSMIC_ERR_INTERNAL: return "SSMIC_ERR_INTERNAL";
  }
  return "SSMIC_ERR_UNKNOWN";
}

int ssmic_exit_code(ssmic_status status) {
  switch (status) {
    case SSMIC_OK: return 0;
    case SSMIC_ERR_INVALID_ARGUMENT: return 1;
    case SSMIC_ERR_INTERNAL: return 3;
    default: return 2;
  }
}

void ssmic_free_string(char* s) { std::free(s); }

void ssmic_set_threads(uint32_t n) { set_num_threads(n); }

ssmic_status ssmic_config_default(ssmic_config** out) {
  return guard([&] {
    need(out, "out");
    *out = new ssmic_config{model::default_config()};
  });
}

ssmic_status ssmic_config_load(const char* path, ssmic_config** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new ssmic_config{model::load_config(path)};
  });
}

ssmic_status ssmic_config_from_json(const char* json, ssmic_config** out) {
  return guard([&] {
    need(json, "json");
    need(out, "out");
    *out = new ssmic_config{model::config_from_json(json)};
  });
}

ssmic_status ssmic_config_to_json(const ssmic_config* cfg, char** out) {
  return guard([&] {
    need(cfg, "cfg");
    need(out, "out");
    *out = dup_string(model::config_to_json(cfg->cfg));
  });
}

ssmic_status ssmic_config_digest(const ssmic_config* cfg, uint64_t* out) {
  return guard([&] {
    need(cfg, "cfg");
    need(out, "out");
    *out = model::config_digest(cfg->cfg);
  });
}

void ssmic_config_free(ssmic_config* cfg) { delete cfg; }

ssmic_status ssmic_model_random(const ssmic_config* cfg, uint64_t seed, double weight_std, ssmic_model** out) {
  return guard([&] {
    need(cfg, "cfg");
    need(out, "out");
    require(weight_std > 0.0 && std::isfinite(weight_std), ErrorCode::kInvalidArgument,
            "weight_std must be positive");
    Rng rng(seed);
    *out = make_handle(cfg->cfg, model::init_weights(cfg->cfg, rng, {weight_std}));
  });
}

ssmic_status ssmic_model_load(const ssmic_config* cfg, const char* weights_path, ssmic_model** out) {
  return guard([&] {
    need(cfg, "cfg");
    need(weights_path, "weights_path");
    need(out, "out");
    *out = make_handle(cfg->cfg, codec::load_weights(weights_path, cfg->cfg));
  });
}

ssmic_status ssmic_model_save(const ssmic_model* m, const char* weights_path) {
  return guard([&] {
    need(m, "model");
    need(weights_path, "weights_path");
    codec::save_weights(m->weights, weights_path);
  });
}

ssmic_status ssmic_model_param_count(const ssmic_model* m, uint64_t* out) {
  return guard([&] {
    need(m, "model");
    need(out, "out");
    *out = model::parameter_count(m->weights);
  });
}

void ssmic_model_free(ssmic_model* m) { delete m; }

ssmic_status ssmic_encode_file(const ssmic_model* m, const char* png_in, const char* container_out,
                               const char* lambda_tag, ssmic_code_info* info) {
  return guard([&] {
    need(m, "model");
    need(png_in, "png_in");
    need(container_out, "container_out");
    const codec::ImageBuffer img = codec::read_png(png_in);
    const auto enc = codec::encode_image(codec::to_tensor(img), m->model, lambda_tag ? lambda_tag : "");
    codec::write_file(container_out, codec::serialize(enc.container));
    if (info) {
      info->height = enc.container.height;
      info->width = enc.container.width;
      info->bits = enc.container.total_bits();
      info->bpp = enc.container.bpp();
      info->psnr = std::numeric_limits<double>::quiet_NaN();
    }
  });
}

ssmic_status ssmic_decode_file(const ssmic_model* m, const char* container_in, const char* png_out) {
  return guard([&] {
    need(m, "model");
    need(container_in, "container_in");
    need(png_out, "png_out");
    const codec::Container c = codec::parse_container(codec::read_file(container_in));
    const auto dec = codec::decode_image(c, m->model);
    codec::write_png(codec::from_tensor(dec.x_hat), png_out);
  });
}

ssmic_status ssmic_eval_file(const ssmic_model* m, const char* png_in, ssmic_code_info* info) {
  return guard([&] {
    need(m, "model");
    need(png_in, "png_in");
    need(info, "info");
    const codec::ImageBuffer img = codec::read_png(png_in);
    const auto enc = codec::encode_image(codec::to_tensor(img), m->model);
    const auto bytes = codec::serialize(enc.container);
    const auto dec = codec::decode_image(codec::parse_container(bytes), m->model);
    info->height = enc.container.height;
    info->width = enc.container.width;
    info->bits = enc.container.total_bits();
    info->bpp = enc.container.bpp();
    info->psnr = metrics::psnr(img, codec::from_tensor(dec.x_hat));
  });
}

ssmic_status ssmic_bd_rate(const double* anchor_bpp, const double* anchor_psnr, size_t anchor_count,
                           const double* test_bpp, const double* test_psnr, size_t test_count, double* out_percent) {
  return guard([&] {
    need(out_percent, "out_percent");
    require(anchor_count == 0 || (anchor_bpp && anchor_psnr), ErrorCode::kInvalidArgument, "anchor arrays are NULL");
    require(test_count == 0 || (test_bpp && test_psnr), ErrorCode::kInvalidArgument, "test arrays are NULL");
    std::vector<metrics::RdPoint> a(anchor_count), t(test_count);
    for (size_t i = 0; i < anchor_count; ++i) a[i] = {anchor_bpp[i], anchor_psnr[i]};
    for (size_t i = 0; i < test_count; ++i) t[i] = {test_bpp[i], test_psnr[i]};
    *out_percent = metrics::bd_rate(a, t);
  });
}

ssmic_status ssmic_bd_rate_csv(const char* anchor_csv, const char* test_csv, double* out_percent) {
  return guard([&] {
    need(anchor_csv, "anchor_csv");
    need(test_csv, "test_csv");
    need(out_percent, "out_percent");
    *out_percent = metrics::bd_rate(metrics::read_rd_csv(anchor_csv), metrics::read_rd_csv(test_csv));
  });
}

ssmic_status ssmic_complexity(const ssmic_config* cfg, uint32_t height, uint32_t width, ssmic_format format,
                              char** report, uint64_t* macs, uint64_t* flops, uint64_t* params) {
  return guard([&] {
    need(cfg, "cfg");
    const auto r = metrics::count_complexity(cfg->cfg, height, width);
    if (report)
      *report = dup_string(format == SSMIC_FORMAT_TABLE ? metrics::complexity_table(r) : metrics::complexity_csv(r));
    if (macs) *macs = r.macs;
    if (flops) *flops = r.flops;
    if (params) *params = r.params;
  });
}

ssmic_status ssmic_bench(const ssmic_model* m, uint32_t height, uint32_t width, uint32_t warmup,
                         uint32_t iterations, uint64_t seed, ssmic_format format, char** report) {
  return guard([&] {
    need(m, "model");
    need(report, "report");
    require(height > 0 && width > 0, ErrorCode::kInvalidArgument, "bench extents must be positive");
    Rng rng(seed);
    const Tensor x = random_uniform({height, width, 3}, rng, 0.0, 1.0);
    const codec::Container c = codec::encode_image(x, m->model).container;
    const auto enc = metrics::bench_latency([&] { (void)codec::encode_image(x, m->model); }, warmup, iterations);
    const auto dec = metrics::bench_latency([&] { (void)codec::decode_image(c, m->model); }, warmup, iterations);
    std::string out;
    if (format == SSMIC_FORMAT_TABLE) {
      out = metrics::latency_table(enc, "encode") + metrics::latency_table(dec, "decode");
    } else {
      const std::string d = metrics::latency_csv(dec, "decode");
      out = metrics::latency_csv(enc, "encode") + d.substr(d.find('\n') + 1);
    }
    *report = dup_string(out);
  });
}

void ssmic_train_options_default(ssmic_train_options* opts) {
  if (!opts) return;
  const train::TrainOptions d;
  opts->lambda = d.lambda;
  opts->steps = static_cast<uint32_t>(d.steps);
  opts->learning_rate = d.lr;
  opts->crop = static_cast<uint32_t>(d.crop);
  opts->seed = d.seed;
  opts->weight_std = d.weight_std;
}

ssmic_status ssmic_train_toy(const ssmic_config* cfg, const char* const* png_paths, size_t count,
                             const ssmic_train_options* opts, const char* weights_out, const char* trace_csv,
                             double* first_loss, double* last_loss) {
  return guard([&] {
    need(cfg, "cfg");
    need(png_paths, "png_paths");
    need(opts, "opts");
    need(weights_out, "weights_out");
    std::vector<Tensor> images;
    for (size_t i = 0; i < count; ++i) {
      need(png_paths[i], "png path");
      images.push_back(codec::to_tensor(codec::read_png(png_paths[i])));
    }
    train::TrainOptions o;
    o.lambda = opts->lambda;
    o.steps = opts->steps;
    o.lr = opts->learning_rate;
    o.crop = opts->crop;
    o.seed = opts->seed;
    o.weight_std = opts->weight_std;
    train::TrainResult r;
    try {
      r = train::train_toy(cfg->cfg, images, o);
    } catch (const train::TrainingDiverged& e) {
      if (trace_csv) codec::write_file(trace_csv, [&] {
          const std::string s = train::trace_csv(e.trace());
          return std::vector<std::uint8_t>(s.begin(), s.end());
        }());
      throw;
    }
    codec::save_weights(r.weights, weights_out);
    if (trace_csv) {
      const std::string s = train::trace_csv(r.trace);
      codec::write_file(trace_csv, std::vector<std::uint8_t>(s.begin(), s.end()));
    }
    if (first_loss) *first_loss = r.trace.empty() ? 0.0 : r.trace.front().loss.loss;
    if (last_loss) *last_loss = r.trace.empty() ? 0.0 : r.trace.back().loss.loss;
  });
}

ssmic_status ssmic_selftest(char** report, int* failures) {
  return guard([&] {
    need(report, "report");
    int bad = 0;
    std::ostringstream s;
    for (const CheckResult& c : run_selftest()) {
      s << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
      bad += c.passed ? 0 : 1;
    }
    *report = dup_string(s.str());
    if (failures) *failures = bad;
  });
}

}  // extern "C"
