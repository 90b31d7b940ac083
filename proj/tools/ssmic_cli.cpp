// Command-line front end. Machine-readable output goes to stdout (or --out),
// progress and errors go to stderr.
#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "ssmic/ssmic.h"

namespace fs = std::filesystem;

namespace {

struct Failure {
  ssmic_status status;
};

void check(ssmic_status s) {
  if (s != SSMIC_OK) throw Failure{s};
}

struct ConfigDeleter {
  void operator()(ssmic_config* c) const { ssmic_config_free(c); }
};
struct ModelDeleter {
  void operator()(ssmic_model* m) const { ssmic_model_free(m); }
};
struct StringDeleter {
  void operator()(char* s) const { ssmic_free_string(s); }
};
using ConfigPtr = std::unique_ptr<ssmic_config, ConfigDeleter>;
using ModelPtr = std::unique_ptr<ssmic_model, ModelDeleter>;
using StringPtr = std::unique_ptr<char, StringDeleter>;

struct Common {
  std::string config;
  std::string weights;
  std::string out;
  std::string format = "csv";
  std::string lambda_tag;
  uint64_t seed = 0;
  double weight_std = 0.02;
};

ConfigPtr load_config(const Common& c) {
  ssmic_config* cfg = nullptr;
  check(c.config.empty() ? ssmic_config_default(&cfg) : ssmic_config_load(c.config.c_str(), &cfg));
  return ConfigPtr(cfg);
}

ModelPtr load_model(const Common& c, const ssmic_config* cfg) {
  ssmic_model* m = nullptr;
  if (c.weights.empty()) {
    std::cerr << "note: no --weights given, using random weights from seed " << c.seed << "\n";
    check(ssmic_model_random(cfg, c.seed, c.weight_std, &m));
  } else {
    check(ssmic_model_load(cfg, c.weights.c_str(), &m));
  }
  return ModelPtr(m);
}

ssmic_format format_of(const Common& c) { return c.format == "table" ? SSMIC_FORMAT_TABLE : SSMIC_FORMAT_CSV; }

void emit(const Common& c, const std::string& text) {
  if (c.out.empty()) {
    std::cout << text << std::flush;
    return;
  }
  std::ofstream f(c.out, std::ios::binary);
  f << text;
  if (!f) {
    std::cerr << "error: cannot write " << c.out << "\n";
    throw Failure{SSMIC_ERR_IO};
  }
}

void add_model_flags(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Model configuration JSON (default: built-in config)")->check(CLI::ExistingFile);
  sub->add_option("--weights", c.weights, "Weight file (default: random weights from --seed)")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "Seed for random weights and inputs")->capture_default_str();
}

void add_format_flag(CLI::App* sub, Common& c) {
  sub->add_option("--format", c.format, "Report format")->check(CLI::IsMember({"csv", "table"}))->capture_default_str();
}

std::string prefix_rows(const std::string& csv, const std::string& prefix, bool keep_header) {
  std::istringstream in(csv);
  std::ostringstream out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      first = false;
      if (keep_header) out << "width,height," << line << "\n";
      continue;
    }
    out << prefix << line << "\n";
  }
  return out.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ssmic: learned image codec built on visual state space blocks"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  app.footer("Environment: SSMIC_THREADS caps the number of worker threads.\n"
             "Exit codes: 0 ok, 1 usage error, 2 data error, 3 internal error.");
  Common c;

  std::string in_path;
  auto* enc = app.add_subcommand("encode", "Compress a PNG into a container file");
  enc->add_option("input", in_path, "Input PNG")->required()->check(CLI::ExistingFile);
  enc->add_option("--out", c.out, "Output container path")->required();
  enc->add_option("--lambda", c.lambda_tag, "Rate-distortion tag stored in the container");
  add_model_flags(enc, c);

  auto* dec = app.add_subcommand("decode", "Reconstruct a PNG from a container file");
  dec->add_option("input", in_path, "Input container")->required()->check(CLI::ExistingFile);
  dec->add_option("--out", c.out, "Output PNG path")->required();
  add_model_flags(dec, c);

  auto* ev = app.add_subcommand("eval", "Code every PNG in a directory and report bpp and PSNR as CSV");
  ev->add_option("input", in_path, "Directory of PNG images")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--out", c.out, "Write the CSV here instead of stdout");
  ev->add_option("--lambda", c.lambda_tag, "Rate-distortion tag added as a column");
  add_model_flags(ev, c);

  std::string anchor_csv, test_csv;
  auto* bd = app.add_subcommand("bdrate", "BD-rate of a test RD curve against an anchor (CSV with bpp,psnr)");
  bd->add_option("anchor", anchor_csv, "Anchor RD CSV")->required()->check(CLI::ExistingFile);
  bd->add_option("test", test_csv, "Test RD CSV")->required()->check(CLI::ExistingFile);
  bd->add_option("--out", c.out, "Write the result here instead of stdout");

  std::vector<uint32_t> res_h, res_w;
  auto* fl = app.add_subcommand("flops", "Per-layer MACs, FLOPs and parameters");
  fl->add_option("--height", res_h, "Input height(s); default 512, 768, 1280");
  fl->add_option("--width", res_w, "Input width(s); default 768, 1024, 1280");
  fl->add_option("--config", c.config, "Model configuration JSON")->check(CLI::ExistingFile);
  fl->add_option("--out", c.out, "Write the report here instead of stdout");
  add_format_flag(fl, c);

  uint32_t bench_h = 256, bench_w = 256, warmup = 2, iters = 10;
  auto* be = app.add_subcommand("bench", "Encode and decode latency on a seeded random image");
  be->add_option("--height", bench_h, "Image height")->capture_default_str()->check(CLI::PositiveNumber);
  be->add_option("--width", bench_w, "Image width")->capture_default_str()->check(CLI::PositiveNumber);
  be->add_option("--warmup", warmup, "Untimed warmup runs")->capture_default_str();
  be->add_option("--iterations", iters, "Timed runs")->capture_default_str()->check(CLI::PositiveNumber);
  be->add_option("--out", c.out, "Write the report here instead of stdout");
  add_model_flags(be, c);
  add_format_flag(be, c);

  std::vector<std::string> train_images;
  std::string trace_path;
  ssmic_train_options topts;
  ssmic_train_options_default(&topts);
  auto* tr = app.add_subcommand("train-toy", "Short deterministic training run from random weights");
  tr->add_option("images", train_images, "Training PNGs")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", c.out, "Output weight file")->required();
  tr->add_option("--trace", trace_path, "Write the per-step loss trace CSV here");
  tr->add_option("--lambda", topts.lambda, "Rate-distortion trade-off")->capture_default_str();
  tr->add_option("--steps", topts.steps, "Optimizer steps")->capture_default_str();
  tr->add_option("--lr", topts.learning_rate, "Adam learning rate")->capture_default_str();
  tr->add_option("--crop", topts.crop, "Square crop size")->capture_default_str();
  tr->add_option("--seed", topts.seed, "Seed for init, crops and noise")->capture_default_str();
  tr->add_option("--config", c.config, "Model configuration JSON")->check(CLI::ExistingFile);

  auto* st = app.add_subcommand("selftest", "Run the built-in oracle checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*enc) {
      auto cfg = load_config(c);
      auto model = load_model(c, cfg.get());
      ssmic_code_info info{};
      check(ssmic_encode_file(model.get(), in_path.c_str(), c.out.c_str(), c.lambda_tag.c_str(), &info));
      std::cout << "bits,bpp\n" << info.bits << "," << info.bpp << "\n";
    } else if (*dec) {
      auto cfg = load_config(c);
      auto model = load_model(c, cfg.get());
      check(ssmic_decode_file(model.get(), in_path.c_str(), c.out.c_str()));
    } else if (*ev) {
      auto cfg = load_config(c);
      auto model = load_model(c, cfg.get());
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(in_path)) {
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      std::ostringstream csv;
      csv.precision(10);
      csv << "image,lambda,bpp,psnr\n";
      for (const auto& f : files) {
        ssmic_code_info info{};
        std::cerr << "coding " << f.filename().string() << "\n";
        check(ssmic_eval_file(model.get(), f.string().c_str(), &info));
        csv << f.filename().string() << "," << c.lambda_tag << "," << info.bpp << "," << info.psnr << "\n";
      }
      emit(c, csv.str());
    } else if (*bd) {
      double pct = 0.0;
      check(ssmic_bd_rate_csv(anchor_csv.c_str(), test_csv.c_str(), &pct));
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.2f%%\n", pct);
      emit(c, buf);
    } else if (*fl) {
      if (res_h.empty() && res_w.empty()) {
        res_h = {512, 768, 1280};
        res_w = {768, 1024, 1280};
      }
      if (res_h.size() != res_w.size()) {
        std::cerr << "error: --height and --width must be given the same number of times\n";
        return 1;
      }
      auto cfg = load_config(c);
      std::string text;
      for (std::size_t i = 0; i < res_h.size(); ++i) {
        char* report = nullptr;
        check(ssmic_complexity(cfg.get(), res_h[i], res_w[i], format_of(c), &report, nullptr, nullptr, nullptr));
        StringPtr owned(report);
        if (format_of(c) == SSMIC_FORMAT_TABLE)
          text += (i ? "\n" : "") + std::string(report);
        else
          text += prefix_rows(report, std::to_string(res_w[i]) + "," + std::to_string(res_h[i]) + ",", i == 0);
      }
      emit(c, text);
    } else if (*be) {
      auto cfg = load_config(c);
      auto model = load_model(c, cfg.get());
      char* report = nullptr;
      check(ssmic_bench(model.get(), bench_h, bench_w, warmup, iters, c.seed, format_of(c), &report));
      StringPtr owned(report);
      emit(c, report);
    } else if (*tr) {
      auto cfg = load_config(c);
      std::vector<const char*> paths;
      for (const auto& p : train_images) paths.push_back(p.c_str());
      double first = 0.0, last = 0.0;
      std::cerr << "training " << topts.steps << " steps\n";
      check(ssmic_train_toy(cfg.get(), paths.data(), paths.size(), &topts, c.out.c_str(),
                            trace_path.empty() ? nullptr : trace_path.c_str(), &first, &last));
      std::cout << "first_loss,last_loss\n" << first << "," << last << "\n";
    } else if (*st) {
      char* report = nullptr;
      int failures = 0;
      check(ssmic_selftest(&report, &failures));
      StringPtr owned(report);
      std::cout << report;
      return failures == 0 ? 0 : 3;
    }
  } catch (const Failure& f) {
    std::cerr << "error (" << ssmic_status_name(f.status) << "): " << ssmic_last_error() << "\n";
    return ssmic_exit_code(f.status);
  }
  return 0;
}
