#include "ssmic/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <optional>
#include <sstream>

#include "bytes.hpp"
#include "ssmic/codec.hpp"
#include "ssmic/entropy.hpp"
#include "ssmic/ops.hpp"

namespace ssmic::train {

RdLoss make_loss(double distortion, double rate, double lambda) {
  require(std::isfinite(distortion), ErrorCode::kNumeric, "distortion term is not finite");
  require(std::isfinite(rate), ErrorCode::kNumeric, "rate term is not finite");
  require(std::isfinite(lambda), ErrorCode::kNumeric, "lambda is not finite");
  RdLoss l{distortion, rate, lambda, distortion + lambda * rate};
  require(std::isfinite(l.loss), ErrorCode::kNumeric, "loss is not finite");
  return l;
}

NoiseSample draw_noise(const model::ModelConfig& cfg, std::size_t height, std::size_t width, Rng& rng) {
  const std::size_t f = cfg.downsampling(), g = cfg.total_downsampling();
  require(height % g == 0 && width % g == 0, ErrorCode::kShapeMismatch,
          "training input " + std::to_string(height) + "x" + std::to_string(width) + " is not divisible by " +
              std::to_string(g));
  NoiseSample n;
  n.y = random_uniform({height / f, width / f, cfg.latent_channels()}, rng, -0.5, 0.5);
  n.z = random_uniform({height / g, width / g, cfg.hyper_channels()}, rng, -0.5, 0.5);
  return n;
}

namespace {

template <class T, class Lift>
std::array<T, 4> forward_impl(const model::ModelParamsT<T>& m, const Tensor& x, const NoiseSample& noise,
                              double lambda, Lift&& lift) {
  const double pixels = static_cast<double>(x.dim(0) * x.dim(1));
  const T xin = lift(x);
  const T y = model::g_a(xin, m);
  require(y.shape() == noise.y.shape(), ErrorCode::kShapeMismatch, "noise does not match the latent shape");
  const T y_tilde = ops::add(y, lift(noise.y));
  const T z = model::h_a(y, m);
  require(z.shape() == noise.z.shape(), ErrorCode::kShapeMismatch, "noise does not match the hyper-latent shape");
  const T z_tilde = ops::add(z, lift(noise.z));
  const T psi = model::h_s(z_tilde, m);
  const T phi = entropy::context_forward(y_tilde, m.context);
  const auto [mu, sigma] = entropy::entropy_parameters(psi, phi, m.entropy);
  const T py = ops::gaussian_likelihood(y_tilde, mu, sigma);
  const T pz = ops::factorized_likelihood(z_tilde, m.prior.matrices, m.prior.biases, m.prior.factors);
  const T rate = ops::scale(ops::add(ops::sum_neg_log2(py), ops::sum_neg_log2(pz)), 1.0 / pixels);
  const T x_hat = model::g_s(y_tilde, m);
  const T distortion = ops::mse(x_hat, xin);
  const T loss = ops::add(distortion, ops::scale(rate, lambda));
  return {distortion, rate, loss, x_hat};
}

double scalar_of(const Tensor& t) { return t[0]; }

}  // namespace

ForwardGraph forward(ad::Tape& tape, const model::ModelParamsT<ad::Var>& params, const Tensor& x,
                     const NoiseSample& noise, double lambda) {
  const auto r = forward_impl<ad::Var>(params, x, noise, lambda, [&](const Tensor& t) { return tape.constant(t); });
  return {r[0], r[1], r[2], r[3]};
}

RdLoss evaluate_loss(const model::WeightStore& store, const model::ModelConfig& cfg, const Tensor& x,
                     const NoiseSample& noise, double lambda) {
  const model::ModelParams m = model::bind_model(store, cfg);
  const auto r = forward_impl<Tensor>(m, x, noise, lambda, [](const Tensor& t) { return t; });
  return make_loss(scalar_of(r[0]), scalar_of(r[1]), lambda);
}

Gradients gradients(const model::WeightStore& store, const model::ModelConfig& cfg, const Tensor& x,
                    const NoiseSample& noise, double lambda) {
  model::check_complete(store, cfg);
  ad::Tape tape;
  model::VarSource src(tape, store);
  const auto params = model::bind_model(src, cfg);
  const ForwardGraph g = forward(tape, params, x, noise, lambda);
  Gradients out;
  out.loss = make_loss(scalar_of(g.distortion.value()), scalar_of(g.rate.value()), lambda);
  tape.backward(g.loss);
  std::vector<std::string> unreached;
  for (const auto& [path, var] : src.bound()) {
    if (!tape.reached(var)) unreached.push_back(path);
    out.grads.emplace(path, tape.grad(var));
  }
  if (!unreached.empty()) {
    std::string msg = "no gradient reached " + std::to_string(unreached.size()) + " parameter(s):";
    for (const auto& p : unreached) msg += " " + p;
    fail(ErrorCode::kInternal, msg);
  }
  return out;
}

// ---------------------------------------------------------------------------

model::WeightStore adam_step(OptimState& s, const model::WeightStore& params, const model::WeightStore& grads) {
  ++s.step;
  const double t = static_cast<double>(s.step);
  const double c1 = 1.0 - std::pow(s.beta1, t), c2 = 1.0 - std::pow(s.beta2, t);
  model::WeightStore out;
  for (const auto& [path, theta] : params) {
    auto git = grads.find(path);
    require(git != grads.end(), ErrorCode::kParameterSet, "no gradient for parameter " + path);
    const Tensor& g = git->second;
    require(same_shape(g, theta), ErrorCode::kShapeMismatch, "gradient shape mismatch for " + path);
    const std::size_t n = theta.size();
    auto mit = s.m.find(path);
    auto vit = s.v.find(path);
    std::vector<double> m = mit != s.m.end() ? mit->second.to_vector() : std::vector<double>(n, 0.0);
    std::vector<double> v = vit != s.v.end() ? vit->second.to_vector() : std::vector<double>(n, 0.0);
    require(m.size() == n && v.size() == n, ErrorCode::kShapeMismatch, "optimizer moments do not match " + path);
    std::vector<double> p = theta.to_vector();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
      const double mh = m[i] / c1, vh = v[i] / c2;
      p[i] -= s.lr * mh / (std::sqrt(vh) + s.eps);
    }
    s.m.insert_or_assign(path, Tensor(theta.shape(), std::move(m)));
    s.v.insert_or_assign(path, Tensor(theta.shape(), std::move(v)));
    out.emplace(path, Tensor(theta.shape(), std::move(p)));
  }
  return out;
}

namespace {
constexpr std::array<char, 4> kOptimMagic = {'S', 'S', 'M', 'O'};
constexpr std::uint32_t kOptimVersion = 1;
}  // namespace

std::vector<std::uint8_t> serialize_optim_state(const OptimState& s) {
  detail::ByteWriter w(false);
  w.bytes(kOptimMagic.data(), kOptimMagic.size());
  w.u32(kOptimVersion);
  w.u64(s.step);
  w.f64(s.lr);
  w.f64(s.beta1);
  w.f64(s.beta2);
  w.f64(s.eps);
  const auto first = codec::serialize_weights(s.m);
  const auto second = codec::serialize_weights(s.v);
  w.u64(first.size());
  w.bytes(first.data(), first.size());
  w.u64(second.size());
  w.bytes(second.data(), second.size());
  return std::move(w.data());
}

OptimState parse_optim_state(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, false, "optimizer state");
  const std::uint8_t* magic = r.take(4, "the magic");
  require(std::equal(kOptimMagic.begin(), kOptimMagic.end(), magic,
                     [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; }),
          ErrorCode::kMagicMismatch, "not an SSMO optimizer state (magic mismatch)");
  require(r.u32("the version") == kOptimVersion, ErrorCode::kVersionMismatch, "unsupported optimizer state version");
  OptimState s;
  s.step = r.u64("the header");
  s.lr = r.f64("the header");
  s.beta1 = r.f64("the header");
  s.beta2 = r.f64("the header");
  s.eps = r.f64("the header");
  for (model::WeightStore* target : {&s.m, &s.v}) {
    const std::uint64_t n = r.u64("a moment block");
    require(n <= r.remaining(), ErrorCode::kTruncated, "optimizer state is truncated in a moment block");
    const std::uint8_t* p = r.take(static_cast<std::size_t>(n), "a moment block");
    *target = codec::parse_weights(std::vector<std::uint8_t>(p, p + n));
  }
  require(r.remaining() == 0, ErrorCode::kCorrupt, "optimizer state has trailing bytes");
  return s;
}

void save_optim_state(const OptimState& s, const std::string& path) {
  codec::write_file(path, serialize_optim_state(s));
}

OptimState load_optim_state(const std::string& path) { return parse_optim_state(codec::read_file(path)); }

std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream s;
  s << "step,loss,distortion,rate,lambda\n" << std::setprecision(17);
  for (const TraceRow& r : trace)
    s << r.step << ',' << r.loss.loss << ',' << r.loss.distortion << ',' << r.loss.rate << ',' << r.loss.lambda
      << '\n';
  return s.str();
}

Tensor random_crop(const Tensor& image, std::size_t crop, Rng& rng) {
  require(image.rank() == 3 && image.dim(0) >= crop && image.dim(1) >= crop, ErrorCode::kShapeMismatch,
          "image " + shape_str(image.shape()) + " is smaller than the " + std::to_string(crop) + " crop");
  const std::size_t top = static_cast<std::size_t>(rng.below(image.dim(0) - crop + 1));
  const std::size_t left = static_cast<std::size_t>(rng.below(image.dim(1) - crop + 1));
  const std::size_t w = image.dim(1), c = image.dim(2);
  std::vector<double> v(crop * crop * c);
  for (std::size_t i = 0; i < crop; ++i)
    std::copy_n(image.raw() + ((top + i) * w + left) * c, crop * c, v.begin() + static_cast<std::ptrdiff_t>(i * crop * c));
  return Tensor({crop, crop, c}, std::move(v));
}

TrainResult train_toy(const model::ModelConfig& cfg_in, const std::vector<Tensor>& images, const TrainOptions& opts,
                      const model::WeightStore* initial) {
  const model::ModelConfig cfg = model::finalize(cfg_in);
  require(!images.empty(), ErrorCode::kInvalidArgument, "training needs at least one image");
  require(opts.lr >= 0.0 && std::isfinite(opts.lr), ErrorCode::kInvalidArgument, "learning rate must be >= 0");
  TrainResult res;
  if (initial) {
    model::check_complete(*initial, cfg);
    res.weights = *initial;
  } else {
    Rng init_rng(opts.seed);
    res.weights = model::init_weights(cfg, init_rng, {opts.weight_std});
  }
  res.optim.lr = opts.lr;
  Rng rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
  double first = 0.0;
  std::optional<NoiseSample> frozen;
  for (std::size_t step = 0; step < opts.steps; ++step) {
    const Tensor& img = images[images.size() == 1 ? 0 : static_cast<std::size_t>(rng.below(images.size()))];
    const Tensor x = random_crop(img, opts.crop, rng);
    if (!frozen || !opts.fixed_noise) frozen = draw_noise(cfg, opts.crop, opts.crop, rng);
    const NoiseSample& noise = *frozen;
    Gradients g;
    try {
      g = gradients(res.weights, cfg, x, noise, opts.lambda);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNumeric) throw;
      throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": " + e.what(), res.trace);
    }
    res.trace.push_back({step, g.loss});
    if (step == 0) first = g.loss.loss;
    if (g.loss.loss > opts.divergence_factor * first && first > 0.0)
      throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": loss " +
                                 std::to_string(g.loss.loss) + " exceeds " + std::to_string(opts.divergence_factor) +
                                 " x initial " + std::to_string(first),
                             res.trace);
    res.weights = adam_step(res.optim, res.weights, g.grads);
  }
  return res;
}

}  // namespace ssmic::train
