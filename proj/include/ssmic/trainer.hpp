#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ssmic/autodiff.hpp"
#include "ssmic/error.hpp"
#include "ssmic/tensor.hpp"
#include "ssmic/transforms.hpp"

namespace ssmic::train {

struct RdLoss {
  double distortion = 0.0;  // MSE on unit-range RGB
  double rate = 0.0;        // bits per pixel for y_hat and z_hat together
  double lambda = 0.0;
  double loss = 0.0;        // distortion + lambda * rate
};

// Checks every term for finiteness, naming the offending one.
RdLoss make_loss(double distortion, double rate, double lambda);

// Uniform noise standing in for quantization, drawn once so the loss is a
// deterministic function of the parameters.
struct NoiseSample {
  Tensor y;
  Tensor z;
};
NoiseSample draw_noise(const model::ModelConfig& cfg, std::size_t height, std::size_t width, Rng& rng);

// Graph nodes of one noisy forward pass.
struct ForwardGraph {
  ad::Var distortion;
  ad::Var rate;
  ad::Var loss;
  ad::Var x_hat;
};

// y = g_a(x), y~ = y + u, z = h_a(y), z~ = z + u, psi = h_s(z~),
// phi = context(y~), (mu, sigma) from both, x_hat = g_s(y~).
// R = -(sum log2 p(y~) + sum log2 p(z~)) / (H W), D = mse(x, x_hat).
ForwardGraph forward(ad::Tape& tape, const model::ModelParamsT<ad::Var>& params, const Tensor& x,
                     const NoiseSample& noise, double lambda);

struct Gradients {
  RdLoss loss;
  model::WeightStore grads;
};

// Fails with kInternal listing any parameter no gradient reached.
Gradients gradients(const model::WeightStore& store, const model::ModelConfig& cfg, const Tensor& x,
                    const NoiseSample& noise, double lambda);
// Loss only, without recording a backward graph.
RdLoss evaluate_loss(const model::WeightStore& store, const model::ModelConfig& cfg, const Tensor& x,
                     const NoiseSample& noise, double lambda);

struct OptimState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  model::WeightStore m;
  model::WeightStore v;
};

// Bias-corrected Adam; missing moments start at zero.
model::WeightStore adam_step(OptimState& state, const model::WeightStore& params,
                             const model::WeightStore& grads);

void save_optim_state(const OptimState& s, const std::string& path);
OptimState load_optim_state(const std::string& path);
std::vector<std::uint8_t> serialize_optim_state(const OptimState& s);
OptimState parse_optim_state(const std::vector<std::uint8_t>& bytes);

struct TraceRow {
  std::size_t step = 0;
  RdLoss loss;
};

std::string trace_csv(const std::vector<TraceRow>& trace);

struct TrainOptions {
  double lambda = 10.0;
  std::size_t steps = 300;
  double lr = 1e-4;
  std::size_t crop = 64;
  std::uint64_t seed = 0;
  double weight_std = 0.02;
  double divergence_factor = 1e3;
  // Reuse the step-0 noise draw on every step instead of resampling.
  bool fixed_noise = false;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  model::WeightStore weights;
  OptimState optim;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, std::vector<TraceRow> trace)
      : Error(ErrorCode::kDivergence, what), trace_(std::move(trace)) {}
  const std::vector<TraceRow>& trace() const { return trace_; }

 private:
  std::vector<TraceRow> trace_;
};

// Each step takes a random crop from a random image, draws fresh noise and
// applies one Adam update. The row for step s holds the loss before update s.
// Throws TrainingDiverged once L exceeds divergence_factor * L_0.
TrainResult train_toy(const model::ModelConfig& cfg, const std::vector<Tensor>& images, const TrainOptions& opts,
                      const model::WeightStore* initial = nullptr);

// Deterministic crop of a random window (all images must be at least crop x crop).
Tensor random_crop(const Tensor& image, std::size_t crop, Rng& rng);

}  // namespace ssmic::train
