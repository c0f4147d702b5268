#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gjem/autodiff.hpp"
#include "gjem/container.hpp"
#include "gjem/tensor.hpp"

namespace gjem {

enum class Activation { swish };

// Fully connected backbone D -> hidden... -> 2K with swish between layers.
struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t num_attributes = 0;
  Activation activation = Activation::swish;

  std::size_t output_dim() const { return 2 * num_attributes; }
  std::size_t num_layers() const { return hidden.size() + 1; }
  void validate() const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Named parameters theta, their exponential moving average and Adam moments.
class ParameterSet {
 public:
  void add(std::string name, Tensor value);

  std::size_t size() const { return theta_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  std::span<const std::string> names() const { return names_; }
  std::span<const Tensor> values() const { return theta_; }
  std::span<Tensor> mutable_values() { return theta_; }
  std::span<const Tensor> averaged() const { return ema_; }
  std::span<Tensor> mutable_averaged() { return ema_; }
  std::uint64_t adam_steps() const { return step_; }
  std::size_t scalar_count() const;

  // theta <- theta - lr * mhat / (sqrt(vhat) + eps), bias-corrected.
  void adam_step(std::span<const Tensor> grads, double lr, const AdamConfig& cfg = {});
  // theta_hat <- mu * theta_hat + (1 - mu) * theta
  void ema_update(double mu);
  void reset_average();

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> theta_, ema_, m_, v_;
  std::uint64_t step_ = 0;
};

// He-style uniform fan-in init for weights (bound sqrt(6 / fan_in)), zero
// biases. Names are "layer<i>.weight" / "layer<i>.bias".
ParameterSet init_mlp_parameters(const MlpSpec& spec, std::uint64_t seed);
ParameterSet zero_mlp_parameters(const MlpSpec& spec);

struct MlpPass {
  Var logits;               // [K, 2] for a single input, [B, K, 2] batched
  std::vector<Var> params;  // leaves, in ParameterSet order
};

// x has shape [D] or [B, D].
MlpPass mlp_forward(Tape& tape, const MlpSpec& spec, std::span<const Tensor> params, Var x,
                    bool params_require_grad);

// Convenience: logits for a tensor input with no gradient tracking.
Tensor mlp_logits(const MlpSpec& spec, std::span<const Tensor> params, const Tensor& x);

// Forward pass carrying a tangent along x, so that logits_dot equals the
// directional derivative J_x(logits) * x_dot. Both outputs stay on the tape
// and are differentiable in the parameters. x and x_dot are [B, D].
struct MlpTangentPass {
  Var logits;
  Var logits_dot;
  std::vector<Var> params;
};
MlpTangentPass mlp_forward_tangent(Tape& tape, const MlpSpec& spec, std::span<const Tensor> params, Var x,
                                   Var x_dot, bool params_require_grad);

// Checkpoint records: spec, theta ("theta/<name>") and theta_hat ("ema/<name>").
std::vector<Record> checkpoint_records(const MlpSpec& spec, const ParameterSet& params);
struct LoadedCheckpoint {
  MlpSpec spec;
  ParameterSet params;
};
LoadedCheckpoint parse_checkpoint(std::span<const Record> records);

void save_checkpoint(const std::filesystem::path& path, const MlpSpec& spec, const ParameterSet& params,
                     std::span<const Record> extra = {});
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gjem
