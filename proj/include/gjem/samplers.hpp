#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gjem/energy.hpp"
#include "gjem/rng.hpp"
#include "gjem/tensor.hpp"

namespace gjem {

// x' = x + eps^2 / (2 lambda) * grad_x f(x) + eps * alpha,  alpha ~ N(0, I)
struct LangevinConfig {
  double step_size = 0.01;           // eps
  double temperature = 1.0 / 20000;  // lambda
  bool clamp = true;                 // keep x in [0, 1]^D
  bool noise = true;                 // false only for deterministic tests

  double drift() const { return step_size * step_size / (2.0 * temperature); }
  void validate() const;
};

struct GibbsConfig {
  std::size_t sweeps = 40;      // T
  std::size_t inner_steps = 1;  // Langevin steps per label resample

  // Keeps the total Langevin budget fixed: sweeps = budget / inner_steps.
  static GibbsConfig from_budget(std::size_t langevin_steps, std::size_t inner_steps);
  std::size_t langevin_steps() const { return sweeps * inner_steps; }
  void validate() const;
};

// Chains whose energy magnitude exceeds this, or that hit a non-finite value,
// are flagged as diverged and frozen.
inline constexpr double kDivergenceEnergy = 1e9;

struct JointSample {
  Tensor x;           // [D]
  AttributeVector y;  // [K]
};

// B chains advanced in lockstep; chain b owns row b of x and y[b*K, (b+1)*K).
struct ChainBatch {
  Tensor x;
  std::vector<std::uint8_t> y;
  std::size_t num_attributes = 0;
  std::vector<std::uint8_t> diverged;
  std::size_t sweeps_done = 0;

  std::size_t size() const { return diverged.size(); }
  std::size_t dim() const { return x.extent(1); }
  std::size_t diverged_count() const;
  std::span<const std::uint8_t> labels(std::size_t b) const { return {y.data() + b * num_attributes, num_attributes}; }
  JointSample sample(std::size_t b) const;
  std::vector<JointSample> samples() const;

  static ChainBatch from_samples(std::span<const JointSample> samples);
  static ChainBatch from_x(Tensor x, std::size_t num_attributes);
};

// Uniform initial distribution on a per-dimension box.
struct UniformBox {
  std::vector<double> low, high;

  // Bounds from the per-dimension min/max of a [B, D] batch.
  static UniformBox from_batch(const Tensor& x);
  static UniformBox unit(std::size_t dim);
  std::size_t dim() const { return low.size(); }
  Tensor sample(std::size_t count, Rng& rng) const;  // [count, D]
};

using BatchEnergyFn = std::function<EnergyGrad(const Tensor& x)>;

struct LangevinStepInfo {
  Tensor x_before;
  Tensor noise;  // alpha used by the step (zero when noise is off)
  std::vector<double> energy;  // energies at x_before
};

// One Langevin update of every non-diverged row of x ([B, D]). Flags rows in
// `diverged` when the energy or gradient misbehaves.
Tensor langevin_step(const Tensor& x, const BatchEnergyFn& energy, const LangevinConfig& cfg, Rng& rng,
                     std::vector<std::uint8_t>& diverged, LangevinStepInfo* info = nullptr);

// Joint, marginal and semi-conditional energy functions of a model.
BatchEnergyFn joint_energy_fn(const LogitModel& m, std::span<const std::uint8_t> labels);
BatchEnergyFn codes_energy_fn(const LogitModel& m, std::vector<std::int8_t> codes);

// Exact draw y ~ p(y | x) for one input.
AttributeVector sample_labels(const LogitModel& m, const Tensor& x, Rng& rng);
// Resamples every attribute whose code is kMarginalize; copies pinned values.
// `per_row_codes` has K entries shared by all chains. Draw order is row-major.
void resample_labels(const LogitModel& m, ChainBatch& chains, std::span<const std::int8_t> per_row_codes, Rng& rng);

struct SamplerHooks {
  // Called after every sweep (label update + Langevin steps).
  std::function<void(const ChainBatch&)> on_sweep;
  // Called on x before every sweep; may transform it in place.
  std::function<void(Tensor& x, std::size_t sweep, Rng& rng)> augment;
};

// State just before the final Langevin step, for differentiating through it.
struct FinalStep {
  Tensor x_before;
  Tensor noise;
  std::vector<std::uint8_t> y;
};

// Langevin-Within-Gibbs: T sweeps of {y ~ p(y|x) exactly, then inner_steps
// Langevin steps on f(., y)}.
ChainBatch lwg_sample(const LogitModel& m, ChainBatch init, const GibbsConfig& gc, const LangevinConfig& lc,
                      Rng& rng, const SamplerHooks& hooks = {}, FinalStep* final_step = nullptr);

// Semi-conditional sampling by resampling: pinned attributes are copied,
// free ones resampled every sweep.
ChainBatch semi_conditional_resample(const LogitModel& m, const ConditioningSpec& spec, ChainBatch init,
                                     const GibbsConfig& gc, const LangevinConfig& lc, Rng& rng,
                                     const SamplerHooks& hooks = {}, FinalStep* final_step = nullptr);

// Semi-conditional sampling by marginalizing: Langevin on the energy with
// free attributes summed out, then one exact draw of the free attributes at
// the final x.
ChainBatch semi_conditional_marginalize(const LogitModel& m, const ConditioningSpec& spec, ChainBatch init,
                                        const GibbsConfig& gc, const LangevinConfig& lc, Rng& rng,
                                        const SamplerHooks& hooks = {});

// sum_{i in c} log p(y_c[i] | x) for each row of x.
std::vector<double> conditioning_log_likelihood(const LogitModel& m, const Tensor& x, const ConditioningSpec& spec);

struct FilterResult {
  std::vector<JointSample> samples;
  std::vector<double> scores;        // non-increasing
  std::vector<std::size_t> indices;  // positions in the candidate list
};

// Keeps the `keep` candidates with the highest conditioning log-likelihood;
// ties keep input order.
FilterResult likelihood_filter(const LogitModel& m, std::span<const JointSample> candidates,
                               const ConditioningSpec& spec, std::size_t keep);

// Fraction of samples whose pinned attributes are all recovered by
// thresholding p(y_k | x) at 0.5.
double internal_consistency(const LogitModel& m, std::span<const JointSample> samples, const ConditioningSpec& spec);

}  // namespace gjem
