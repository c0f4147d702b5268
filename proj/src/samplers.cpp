#include "gjem/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gjem/errors.hpp"

namespace gjem {

void LangevinConfig::validate() const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ConfigError("Langevin step size must be positive");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("Langevin temperature must be positive");
}

GibbsConfig GibbsConfig::from_budget(std::size_t langevin_steps, std::size_t inner_steps) {
  if (inner_steps == 0) throw ConfigError("inner Langevin steps must be at least 1");
  return GibbsConfig{langevin_steps / inner_steps, inner_steps};
}

void GibbsConfig::validate() const {
  if (inner_steps == 0) throw ConfigError("inner Langevin steps must be at least 1");
}

std::size_t ChainBatch::diverged_count() const {
  return static_cast<std::size_t>(std::count(diverged.begin(), diverged.end(), std::uint8_t{1}));
}

JointSample ChainBatch::sample(std::size_t b) const {
  const auto l = labels(b);
  return JointSample{x.row(b), AttributeVector(l.begin(), l.end())};
}

std::vector<JointSample> ChainBatch::samples() const {
  std::vector<JointSample> out;
  out.reserve(size());
  for (std::size_t b = 0; b < size(); ++b) out.push_back(sample(b));
  return out;
}

ChainBatch ChainBatch::from_samples(std::span<const JointSample> samples) {
  if (samples.empty()) throw std::invalid_argument("chain batch needs at least one sample");
  ChainBatch c;
  c.num_attributes = samples.front().y.size();
  std::vector<Tensor> rows;
  rows.reserve(samples.size());
  for (const JointSample& s : samples) {
    validate_attributes(s.y, c.num_attributes);
    rows.push_back(s.x);
    c.y.insert(c.y.end(), s.y.begin(), s.y.end());
  }
  c.x = stack_rows(rows);
  c.diverged.assign(samples.size(), 0);
  return c;
}

ChainBatch ChainBatch::from_x(Tensor x, std::size_t num_attributes) {
  if (x.rank() != 2) throw ShapeError("chain batch x must be [B, D]");
  ChainBatch c;
  c.num_attributes = num_attributes;
  c.y.assign(x.extent(0) * num_attributes, 0);
  c.diverged.assign(x.extent(0), 0);
  c.x = std::move(x);
  return c;
}

UniformBox UniformBox::from_batch(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("initial-distribution bounds need a [B, D] batch");
  const std::size_t rows = x.extent(0), dim = x.extent(1);
  UniformBox box{std::vector<double>(dim), std::vector<double>(dim)};
  for (std::size_t d = 0; d < dim; ++d) {
    double lo = x[d], hi = x[d];
    for (std::size_t b = 1; b < rows; ++b) {
      lo = std::min(lo, x[b * dim + d]);
      hi = std::max(hi, x[b * dim + d]);
    }
    box.low[d] = lo;
    box.high[d] = hi;
  }
  return box;
}

UniformBox UniformBox::unit(std::size_t dim) {
  return UniformBox{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
}

Tensor UniformBox::sample(std::size_t count, Rng& rng) const {
  const std::size_t dim = low.size();
  Tensor x(Shape{count, dim});
  for (std::size_t b = 0; b < count; ++b) {
    for (std::size_t d = 0; d < dim; ++d) x[b * dim + d] = low[d] + (high[d] - low[d]) * uniform01(rng);
  }
  return x;
}

Tensor langevin_step(const Tensor& x, const BatchEnergyFn& energy, const LangevinConfig& cfg, Rng& rng,
                     std::vector<std::uint8_t>& diverged, LangevinStepInfo* info) {
  const std::size_t rows = x.extent(0), dim = x.extent(1);
  if (diverged.size() != rows) diverged.resize(rows, 0);
  EnergyGrad eg = energy(x);
  Tensor noise(x.shape(), 0.0);
  if (cfg.noise) {
    for (double& a : noise.data()) a = standard_normal(rng);
  }
  const double drift = cfg.drift();
  Tensor out = x;
  std::vector<double> next(dim);
  for (std::size_t b = 0; b < rows; ++b) {
    if (diverged[b]) continue;
    bool ok = std::isfinite(eg.energy[b]) && std::abs(eg.energy[b]) <= kDivergenceEnergy;
    for (std::size_t d = 0; ok && d < dim; ++d) {
      double v = x[b * dim + d] + drift * eg.grad_x[b * dim + d] + cfg.step_size * noise[b * dim + d];
      if (cfg.clamp) v = std::clamp(v, 0.0, 1.0);
      ok = std::isfinite(v);
      next[d] = v;
    }
    if (!ok) {
      diverged[b] = 1;
      continue;
    }
    std::copy(next.begin(), next.end(), out.raw() + b * dim);
  }
  if (info != nullptr) {
    info->x_before = x;
    info->noise = std::move(noise);
    info->energy = std::move(eg.energy);
  }
  return out;
}

BatchEnergyFn joint_energy_fn(const LogitModel& m, std::span<const std::uint8_t> labels) {
  return codes_energy_fn(m, joint_codes(labels));
}

BatchEnergyFn codes_energy_fn(const LogitModel& m, std::vector<std::int8_t> codes) {
  return [&m, codes = std::move(codes)](const Tensor& x) { return energy_and_grad(m, x, codes); };
}

AttributeVector sample_labels(const LogitModel& m, const Tensor& x, Rng& rng) {
  const std::vector<double> p = label_conditional(m, x);
  AttributeVector y(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) y[k] = uniform01(rng) < p[k] ? 1 : 0;
  return y;
}

void resample_labels(const LogitModel& m, ChainBatch& chains, std::span<const std::int8_t> per_row_codes, Rng& rng) {
  const std::size_t k_count = chains.num_attributes;
  if (per_row_codes.size() != k_count) throw ShapeError("conditioning codes do not match attribute count");
  const bool any_free = std::find(per_row_codes.begin(), per_row_codes.end(), ad::kMarginalize) != per_row_codes.end();
  Tensor p;
  if (any_free) p = label_conditional_batch(m, chains.x);
  for (std::size_t b = 0; b < chains.size(); ++b) {
    for (std::size_t k = 0; k < k_count; ++k) {
      const std::int8_t c = per_row_codes[k];
      std::uint8_t& y = chains.y[b * k_count + k];
      y = c == ad::kMarginalize ? (uniform01(rng) < p[b * k_count + k] ? 1 : 0) : static_cast<std::uint8_t>(c);
    }
  }
}

namespace {

void check_chains(const LogitModel& m, const ChainBatch& chains) {
  if (chains.x.rank() != 2 || chains.x.extent(1) != m.input_dim()) {
    throw ShapeError("chain states do not match the model input dimension");
  }
  if (chains.num_attributes != m.num_attributes() || chains.y.size() != chains.size() * chains.num_attributes) {
    throw ShapeError("chain labels do not match the model attribute count");
  }
}

void pin(ChainBatch& chains, const ConditioningSpec& spec) {
  for (std::size_t b = 0; b < chains.size(); ++b) {
    for (const auto& [index, value] : spec.entries()) chains.y[b * chains.num_attributes + index] = value;
  }
}

ChainBatch gibbs(const LogitModel& m, const ConditioningSpec& spec, ChainBatch chains, const GibbsConfig& gc,
                 const LangevinConfig& lc, Rng& rng, const SamplerHooks& hooks, FinalStep* final_step) {
  gc.validate();
  lc.validate();
  check_chains(m, chains);
  const std::vector<std::int8_t> codes = spec.codes(m.num_attributes());
  pin(chains, spec);
  for (std::size_t t = 0; t < gc.sweeps; ++t) {
    if (hooks.augment) hooks.augment(chains.x, t, rng);
    resample_labels(m, chains, codes, rng);
    const BatchEnergyFn energy = joint_energy_fn(m, chains.y);
    for (std::size_t i = 0; i < gc.inner_steps; ++i) {
      const bool last = final_step != nullptr && t + 1 == gc.sweeps && i + 1 == gc.inner_steps;
      LangevinStepInfo info;
      chains.x = langevin_step(chains.x, energy, lc, rng, chains.diverged, last ? &info : nullptr);
      if (last) {
        final_step->x_before = std::move(info.x_before);
        final_step->noise = std::move(info.noise);
        final_step->y = chains.y;
      }
    }
    ++chains.sweeps_done;
    if (hooks.on_sweep) hooks.on_sweep(chains);
  }
  return chains;
}

}  // namespace

ChainBatch lwg_sample(const LogitModel& m, ChainBatch init, const GibbsConfig& gc, const LangevinConfig& lc, Rng& rng,
                      const SamplerHooks& hooks, FinalStep* final_step) {
  return gibbs(m, ConditioningSpec(), std::move(init), gc, lc, rng, hooks, final_step);
}

ChainBatch semi_conditional_resample(const LogitModel& m, const ConditioningSpec& spec, ChainBatch init,
                                     const GibbsConfig& gc, const LangevinConfig& lc, Rng& rng,
                                     const SamplerHooks& hooks, FinalStep* final_step) {
  return gibbs(m, spec, std::move(init), gc, lc, rng, hooks, final_step);
}

ChainBatch semi_conditional_marginalize(const LogitModel& m, const ConditioningSpec& spec, ChainBatch chains,
                                        const GibbsConfig& gc, const LangevinConfig& lc, Rng& rng,
                                        const SamplerHooks& hooks) {
  gc.validate();
  lc.validate();
  check_chains(m, chains);
  const std::vector<std::int8_t> codes = spec.codes(m.num_attributes());
  pin(chains, spec);
  const BatchEnergyFn energy = codes_energy_fn(m, repeat_codes(codes, chains.size()));
  for (std::size_t t = 0; t < gc.sweeps; ++t) {
    if (hooks.augment) hooks.augment(chains.x, t, rng);
    for (std::size_t i = 0; i < gc.inner_steps; ++i) {
      chains.x = langevin_step(chains.x, energy, lc, rng, chains.diverged);
    }
    ++chains.sweeps_done;
    if (hooks.on_sweep) hooks.on_sweep(chains);
  }
  // Free attributes are undefined by the marginal dynamics; report one exact
  // draw at the final state.
  resample_labels(m, chains, codes, rng);
  return chains;
}

static double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

std::vector<double> conditioning_log_likelihood(const LogitModel& m, const Tensor& x, const ConditioningSpec& spec) {
  spec.validate(m.num_attributes());
  const Tensor logits = evaluate_logits(m, x.rank() == 1 ? x.reshaped(Shape{1, x.size()}) : x);
  const std::size_t rows = logits.extent(0), k_count = logits.extent(1);
  std::vector<double> scores(rows, 0.0);
  for (std::size_t b = 0; b < rows; ++b) {
    for (const auto& [index, value] : spec.entries()) {
      const std::size_t i = b * k_count + index;
      const double gap = logits[2 * i + 1] - logits[2 * i];
      // log sigmoid(gap) for value 1, log sigmoid(-gap) for value 0
      scores[b] -= softplus(value ? -gap : gap);
    }
  }
  return scores;
}

FilterResult likelihood_filter(const LogitModel& m, std::span<const JointSample> candidates,
                               const ConditioningSpec& spec, std::size_t keep) {
  if (candidates.size() < keep) {
    throw std::invalid_argument("likelihood filter needs at least " + std::to_string(keep) + " candidates, got " +
                                std::to_string(candidates.size()));
  }
  FilterResult result;
  if (keep == 0) return result;
  std::vector<Tensor> rows;
  rows.reserve(candidates.size());
  for (const JointSample& s : candidates) rows.push_back(s.x);
  const std::vector<double> scores = conditioning_log_likelihood(m, stack_rows(rows), spec);
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(keep);
  for (std::size_t i : order) {
    result.samples.push_back(candidates[i]);
    result.scores.push_back(scores[i]);
  }
  result.indices = std::move(order);
  return result;
}

double internal_consistency(const LogitModel& m, std::span<const JointSample> samples, const ConditioningSpec& spec) {
  if (samples.empty()) throw std::invalid_argument("internal consistency needs at least one sample");
  spec.validate(m.num_attributes());
  std::vector<Tensor> rows;
  rows.reserve(samples.size());
  for (const JointSample& s : samples) rows.push_back(s.x);
  const Tensor p = label_conditional_batch(m, stack_rows(rows));
  const std::size_t k_count = m.num_attributes();
  std::size_t correct = 0;
  for (std::size_t b = 0; b < samples.size(); ++b) {
    bool ok = true;
    for (const auto& [index, value] : spec.entries()) {
      const std::uint8_t predicted = p[b * k_count + index] >= 0.5 ? 1 : 0;
      ok = ok && predicted == value;
    }
    correct += ok ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

}  // namespace gjem
