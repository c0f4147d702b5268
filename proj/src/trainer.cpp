#include "gjem/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "gjem/errors.hpp"
#include "gjem/metrics.hpp"

namespace gjem {

void AugmentConfig::validate(std::size_t dim) const {
  if (!enabled) return;
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) throw ConfigError("flip probability must lie in [0, 1]");
  if (!(blur_sigma >= 0.0)) throw ConfigError("blur sigma must be non-negative");
  if (every_sweeps == 0) throw ConfigError("augmentation cadence must be positive");
  if (!image_shape.empty() && (image_shape.size() != 3 || shape_size(image_shape) != dim)) {
    throw ConfigError("augmentation image shape must be [C, H, W] with C*H*W = D");
  }
}

void TrainConfig::validate(std::size_t dim) const {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
  if (!(ema_mu >= 0.0 && ema_mu <= 1.0)) throw ConfigError("EMA rate must lie in [0, 1]");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.epsilon > 0.0)) {
    throw ConfigError("invalid Adam constants");
  }
  if (!(kl_weight >= 0.0) || !std::isfinite(kl_weight)) throw ConfigError("KL weight must be non-negative");
  if (!(energy_reg_weight >= 0.0) || !std::isfinite(energy_reg_weight)) {
    throw ConfigError("energy regularization weight must be non-negative");
  }
  if (eval_every == 0) throw ConfigError("validation cadence must be positive");
  if (!langevin.clamp) throw ConfigError("training keeps samples in [0, 1]^D; langevin.clamp must be true");
  langevin.validate();
  gibbs.validate();
  buffer.validate();
  augment.validate(dim);
}

namespace {

struct HalfPass {
  double mean_energy = 0.0;
  std::vector<Tensor> grads;
};

// d/dtheta [mean f + reg * mean f^2] over one batch.
HalfPass half_pass(const MlpSpec& spec, std::span<const Tensor> params, const Tensor& x,
                   std::span<const std::uint8_t> y, double reg) {
  if (x.rank() != 2 || x.extent(1) != spec.input_dim) throw ShapeError("batch does not match model input dimension");
  const std::size_t rows = x.extent(0);
  if (y.size() != rows * spec.num_attributes) throw ShapeError("batch labels do not match [B, K]");
  validate_attributes(y, y.size());
  Tape tape;
  const MlpPass pass = mlp_forward(tape, spec, params, tape.constant(x), true);
  const Var f = ad::row_sum(ad::reduce_logits(pass.logits, joint_codes(y)));
  Var objective = ad::mean(f);
  if (reg != 0.0) objective = ad::add(objective, ad::scale(ad::mean(ad::square(f)), reg));
  tape.backward(objective);
  HalfPass out;
  out.mean_energy = tape.value(ad::mean(f)).item();
  for (const Var& p : pass.params) out.grads.push_back(tape.grad(p));
  return out;
}

}  // namespace

LossTerms pcd_loss(const MlpSpec& spec, std::span<const Tensor> params, const Tensor& x_pos,
                   std::span<const std::uint8_t> y_pos, const Tensor& x_neg, std::span<const std::uint8_t> y_neg,
                   double energy_reg_weight) {
  if (x_pos.rank() != 2 || x_neg.rank() != 2) throw ShapeError("positive and negative batches must be [B, D]");
  // Separate passes so identical batches cancel exactly.
  const HalfPass pos = half_pass(spec, params, x_pos, y_pos, -energy_reg_weight);
  const HalfPass neg = half_pass(spec, params, x_neg, y_neg, energy_reg_weight);
  LossTerms out;
  out.f_pos = pos.mean_energy;
  out.f_neg = neg.mean_energy;
  out.loss = out.f_neg - out.f_pos;
  if (energy_reg_weight != 0.0) {
    const auto mean_sq = [&](const Tensor& x, std::span<const std::uint8_t> y) {
      const Tensor logits = mlp_logits(spec, params, x);
      double s = 0.0;
      const std::size_t k_count = spec.num_attributes, rows = x.extent(0);
      for (std::size_t b = 0; b < rows; ++b) {
        double f = 0.0;
        for (std::size_t k = 0; k < k_count; ++k) f += logits[(b * k_count + k) * 2 + y[b * k_count + k]];
        s += f * f;
      }
      return s / static_cast<double>(rows);
    };
    out.loss += energy_reg_weight * (mean_sq(x_pos, y_pos) + mean_sq(x_neg, y_neg));
  }
  out.grads.reserve(pos.grads.size());
  for (std::size_t i = 0; i < pos.grads.size(); ++i) {
    Tensor g = neg.grads[i];
    for (std::size_t j = 0; j < g.size(); ++j) g[j] -= pos.grads[i][j];
    out.grads.push_back(std::move(g));
  }
  return out;
}

KlTerm kl_aug_loss(const MlpSpec& spec, std::span<const Tensor> params, const FinalStep& step,
                   const LangevinConfig& lc) {
  if (step.x_before.empty() || step.x_before.rank() != 2) {
    throw std::invalid_argument("KL term needs the state recorded before the final Langevin step");
  }
  const std::size_t rows = step.x_before.extent(0), dim = step.x_before.extent(1);
  if (dim != spec.input_dim || step.y.size() != rows * spec.num_attributes) {
    throw ShapeError("recorded final step does not match the model");
  }
  if (step.noise.shape() != step.x_before.shape()) throw ShapeError("recorded noise does not match the state");
  const MlpLogitModel model(spec, params);
  const std::vector<std::int8_t> codes = joint_codes(step.y);
  const double c = lc.drift();

  const EnergyGrad at_prev = energy_and_grad(model, step.x_before, codes);
  Tensor x_next(step.x_before.shape());
  Tensor mask(step.x_before.shape(), 1.0);
  for (std::size_t i = 0; i < x_next.size(); ++i) {
    double v = step.x_before[i] + c * at_prev.grad_x[i] + lc.step_size * step.noise[i];
    if (lc.clamp) {
      if (v < 0.0 || v > 1.0) mask[i] = 0.0;
      v = std::clamp(v, 0.0, 1.0);
    }
    x_next[i] = v;
  }
  const EnergyGrad at_next = energy_and_grad(model, x_next, codes);

  KlTerm out;
  double total = 0.0;
  for (double e : at_next.energy) total += e;
  out.value = -total / static_cast<double>(rows);

  Tensor tangent = at_next.grad_x;
  for (std::size_t i = 0; i < tangent.size(); ++i) tangent[i] *= mask[i];
  Tape tape;
  const MlpTangentPass pass =
      mlp_forward_tangent(tape, spec, params, tape.constant(step.x_before), tape.constant(tangent), true);
  const Var directional = ad::sum(ad::reduce_logits(pass.logits_dot, codes));
  tape.backward(ad::scale(directional, -c / static_cast<double>(rows)));
  for (const Var& p : pass.params) out.grads.push_back(tape.grad(p));
  return out;
}

Tensor horizontal_flip(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("flip expects a [C, H, W] image");
  const std::size_t ch = image.extent(0), h = image.extent(1), w = image.extent(2);
  Tensor out(image.shape());
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t i = 0; i < h; ++i) {
      const std::size_t row = (c * h + i) * w;
      for (std::size_t j = 0; j < w; ++j) out[row + j] = image[row + (w - 1 - j)];
    }
  }
  return out;
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  if (image.rank() != 3) throw ShapeError("blur expects a [C, H, W] image");
  if (!(sigma >= 0.0)) throw std::invalid_argument("blur sigma must be non-negative");
  if (sigma == 0.0) return image;
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel;
  double norm = 0.0;
  for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
    kernel.push_back(std::exp(-0.5 * static_cast<double>(t * t) / (sigma * sigma)));
    norm += kernel.back();
  }
  for (double& k : kernel) k /= norm;

  const auto ch = static_cast<std::ptrdiff_t>(image.extent(0));
  const auto h = static_cast<std::ptrdiff_t>(image.extent(1));
  const auto w = static_cast<std::ptrdiff_t>(image.extent(2));
  const auto at = [&](const Tensor& t, std::ptrdiff_t c, std::ptrdiff_t i, std::ptrdiff_t j) {
    i = std::clamp<std::ptrdiff_t>(i, 0, h - 1);
    j = std::clamp<std::ptrdiff_t>(j, 0, w - 1);
    return t[static_cast<std::size_t>((c * h + i) * w + j)];
  };
  Tensor tmp(image.shape()), out(image.shape());
  for (std::ptrdiff_t c = 0; c < ch; ++c) {
    for (std::ptrdiff_t i = 0; i < h; ++i) {
      for (std::ptrdiff_t j = 0; j < w; ++j) {
        double s = 0.0;
        for (std::ptrdiff_t t = -radius; t <= radius; ++t) s += kernel[static_cast<std::size_t>(t + radius)] * at(image, c, i, j + t);
        tmp[static_cast<std::size_t>((c * h + i) * w + j)] = s;
      }
    }
  }
  for (std::ptrdiff_t c = 0; c < ch; ++c) {
    for (std::ptrdiff_t i = 0; i < h; ++i) {
      for (std::ptrdiff_t j = 0; j < w; ++j) {
        double s = 0.0;
        for (std::ptrdiff_t t = -radius; t <= radius; ++t) s += kernel[static_cast<std::size_t>(t + radius)] * at(tmp, c, i + t, j);
        out[static_cast<std::size_t>((c * h + i) * w + j)] = s;
      }
    }
  }
  return out;
}

void augment_chain(Tensor& x, const AugmentConfig& cfg, Rng& rng) {
  if (!cfg.enabled || cfg.image_shape.empty()) return;
  if (x.rank() != 2 || x.extent(1) != shape_size(cfg.image_shape)) throw ShapeError("chains do not match image shape");
  const std::size_t dim = x.extent(1);
  for (std::size_t b = 0; b < x.extent(0); ++b) {
    Tensor img(cfg.image_shape, std::vector<double>(x.raw() + b * dim, x.raw() + (b + 1) * dim));
    if (uniform01(rng) < cfg.flip_probability) img = horizontal_flip(img);
    img = gaussian_blur(img, cfg.blur_sigma);
    std::copy(img.data().begin(), img.data().end(), x.raw() + b * dim);
  }
}

double split_accuracy(const LogitModel& m, const Dataset& ds, Split split) {
  const Tensor x = ds.split_x(split);
  const Tensor p = label_conditional_batch(m, x);
  std::vector<double> conf(p.data().begin(), p.data().end());
  for (double& c : conf) c = std::clamp(c, 0.0, 1.0);
  const PredictionSet set(x.extent(0), ds.num_attributes, std::move(conf), ds.split_y(split), ds.names);
  return accuracy(set);
}

namespace {

bool finite_grads(std::span<const Tensor> grads) {
  return std::all_of(grads.begin(), grads.end(), [](const Tensor& g) { return g.all_finite(); });
}

}  // namespace

TrainState train(const Dataset& ds, const MlpSpec& spec, const TrainConfig& cfg, const TrainObserver& observer) {
  spec.validate();
  ds.validate();
  cfg.validate(spec.input_dim);
  if (ds.dim() != spec.input_dim || ds.num_attributes != spec.num_attributes) {
    throw ShapeError("dataset does not match the model spec");
  }
  const std::vector<std::size_t> train_idx = ds.indices(Split::train);
  if (train_idx.empty()) throw ConfigError("dataset has no training examples");
  const bool has_validation = ds.count(Split::validation) > 0;
  if (cfg.iterations > 0 && !has_validation) throw ConfigError("dataset has no validation examples");

  Rng rng(cfg.seed);
  TrainState state{make_energy_model(spec, cfg.seed), JointBuffer(cfg.buffer, spec.input_dim, spec.num_attributes),
                   UniformBox{}, 0, {}, {}, false, {}, {}};
  const std::vector<Tensor> theta_hat0(state.model.params.averaged().begin(), state.model.params.averaged().end());
  state.best.params = theta_hat0;

  const std::size_t k_count = spec.num_attributes, dim = spec.input_dim, batch = cfg.batch_size;
  SamplerHooks hooks;
  if (cfg.augment.enabled && !cfg.augment.image_shape.empty()) {
    hooks.augment = [&cfg](Tensor& x, std::size_t sweep, Rng& r) {
      if (sweep % cfg.augment.every_sweeps == 0) augment_chain(x, cfg.augment, r);
    };
  }

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    Tensor x_pos(Shape{batch, dim});
    std::vector<std::uint8_t> y_pos;
    y_pos.reserve(batch * k_count);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t i = train_idx[uniform_index(rng, train_idx.size())];
      const auto yi = ds.labels(i);
      for (const auto& combo : ds.heldout_combos) {
        if (combo.matches(yi)) throw std::logic_error("held-out combination reached a training batch");
      }
      std::copy_n(ds.x.raw() + i * dim, dim, x_pos.raw() + b * dim);
      y_pos.insert(y_pos.end(), yi.begin(), yi.end());
    }
    if (it == 0) state.p0 = UniformBox::from_batch(x_pos);

    const MlpLogitModel current = state.model.current();
    JointBuffer::InitBatch init =
        state.buffer.draw_init_batch(batch, uniform_initial(state.p0), labels_from_model(current), rng);
    FinalStep last;
    ChainBatch negatives = lwg_sample(current, std::move(init.chains), cfg.gibbs, cfg.langevin, rng, hooks,
                                      cfg.kl_weight > 0.0 ? &last : nullptr);

    TrainLogRow row;
    row.iteration = it + 1;
    if (negatives.diverged_count() > 0) {
      row.diverged = true;
      state.diverged = true;
      state.diagnostic = std::to_string(negatives.diverged_count()) + " negative chains diverged at iteration " +
                         std::to_string(it + 1);
    } else {
      LossTerms terms = pcd_loss(spec, state.model.params.values(), x_pos, y_pos, negatives.x, negatives.y,
                                 cfg.energy_reg_weight);
      row.loss = terms.loss;
      row.f_pos = terms.f_pos;
      row.f_neg = terms.f_neg;
      if (cfg.kl_weight > 0.0) {
        const KlTerm kl = kl_aug_loss(spec, state.model.params.values(), last, cfg.langevin);
        row.kl = kl.value;
        row.loss += cfg.kl_weight * kl.value;
        for (std::size_t i = 0; i < terms.grads.size(); ++i) {
          for (std::size_t j = 0; j < terms.grads[i].size(); ++j) terms.grads[i][j] += cfg.kl_weight * kl.grads[i][j];
        }
      }
      if (!std::isfinite(row.loss) || !finite_grads(terms.grads)) {
        row.diverged = true;
        state.diverged = true;
        state.diagnostic = "non-finite loss or gradient at iteration " + std::to_string(it + 1);
      } else {
        state.model.params.adam_step(terms.grads, cfg.learning_rate, cfg.adam);
        state.model.params.ema_update(cfg.ema_mu);
        if (cfg.buffer.mode == BufferMode::replay) {
          state.buffer.write_back(negatives, init.slots);
        } else {
          for (std::size_t b = 0; b < negatives.size(); ++b) state.buffer.reservoir_update(negatives.sample(b), rng);
        }
      }
    }
    state.iteration = it + 1;

    if (!state.diverged && (state.iteration % cfg.eval_every == 0 || state.iteration == cfg.iterations)) {
      row.val_accuracy = split_accuracy(state.model.averaged(), ds, Split::validation);
      if (row.val_accuracy > state.best.accuracy) {
        state.best.accuracy = row.val_accuracy;
        state.best.iteration = state.iteration;
        state.best.params.assign(state.model.params.averaged().begin(), state.model.params.averaged().end());
        state.snapshot_accuracies.push_back(row.val_accuracy);
      }
    }
    state.log.push_back(row);
    if (observer) observer(row);
    if (state.diverged) break;
  }
  return state;
}

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

std::string train_log_csv(std::span<const TrainLogRow> rows) {
  std::ostringstream out;
  out << "iteration,loss,f_pos,f_neg,kl,val_accuracy,diverged\n";
  for (const auto& r : rows) {
    out << r.iteration << ',' << num(r.loss) << ',' << num(r.f_pos) << ',' << num(r.f_neg) << ',' << num(r.kl) << ','
        << num(r.val_accuracy) << ',' << (r.diverged ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace gjem
