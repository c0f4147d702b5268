#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gjem/buffers.hpp"
#include "gjem/data.hpp"
#include "gjem/energy.hpp"
#include "gjem/mlp.hpp"
#include "gjem/samplers.hpp"

namespace gjem {

// Chain augmentation for image-shaped data ([C, H, W] rows). Vector data is
// never augmented.
struct AugmentConfig {
  bool enabled = false;
  Shape image_shape;  // empty: vector data
  double flip_probability = 0.5;
  double blur_sigma = 0.5;       // 0 disables blur
  std::size_t every_sweeps = 1;  // apply before sweeps t with t % every_sweeps == 0

  void validate(std::size_t dim) const;
};

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t iterations = 20000;
  double learning_rate = 1e-4;
  AdamConfig adam;
  double ema_mu = 0.999;
  LangevinConfig langevin;
  GibbsConfig gibbs;
  double kl_weight = 0.3;
  double energy_reg_weight = 0.0;  // mean f+^2 + mean f-^2, off by default
  BufferConfig buffer;
  AugmentConfig augment;
  std::size_t eval_every = 250;
  std::uint64_t seed = 0;

  void validate(std::size_t dim) const;
};

struct LossTerms {
  double loss = 0.0;
  double f_pos = 0.0;  // mean f(x+, y+)
  double f_neg = 0.0;  // mean f(x-, y-)
  std::vector<Tensor> grads;
};

// loss = mean f(x-, y-) - mean f(x+, y+) (+ energy_reg * (mean f+^2 + mean f-^2)).
// x: [B, D]; y: B*K labels.
LossTerms pcd_loss(const MlpSpec& spec, std::span<const Tensor> params, const Tensor& x_pos,
                   std::span<const std::uint8_t> y_pos, const Tensor& x_neg, std::span<const std::uint8_t> y_neg,
                   double energy_reg_weight = 0.0);

struct KlTerm {
  double value = 0.0;
  std::vector<Tensor> grads;
};

// Differentiates one Langevin step. With x the state before the last step,
//   x~(theta) = clamp(x + c * grad_x f_theta(x, y) + eps * alpha),  c = eps^2 / (2 lambda),
// the term is -mean f_theta0(x~(theta), y), where theta0 is frozen at the
// current value: only the dependence of the step on theta is differentiated.
// The gradient is -(c / B) d/dtheta sum_b v_b . grad_x f_theta(x_b, y_b) with
// v = grad_x f_theta0(x~) masked to unclamped coordinates, evaluated through
// a forward-mode tangent pass.
KlTerm kl_aug_loss(const MlpSpec& spec, std::span<const Tensor> params, const FinalStep& step,
                   const LangevinConfig& lc);

// Image helpers on one [C, H, W] image stored row-major.
Tensor horizontal_flip(const Tensor& image);
// Separable Gaussian blur, radius ceil(3 sigma), edges replicated.
Tensor gaussian_blur(const Tensor& image, double sigma);
// Augments every row of x ([B, D]) in place: flip with probability
// flip_probability, then blur. Identity when disabled or for vector data.
void augment_chain(Tensor& x, const AugmentConfig& cfg, Rng& rng);

struct TrainLogRow {
  std::size_t iteration = 0;
  double loss = 0.0;
  double f_pos = 0.0;
  double f_neg = 0.0;
  double kl = 0.0;
  double val_accuracy = std::numeric_limits<double>::quiet_NaN();  // NaN between validations
  bool diverged = false;
};

struct BestSnapshot {
  double accuracy = -std::numeric_limits<double>::infinity();
  std::size_t iteration = 0;
  std::vector<Tensor> params;  // theta_hat at that validation
};

struct TrainState {
  EnergyModel model;
  JointBuffer buffer;
  UniformBox p0;
  std::size_t iteration = 0;
  BestSnapshot best;
  std::vector<double> snapshot_accuracies;  // every best-snapshot replacement
  bool diverged = false;
  std::string diagnostic;
  std::vector<TrainLogRow> log;

  // Model evaluated with the selected theta_hat.
  MlpLogitModel selected() const { return MlpLogitModel(model.spec, best.params); }
};

// Validation accuracy of thresholded p(y_k | x) over a split.
double split_accuracy(const LogitModel& m, const Dataset& ds, Split split);

using TrainObserver = std::function<void(const TrainLogRow&)>;

// Direct joint PCD training. Halts with state.diverged set when a negative
// chain or the loss leaves the finite range.
TrainState train(const Dataset& ds, const MlpSpec& spec, const TrainConfig& cfg, const TrainObserver& observer = {});

std::string train_log_csv(std::span<const TrainLogRow> rows);

}  // namespace gjem
