#include "doctest.h"

#include <cmath>

#include "gjem/errors.hpp"
#include "gjem/trainer.hpp"
#include "support.hpp"

using namespace gjem;
using gjem::test::central_difference;

namespace {

std::vector<Tensor> copy_params(const ParameterSet& p) { return {p.values().begin(), p.values().end()}; }

double mean_joint_energy(const MlpSpec& spec, std::span<const Tensor> params, const Tensor& x,
                         std::span<const std::uint8_t> y) {
  const MlpLogitModel m(spec, params);
  const EnergyGrad eg = energy_and_grad(m, x, joint_codes(y));
  double s = 0;
  for (double e : eg.energy) s += e;
  return s / static_cast<double>(eg.energy.size());
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.iterations = 30;
  cfg.learning_rate = 1e-3;
  cfg.ema_mu = 0.9;
  cfg.langevin.step_size = 0.03;
  cfg.langevin.temperature = 1.0;
  cfg.gibbs.sweeps = 5;
  cfg.buffer.capacity = 200;
  cfg.eval_every = 10;
  cfg.seed = 5;
  return cfg;
}

Dataset small_dataset(std::uint64_t seed, std::size_t n = 400) {
  gjem::Rng rng(seed);
  Dataset ds = generate_mixture(MixtureSpec::four_corners(0.2, 0.8, 0.12), n, rng);
  assign_validation_split(ds, rng);
  return ds;
}

}  // namespace

TEST_CASE("defaults and validation") {
  const TrainConfig d;
  CHECK(d.learning_rate == 1e-4);
  CHECK(d.ema_mu == 0.999);
  CHECK(d.kl_weight == 0.3);
  CHECK(d.iterations == 20000);
  CHECK_NOTHROW(d.validate(2));
  TrainConfig c = d;
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(2), ConfigError);
  c = d;
  c.kl_weight = -1;
  CHECK_THROWS_AS(c.validate(2), ConfigError);
  c = d;
  c.langevin.clamp = false;
  CHECK_THROWS_AS(c.validate(2), ConfigError);
  c = d;
  c.augment.enabled = true;
  c.augment.image_shape = {1, 2, 2};
  CHECK_THROWS_AS(c.validate(5), ConfigError);
  CHECK_NOTHROW(c.validate(4));
}

TEST_CASE("PCD loss") {
  gjem::Rng rng(1);
  const MlpSpec spec{2, {6}, 2};
  const ParameterSet p = gjem::test::random_mlp(spec, rng);
  const Tensor xa = gjem::test::random_tensor({3, 2}, rng, 0, 1);
  const Tensor xb = gjem::test::random_tensor({3, 2}, rng, 0, 1);
  const AttributeVector ya{1, 0, 0, 1, 1, 1}, yb{0, 0, 1, 0, 0, 1};

  SUBCASE("identical batches cancel exactly") {
    const LossTerms l = pcd_loss(spec, p.values(), xa, ya, xa, ya);
    CHECK(l.loss == 0.0);
    for (const Tensor& g : l.grads) {
      for (double v : g.data()) CHECK(v == 0.0);
    }
  }
  SUBCASE("loss is mean f- minus mean f+") {
    const LossTerms l = pcd_loss(spec, p.values(), xa, ya, xb, yb);
    double fp = 0, fn = 0;
    for (std::size_t b = 0; b < 3; ++b) {
      fp += gjem::test::reference_joint_energy(spec, p.values(), xa.row(b).data(), {ya.data() + 2 * b, 2});
      fn += gjem::test::reference_joint_energy(spec, p.values(), xb.row(b).data(), {yb.data() + 2 * b, 2});
    }
    CHECK(l.f_pos == doctest::Approx(fp / 3).epsilon(1e-13));
    CHECK(l.f_neg == doctest::Approx(fn / 3).epsilon(1e-13));
    CHECK(l.loss == doctest::Approx((fn - fp) / 3).epsilon(1e-12));
  }
  SUBCASE("single pair gradient matches finite differences") {
    const Tensor x1 = xa.reshaped({3, 2}).row(0).reshaped({1, 2});
    const Tensor x2 = xb.reshaped({3, 2}).row(1).reshaped({1, 2});
    const AttributeVector y1{1, 0}, y2{0, 1};
    const LossTerms l = pcd_loss(spec, p.values(), x1, y1, x2, y2);
    for (std::size_t i = 0; i < p.size(); ++i) {
      for (std::size_t j = 0; j < l.grads[i].size(); ++j) {
        const double fd = central_difference([&](double h) {
          auto q = copy_params(p);
          q[i][j] += h;
          return gjem::test::reference_joint_energy(spec, q, x2.data(), y2) -
                 gjem::test::reference_joint_energy(spec, q, x1.data(), y1);
        });
        CHECK(l.grads[i][j] == doctest::Approx(fd).epsilon(1e-6));
      }
    }
  }
  CHECK_THROWS_AS(pcd_loss(spec, p.values(), Tensor::vector({0.1, 0.2}), ya, xb, yb), ShapeError);
}

TEST_CASE("KL term") {
  gjem::Rng rng(2);
  const MlpSpec spec{2, {5, 4}, 2};
  const ParameterSet p = gjem::test::random_mlp(spec, rng);
  LangevinConfig lc;
  lc.step_size = 0.05;
  lc.temperature = 0.5;
  FinalStep step;
  step.x_before = gjem::test::random_tensor({4, 2}, rng, 0.3, 0.7);
  step.noise = gjem::test::random_tensor({4, 2}, rng, -1, 1);
  step.y = {1, 0, 0, 1, 1, 1, 0, 0};

  SUBCASE("gradient matches finite differences through the unrolled step") {
    const KlTerm kl = kl_aug_loss(spec, p.values(), step, lc);
    const auto theta0 = copy_params(p);
    const auto composite = [&](std::span<const Tensor> theta) {
      const MlpLogitModel m(spec, theta);
      const EnergyGrad eg = energy_and_grad(m, step.x_before, joint_codes(step.y));
      Tensor next = step.x_before;
      for (std::size_t i = 0; i < next.size(); ++i) {
        next[i] = std::clamp(next[i] + lc.drift() * eg.grad_x[i] + lc.step_size * step.noise[i], 0.0, 1.0);
      }
      return -mean_joint_energy(spec, theta0, next, step.y);
    };
    CHECK(kl.value == doctest::Approx(composite(theta0)).epsilon(1e-13));
    for (std::size_t i = 0; i < p.size(); ++i) {
      for (std::size_t j = 0; j < kl.grads[i].size(); ++j) {
        const double fd = central_difference([&](double h) {
          auto q = theta0;
          q[i][j] += h;
          return composite(q);
        });
        CHECK(kl.grads[i][j] == doctest::Approx(fd).epsilon(1e-6).scale(1e-9));
      }
    }
  }
  SUBCASE("x-independent energy without noise: the step is the identity") {
    ParameterSet flat = p;
    for (double& v : flat.mutable_values()[0].data()) v = 0.0;
    step.noise = Tensor(step.noise.shape(), 0.0);
    const KlTerm kl = kl_aug_loss(spec, flat.values(), step, lc);
    CHECK(kl.value == doctest::Approx(-mean_joint_energy(spec, flat.values(), step.x_before, step.y)).epsilon(1e-14));
    for (const Tensor& g : kl.grads) {
      for (double v : g.data()) CHECK(v == 0.0);
    }
  }
  CHECK_THROWS_AS(kl_aug_loss(spec, p.values(), FinalStep{}, lc), std::invalid_argument);
}

TEST_CASE("image augmentation") {
  gjem::Rng rng(3);
  const Tensor img = gjem::test::random_tensor({2, 3, 4}, rng);
  CHECK(horizontal_flip(horizontal_flip(img)) == img);
  CHECK(horizontal_flip(img)[3] == img[0]);
  const Tensor flat(Shape{2, 5, 5}, 0.37);
  const Tensor blurred = gaussian_blur(flat, 1.2);
  for (double v : blurred.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-14));
  CHECK(gaussian_blur(img, 0.0) == img);

  Tensor x = gjem::test::random_tensor({3, 24}, rng);
  const Tensor before = x;
  AugmentConfig off;
  augment_chain(x, off, rng);
  CHECK(x == before);
  AugmentConfig vec;
  vec.enabled = true;
  augment_chain(x, vec, rng);
  CHECK(x == before);
  AugmentConfig flip_only;
  flip_only.enabled = true;
  flip_only.image_shape = {2, 3, 4};
  flip_only.flip_probability = 1.0;
  flip_only.blur_sigma = 0.0;
  augment_chain(x, flip_only, rng);
  CHECK(x.row(1) == horizontal_flip(before.row(1).reshaped({2, 3, 4})).reshaped({24}));
}

TEST_CASE("zero iterations return the initialized state") {
  const Dataset ds = small_dataset(4);
  const MlpSpec spec{2, {8}, 2};
  TrainConfig cfg = small_config();
  cfg.iterations = 0;
  const TrainState st = train(ds, spec, cfg);
  CHECK(st.iteration == 0);
  CHECK(st.log.empty());
  CHECK(st.buffer.empty());
  const EnergyModel init = make_energy_model(spec, cfg.seed);
  for (std::size_t i = 0; i < init.params.size(); ++i) {
    CHECK(st.best.params[i] == init.params.values()[i]);
    CHECK(st.model.params.averaged()[i] == init.params.values()[i]);
  }
}

TEST_CASE("short training runs are deterministic and keep held-out data out") {
  gjem::Rng rng(6);
  Dataset ds = generate_mixture(MixtureSpec::four_corners(0.2, 0.8, 0.12), 600, rng);
  assign_validation_split(ds, rng);
  ds = split_holdout(ds, std::vector<ConditioningSpec>{ConditioningSpec({{0, 1}, {1, 1}})});
  const MlpSpec spec{2, {8}, 2};
  const TrainConfig cfg = small_config();
  std::size_t observed = 0;
  const TrainState a = train(ds, spec, cfg, [&](const TrainLogRow&) { ++observed; });
  const TrainState b = train(ds, spec, cfg);
  CHECK_FALSE(a.diverged);
  CHECK(observed == cfg.iterations);
  CHECK(train_log_csv(a.log) == train_log_csv(b.log));
  for (std::size_t i = 0; i < a.model.params.size(); ++i) CHECK(a.model.params.values()[i] == b.model.params.values()[i]);
  CHECK(a.buffer.size() == b.buffer.size());
  CHECK(a.buffer.size() <= cfg.buffer.capacity);
  // Validation happened at 10, 20 and 30 only.
  std::size_t validations = 0;
  for (const auto& row : a.log) {
    const bool scheduled = row.iteration % cfg.eval_every == 0;
    CHECK(std::isnan(row.val_accuracy) != scheduled);
    validations += scheduled;
  }
  CHECK(validations == 3);
  for (std::size_t i = 1; i < a.snapshot_accuracies.size(); ++i) {
    CHECK(a.snapshot_accuracies[i] > a.snapshot_accuracies[i - 1]);
  }
  CHECK(a.best.accuracy == a.snapshot_accuracies.back());
  const std::string csv = train_log_csv(a.log);
  CHECK(csv.rfind("iteration,loss,f_pos,f_neg,kl,val_accuracy,diverged\n", 0) == 0);
}

TEST_CASE("KL weight zero leaves the PCD loss alone") {
  const Dataset ds = small_dataset(7);
  const MlpSpec spec{2, {8}, 2};
  TrainConfig cfg = small_config();
  cfg.kl_weight = 0.0;
  cfg.iterations = 5;
  const TrainState st = train(ds, spec, cfg);
  for (const auto& row : st.log) CHECK(row.loss == row.f_neg - row.f_pos);
}

TEST_CASE("runaway training is reported as divergence") {
  const Dataset ds = small_dataset(8);
  const MlpSpec spec{2, {8}, 2};
  TrainConfig cfg = small_config();
  cfg.learning_rate = 1e8;
  cfg.iterations = 50;
  const TrainState st = train(ds, spec, cfg);
  CHECK(st.diverged);
  CHECK_FALSE(st.diagnostic.empty());
  CHECK(st.log.back().diverged);
  CHECK(st.iteration < cfg.iterations);
}

TEST_CASE("a dataset without training examples is rejected") {
  Dataset ds = small_dataset(9, 100);
  for (auto& s : ds.split) s = Split::validation;
  CHECK_THROWS(train(ds, MlpSpec{2, {4}, 2}, small_config()));
}
