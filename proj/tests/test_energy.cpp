#include "doctest.h"

#include <cmath>

#include "gjem/energy.hpp"
#include "gjem/errors.hpp"
#include "gjem/toy_models.hpp"
#include "support.hpp"

using namespace gjem;

namespace {

Tensor table(std::initializer_list<double> v) { return Tensor(Shape{v.size() / 2, 2}, std::vector<double>(v)); }

double brute_logsumexp(const std::vector<double>& v) {
  double m = -INFINITY;
  for (double a : v) m = std::max(m, a);
  double s = 0.0;
  for (double a : v) s += std::exp(a - m);
  return m + std::log(s);
}

}  // namespace

TEST_CASE("joint energy sums selected logits") {
  const Tensor l = table({1, 3, 0, 2});
  CHECK(joint_energy_from_logits(l, AttributeVector{1, 0}) == 3.0);
  CHECK(joint_energy_from_logits(table({0, 0, 0, 0}), AttributeVector{1, 1}) == 0.0);
  CHECK_THROWS_AS(joint_energy_from_logits(l, AttributeVector{1}), ShapeError);
  CHECK_THROWS_AS(joint_energy_from_logits(l, AttributeVector{1, 2}), std::invalid_argument);
}

TEST_CASE("marginal energy") {
  CHECK(marginal_energy_from_logits(table({0.7, 0.7})) == doctest::Approx(0.7 + std::log(2.0)).epsilon(1e-15));
  const Tensor l = table({1, 3, 0, 2});
  const double expect = logsumexp2(1, 3) + logsumexp2(0, 2);
  std::vector<double> joints;
  for (std::size_t i = 0; i < 4; ++i) joints.push_back(joint_energy_from_logits(l, label_vector_from_index(i, 2)));
  CHECK(std::abs(marginal_energy_from_logits(l) - expect) < 1e-12);
  CHECK(std::abs(marginal_energy_from_logits(l) - brute_logsumexp(joints)) < 1e-12);
}

TEST_CASE("label conditional") {
  CHECK(label_conditional_from_logits(table({0, 0, 0, 0})) == std::vector<double>{0.5, 0.5});
  CHECK(label_conditional_from_logits(table({0, std::log(3.0)}))[0] == doctest::Approx(0.75).epsilon(1e-15));
  const double p = label_conditional_from_logits(table({1000, 1000}))[0];
  CHECK(p == 0.5);
  CHECK(label_conditional_from_logits(table({-1000, 1000}))[0] == 1.0);
}

TEST_CASE("semi-conditional energy worked example and boundaries") {
  const Tensor l = table({1, 3, 0, 2});
  const ConditioningSpec c({{1, 1}});
  CHECK(semi_conditional_energy_from_logits(table({1, 3, 0, 2}), ConditioningSpec({{0, 1}})) ==
        doctest::Approx(3 + logsumexp2(0, 2)).epsilon(1e-15));
  CHECK(semi_conditional_energy_from_logits(l, c) == doctest::Approx(2 + logsumexp2(1, 3)).epsilon(1e-15));
  CHECK(semi_conditional_energy_from_logits(l, ConditioningSpec{}) == marginal_energy_from_logits(l));
  const AttributeVector y{0, 1};
  CHECK(semi_conditional_energy_from_logits(l, ConditioningSpec::full(y)) == joint_energy_from_logits(l, y));
  CHECK_THROWS(semi_conditional_energy_from_logits(l, ConditioningSpec({{2, 1}})));
}

TEST_CASE("label distribution enumeration") {
  ConstantLogitModel zero(1, Tensor(Shape{2, 2}, 0.0));
  const auto d0 = enumerate_label_distribution(zero, Tensor::vector({0.0}));
  REQUIRE(d0.size() == 4);
  for (double v : d0) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  ConstantLogitModel one(1, table({0, std::log(3.0)}));
  const auto d1 = enumerate_label_distribution(one, Tensor::vector({0.0}));
  CHECK(d1[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(d1[1] == doctest::Approx(0.75).epsilon(1e-14));

  CHECK(label_vector_from_index(5, 3) == AttributeVector{1, 0, 1});
}

TEST_CASE("random models: factorization and normalization") {
  gjem::Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    MlpSpec spec{1 + uniform_index(rng, 5), {6}, 1 + uniform_index(rng, 8)};
    const ParameterSet p = gjem::test::random_mlp(spec, rng);
    const MlpLogitModel m(spec, p.values());
    const Tensor x = gjem::test::random_tensor({spec.input_dim}, rng, 0.0, 1.0);
    const auto probs = label_conditional(m, x);
    const auto dist = enumerate_label_distribution(m, x);
    const double fm = marginal_energy(m, x);
    double total = 0.0;
    for (std::size_t i = 0; i < dist.size(); ++i) {
      const AttributeVector y = label_vector_from_index(i, spec.num_attributes);
      double prod = 1.0, logp = 0.0;
      for (std::size_t k = 0; k < y.size(); ++k) {
        const double pk = y[k] ? probs[k] : 1.0 - probs[k];
        prod *= pk;
        logp += std::log(pk);
      }
      CHECK(dist[i] == doctest::Approx(prod).epsilon(1e-12));
      CHECK(std::abs(joint_energy(m, x, y) - fm - logp) < 1e-10);
      total += std::exp(joint_energy(m, x, y) - fm);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("conditioning spec parse and validation") {
  const std::vector<std::string> names{"smile", "glasses", "hat"};
  const ConditioningSpec c = ConditioningSpec::parse(" hat=1, smile=0 ", names);
  REQUIRE(c.size() == 2);
  CHECK(c.entries()[0] == ConditioningSpec::Assignment{0, 0});
  CHECK(c.entries()[1] == ConditioningSpec::Assignment{2, 1});
  CHECK(c.to_string(names) == "smile=0,hat=1");
  CHECK(c.codes(3) == std::vector<std::int8_t>{0, ad::kMarginalize, 1});
  CHECK(c.matches(AttributeVector{0, 1, 1}));
  CHECK_FALSE(c.matches(AttributeVector{1, 1, 1}));
  CHECK(ConditioningSpec::parse("", names).empty());
  CHECK(ConditioningSpec::parse("   ", names).empty());
  CHECK_THROWS_AS(ConditioningSpec::parse("beard=1", names), ConfigError);
  CHECK_THROWS_AS(ConditioningSpec::parse("hat=2", names), ConfigError);
  CHECK_THROWS_AS(ConditioningSpec::parse("hat=1,hat=0", names), ConfigError);
  CHECK_THROWS_AS(ConditioningSpec::parse("hat", names), ConfigError);
  CHECK_THROWS_AS(ConditioningSpec({{0, 1}, {0, 0}}), ConfigError);
  CHECK_THROWS_AS(ConditioningSpec({{0, 3}}), ConfigError);
  CHECK_THROWS_AS(ConditioningSpec({{4, 1}}).validate(3), ConfigError);
  CHECK_THROWS_AS(validate_attributes(AttributeVector{0, 2}, 2), std::invalid_argument);
}

TEST_CASE("batched energy gradients agree with scalar energies") {
  gjem::Rng rng(4);
  MlpSpec spec{3, {5}, 2};
  const ParameterSet p = gjem::test::random_mlp(spec, rng);
  const MlpLogitModel m(spec, p.values());
  const Tensor x = gjem::test::random_tensor({4, 3}, rng, 0.0, 1.0);
  const std::vector<std::int8_t> per_row{1, ad::kMarginalize};
  const EnergyGrad eg = energy_and_grad(m, x, repeat_codes(per_row, 4));
  for (std::size_t b = 0; b < 4; ++b) {
    const ConditioningSpec c({{0, 1}});
    CHECK(eg.energy[b] == doctest::Approx(semi_conditional_energy(m, x.row(b), c)).epsilon(1e-13));
    for (std::size_t d = 0; d < 3; ++d) {
      const double fd = gjem::test::central_difference([&](double h) {
        Tensor xp = x.row(b);
        xp[d] += h;
        return semi_conditional_energy(m, xp, c);
      });
      CHECK(eg.grad_x.at(b, d) == doctest::Approx(fd).epsilon(1e-7));
    }
  }
}

TEST_CASE("quadratic toy logits") {
  QuadraticLogitModel::Term a{{0.2}, 0.1, 0.0}, b{{0.7}, 0.2, -1.0};
  QuadraticLogitModel m(1, {{a, b}});
  const Tensor l = evaluate_logits(m, Tensor::vector({0.5}));
  CHECK(l[0] == doctest::Approx(-0.09 / 0.02).epsilon(1e-14));
  CHECK(l[1] == doctest::Approx(-1.0 - 0.04 / 0.08).epsilon(1e-14));
  CHECK(m.logit(0, 1, std::vector<double>{0.7}) == -1.0);
}
