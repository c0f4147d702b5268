#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gjem/autodiff.hpp"
#include "gjem/mlp.hpp"
#include "gjem/tensor.hpp"

namespace gjem {

// y in {0,1}^K, one byte per attribute.
using AttributeVector = std::vector<std::uint8_t>;

void validate_attributes(std::span<const std::uint8_t> y, std::size_t num_attributes);

// Partial assignment y_c over attribute indices c (0-based).
class ConditioningSpec {
 public:
  using Assignment = std::pair<std::size_t, std::uint8_t>;

  ConditioningSpec() = default;
  // Throws ConfigError on duplicate indices or non-binary values.
  explicit ConditioningSpec(std::vector<Assignment> assignments);

  static ConditioningSpec full(std::span<const std::uint8_t> y);
  // Comma-separated "name=0|1" pairs; empty or blank means no conditioning.
  static ConditioningSpec parse(std::string_view expr, std::span<const std::string> names);

  void validate(std::size_t num_attributes) const;

  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  std::span<const Assignment> entries() const { return entries_; }
  bool contains(std::size_t index) const;
  bool matches(std::span<const std::uint8_t> y) const;
  // Per-attribute reduction codes: the pinned value, or ad::kMarginalize.
  std::vector<std::int8_t> codes(std::size_t num_attributes) const;
  std::string to_string(std::span<const std::string> names) const;

  friend bool operator==(const ConditioningSpec&, const ConditioningSpec&) = default;

 private:
  std::vector<Assignment> entries_;  // sorted by index
};

// Anything that maps x to per-attribute logit pairs on a tape.
class LogitModel {
 public:
  virtual ~LogitModel() = default;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t num_attributes() const = 0;
  // x: [B, D] -> [B, K, 2]
  virtual Var logits(Tape& tape, Var x) const = 0;
};

// MLP backbone evaluated with a borrowed parameter list (theta or theta_hat).
class MlpLogitModel final : public LogitModel {
 public:
  MlpLogitModel(const MlpSpec& spec, std::span<const Tensor> params) : spec_(&spec), params_(params) {}
  std::size_t input_dim() const override { return spec_->input_dim; }
  std::size_t num_attributes() const override { return spec_->num_attributes; }
  Var logits(Tape& tape, Var x) const override;

 private:
  const MlpSpec* spec_;
  std::span<const Tensor> params_;
};

// Backbone spec plus parameters; f_theta(x) has shape [K, 2].
struct EnergyModel {
  MlpSpec spec;
  ParameterSet params;

  std::size_t num_attributes() const { return spec.num_attributes; }
  MlpLogitModel current() const { return MlpLogitModel(spec, params.values()); }
  MlpLogitModel averaged() const { return MlpLogitModel(spec, params.averaged()); }
};

EnergyModel make_energy_model(const MlpSpec& spec, std::uint64_t seed);

// Logits for x of shape [D] ([K, 2]) or [B, D] ([B, K, 2]).
Tensor evaluate_logits(const LogitModel& m, const Tensor& x);

// f(x, y) = sum_k f(x)[k][y_k]
double joint_energy(const LogitModel& m, const Tensor& x, std::span<const std::uint8_t> y);
// sum_k logsumexp(f(x)[k][0], f(x)[k][1]), i.e. log p(x) up to log Z.
double marginal_energy(const LogitModel& m, const Tensor& x);
// Pinned attributes contribute their selected logit, free ones their logsumexp.
double semi_conditional_energy(const LogitModel& m, const Tensor& x, const ConditioningSpec& spec);
// p(y_k = 1 | x) for each attribute.
std::vector<double> label_conditional(const LogitModel& m, const Tensor& x);
// [B, D] -> [B, K]
Tensor label_conditional_batch(const LogitModel& m, const Tensor& x);

// Same quantities from an explicit [K, 2] logit table.
double joint_energy_from_logits(const Tensor& logits, std::span<const std::uint8_t> y);
double marginal_energy_from_logits(const Tensor& logits);
double semi_conditional_energy_from_logits(const Tensor& logits, const ConditioningSpec& spec);
std::vector<double> label_conditional_from_logits(const Tensor& logits);

inline constexpr std::size_t kMaxEnumerationAttributes = 20;

// p(y | x) over all 2^K label vectors, index = sum_k y_k 2^k, normalized by
// log-sum-exp over the enumerated joint energies.
std::vector<double> enumerate_label_distribution(const LogitModel& m, const Tensor& x);
AttributeVector label_vector_from_index(std::size_t index, std::size_t num_attributes);

// Batched energy with its gradient in x. `codes` holds B*K entries (see
// ad::reduce_logits). The energy row b is sum_k reduce(f(x_b)[k], code).
struct EnergyGrad {
  std::vector<double> energy;  // [B]
  Tensor grad_x;               // [B, D]
};
EnergyGrad energy_and_grad(const LogitModel& m, const Tensor& x, std::span<const std::int8_t> codes);

std::vector<std::int8_t> joint_codes(std::span<const std::uint8_t> labels);
std::vector<std::int8_t> repeat_codes(std::span<const std::int8_t> per_row, std::size_t rows);

}  // namespace gjem
