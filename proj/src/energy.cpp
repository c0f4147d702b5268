#include "gjem/energy.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <set>

#include "gjem/errors.hpp"

namespace gjem {

void validate_attributes(std::span<const std::uint8_t> y, std::size_t num_attributes) {
  if (y.size() != num_attributes) {
    throw ShapeError("attribute vector has length " + std::to_string(y.size()) + ", expected " +
                     std::to_string(num_attributes));
  }
  for (std::uint8_t v : y) {
    if (v > 1) throw std::invalid_argument("attribute values must be 0 or 1");
  }
}

ConditioningSpec::ConditioningSpec(std::vector<Assignment> assignments) : entries_(std::move(assignments)) {
  std::sort(entries_.begin(), entries_.end());
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].second > 1) throw ConfigError("conditioning values must be 0 or 1");
    if (i > 0 && entries_[i].first == entries_[i - 1].first) {
      throw ConfigError("attribute " + std::to_string(entries_[i].first) + " conditioned twice");
    }
  }
}

ConditioningSpec ConditioningSpec::full(std::span<const std::uint8_t> y) {
  std::vector<Assignment> a;
  for (std::size_t k = 0; k < y.size(); ++k) a.emplace_back(k, y[k]);
  return ConditioningSpec(std::move(a));
}

static std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

ConditioningSpec ConditioningSpec::parse(std::string_view expr, std::span<const std::string> names) {
  std::vector<Assignment> a;
  expr = trim(expr);
  if (expr.empty()) return ConditioningSpec();
  while (true) {
    const std::size_t comma = expr.find(',');
    const std::string_view item = trim(expr.substr(0, comma));
    const std::size_t eq = item.find('=');
    if (eq == std::string_view::npos) throw ConfigError("conditioning term '" + std::string(item) + "' lacks '='");
    const std::string_view name = trim(item.substr(0, eq));
    const std::string_view value = trim(item.substr(eq + 1));
    if (value != "0" && value != "1") {
      throw ConfigError("conditioning value for '" + std::string(name) + "' must be 0 or 1");
    }
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ConfigError("unknown attribute '" + std::string(name) + "'");
    a.emplace_back(static_cast<std::size_t>(it - names.begin()), value == "1" ? 1 : 0);
    if (comma == std::string_view::npos) break;
    expr = expr.substr(comma + 1);
  }
  return ConditioningSpec(std::move(a));
}

void ConditioningSpec::validate(std::size_t num_attributes) const {
  for (const auto& [index, value] : entries_) {
    if (index >= num_attributes) {
      throw ConfigError("conditioning index " + std::to_string(index) + " out of range for " +
                        std::to_string(num_attributes) + " attributes");
    }
  }
}

bool ConditioningSpec::contains(std::size_t index) const {
  return std::any_of(entries_.begin(), entries_.end(), [index](const Assignment& a) { return a.first == index; });
}

bool ConditioningSpec::matches(std::span<const std::uint8_t> y) const {
  for (const auto& [index, value] : entries_) {
    if (index >= y.size() || y[index] != value) return false;
  }
  return true;
}

std::vector<std::int8_t> ConditioningSpec::codes(std::size_t num_attributes) const {
  validate(num_attributes);
  std::vector<std::int8_t> c(num_attributes, ad::kMarginalize);
  for (const auto& [index, value] : entries_) c[index] = static_cast<std::int8_t>(value);
  return c;
}

std::string ConditioningSpec::to_string(std::span<const std::string> names) const {
  std::string out;
  for (const auto& [index, value] : entries_) {
    if (!out.empty()) out += ',';
    out += index < names.size() ? names[index] : std::to_string(index);
    out += value ? "=1" : "=0";
  }
  return out;
}

Var MlpLogitModel::logits(Tape& tape, Var x) const {
  return mlp_forward(tape, *spec_, params_, x, false).logits;
}

EnergyModel make_energy_model(const MlpSpec& spec, std::uint64_t seed) {
  return EnergyModel{spec, init_mlp_parameters(spec, seed)};
}

Tensor evaluate_logits(const LogitModel& m, const Tensor& x) {
  Tape tape;
  if (x.rank() == 1) {
    if (x.size() != m.input_dim()) throw ShapeError("input does not match model dimension");
    const Tensor out = m.logits(tape, tape.constant(x.reshaped(Shape{1, x.size()}))).value();
    return out.reshaped(Shape{m.num_attributes(), 2});
  }
  if (x.rank() != 2 || x.extent(1) != m.input_dim()) {
    throw ShapeError("input of shape " + shape_string(x.shape()) + " does not match model dimension");
  }
  return m.logits(tape, tape.constant(x)).value();
}

static void check_logit_table(const Tensor& logits) {
  if (logits.rank() != 2 || logits.extent(1) != 2) {
    throw ShapeError("expected a [K, 2] logit table, got " + shape_string(logits.shape()));
  }
}

double joint_energy_from_logits(const Tensor& logits, std::span<const std::uint8_t> y) {
  check_logit_table(logits);
  validate_attributes(y, logits.extent(0));
  double f = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) f += logits[2 * k + y[k]];
  return f;
}

double marginal_energy_from_logits(const Tensor& logits) {
  check_logit_table(logits);
  double f = 0.0;
  for (std::size_t k = 0; k < logits.extent(0); ++k) f += logsumexp2(logits[2 * k], logits[2 * k + 1]);
  return f;
}

double semi_conditional_energy_from_logits(const Tensor& logits, const ConditioningSpec& spec) {
  check_logit_table(logits);
  const std::vector<std::int8_t> codes = spec.codes(logits.extent(0));
  double f = 0.0;
  for (std::size_t k = 0; k < codes.size(); ++k) {
    f += codes[k] == ad::kMarginalize ? logsumexp2(logits[2 * k], logits[2 * k + 1])
                                      : logits[2 * k + static_cast<std::size_t>(codes[k])];
  }
  return f;
}

std::vector<double> label_conditional_from_logits(const Tensor& logits) {
  check_logit_table(logits);
  std::vector<double> p(logits.extent(0));
  // exp(l1) / (exp(l0) + exp(l1)) = sigmoid(l1 - l0), stable for any shift.
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = sigmoid(logits[2 * k + 1] - logits[2 * k]);
  return p;
}

double joint_energy(const LogitModel& m, const Tensor& x, std::span<const std::uint8_t> y) {
  return joint_energy_from_logits(evaluate_logits(m, x), y);
}

double marginal_energy(const LogitModel& m, const Tensor& x) {
  return marginal_energy_from_logits(evaluate_logits(m, x));
}

double semi_conditional_energy(const LogitModel& m, const Tensor& x, const ConditioningSpec& spec) {
  return semi_conditional_energy_from_logits(evaluate_logits(m, x), spec);
}

std::vector<double> label_conditional(const LogitModel& m, const Tensor& x) {
  return label_conditional_from_logits(evaluate_logits(m, x));
}

Tensor label_conditional_batch(const LogitModel& m, const Tensor& x) {
  const Tensor logits = evaluate_logits(m, x);
  if (logits.rank() != 3) throw ShapeError("label_conditional_batch expects [B, D] input");
  const std::size_t rows = logits.extent(0), k = logits.extent(1);
  Tensor p(Shape{rows, k});
  for (std::size_t i = 0; i < rows * k; ++i) p[i] = sigmoid(logits[2 * i + 1] - logits[2 * i]);
  return p;
}

AttributeVector label_vector_from_index(std::size_t index, std::size_t num_attributes) {
  AttributeVector y(num_attributes);
  for (std::size_t k = 0; k < num_attributes; ++k) y[k] = static_cast<std::uint8_t>((index >> k) & 1u);
  return y;
}

std::vector<double> enumerate_label_distribution(const LogitModel& m, const Tensor& x) {
  const std::size_t k = m.num_attributes();
  if (k > kMaxEnumerationAttributes) {
    throw std::invalid_argument("label enumeration supports at most " + std::to_string(kMaxEnumerationAttributes) +
                                " attributes");
  }
  const Tensor logits = evaluate_logits(m, x);
  const std::size_t n = std::size_t{1} << k;
  std::vector<double> energies(n);
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    energies[i] = joint_energy_from_logits(logits, label_vector_from_index(i, k));
    hi = std::max(hi, energies[i]);
  }
  double z = 0.0;
  for (double e : energies) z += std::exp(e - hi);
  const double log_z = hi + std::log(z);
  for (double& e : energies) e = std::exp(e - log_z);
  return energies;
}

EnergyGrad energy_and_grad(const LogitModel& m, const Tensor& x, std::span<const std::int8_t> codes) {
  if (x.rank() != 2 || x.extent(1) != m.input_dim()) {
    throw ShapeError("energy_and_grad expects [B, D] input, got " + shape_string(x.shape()));
  }
  Tape tape;
  Var xv = tape.leaf(x, true);
  Var rows = ad::row_sum(ad::reduce_logits(m.logits(tape, xv), codes));
  Var total = ad::sum(rows);
  tape.backward(total);
  const Tensor& r = rows.value();
  return EnergyGrad{std::vector<double>(r.data().begin(), r.data().end()), tape.grad(xv)};
}

std::vector<std::int8_t> joint_codes(std::span<const std::uint8_t> labels) {
  std::vector<std::int8_t> c(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) throw std::invalid_argument("attribute values must be 0 or 1");
    c[i] = static_cast<std::int8_t>(labels[i]);
  }
  return c;
}

std::vector<std::int8_t> repeat_codes(std::span<const std::int8_t> per_row, std::size_t rows) {
  std::vector<std::int8_t> c;
  c.reserve(per_row.size() * rows);
  for (std::size_t b = 0; b < rows; ++b) c.insert(c.end(), per_row.begin(), per_row.end());
  return c;
}

}  // namespace gjem
