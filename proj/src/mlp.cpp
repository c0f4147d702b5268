#include "gjem/mlp.hpp"

#include <cmath>
#include <stdexcept>

#include "gjem/errors.hpp"
#include "gjem/rng.hpp"

namespace gjem {

void MlpSpec::validate() const {
  if (input_dim == 0) throw ConfigError("model input dimension must be positive");
  if (num_attributes == 0) throw ConfigError("model needs at least one attribute");
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("hidden layer widths must be positive");
  }
}

void ParameterSet::add(std::string name, Tensor value) {
  for (const auto& n : names_) {
    if (n == name) throw std::invalid_argument("duplicate parameter name " + name);
  }
  names_.push_back(std::move(name));
  m_.emplace_back(value.shape(), 0.0);
  v_.emplace_back(value.shape(), 0.0);
  ema_.push_back(value);
  theta_.push_back(std::move(value));
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const Tensor& t : theta_) n += t.size();
  return n;
}

void ParameterSet::adam_step(std::span<const Tensor> grads, double lr, const AdamConfig& cfg) {
  if (grads.size() != theta_.size()) {
    throw ShapeError("adam_step: expected " + std::to_string(theta_.size()) + " gradients, got " +
                     std::to_string(grads.size()));
  }
  for (std::size_t i = 0; i < theta_.size(); ++i) require_same_shape(theta_[i], grads[i], "adam_step");
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < theta_.size(); ++i) {
    Tensor& th = theta_[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < th.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      th[j] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

void ParameterSet::ema_update(double mu) {
  if (!(mu >= 0.0 && mu <= 1.0)) throw std::invalid_argument("EMA rate must lie in [0, 1]");
  for (std::size_t i = 0; i < theta_.size(); ++i) {
    Tensor& e = ema_[i];
    const Tensor& th = theta_[i];
    for (std::size_t j = 0; j < e.size(); ++j) e[j] = mu * e[j] + (1.0 - mu) * th[j];
  }
}

void ParameterSet::reset_average() { ema_ = theta_; }

static std::size_t layer_in(const MlpSpec& spec, std::size_t layer) {
  return layer == 0 ? spec.input_dim : spec.hidden[layer - 1];
}

static std::size_t layer_out(const MlpSpec& spec, std::size_t layer) {
  return layer < spec.hidden.size() ? spec.hidden[layer] : spec.output_dim();
}

ParameterSet init_mlp_parameters(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ParameterSet params;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t in = layer_in(spec, l), out = layer_out(spec, l);
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor w(Shape{out, in});
    for (double& v : w.data()) v = dist(rng);
    params.add("layer" + std::to_string(l) + ".weight", std::move(w));
    params.add("layer" + std::to_string(l) + ".bias", Tensor(Shape{out}, 0.0));
  }
  return params;
}

ParameterSet zero_mlp_parameters(const MlpSpec& spec) {
  spec.validate();
  ParameterSet params;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    params.add("layer" + std::to_string(l) + ".weight", Tensor(Shape{layer_out(spec, l), layer_in(spec, l)}));
    params.add("layer" + std::to_string(l) + ".bias", Tensor(Shape{layer_out(spec, l)}));
  }
  return params;
}

static void check_params(const MlpSpec& spec, std::span<const Tensor> params) {
  if (params.size() != 2 * spec.num_layers()) {
    throw ShapeError("expected " + std::to_string(2 * spec.num_layers()) + " parameter tensors, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const Shape w{layer_out(spec, l), layer_in(spec, l)};
    const Shape b{layer_out(spec, l)};
    if (params[2 * l].shape() != w || params[2 * l + 1].shape() != b) {
      throw ShapeError("parameter shapes of layer " + std::to_string(l) + " do not match the model spec");
    }
  }
}

static Var as_batch(const MlpSpec& spec, Var x, bool& single) {
  const Shape& s = x.shape();
  if (s.size() == 1 && s[0] == spec.input_dim) {
    single = true;
    return ad::reshape(x, Shape{1, spec.input_dim});
  }
  if (s.size() == 2 && s[1] == spec.input_dim) {
    single = false;
    return x;
  }
  throw ShapeError("input of shape " + shape_string(s) + " does not match model input dimension " +
                   std::to_string(spec.input_dim));
}

MlpPass mlp_forward(Tape& tape, const MlpSpec& spec, std::span<const Tensor> params, Var x,
                    bool params_require_grad) {
  check_params(spec, params);
  bool single = false;
  Var h = as_batch(spec, x, single);
  MlpPass pass;
  for (const Tensor& p : params) pass.params.push_back(tape.leaf(p, params_require_grad));
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    h = ad::add_bias(ad::matmul_nt(h, pass.params[2 * l]), pass.params[2 * l + 1]);
    if (l + 1 < spec.num_layers()) h = ad::swish(h);
  }
  const std::size_t rows = h.shape()[0];
  pass.logits = single ? ad::reshape(h, Shape{spec.num_attributes, 2})
                       : ad::reshape(h, Shape{rows, spec.num_attributes, 2});
  return pass;
}

Tensor mlp_logits(const MlpSpec& spec, std::span<const Tensor> params, const Tensor& x) {
  Tape tape;
  return mlp_forward(tape, spec, params, tape.constant(x), false).logits.value();
}

MlpTangentPass mlp_forward_tangent(Tape& tape, const MlpSpec& spec, std::span<const Tensor> params, Var x,
                                   Var x_dot, bool params_require_grad) {
  check_params(spec, params);
  if (x.shape().size() != 2 || x.shape() != x_dot.shape() || x.shape()[1] != spec.input_dim) {
    throw ShapeError("tangent pass needs matching [B, D] input and tangent");
  }
  MlpTangentPass pass;
  for (const Tensor& p : params) pass.params.push_back(tape.leaf(p, params_require_grad));
  Var h = x;
  Var h_dot = x_dot;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    Var w = pass.params[2 * l];
    Var z = ad::add_bias(ad::matmul_nt(h, w), pass.params[2 * l + 1]);
    Var z_dot = ad::matmul_nt(h_dot, w);
    if (l + 1 < spec.num_layers()) {
      h = ad::swish(z);
      h_dot = ad::mul(ad::swish_grad(z), z_dot);
    } else {
      h = z;
      h_dot = z_dot;
    }
  }
  const Shape out{x.shape()[0], spec.num_attributes, 2};
  pass.logits = ad::reshape(h, out);
  pass.logits_dot = ad::reshape(h_dot, out);
  return pass;
}

std::vector<Record> checkpoint_records(const MlpSpec& spec, const ParameterSet& params) {
  std::vector<Record> records;
  records.push_back({"spec/input_dim", Tensor::scalar(static_cast<double>(spec.input_dim))});
  records.push_back({"spec/num_attributes", Tensor::scalar(static_cast<double>(spec.num_attributes))});
  records.push_back({"spec/hidden_count", Tensor::scalar(static_cast<double>(spec.hidden.size()))});
  if (!spec.hidden.empty()) {
    std::vector<double> widths(spec.hidden.begin(), spec.hidden.end());
    records.push_back({"spec/hidden", Tensor::vector(std::move(widths))});
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    records.push_back({"theta/" + params.name(i), params.values()[i]});
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    records.push_back({"ema/" + params.name(i), params.averaged()[i]});
  }
  return records;
}

static std::size_t as_count(const Tensor& t, const char* what) {
  const double v = t.item();
  if (!(v >= 0.0) || v != std::floor(v) || v > 1e9) throw IoError(std::string("invalid ") + what + " in checkpoint");
  return static_cast<std::size_t>(v);
}

LoadedCheckpoint parse_checkpoint(std::span<const Record> records) {
  LoadedCheckpoint out;
  out.spec.input_dim = as_count(find_record(records, "spec/input_dim"), "input dimension");
  out.spec.num_attributes = as_count(find_record(records, "spec/num_attributes"), "attribute count");
  const std::size_t hidden_count = as_count(find_record(records, "spec/hidden_count"), "hidden layer count");
  if (hidden_count > 0) {
    const Tensor& widths = find_record(records, "spec/hidden");
    if (widths.size() != hidden_count) throw IoError("hidden layer record does not match its count");
    for (double w : widths.data()) out.spec.hidden.push_back(as_count(Tensor::scalar(w), "hidden width"));
  }
  try {
    out.spec.validate();
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint holds an invalid model spec: ") + e.what());
  }
  const ParameterSet layout = zero_mlp_parameters(out.spec);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const Tensor& theta = find_record(records, "theta/" + layout.name(i));
    if (theta.shape() != layout.values()[i].shape()) throw IoError("shape mismatch for " + layout.name(i));
    out.params.add(layout.name(i), theta);
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const Tensor& ema = find_record(records, "ema/" + layout.name(i));
    if (ema.shape() != layout.values()[i].shape()) throw IoError("shape mismatch for ema/" + layout.name(i));
    out.params.mutable_averaged()[i] = ema;
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const MlpSpec& spec, const ParameterSet& params,
                     std::span<const Record> extra) {
  std::vector<Record> records = checkpoint_records(spec, params);
  records.insert(records.end(), extra.begin(), extra.end());
  write_container(path, records);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_container(path)); }

}  // namespace gjem
