#include "gjem/cli.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"

#include "gjem/buffers.hpp"
#include "gjem/container.hpp"
#include "gjem/errors.hpp"
#include "gjem/metrics.hpp"
#include "gjem/samplers.hpp"

namespace gjem {

namespace {

using nlohmann::json;

// Every key of `j` must be in `allowed`.
void expect_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get(const json& j, const char* key, const std::string& where, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("invalid value for '" + std::string(key) + "' in " + where);
  }
}

std::size_t get_count(const json& j, const char* key, const std::string& where, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw ConfigError("'" + std::string(key) + "' in " + where + " must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

double get_number(const json& j, const char* key, const std::string& where, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw ConfigError("'" + std::string(key) + "' in " + where + " must be a number");
  return j.at(key).get<double>();
}

MixtureSpec parse_mixture(const json& j) {
  const std::string where = "data.mixture";
  if (j.contains("preset")) {
    expect_keys(j, where, {"preset", "lo", "hi", "sigma", "names"});
    const auto preset = get<std::string>(j, "preset", where, "");
    if (preset != "four_corners") throw ConfigError("unknown mixture preset '" + preset + "'");
    MixtureSpec spec = MixtureSpec::four_corners(get_number(j, "lo", where, 0.2), get_number(j, "hi", where, 0.8),
                                                 get_number(j, "sigma", where, 0.12));
    spec.names = get<std::vector<std::string>>(j, "names", where, {});
    spec.validate();
    return spec;
  }
  expect_keys(j, where, {"dim", "num_attributes", "components", "names"});
  MixtureSpec spec;
  spec.dim = get_count(j, "dim", where, 0);
  spec.num_attributes = get_count(j, "num_attributes", where, 0);
  spec.names = get<std::vector<std::string>>(j, "names", where, {});
  if (!j.contains("components") || !j.at("components").is_array()) throw ConfigError(where + ".components must be an array");
  for (const json& c : j.at("components")) {
    const std::string cw = where + ".components[]";
    expect_keys(c, cw, {"y", "mean", "sigma", "weight"});
    MixtureComponent comp;
    for (int v : get<std::vector<int>>(c, "y", cw, {})) {
      if (v != 0 && v != 1) throw ConfigError(cw + ".y entries must be 0 or 1");
      comp.y.push_back(static_cast<std::uint8_t>(v));
    }
    comp.mean = get<std::vector<double>>(c, "mean", cw, {});
    comp.sigma = get_number(c, "sigma", cw, comp.sigma);
    comp.weight = get_number(c, "weight", cw, comp.weight);
    spec.components.push_back(std::move(comp));
  }
  spec.validate();
  return spec;
}

LangevinConfig parse_langevin(const json& j, LangevinConfig lc) {
  expect_keys(j, "langevin", {"step_size", "temperature", "clamp"});
  lc.step_size = get_number(j, "step_size", "langevin", lc.step_size);
  lc.temperature = get_number(j, "temperature", "langevin", lc.temperature);
  lc.clamp = get<bool>(j, "clamp", "langevin", lc.clamp);
  lc.validate();
  return lc;
}

GibbsConfig parse_gibbs(const json& j, GibbsConfig gc) {
  expect_keys(j, "gibbs", {"sweeps", "inner_steps"});
  gc.sweeps = get_count(j, "sweeps", "gibbs", gc.sweeps);
  gc.inner_steps = get_count(j, "inner_steps", "gibbs", gc.inner_steps);
  gc.validate();
  if (gc.sweeps == 0) throw ConfigError("gibbs.sweeps must be positive");
  return gc;
}

BufferConfig parse_buffer(const json& j, BufferConfig bc) {
  expect_keys(j, "train.buffer", {"capacity", "reinit_rate", "mode"});
  bc.capacity = get_count(j, "capacity", "train.buffer", bc.capacity);
  bc.reinit_rate = get_number(j, "reinit_rate", "train.buffer", bc.reinit_rate);
  const auto mode = get<std::string>(j, "mode", "train.buffer", "replay");
  if (mode == "replay") {
    bc.mode = BufferMode::replay;
  } else if (mode == "reservoir") {
    bc.mode = BufferMode::reservoir;
  } else {
    throw ConfigError("train.buffer.mode must be 'replay' or 'reservoir'");
  }
  bc.validate();
  return bc;
}

AugmentConfig parse_augment(const json& j) {
  const std::string where = "train.augment";
  expect_keys(j, where, {"enabled", "image_shape", "flip_probability", "blur_sigma", "every_sweeps"});
  AugmentConfig ac;
  ac.enabled = get<bool>(j, "enabled", where, false);
  ac.image_shape = get<std::vector<std::size_t>>(j, "image_shape", where, {});
  ac.flip_probability = get_number(j, "flip_probability", where, ac.flip_probability);
  ac.blur_sigma = get_number(j, "blur_sigma", where, ac.blur_sigma);
  ac.every_sweeps = get_count(j, "every_sweeps", where, ac.every_sweeps);
  return ac;
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string joined_names(const std::vector<std::string>& names) {
  std::string s;
  for (std::size_t i = 0; i < names.size(); ++i) s += (i ? "\n" : "") + names[i];
  return s;
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  expect_keys(j, "config", {"seed", "data", "model", "train", "langevin", "gibbs", "sample", "output"});
  RunConfig rc;
  rc.seed = get<std::uint64_t>(j, "seed", "config", 0);
  rc.output = get<std::string>(j, "output", "config", "");

  if (!j.contains("data")) throw ConfigError("config needs a 'data' section");
  const json& d = j.at("data");
  expect_keys(d, "data", {"path", "mixture", "n", "holdout", "min_frequency"});
  rc.data.path = get<std::string>(d, "path", "data", "");
  if (d.contains("mixture")) rc.data.mixture = parse_mixture(d.at("mixture"));
  if (rc.data.path.empty() == !rc.data.mixture.has_value()) {
    throw ConfigError("data needs exactly one of 'path' or 'mixture'");
  }
  rc.data.n = get_count(d, "n", "data", rc.data.n);
  if (rc.data.n == 0) throw ConfigError("data.n must be positive");
  rc.data.holdout = get<std::vector<std::string>>(d, "holdout", "data", {});
  rc.data.min_frequency = get_number(d, "min_frequency", "data", 0.0);
  if (!(rc.data.min_frequency >= 0.0 && rc.data.min_frequency <= 1.0)) {
    throw ConfigError("data.min_frequency must lie in [0, 1]");
  }

  if (j.contains("model")) {
    expect_keys(j.at("model"), "model", {"hidden"});
    rc.model.hidden = get<std::vector<std::size_t>>(j.at("model"), "hidden", "model", {});
  } else {
    rc.model.hidden = {32, 32};
  }
  for (std::size_t w : rc.model.hidden) {
    if (w == 0) throw ConfigError("model.hidden widths must be positive");
  }

  TrainConfig& tc = rc.train;
  if (j.contains("langevin")) tc.langevin = parse_langevin(j.at("langevin"), tc.langevin);
  if (j.contains("gibbs")) tc.gibbs = parse_gibbs(j.at("gibbs"), tc.gibbs);
  if (j.contains("train")) {
    const json& t = j.at("train");
    const std::string w = "train";
    expect_keys(t, w,
                {"batch_size", "iterations", "learning_rate", "ema_mu", "kl_weight", "energy_reg_weight", "eval_every",
                 "adam_beta1", "adam_beta2", "adam_epsilon", "buffer", "augment"});
    tc.batch_size = get_count(t, "batch_size", w, tc.batch_size);
    tc.iterations = get_count(t, "iterations", w, tc.iterations);
    tc.learning_rate = get_number(t, "learning_rate", w, tc.learning_rate);
    tc.ema_mu = get_number(t, "ema_mu", w, tc.ema_mu);
    tc.kl_weight = get_number(t, "kl_weight", w, tc.kl_weight);
    tc.energy_reg_weight = get_number(t, "energy_reg_weight", w, tc.energy_reg_weight);
    tc.eval_every = get_count(t, "eval_every", w, tc.eval_every);
    tc.adam.beta1 = get_number(t, "adam_beta1", w, tc.adam.beta1);
    tc.adam.beta2 = get_number(t, "adam_beta2", w, tc.adam.beta2);
    tc.adam.epsilon = get_number(t, "adam_epsilon", w, tc.adam.epsilon);
    if (t.contains("buffer")) tc.buffer = parse_buffer(t.at("buffer"), tc.buffer);
    if (t.contains("augment")) tc.augment = parse_augment(t.at("augment"));
  }
  tc.seed = rc.seed;

  if (j.contains("sample")) {
    const json& s = j.at("sample");
    expect_keys(s, "sample", {"noise_sweeps", "buffer_sweeps", "inner_steps"});
    rc.sample.noise_sweeps = get_count(s, "noise_sweeps", "sample", rc.sample.noise_sweeps);
    rc.sample.buffer_sweeps = get_count(s, "buffer_sweeps", "sample", rc.sample.buffer_sweeps);
    rc.sample.inner_steps = get_count(s, "inner_steps", "sample", rc.sample.inner_steps);
    if (rc.sample.inner_steps == 0) throw ConfigError("sample.inner_steps must be positive");
  }
  // Shape-dependent checks run once the data dimension is known; validate the
  // rest now so that bad values fail before any work starts.
  if (rc.data.mixture) {
    rc.model.input_dim = rc.data.mixture->dim;
    rc.model.num_attributes = rc.data.mixture->num_attributes;
    rc.model.validate();
    tc.validate(rc.model.input_dim);
  } else {
    tc.validate(tc.augment.image_shape.empty() ? 1 : shape_size(tc.augment.image_shape));
  }
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

Dataset materialize_dataset(const DataSource& src, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  bool assign_split = true;
  if (src.mixture) {
    ds = generate_mixture(*src.mixture, src.n, rng);
  } else if (src.path.extension() == ".csv") {
    ds = read_dataset_csv(src.path);
  } else {
    ds = read_dataset(src.path);
    assign_split = ds.count(Split::validation) == 0;
  }
  if (src.min_frequency > 0.0) ds = filter_attributes_by_frequency(ds, src.min_frequency);
  if (assign_split) assign_validation_split(ds, rng);
  if (!src.holdout.empty()) {
    std::vector<ConditioningSpec> combos;
    for (const auto& expr : src.holdout) combos.push_back(ConditioningSpec::parse(expr, ds.names));
    ds = split_holdout(ds, combos);
  }
  return ds;
}

void save_run_checkpoint(const std::filesystem::path& path, const RunCheckpoint& ck) {
  std::vector<Record> extra;
  extra.push_back(text_record("meta/names", joined_names(ck.names)));
  extra.push_back({"meta/p0_low", Tensor::vector(ck.p0.low)});
  extra.push_back({"meta/p0_high", Tensor::vector(ck.p0.high)});
  extra.push_back({"meta/langevin", Tensor::vector({ck.langevin.step_size, ck.langevin.temperature,
                                                    ck.langevin.clamp ? 1.0 : 0.0})});
  extra.push_back({"meta/sample", Tensor::vector({static_cast<double>(ck.sample.noise_sweeps),
                                                  static_cast<double>(ck.sample.buffer_sweeps),
                                                  static_cast<double>(ck.sample.inner_steps)})});
  save_checkpoint(path, ck.spec, ck.params, extra);
}

RunCheckpoint load_run_checkpoint(const std::filesystem::path& path) {
  const auto records = read_container(path);
  LoadedCheckpoint base = parse_checkpoint(records);
  RunCheckpoint ck{base.spec, std::move(base.params), {}, {}, {}, {}};
  std::string names = record_text(find_record(records, "meta/names"));
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = names.find('\n', start);
    ck.names.push_back(names.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  if (ck.names.size() != ck.spec.num_attributes) throw IoError("checkpoint names do not match attribute count");
  const Tensor& low = find_record(records, "meta/p0_low");
  const Tensor& high = find_record(records, "meta/p0_high");
  if (low.size() != ck.spec.input_dim || high.size() != ck.spec.input_dim) throw IoError("checkpoint p0 bounds malformed");
  ck.p0.low.assign(low.data().begin(), low.data().end());
  ck.p0.high.assign(high.data().begin(), high.data().end());
  const Tensor& lc = find_record(records, "meta/langevin");
  const Tensor& sc = find_record(records, "meta/sample");
  if (lc.size() != 3 || sc.size() != 3) throw IoError("checkpoint sampler metadata malformed");
  ck.langevin = LangevinConfig{lc[0], lc[1], lc[2] != 0.0, true};
  ck.sample = SampleSettings{static_cast<std::size_t>(sc[0]), static_cast<std::size_t>(sc[1]),
                             static_cast<std::size_t>(sc[2])};
  try {
    ck.langevin.validate();
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint sampler metadata invalid: ") + e.what());
  }
  if (ck.sample.inner_steps == 0) throw IoError("checkpoint sampler metadata invalid");
  return ck;
}

namespace {

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
  std::string cond;
  std::string method = "resample";
  std::string source;
  std::size_t n = 16;
  std::size_t filter_multiplier = 10;
  std::size_t threads = 1;
  std::string checkpoint;
  std::string buffer;
  std::string data;
  std::string split = "all";
  std::size_t bins = kDefaultEceBins;
};

RunConfig config_from(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  RunConfig rc = load_run_config(o.config);
  if (o.seed_given) {
    rc.seed = o.seed;
    rc.train.seed = o.seed;
  }
  if (!o.out.empty()) rc.output = o.out;
  if (rc.output.empty()) throw ConfigError("no output directory: pass --out or set 'output'");
  return rc;
}

std::filesystem::path require_out(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  return o.out;
}

int cmd_gen_data(const Options& o) {
  const RunConfig rc = config_from(o);
  const Dataset ds = materialize_dataset(rc.data, rc.seed);
  ensure_dir(rc.output);
  write_dataset(rc.output / "dataset.gjd", ds);
  write_dataset_csv(rc.output / "dataset.csv", ds);
  std::cout << "wrote " << ds.size() << " examples (" << ds.count(Split::train) << " train, "
            << ds.count(Split::validation) << " validation, " << ds.count(Split::heldout) << " held out)\n";
  return kExitOk;
}

PredictionSet predictions_for(const LogitModel& m, const Dataset& ds, const std::string& split) {
  Tensor x;
  std::vector<std::uint8_t> y;
  if (split == "all") {
    x = ds.x;
    y = ds.y;
  } else {
    Split s;
    if (split == "train") {
      s = Split::train;
    } else if (split == "validation") {
      s = Split::validation;
    } else if (split == "heldout") {
      s = Split::heldout;
    } else {
      throw ConfigError("--split must be all, train, validation or heldout");
    }
    if (ds.count(s) == 0) throw ConfigError("dataset has no examples in split '" + split + "'");
    x = ds.split_x(s);
    y = ds.split_y(s);
  }
  const Tensor p = label_conditional_batch(m, x);
  std::vector<double> conf(p.data().begin(), p.data().end());
  for (double& c : conf) c = std::clamp(c, 0.0, 1.0);
  return PredictionSet(x.extent(0), ds.num_attributes, std::move(conf), std::move(y), ds.names);
}

int cmd_train(const Options& o) {
  RunConfig rc = config_from(o);
  const Dataset ds = materialize_dataset(rc.data, rc.seed);
  rc.model.input_dim = ds.dim();
  rc.model.num_attributes = ds.num_attributes;
  rc.model.validate();
  rc.train.validate(ds.dim());
  if (rc.train.iterations > 0 && ds.count(Split::validation) == 0) {
    throw ConfigError("dataset too small for a validation split");
  }
  ensure_dir(rc.output);

  const TrainState st = train(ds, rc.model, rc.train);

  ParameterSet selected = st.model.params;
  for (std::size_t i = 0; i < selected.size(); ++i) selected.mutable_averaged()[i] = st.best.params[i];
  RunCheckpoint ck{rc.model, std::move(selected), ds.names, st.p0, rc.train.langevin, rc.sample};
  if (ck.p0.dim() == 0) ck.p0 = UniformBox::from_batch(ds.split_x(Split::train));
  save_run_checkpoint(rc.output / "checkpoint.gjem", ck);
  st.buffer.save(rc.output / "buffer.gjem");
  write_dataset(rc.output / "dataset.gjd", ds);
  write_text(rc.output / "train_log.csv", train_log_csv(st.log));

  const MlpLogitModel model(ck.spec, ck.params.averaged());
  const std::string split = ds.count(Split::validation) > 0 ? "validation" : "train";
  const MetricsReport report = evaluate_predictions(predictions_for(model, ds, split));
  write_report(rc.output / "report", report);

  std::cout << "iterations " << st.iteration << ", best validation accuracy "
            << (std::isfinite(st.best.accuracy) ? format_double(st.best.accuracy) : std::string("n/a")) << " at iteration "
            << st.best.iteration << "\n";
  std::cout << split << " accuracy " << format_double(report.micro.accuracy) << "\n";
  if (st.diverged) {
    std::cerr << "training diverged: " << st.diagnostic << "\n";
    return kExitDivergence;
  }
  return kExitOk;
}

std::string labels_bits(std::span<const std::uint8_t> y) {
  std::string s;
  for (std::uint8_t v : y) s += v ? '1' : '0';
  return s;
}

int cmd_sample(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const std::filesystem::path out = require_out(o);
  if (o.n == 0) throw ConfigError("--n must be positive");
  if (o.filter_multiplier == 0) throw ConfigError("--filter-multiplier must be positive");
  if (o.method != "resample" && o.method != "marginalize") throw ConfigError("--method must be resample or marginalize");
  if (!o.source.empty() && o.source != "noise" && o.source != "buffer") throw ConfigError("--source must be noise or buffer");

  const RunCheckpoint ck = load_run_checkpoint(o.checkpoint);
  const ConditioningSpec spec = ConditioningSpec::parse(o.cond, ck.names);
  const std::filesystem::path buffer_path =
      o.buffer.empty() ? std::filesystem::path(o.checkpoint).parent_path() / "buffer.gjem" : std::filesystem::path(o.buffer);
  const std::string source = !o.source.empty() ? o.source : (std::filesystem::exists(buffer_path) ? "buffer" : "noise");

  const MlpLogitModel model(ck.spec, ck.params.averaged());
  Rng rng(o.seed);
  const std::size_t candidates = o.n * o.filter_multiplier;
  ChainBatch init;
  std::size_t sweeps = ck.sample.noise_sweeps;
  if (source == "buffer") {
    const JointBuffer buffer = JointBuffer::load(buffer_path);
    const JointBuffer::Fetch fetch = buffer.conditional_fetch(spec, candidates, rng);
    std::cout << "buffer entries matching condition: " << fetch.matching_entries << " of " << buffer.size() << "\n";
    if (fetch.samples.empty()) {
      std::cerr << "buffer shortfall: no entry matches '" << spec.to_string(ck.names) << "'; use --source noise\n";
      return kExitConfig;
    }
    init = ChainBatch::from_samples(fetch.samples);
    sweeps = ck.sample.buffer_sweeps;
  } else {
    init = ChainBatch::from_x(ck.p0.sample(candidates, rng), ck.spec.num_attributes);
  }
  const GibbsConfig gc{sweeps, ck.sample.inner_steps};
  const ChainBatch chains = o.method == "resample"
                                ? semi_conditional_resample(model, spec, std::move(init), gc, ck.langevin, rng)
                                : semi_conditional_marginalize(model, spec, std::move(init), gc, ck.langevin, rng);
  if (chains.diverged_count() > 0) {
    std::cerr << chains.diverged_count() << " sampling chains diverged\n";
    return kExitDivergence;
  }
  const std::vector<JointSample> all = chains.samples();
  const FilterResult kept = likelihood_filter(model, all, spec, o.n);
  const double consistency = internal_consistency(model, kept.samples, spec);

  ensure_dir(out);
  std::ostringstream csv;
  csv << "chain,sweep,y,score";
  for (std::size_t d = 0; d < ck.spec.input_dim; ++d) csv << ",x_" << d;
  csv << '\n';
  for (std::size_t r = 0; r < kept.samples.size(); ++r) {
    const JointSample& s = kept.samples[r];
    csv << kept.indices[r] << ',' << chains.sweeps_done << ',' << labels_bits(s.y) << ',' << format_double(kept.scores[r]);
    for (double v : s.x.data()) csv << ',' << format_double(v);
    csv << '\n';
  }
  write_text(out / "samples.csv", csv.str());
  std::cout << "wrote " << kept.samples.size() << " samples (" << o.method << ", source " << source << ", " << candidates
            << " candidates)\n";
  std::cout << "internal_consistency " << format_double(consistency) << "\n";
  return kExitOk;
}

Dataset load_eval_data(const Options& o) {
  if (o.data.empty()) throw ConfigError("--data is required");
  const std::filesystem::path path = o.data;
  return path.extension() == ".csv" ? read_dataset_csv(path) : read_dataset(path);
}

int cmd_eval(const Options& o, bool curves_only) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const std::filesystem::path out = require_out(o);
  const RunCheckpoint ck = load_run_checkpoint(o.checkpoint);
  const Dataset ds = load_eval_data(o);
  if (ds.size() == 0) throw ConfigError("dataset " + o.data + " has no examples");
  if (ds.dim() != ck.spec.input_dim || ds.num_attributes != ck.spec.num_attributes) {
    throw ShapeError("dataset shape [" + std::to_string(ds.dim()) + " features, " + std::to_string(ds.num_attributes) +
                     " attributes] does not match the checkpoint");
  }
  const MlpLogitModel model(ck.spec, ck.params.averaged());
  const MetricsReport report = evaluate_predictions(predictions_for(model, ds, o.split), o.bins);
  ensure_dir(out);
  if (curves_only) {
    write_text(out / "micro_roc.csv", curve_csv(report.micro_curves.roc));
    write_text(out / "micro_pr.csv", curve_csv(report.micro_curves.pr));
    write_text(out / "micro_reliability.csv", reliability_csv(report.micro_curves.reliability));
    for (std::size_t k = 0; k < report.attributes.size(); ++k) {
      const std::string prefix = "attr_" + report.attributes[k].name;
      write_text(out / (prefix + "_roc.csv"), curve_csv(report.attribute_curves[k].roc));
      write_text(out / (prefix + "_pr.csv"), curve_csv(report.attribute_curves[k].pr));
      write_text(out / (prefix + "_reliability.csv"), reliability_csv(report.attribute_curves[k].reliability));
    }
  } else {
    write_report(out, report);
  }
  std::cout << "accuracy " << format_double(report.micro.accuracy) << ", micro F1 " << format_double(report.micro.f1)
            << ", micro ECE " << format_double(report.micro.ece) << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Joint energy-based models over continuous data and binary attributes"};
  app.require_subcommand(1);
  Options o;
  const auto add_common = [&o](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "RNG seed")->each([&o](const std::string&) { o.seed_given = true; });
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--threads", o.threads, "Worker threads (execution is single-threaded)")->check(CLI::PositiveNumber);
  };
  CLI::App* train_cmd = app.add_subcommand("train", "Train a joint model");
  train_cmd->add_option("--config", o.config, "JSON run config")->required();
  add_common(train_cmd);

  CLI::App* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic mixture dataset");
  gen_cmd->add_option("--config", o.config, "JSON run config")->required();
  add_common(gen_cmd);

  CLI::App* sample_cmd = app.add_subcommand("sample", "Draw semi-conditional samples");
  sample_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint written by train")->required();
  sample_cmd->add_option("--buffer", o.buffer, "Buffer snapshot (default: next to the checkpoint)");
  sample_cmd->add_option("--cond", o.cond, "Conditioning, e.g. \"a=1,b=0\"");
  sample_cmd->add_option("--method", o.method, "resample or marginalize");
  sample_cmd->add_option("--source", o.source, "noise or buffer (default: buffer when present)");
  sample_cmd->add_option("--n", o.n, "Samples to emit");
  sample_cmd->add_option("--filter-multiplier", o.filter_multiplier, "Candidates per emitted sample");
  add_common(sample_cmd);

  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  CLI::App* curves_cmd = app.add_subcommand("curves", "Emit ROC, PR and reliability curve data");
  for (CLI::App* sub : {eval_cmd, curves_cmd}) {
    sub->add_option("--checkpoint", o.checkpoint, "Checkpoint written by train")->required();
    sub->add_option("--data", o.data, "Dataset container or CSV")->required();
    sub->add_option("--split", o.split, "all, train, validation or heldout");
    sub->add_option("--bins", o.bins, "Reliability bins")->check(CLI::PositiveNumber);
    add_common(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  if (o.threads > 1) std::cerr << "note: running single-threaded; --threads " << o.threads << " has no effect\n";

  try {
    if (train_cmd->parsed()) return cmd_train(o);
    if (gen_cmd->parsed()) return cmd_gen_data(o);
    if (sample_cmd->parsed()) return cmd_sample(o);
    if (eval_cmd->parsed()) return cmd_eval(o, false);
    if (curves_cmd->parsed()) return cmd_eval(o, true);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace gjem
