#include "gjem/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "gjem/autodiff.hpp"
#include "gjem/container.hpp"
#include "gjem/errors.hpp"

namespace gjem {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double normal_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }
double normal_pdf(double z) { return std::exp(-0.5 * z * z - kLogSqrt2Pi); }

double squeezed(double unit) { return kSqueezeOffset + kSqueezeScale * unit; }

std::string default_name(std::size_t k) { return "a" + std::to_string(k); }

bool valid_name(std::string_view name) {
  if (name.empty()) return false;
  return std::none_of(name.begin(), name.end(), [](char c) { return c == ',' || c == '=' || c == '\n' || c == ';'; });
}

}  // namespace

void MixtureSpec::validate() const {
  if (dim == 0) throw ConfigError("mixture dimension must be positive");
  if (num_attributes == 0 || num_attributes > kMaxEnumerationAttributes) {
    throw ConfigError("mixture attribute count must lie in [1, 20]");
  }
  if (components.empty()) throw ConfigError("mixture needs at least one component");
  if (!names.empty()) {
    if (names.size() != num_attributes) throw ConfigError("mixture names do not match attribute count");
    std::set<std::string> seen;
    for (const auto& n : names) {
      if (!valid_name(n) || !seen.insert(n).second) throw ConfigError("invalid or duplicate attribute name '" + n + "'");
    }
  }
  double total = 0.0;
  std::set<AttributeVector> labels;
  for (const MixtureComponent& c : components) {
    try {
      validate_attributes(c.y, num_attributes);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("mixture component label: ") + e.what());
    }
    if (!labels.insert(c.y).second) throw ConfigError("mixture has two components with the same label vector");
    if (c.mean.size() != dim) throw ConfigError("mixture component mean does not match dimension");
    for (double m : c.mean) {
      if (!std::isfinite(m)) throw ConfigError("mixture component mean must be finite");
    }
    if (!(c.sigma > 0.0) || !std::isfinite(c.sigma)) throw ConfigError("mixture sigma must be positive");
    if (!(c.weight > 0.0)) throw ConfigError("mixture weights must be positive");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("mixture weights must sum to 1");
}

std::vector<std::string> MixtureSpec::attribute_names() const {
  if (!names.empty()) return names;
  std::vector<std::string> out;
  for (std::size_t k = 0; k < num_attributes; ++k) out.push_back(default_name(k));
  return out;
}

std::ptrdiff_t MixtureSpec::find(std::span<const std::uint8_t> y) const {
  for (std::size_t c = 0; c < components.size(); ++c) {
    if (std::equal(y.begin(), y.end(), components[c].y.begin(), components[c].y.end())) {
      return static_cast<std::ptrdiff_t>(c);
    }
  }
  return -1;
}

MixtureSpec MixtureSpec::four_corners(double lo, double hi, double sigma) {
  MixtureSpec spec;
  spec.dim = 2;
  spec.num_attributes = 2;
  for (std::uint8_t a : {0, 1}) {
    for (std::uint8_t b : {0, 1}) {
      spec.components.push_back({{a, b}, {a ? hi : lo, b ? hi : lo}, sigma, 0.25});
    }
  }
  return spec;
}

JointSample Dataset::sample(std::size_t i) const {
  const std::size_t d = dim();
  Tensor xi(Shape{d}, std::vector<double>(x.raw() + i * d, x.raw() + (i + 1) * d));
  const auto yi = labels(i);
  return {std::move(xi), AttributeVector(yi.begin(), yi.end())};
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == s) out.push_back(i);
  }
  return out;
}

std::size_t Dataset::count(Split s) const { return static_cast<std::size_t>(std::count(split.begin(), split.end(), s)); }

Tensor Dataset::split_x(Split s) const {
  const auto idx = indices(s);
  if (idx.empty()) throw ShapeError("dataset split is empty");
  const std::size_t d = dim();
  Tensor out(Shape{idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r) std::copy_n(x.raw() + idx[r] * d, d, out.raw() + r * d);
  return out;
}

std::vector<std::uint8_t> Dataset::split_y(Split s) const {
  std::vector<std::uint8_t> out;
  for (std::size_t i : indices(s)) {
    const auto yi = labels(i);
    out.insert(out.end(), yi.begin(), yi.end());
  }
  return out;
}

void Dataset::validate() const {
  if (x.rank() != 2) throw ShapeError("dataset features must be [N, D]");
  const std::size_t n = x.extent(0);
  if (split.size() != n) throw ShapeError("dataset split does not cover every example");
  if (num_attributes == 0 || y.size() != n * num_attributes) throw ShapeError("dataset labels do not match [N, K]");
  if (names.size() != num_attributes) throw ShapeError("dataset names do not match attribute count");
  for (std::uint8_t v : y) {
    if (v > 1) throw ShapeError("dataset labels must be binary");
  }
  for (Split s : split) {
    if (static_cast<unsigned>(s) > 2) throw ShapeError("unknown split tag");
  }
  for (const auto& combo : heldout_combos) combo.validate(num_attributes);
  for (std::size_t i = 0; i < n; ++i) {
    if (split[i] != Split::train) continue;
    for (const auto& combo : heldout_combos) {
      if (combo.matches(labels(i))) throw ShapeError("held-out combination present in the training split");
    }
  }
}

Dataset generate_mixture(const MixtureSpec& spec, std::size_t n, Rng& rng) {
  spec.validate();
  if (n == 0) throw ConfigError("dataset size must be positive");
  std::vector<double> weights;
  for (const auto& c : spec.components) weights.push_back(c.weight);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());

  Dataset ds;
  ds.x = Tensor(Shape{n, spec.dim});
  ds.num_attributes = spec.num_attributes;
  ds.names = spec.attribute_names();
  ds.split.assign(n, Split::train);
  ds.y.reserve(n * spec.num_attributes);
  for (std::size_t i = 0; i < n; ++i) {
    const MixtureComponent& c = spec.components[pick(rng)];
    ds.y.insert(ds.y.end(), c.y.begin(), c.y.end());
    for (std::size_t d = 0; d < spec.dim; ++d) {
      const double raw = c.mean[d] + c.sigma * standard_normal(rng);
      ds.x[i * spec.dim + d] = std::clamp(squeezed(raw), 0.0, 1.0);
    }
  }
  return ds;
}

std::size_t default_validation_size(std::size_t n) { return std::min<std::size_t>(5000, n / 10); }

void assign_validation_split(Dataset& ds, Rng& rng) {
  std::vector<std::size_t> train = ds.indices(Split::train);
  const std::size_t want = std::min(default_validation_size(ds.size()), train.size());
  // Partial Fisher-Yates: the first `want` positions become validation.
  for (std::size_t i = 0; i < want; ++i) {
    const std::size_t j = i + uniform_index(rng, train.size() - i);
    std::swap(train[i], train[j]);
    ds.split[train[i]] = Split::validation;
  }
}

Dataset split_holdout(const Dataset& ds, std::span<const ConditioningSpec> combos) {
  for (const auto& combo : combos) {
    combo.validate(ds.num_attributes);
    if (combo.empty()) throw ConfigError("held-out combination must pin at least one attribute");
  }
  Dataset out = ds;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out.split[i] == Split::heldout) continue;
    for (const auto& combo : combos) {
      if (combo.matches(out.labels(i))) {
        out.split[i] = Split::heldout;
        break;
      }
    }
  }
  for (const auto& combo : combos) {
    if (std::find(out.heldout_combos.begin(), out.heldout_combos.end(), combo) == out.heldout_combos.end()) {
      out.heldout_combos.push_back(combo);
    }
  }
  if (out.count(Split::train) == 0) throw ConfigError("held-out combinations remove every training example");
  return out;
}

Dataset filter_attributes_by_frequency(const Dataset& ds, double min_frequency) {
  if (!(min_frequency >= 0.0 && min_frequency <= 1.0)) throw ConfigError("frequency threshold must lie in [0, 1]");
  if (!ds.heldout_combos.empty()) throw ConfigError("filter attributes before declaring held-out combinations");
  const std::size_t n = ds.size(), k_count = ds.num_attributes;
  std::vector<std::size_t> keep;
  for (std::size_t k = 0; k < k_count; ++k) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) pos += ds.y[i * k_count + k];
    if (static_cast<double>(pos) >= min_frequency * static_cast<double>(n)) keep.push_back(k);
  }
  if (keep.empty()) throw ConfigError("frequency filter removes every attribute");
  Dataset out;
  out.x = ds.x;
  out.split = ds.split;
  out.num_attributes = keep.size();
  for (std::size_t k : keep) out.names.push_back(ds.names[k]);
  out.y.reserve(n * keep.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k : keep) out.y.push_back(ds.y[i * k_count + k]);
  }
  return out;
}

MixtureOracle::MixtureOracle(MixtureSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

double MixtureOracle::prior(std::span<const std::uint8_t> y) const {
  validate_attributes(y, spec_.num_attributes);
  const std::ptrdiff_t c = spec_.find(y);
  return c < 0 ? 0.0 : spec_.components[static_cast<std::size_t>(c)].weight;
}

std::vector<double> MixtureOracle::attribute_prior() const { return attribute_given(ConditioningSpec{}); }

double MixtureOracle::component_log_likelihood(std::size_t c, std::span<const double> x) const {
  const MixtureComponent& comp = spec_.components[c];
  const double s = kSqueezeScale * comp.sigma;
  double ll = 0.0;
  for (std::size_t d = 0; d < spec_.dim; ++d) {
    const double m = squeezed(comp.mean[d]);
    if (x[d] <= 0.0) {
      ll += std::log(normal_cdf((0.0 - m) / s));
    } else if (x[d] >= 1.0) {
      ll += std::log(normal_cdf((m - 1.0) / s));
    } else {
      const double z = (x[d] - m) / s;
      ll += -0.5 * z * z - kLogSqrt2Pi - std::log(s);
    }
  }
  return ll;
}

std::vector<double> MixtureOracle::component_posterior(std::span<const double> x) const {
  if (x.size() != spec_.dim) throw ShapeError("query does not match mixture dimension");
  for (double v : x) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("query must lie in [0, 1]^D");
  }
  const std::size_t n = spec_.components.size();
  std::vector<double> logp(n);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < n; ++c) {
    logp[c] = std::log(spec_.components[c].weight) + component_log_likelihood(c, x);
    top = std::max(top, logp[c]);
  }
  double total = 0.0;
  for (double& v : logp) {
    v = std::exp(v - top);
    total += v;
  }
  for (double& v : logp) v /= total;
  return logp;
}

std::vector<double> MixtureOracle::attribute_posterior(std::span<const double> x) const {
  const auto post = component_posterior(x);
  std::vector<double> out(spec_.num_attributes, 0.0);
  for (std::size_t c = 0; c < post.size(); ++c) {
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += spec_.components[c].y[k] * post[c];
  }
  return out;
}

std::vector<double> MixtureOracle::matching_weights(const ConditioningSpec& spec) const {
  spec.validate(spec_.num_attributes);
  std::vector<double> w;
  double total = 0.0;
  for (const auto& c : spec_.components) {
    w.push_back(spec.matches(c.y) ? c.weight : 0.0);
    total += w.back();
  }
  if (total == 0.0) throw std::invalid_argument("conditioning event has zero probability under the mixture");
  for (double& v : w) v /= total;
  return w;
}

std::vector<double> MixtureOracle::attribute_given(const ConditioningSpec& spec) const {
  const auto w = matching_weights(spec);
  std::vector<double> out(spec_.num_attributes, 0.0);
  for (std::size_t c = 0; c < w.size(); ++c) {
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += spec_.components[c].y[k] * w[c];
  }
  return out;
}

std::vector<double> MixtureOracle::conditional_mean(const ConditioningSpec& spec) const {
  const auto w = matching_weights(spec);
  std::vector<double> out(spec_.dim, 0.0);
  for (std::size_t c = 0; c < w.size(); ++c) {
    if (w[c] == 0.0) continue;
    const MixtureComponent& comp = spec_.components[c];
    const double s = kSqueezeScale * comp.sigma;
    for (std::size_t d = 0; d < spec_.dim; ++d) {
      const double m = squeezed(comp.mean[d]);
      const double a = (0.0 - m) / s, b = (1.0 - m) / s;
      // E[clamp(X, 0, 1)] = P(X > 1) + int_0^1 x pdf(x) dx
      const double interior = m * (normal_cdf(b) - normal_cdf(a)) - s * (normal_pdf(b) - normal_pdf(a));
      out[d] += w[c] * (normal_cdf(-b) + interior);
    }
  }
  return out;
}

std::vector<double> MixtureOracle::conditional_mean_quadrature(const ConditioningSpec& spec, double tolerance) const {
  using Quad = boost::math::quadrature::gauss_kronrod<double, 61>;
  const auto w = matching_weights(spec);
  std::vector<double> out(spec_.dim, 0.0);
  for (std::size_t c = 0; c < w.size(); ++c) {
    if (w[c] == 0.0) continue;
    const MixtureComponent& comp = spec_.components[c];
    const double s = kSqueezeScale * comp.sigma;
    for (std::size_t d = 0; d < spec_.dim; ++d) {
      const double m = squeezed(comp.mean[d]);
      const auto pdf = [m, s](double t) { return normal_pdf((t - m) / s) / s; };
      double err_interior = 0.0, err_tail = 0.0;
      const double interior = Quad::integrate([&](double t) { return t * pdf(t); }, 0.0, 1.0, 15, 1e-14, &err_interior);
      const double tail =
          Quad::integrate(pdf, 1.0, std::numeric_limits<double>::infinity(), 15, 1e-14, &err_tail);
      if (err_interior + err_tail > tolerance) throw std::runtime_error("quadrature tolerance not reached");
      out[d] += w[c] * (interior + tail);
    }
  }
  return out;
}

double dequantize_value(double x_int, double u, double noise) {
  return std::clamp((x_int + u) / 256.0 + noise, 0.0, 1.0);
}

Tensor dequantize(const Tensor& x_int, Rng& rng, double noise_sigma) {
  if (!(noise_sigma >= 0.0)) throw ConfigError("dequantization noise must be non-negative");
  Tensor out = x_int;
  for (double& v : out.data()) {
    if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v)) {
      throw std::invalid_argument("dequantize expects integers in [0, 255]");
    }
    const double u = uniform01(rng);
    const double e = noise_sigma * standard_normal(rng);
    v = dequantize_value(v, u, e);
  }
  return out;
}

namespace {

std::string join_names(std::span<const std::string> names) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) out += '\n';
    out += names[i];
  }
  return out;
}

std::vector<std::string> split_text(std::string_view text, char sep) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    out.emplace_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  ds.validate();
  const std::size_t n = ds.size();
  std::vector<Record> records;
  records.push_back({"dataset/x", ds.x});
  records.push_back({"dataset/y", Tensor(Shape{n, ds.num_attributes}, std::vector<double>(ds.y.begin(), ds.y.end()))});
  std::vector<double> split;
  for (Split s : ds.split) split.push_back(static_cast<double>(s));
  records.push_back({"dataset/split", Tensor::vector(std::move(split))});
  records.push_back(text_record("dataset/names", join_names(ds.names)));
  std::vector<std::string> combos;
  for (const auto& c : ds.heldout_combos) combos.push_back(c.to_string(ds.names));
  records.push_back(text_record("dataset/heldout", [&] {
    std::string s;
    for (std::size_t i = 0; i < combos.size(); ++i) s += (i ? ";" : "") + combos[i];
    return s;
  }()));
  write_container(path, records);
}

Dataset read_dataset(const std::filesystem::path& path) {
  const auto records = read_container(path);
  Dataset ds;
  ds.x = find_record(records, "dataset/x");
  const Tensor& y = find_record(records, "dataset/y");
  const Tensor& split = find_record(records, "dataset/split");
  if (ds.x.rank() != 2 || y.rank() != 2 || y.extent(0) != ds.x.extent(0) || split.size() != ds.x.extent(0)) {
    throw IoError("dataset blocks have inconsistent shapes");
  }
  ds.num_attributes = y.extent(1);
  for (double v : y.data()) {
    if (v != 0.0 && v != 1.0) throw IoError("dataset labels must be binary");
    ds.y.push_back(static_cast<std::uint8_t>(v));
  }
  for (double v : split.data()) {
    if (v != 0.0 && v != 1.0 && v != 2.0) throw IoError("unknown split tag in dataset");
    ds.split.push_back(static_cast<Split>(static_cast<int>(v)));
  }
  ds.names = split_text(record_text(find_record(records, "dataset/names")), '\n');
  try {
    for (const auto& expr : split_text(record_text(find_record(records, "dataset/heldout")), ';')) {
      ds.heldout_combos.push_back(ConditioningSpec::parse(expr, ds.names));
    }
    ds.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return ds;
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& ds) {
  ds.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const std::size_t d = ds.dim();
  for (std::size_t k = 0; k < ds.num_attributes; ++k) out << (k ? "," : "") << "y_" << ds.names[k];
  for (std::size_t j = 0; j < d; ++j) out << ",x_" << j;
  out << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto yi = ds.labels(i);
    for (std::size_t k = 0; k < yi.size(); ++k) out << (k ? "," : "") << static_cast<int>(yi[k]);
    for (std::size_t j = 0; j < d; ++j) out << ',' << format_double(ds.x[i * d + j]);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Dataset parse_dataset_csv(std::string_view text) {
  std::vector<std::string> lines;
  for (auto& line : split_text(text, '\n')) {
    if (!trim(line).empty()) lines.push_back(std::move(line));
  }
  if (lines.empty()) throw IoError("CSV has no header");
  if (lines.size() == 1) throw IoError("CSV has no data rows");

  enum class Kind { binary, categorical, feature };
  struct Column {
    Kind kind;
    std::string name;
  };
  std::vector<Column> columns;
  std::size_t features = 0;
  for (const auto& raw : split_text(lines[0], ',')) {
    const std::string_view h = trim(raw);
    if (h.size() > 2 && h.substr(0, 2) == "y_") {
      if (features) throw IoError("label columns must precede feature columns");
      columns.push_back({Kind::binary, std::string(h.substr(2))});
    } else if (h.size() > 2 && h.substr(0, 2) == "c_") {
      if (features) throw IoError("label columns must precede feature columns");
      columns.push_back({Kind::categorical, std::string(h.substr(2))});
    } else if (h == "x_" + std::to_string(features)) {
      columns.push_back({Kind::feature, std::string(h)});
      ++features;
    } else {
      throw IoError("malformed CSV header column '" + std::string(h) + "'");
    }
  }
  if (features == 0) throw IoError("CSV header has no feature columns");

  std::vector<std::vector<std::string>> cells;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    auto row = split_text(lines[r], ',');
    if (row.size() != columns.size()) {
      throw IoError("CSV row " + std::to_string(r) + " has " + std::to_string(row.size()) + " cells, expected " +
                    std::to_string(columns.size()));
    }
    for (auto& c : row) {
      c = std::string(trim(c));
      if (c.empty()) throw IoError("CSV row " + std::to_string(r) + " has a missing cell");
    }
    cells.push_back(std::move(row));
  }

  // Categorical levels, sorted for a stable attribute order.
  std::map<std::size_t, std::vector<std::string>> levels;
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j].kind != Kind::categorical) continue;
    std::set<std::string> seen;
    for (const auto& row : cells) seen.insert(row[j]);
    levels[j].assign(seen.begin(), seen.end());
  }

  Dataset ds;
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j].kind == Kind::binary) ds.names.push_back(columns[j].name);
    if (columns[j].kind == Kind::categorical) {
      for (const auto& v : levels[j]) ds.names.push_back(columns[j].name + "_" + v);
    }
  }
  for (const auto& n : ds.names) {
    if (n.empty() || !valid_name(n) || std::count(ds.names.begin(), ds.names.end(), n) != 1) {
      throw IoError("invalid or duplicate attribute name '" + n + "'");
    }
  }
  if (ds.names.empty()) throw IoError("CSV header has no attribute columns");
  ds.num_attributes = ds.names.size();
  ds.x = Tensor(Shape{cells.size(), features});
  ds.split.assign(cells.size(), Split::train);
  for (std::size_t r = 0; r < cells.size(); ++r) {
    std::size_t f = 0;
    for (std::size_t j = 0; j < columns.size(); ++j) {
      const std::string& cell = cells[r][j];
      switch (columns[j].kind) {
        case Kind::binary:
          if (cell != "0" && cell != "1") throw IoError("label cell '" + cell + "' is not 0 or 1");
          ds.y.push_back(cell == "1" ? 1 : 0);
          break;
        case Kind::categorical:
          for (const auto& v : levels[j]) ds.y.push_back(v == cell ? 1 : 0);
          break;
        case Kind::feature: {
          double v = 0.0;
          const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
          if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
            throw IoError("feature cell '" + cell + "' is not a number");
          }
          ds.x[r * features + f++] = v;
          break;
        }
      }
    }
  }
  return ds;
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_dataset_csv(buf.str());
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace gjem
