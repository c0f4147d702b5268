#include "gjem/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "gjem/errors.hpp"

namespace gjem {

PredictionSet::PredictionSet(std::size_t n, std::size_t k, std::vector<double> conf, std::vector<std::uint8_t> truth,
                             std::vector<std::string> attribute_names)
    : num_examples(n), num_attributes(k), confidence(std::move(conf)), labels(std::move(truth)),
      names(std::move(attribute_names)) {
  if (names.empty()) {
    for (std::size_t j = 0; j < k; ++j) names.push_back("a" + std::to_string(j));
  }
  validate();
}

void PredictionSet::validate() const {
  if (num_examples == 0 || num_attributes == 0) throw std::invalid_argument("prediction set is empty");
  if (confidence.size() != num_examples * num_attributes || labels.size() != confidence.size()) {
    throw ShapeError("confidences and labels must both be [N, K]");
  }
  if (names.size() != num_attributes) throw ShapeError("one name per attribute required");
  for (double c : confidence) {
    if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("confidences must lie in [0, 1]");
  }
  for (std::uint8_t l : labels) {
    if (l > 1) throw std::invalid_argument("labels must be 0 or 1");
  }
}

PredictionSet PredictionSet::attribute(std::size_t k) const {
  if (k >= num_attributes) throw std::out_of_range("attribute index out of range");
  std::vector<double> c(num_examples);
  std::vector<std::uint8_t> l(num_examples);
  for (std::size_t i = 0; i < num_examples; ++i) {
    c[i] = conf(i, k);
    l[i] = label(i, k);
  }
  return PredictionSet(num_examples, 1, std::move(c), std::move(l), {names[k]});
}

PredictionSet PredictionSet::pooled() const {
  return PredictionSet(num_examples * num_attributes, 1, confidence, labels, {"micro"});
}

namespace {

void check_pair(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.empty()) throw std::invalid_argument("metric of an empty set");
  if (scores.size() != labels.size()) throw ShapeError("scores and labels differ in length");
}

std::size_t positives(std::span<const std::uint8_t> labels) {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
}

bool degenerate(std::span<const std::uint8_t> labels) {
  const std::size_t p = positives(labels);
  return p == 0 || p == labels.size();
}

// Indices sorted by descending score; ties keep input order.
std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

// Cumulative (TP, FP) after each distinct threshold, highest first.
struct Step {
  double threshold;
  std::size_t tp, fp;
};

std::vector<Step> threshold_steps(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  const auto order = descending(scores);
  std::vector<Step> steps;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == t; ++i) (labels[order[i]] ? tp : fp) += 1;
    steps.push_back({t, tp, fp});
  }
  return steps;
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double confidence_of(double p) { return std::max(p, 1.0 - p); }
bool predicted(double p) { return p >= kDecisionThreshold; }

double mean(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

template <typename Fn>
double macro_over(const PredictionSet& p, bool skip_degenerate, Fn&& fn) {
  std::vector<double> values;
  for (std::size_t k = 0; k < p.num_attributes; ++k) {
    const PredictionSet col = p.attribute(k);
    if (skip_degenerate && degenerate(col.labels)) continue;
    values.push_back(fn(col.confidence, col.labels));
  }
  if (values.empty()) throw std::invalid_argument("no attribute has both positive and negative labels");
  return mean(values);
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

double accuracy(const PredictionSet& p, double threshold) {
  p.validate();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < p.confidence.size(); ++i) {
    correct += static_cast<std::size_t>((p.confidence[i] >= threshold) == (p.labels[i] == 1));
  }
  return ratio(correct, p.confidence.size());
}

double binary_f1(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_pair(scores, labels);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool hat = predicted(scores[i]);
    tp += hat && labels[i];
    fp += hat && !labels[i];
    fn += !hat && labels[i];
  }
  return ratio(2 * tp, 2 * tp + fp + fn);
}

double binary_auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_pair(scores, labels);
  const std::size_t pos = positives(labels), neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw std::invalid_argument("AUROC needs both positive and negative labels");
  double area = 0.0;  // in units of TP * FP
  std::size_t tp = 0, fp = 0;
  for (const Step& s : threshold_steps(scores, labels)) {
    area += static_cast<double>(s.fp - fp) * static_cast<double>(s.tp + tp) / 2.0;
    tp = s.tp;
    fp = s.fp;
  }
  return area / (static_cast<double>(pos) * static_cast<double>(neg));
}

double binary_average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_pair(scores, labels);
  const std::size_t pos = positives(labels);
  if (pos == 0) throw std::invalid_argument("average precision needs at least one positive label");
  // Weighted by positive counts and divided once, so a perfect ranking gives exactly 1.
  double weighted = 0.0;
  std::size_t tp = 0;
  for (const Step& s : threshold_steps(scores, labels)) {
    weighted += static_cast<double>(s.tp - tp) * ratio(s.tp, s.tp + s.fp);
    tp = s.tp;
  }
  return weighted / static_cast<double>(pos);
}

namespace {

std::vector<ReliabilityBin> reliability(std::span<const double> scores, std::span<const std::uint8_t> labels,
                                        std::size_t bins) {
  if (bins < 1) throw std::invalid_argument("ECE needs at least one bin");
  std::vector<double> conf_sum(bins, 0.0), correct(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double c = confidence_of(scores[i]);
    const std::size_t b = std::min(static_cast<std::size_t>(c * static_cast<double>(bins)), bins - 1);
    conf_sum[b] += c;
    correct[b] += predicted(scores[i]) == (labels[i] == 1) ? 1.0 : 0.0;
    ++count[b];
  }
  std::vector<ReliabilityBin> out;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t b = 0; b < bins; ++b) {
    const double n = static_cast<double>(count[b]);
    out.push_back({static_cast<double>(b) / static_cast<double>(bins), static_cast<double>(b + 1) / static_cast<double>(bins),
                   count[b] ? conf_sum[b] / n : nan, count[b] ? correct[b] / n : nan, count[b]});
  }
  return out;
}

}  // namespace

double binary_ece(std::span<const double> scores, std::span<const std::uint8_t> labels, std::size_t bins) {
  check_pair(scores, labels);
  double total = 0.0;
  for (const ReliabilityBin& b : reliability(scores, labels, bins)) {
    if (b.count) total += static_cast<double>(b.count) * std::abs(b.accuracy - b.mean_confidence);
  }
  return total / static_cast<double>(scores.size());
}

double f1(const PredictionSet& p, Averaging mode) {
  p.validate();
  if (mode == Averaging::micro) return binary_f1(p.confidence, p.labels);
  return macro_over(p, false, binary_f1);
}

double auroc(const PredictionSet& p, Averaging mode) {
  p.validate();
  if (mode == Averaging::micro) return binary_auroc(p.confidence, p.labels);
  return macro_over(p, true, binary_auroc);
}

double average_precision(const PredictionSet& p, Averaging mode) {
  p.validate();
  if (mode == Averaging::micro) return binary_average_precision(p.confidence, p.labels);
  return macro_over(p, true, binary_average_precision);
}

double ece(const PredictionSet& p, Averaging mode, std::size_t bins) {
  p.validate();
  if (bins < 1) throw std::invalid_argument("ECE needs at least one bin");
  const auto fn = [bins](std::span<const double> s, std::span<const std::uint8_t> l) { return binary_ece(s, l, bins); };
  if (mode == Averaging::micro) return fn(p.confidence, p.labels);
  return macro_over(p, false, fn);
}

Curves binary_curves(std::span<const double> scores, std::span<const std::uint8_t> labels, std::size_t bins) {
  check_pair(scores, labels);
  const std::size_t pos = positives(labels), neg = labels.size() - pos;
  Curves c;
  c.roc.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  for (const Step& s : threshold_steps(scores, labels)) {
    c.roc.push_back({s.threshold, ratio(s.fp, neg), ratio(s.tp, pos)});
    c.pr.push_back({s.threshold, ratio(s.tp, pos), ratio(s.tp, s.tp + s.fp)});
  }
  c.reliability = reliability(scores, labels, bins);
  return c;
}

Curves emit_curves(const PredictionSet& p, std::size_t bins) {
  p.validate();
  return binary_curves(p.confidence, p.labels, bins);
}

MetricsReport evaluate_predictions(const PredictionSet& p, std::size_t bins) {
  p.validate();
  MetricsReport r;
  r.num_examples = p.num_examples;
  r.ece_bins = bins;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> acc, f, e, roc, ap;
  for (std::size_t k = 0; k < p.num_attributes; ++k) {
    const PredictionSet col = p.attribute(k);
    AttributeScores s{p.names[k], accuracy(col), binary_f1(col.confidence, col.labels),
                      binary_ece(col.confidence, col.labels, bins), std::nullopt, std::nullopt};
    if (!degenerate(col.labels)) {
      s.auroc = binary_auroc(col.confidence, col.labels);
      s.average_precision = binary_average_precision(col.confidence, col.labels);
      roc.push_back(*s.auroc);
      ap.push_back(*s.average_precision);
    }
    acc.push_back(s.accuracy);
    f.push_back(s.f1);
    e.push_back(s.ece);
    r.attributes.push_back(std::move(s));
    r.attribute_curves.push_back(binary_curves(col.confidence, col.labels, bins));
  }
  const bool pooled_degenerate = degenerate(p.labels);
  r.micro = {accuracy(p), binary_f1(p.confidence, p.labels),
             pooled_degenerate ? nan : binary_auroc(p.confidence, p.labels),
             positives(p.labels) == 0 ? nan : binary_average_precision(p.confidence, p.labels),
             binary_ece(p.confidence, p.labels, bins)};
  r.macro = {mean(acc), mean(f), roc.empty() ? nan : mean(roc), ap.empty() ? nan : mean(ap), mean(e)};
  r.micro_curves = binary_curves(p.confidence, p.labels, bins);
  return r;
}

std::string metrics_csv(const MetricsReport& r) {
  std::ostringstream out;
  out << "attribute,metric,value\n";
  const auto row = [&](const std::string& who, const char* metric, double v) {
    out << who << ',' << metric << ',' << num(v) << '\n';
  };
  for (const auto& a : r.attributes) {
    row(a.name, "accuracy", a.accuracy);
    row(a.name, "f1", a.f1);
    if (a.auroc) row(a.name, "auroc", *a.auroc);
    if (a.average_precision) row(a.name, "average_precision", *a.average_precision);
    row(a.name, "ece", a.ece);
  }
  for (const auto& [who, agg] : {std::pair{std::string("micro"), r.micro}, std::pair{std::string("macro"), r.macro}}) {
    row(who, "accuracy", agg.accuracy);
    row(who, "f1", agg.f1);
    row(who, "auroc", agg.auroc);
    row(who, "average_precision", agg.average_precision);
    row(who, "ece", agg.ece);
  }
  return out.str();
}

std::string curve_csv(std::span<const CurvePoint> points) {
  std::ostringstream out;
  out << "threshold,x,y\n";
  for (const auto& p : points) out << num(p.threshold) << ',' << num(p.x) << ',' << num(p.y) << '\n';
  return out.str();
}

std::string reliability_csv(std::span<const ReliabilityBin> bins) {
  std::ostringstream out;
  out << "lower,upper,mean_confidence,accuracy,count\n";
  for (const auto& b : bins) {
    out << num(b.lower) << ',' << num(b.upper) << ',' << num(b.mean_confidence) << ',' << num(b.accuracy) << ','
        << b.count << '\n';
  }
  return out.str();
}

namespace {

nlohmann::json json_number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json aggregate_json(const Aggregate& a) {
  return {{"accuracy", json_number(a.accuracy)},
          {"f1", json_number(a.f1)},
          {"auroc", json_number(a.auroc)},
          {"average_precision", json_number(a.average_precision)},
          {"ece", json_number(a.ece)}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

std::string metrics_json(const MetricsReport& r) {
  nlohmann::json attrs = nlohmann::json::array();
  for (const auto& a : r.attributes) {
    attrs.push_back({{"name", a.name},
                     {"accuracy", json_number(a.accuracy)},
                     {"f1", json_number(a.f1)},
                     {"auroc", a.auroc ? json_number(*a.auroc) : nlohmann::json(nullptr)},
                     {"average_precision", a.average_precision ? json_number(*a.average_precision) : nlohmann::json(nullptr)},
                     {"ece", json_number(a.ece)}});
  }
  nlohmann::json j = {{"num_examples", r.num_examples},
                      {"ece_bins", r.ece_bins},
                      {"attributes", attrs},
                      {"micro", aggregate_json(r.micro)},
                      {"macro", aggregate_json(r.macro)}};
  return j.dump(2) + "\n";
}

void write_report(const std::filesystem::path& dir, const MetricsReport& r) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_text(dir / "metrics.csv", metrics_csv(r));
  write_text(dir / "metrics.json", metrics_json(r));
  const auto write_curves = [&](const std::string& prefix, const Curves& c) {
    write_text(dir / (prefix + "_roc.csv"), curve_csv(c.roc));
    write_text(dir / (prefix + "_pr.csv"), curve_csv(c.pr));
    write_text(dir / (prefix + "_reliability.csv"), reliability_csv(c.reliability));
  };
  write_curves("micro", r.micro_curves);
  for (std::size_t k = 0; k < r.attributes.size(); ++k) write_curves("attr_" + r.attributes[k].name, r.attribute_curves[k]);
}

}  // namespace gjem
