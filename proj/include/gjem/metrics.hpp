#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gjem/tensor.hpp"

namespace gjem {

// Per-example, per-attribute confidences p(y_k = 1 | x) with binary truth.
struct PredictionSet {
  std::size_t num_examples = 0;
  std::size_t num_attributes = 0;
  std::vector<double> confidence;  // [N * K], row-major by example
  std::vector<std::uint8_t> labels;
  std::vector<std::string> names;

  PredictionSet() = default;
  PredictionSet(std::size_t n, std::size_t k, std::vector<double> conf, std::vector<std::uint8_t> truth,
                std::vector<std::string> attribute_names = {});

  // Throws ShapeError or std::invalid_argument.
  void validate() const;
  double conf(std::size_t i, std::size_t k) const { return confidence[i * num_attributes + k]; }
  std::uint8_t label(std::size_t i, std::size_t k) const { return labels[i * num_attributes + k]; }
  // Column k as a single-attribute set.
  PredictionSet attribute(std::size_t k) const;
  // All cells pooled into one attribute.
  PredictionSet pooled() const;
};

enum class Averaging { micro, macro };

inline constexpr double kDecisionThreshold = 0.5;
inline constexpr std::size_t kDefaultEceBins = 20;

double accuracy(const PredictionSet& p, double threshold = kDecisionThreshold);
double f1(const PredictionSet& p, Averaging mode);
// Degenerate attributes (no positives or no negatives) are skipped under
// macro averaging; std::invalid_argument when nothing is scorable.
double auroc(const PredictionSet& p, Averaging mode);
double average_precision(const PredictionSet& p, Averaging mode);
double ece(const PredictionSet& p, Averaging mode, std::size_t bins = kDefaultEceBins);

// Single-attribute primitives over parallel score/label arrays.
double binary_f1(std::span<const double> scores, std::span<const std::uint8_t> labels);
double binary_auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);
double binary_average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);
double binary_ece(std::span<const double> scores, std::span<const std::uint8_t> labels, std::size_t bins);

struct CurvePoint {
  double threshold;
  double x;
  double y;
};

struct ReliabilityBin {
  double lower, upper;
  double mean_confidence;  // NaN when empty
  double accuracy;         // NaN when empty
  std::size_t count;
};

struct Curves {
  // (FPR, TPR) from (0, 0) at threshold +inf through every distinct score.
  std::vector<CurvePoint> roc;
  // (recall, precision) at every distinct score; no recall-0 endpoint.
  std::vector<CurvePoint> pr;
  std::vector<ReliabilityBin> reliability;
};

Curves binary_curves(std::span<const double> scores, std::span<const std::uint8_t> labels,
                     std::size_t bins = kDefaultEceBins);
// Curves of the pooled (micro) cell set.
Curves emit_curves(const PredictionSet& p, std::size_t bins = kDefaultEceBins);

struct AttributeScores {
  std::string name;
  double accuracy, f1, ece;
  std::optional<double> auroc, average_precision;  // absent when degenerate
};

struct Aggregate {
  double accuracy, f1, auroc, average_precision, ece;
};

struct MetricsReport {
  std::vector<AttributeScores> attributes;
  Aggregate micro{}, macro{};
  Curves micro_curves;
  std::vector<Curves> attribute_curves;
  std::size_t num_examples = 0;
  std::size_t ece_bins = kDefaultEceBins;
};

MetricsReport evaluate_predictions(const PredictionSet& p, std::size_t bins = kDefaultEceBins);

// CSV (attribute,metric,value), one row per attribute score plus "micro" and
// "macro" rows.
std::string metrics_csv(const MetricsReport& r);
// CSV (threshold,x,y).
std::string curve_csv(std::span<const CurvePoint> points);
// CSV (lower,upper,mean_confidence,accuracy,count).
std::string reliability_csv(std::span<const ReliabilityBin> bins);
std::string metrics_json(const MetricsReport& r);
// Writes metrics.csv, metrics.json and per-curve CSVs into `dir`.
void write_report(const std::filesystem::path& dir, const MetricsReport& r);

}  // namespace gjem
