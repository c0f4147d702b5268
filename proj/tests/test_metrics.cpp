#include "doctest.h"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "gjem/metrics.hpp"
#include "support.hpp"

using namespace gjem;

namespace {

using Labels = std::vector<std::uint8_t>;
using gjem::test::pair_count_auroc;
using gjem::test::threshold_ap;

PredictionSet column(std::vector<double> conf, Labels y) {
  const std::size_t n = conf.size();
  return PredictionSet(n, 1, std::move(conf), std::move(y));
}

std::vector<double> random_scores(gjem::Rng& rng, std::size_t n, bool coarse) {
  std::vector<double> s(n);
  for (double& v : s) v = coarse ? static_cast<double>(uniform_index(rng, 6)) / 5.0 : uniform01(rng);
  return s;
}

}  // namespace

TEST_CASE("prediction set validation") {
  CHECK_THROWS(PredictionSet(2, 1, {0.5}, {1, 0}));
  CHECK_THROWS(PredictionSet(1, 1, {1.5}, {1}));
  CHECK_THROWS(PredictionSet(1, 1, {0.5}, {2}));
  CHECK_THROWS(PredictionSet(1, 2, {0.5, 0.5}, {1, 0}, {"only_one"}));
  const PredictionSet p(2, 2, {0.1, 0.2, 0.3, 0.4}, {0, 1, 1, 0});
  CHECK(p.conf(1, 0) == 0.3);
  CHECK(p.attribute(1).confidence == std::vector<double>{0.2, 0.4});
  CHECK(p.pooled().num_examples == 4);
}

TEST_CASE("accuracy") {
  CHECK(accuracy(column({0.9, 0.1}, {1, 0})) == 1.0);
  CHECK(accuracy(column({1.0, 0.0}, {1, 0})) == 1.0);
  CHECK(accuracy(PredictionSet(2, 2, {0.9, 0.2, 0.4, 0.7}, {1, 0, 1, 1})) == 0.75);
  CHECK(accuracy(column({0.5}, {1})) == 1.0);
}

TEST_CASE("F1") {
  CHECK(f1(column({0.9, 0.1}, {1, 0}), Averaging::micro) == 1.0);
  CHECK(f1(column({0.9, 0.1}, {1, 0}), Averaging::macro) == 1.0);
  // TP = 1, FP = 1, FN = 0.
  CHECK(binary_f1(std::vector<double>{0.9, 0.8, 0.1}, Labels{1, 0, 0}) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(binary_f1(std::vector<double>{0.1, 0.2}, Labels{0, 0}) == 0.0);
  // Attribute 0: F1 = 1. Attribute 1: TP = 1, FP = 2, FN = 0, F1 = 0.5.
  const PredictionSet p(4, 2, {0.9, 0.9, 0.1, 0.8, 0.9, 0.7, 0.2, 0.3}, {1, 1, 0, 0, 1, 0, 0, 0});
  CHECK(f1(p, Averaging::macro) == doctest::Approx(0.75).epsilon(1e-15));
  // Pooled: TP = 3, FP = 2, FN = 0.
  CHECK(f1(p, Averaging::micro) == doctest::Approx(6.0 / 8.0).epsilon(1e-15));
}

TEST_CASE("micro and macro differ on an asymmetric set") {
  // Attribute 0 is large and perfect, attribute 1 is small and always wrong.
  std::vector<double> conf;
  Labels y;
  for (int i = 0; i < 20; ++i) {
    conf.push_back(i % 2 ? 0.9 : 0.1);
    y.push_back(i % 2);
    conf.push_back(i < 2 ? 0.1 : 0.4);
    y.push_back(i < 2 ? 1 : 0);
  }
  const PredictionSet p(20, 2, conf, y);
  CHECK(f1(p, Averaging::macro) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(f1(p, Averaging::micro) == doctest::Approx(20.0 / 22.0).epsilon(1e-15));
  CHECK(f1(p, Averaging::micro) != f1(p, Averaging::macro));
}

TEST_CASE("AUROC") {
  CHECK(binary_auroc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, Labels{1, 1, 0, 0}) == 1.0);
  CHECK(binary_auroc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, Labels{1, 1, 0, 0}) == 0.0);
  CHECK(binary_auroc(std::vector<double>{0.5, 0.5}, Labels{1, 0}) == 0.5);
  CHECK_THROWS(binary_auroc(std::vector<double>{0.5, 0.4}, Labels{1, 1}));
  gjem::Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + uniform_index(rng, 199);
    const auto s = random_scores(rng, n, t % 2 == 0);
    Labels y(n);
    for (auto& v : y) v = bernoulli(rng, 0.4);
    y[0] = 1;
    y[1] = 0;
    CHECK(std::abs(binary_auroc(s, y) - pair_count_auroc(s, y)) < 1e-12);
  }
}

TEST_CASE("average precision") {
  CHECK(binary_average_precision(std::vector<double>{0.9, 0.8, 0.2}, Labels{1, 1, 0}) == 1.0);
  CHECK(binary_average_precision(std::vector<double>{0.9, 0.2}, Labels{0, 1}) == 0.5);
  CHECK_THROWS(binary_average_precision(std::vector<double>{0.9}, Labels{0}));
  gjem::Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + uniform_index(rng, 200);
    const auto s = random_scores(rng, n, t % 2 == 0);
    Labels y(n);
    for (auto& v : y) v = bernoulli(rng, 0.3);
    y[0] = 1;
    CHECK(std::abs(binary_average_precision(s, y) - threshold_ap(s, y)) < 1e-12);
  }
}

TEST_CASE("ECE") {
  CHECK(binary_ece(std::vector<double>{1.0, 0.0, 1.0}, Labels{1, 0, 1}, 20) == 0.0);
  {
    std::vector<double> s(10, 0.8);
    Labels y{1, 1, 1, 1, 1, 1, 0, 0, 0, 0};
    CHECK(binary_ece(s, y, 20) == doctest::Approx(0.2).epsilon(1e-12));
  }
  {
    // Bin of 0.6 (3 cells, 2 correct) and bin of 0.9 (2 cells, 2 correct).
    std::vector<double> s{0.6, 0.6, 0.6, 0.9, 0.9};
    Labels y{1, 1, 0, 1, 1};
    const double expect = 3.0 / 5.0 * std::abs(0.6 - 2.0 / 3.0) + 2.0 / 5.0 * std::abs(0.9 - 1.0);
    CHECK(binary_ece(s, y, 20) == doctest::Approx(expect).epsilon(1e-12));
  }
  // Confidence is max(p, 1 - p): p = 0.2 means 80% sure of a negative.
  CHECK(binary_ece(std::vector<double>{0.2, 0.2, 0.2, 0.2, 0.2}, Labels{0, 0, 0, 0, 1}, 20) ==
        doctest::Approx(0.0).epsilon(1e-12));
  gjem::Rng rng(3);
  std::vector<double> s(100000);
  Labels y(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = uniform01(rng);
    y[i] = bernoulli(rng, s[i]);
  }
  CHECK(binary_ece(s, y, 20) < 0.01);
}

TEST_CASE("curves") {
  SUBCASE("perfect classifier ROC") {
    const Curves c = binary_curves(std::vector<double>{0.9, 0.8, 0.2, 0.1}, Labels{1, 1, 0, 0});
    std::vector<std::pair<double, double>> roc;
    for (const auto& p : c.roc) roc.emplace_back(p.x, p.y);
    // Interior points collapse onto the three corners.
    CHECK(roc.front() == std::pair<double, double>{0, 0});
    CHECK(roc.back() == std::pair<double, double>{1, 1});
    bool corner = false;
    for (const auto& p : roc) {
      CHECK(((p.first == 0.0) || (p.second == 1.0)));
      corner = corner || (p.first == 0.0 && p.second == 1.0);
    }
    CHECK(corner);
    CHECK(std::isinf(c.roc.front().threshold));
  }
  SUBCASE("single prediction") {
    const Curves c = binary_curves(std::vector<double>{0.7}, Labels{1});
    CHECK(c.roc.size() == 2);
    CHECK(c.pr.size() == 1);
    CHECK(c.pr[0].x == 1.0);
    CHECK(c.pr[0].y == 1.0);
  }
  SUBCASE("hand-built set matches threshold enumeration") {
    const std::vector<double> s{0.95, 0.9, 0.8, 0.8, 0.6, 0.55, 0.4, 0.3, 0.3, 0.1};
    const Labels y{1, 0, 1, 1, 0, 1, 0, 0, 1, 0};
    const Curves c = binary_curves(s, y);
    std::vector<double> thresholds(s.begin(), s.end());
    std::sort(thresholds.rbegin(), thresholds.rend());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    REQUIRE(c.pr.size() == thresholds.size());
    REQUIRE(c.roc.size() == thresholds.size() + 1);
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      double tp = 0, fp = 0;
      for (std::size_t j = 0; j < s.size(); ++j) {
        if (s[j] >= thresholds[i]) (y[j] ? tp : fp) += 1;
      }
      CHECK(c.pr[i].threshold == thresholds[i]);
      CHECK(c.pr[i].x == doctest::Approx(tp / 5).epsilon(1e-15));
      CHECK(c.pr[i].y == doctest::Approx(tp / (tp + fp)).epsilon(1e-15));
      CHECK(c.roc[i + 1].x == doctest::Approx(fp / 5).epsilon(1e-15));
      CHECK(c.roc[i + 1].y == doctest::Approx(tp / 5).epsilon(1e-15));
    }
    REQUIRE(c.reliability.size() == kDefaultEceBins);
    std::size_t total = 0;
    for (const auto& b : c.reliability) total += b.count;
    CHECK(total == s.size());
  }
}

TEST_CASE("report aggregation and files") {
  gjem::Rng rng(4);
  const std::size_t n = 60, k = 3;
  std::vector<double> conf(n * k);
  Labels y(n * k);
  for (std::size_t i = 0; i < n * k; ++i) {
    conf[i] = uniform01(rng);
    y[i] = bernoulli(rng, 0.5);
  }
  // Attribute 2 is degenerate: every label is 0.
  for (std::size_t i = 0; i < n; ++i) y[i * k + 2] = 0;
  const PredictionSet p(n, k, conf, y, {"a", "b", "c"});
  const MetricsReport r = evaluate_predictions(p);
  REQUIRE(r.attributes.size() == 3);
  CHECK_FALSE(r.attributes[2].auroc.has_value());
  CHECK(r.macro.accuracy == doctest::Approx((r.attributes[0].accuracy + r.attributes[1].accuracy +
                                             r.attributes[2].accuracy) / 3).epsilon(1e-15));
  CHECK(r.macro.auroc == doctest::Approx((*r.attributes[0].auroc + *r.attributes[1].auroc) / 2).epsilon(1e-15));
  CHECK(r.micro.accuracy == accuracy(p));
  CHECK(r.micro.auroc == auroc(p, Averaging::micro));

  gjem::test::TempDir dir("report");
  write_report(dir.path(), r);
  const auto j = nlohmann::json::parse(std::ifstream(dir / "metrics.json"));
  CHECK(j.at("attributes").size() == 3);
  CHECK(j.at("attributes")[2].at("auroc").is_null());
  std::ifstream csv(dir / "metrics.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "attribute,metric,value");
  std::map<std::string, std::vector<double>> by_metric;
  std::map<std::string, double> macro;
  for (std::string line; std::getline(csv, line);) {
    std::stringstream ss(line);
    std::string attr, metric, value;
    std::getline(ss, attr, ',');
    std::getline(ss, metric, ',');
    std::getline(ss, value, ',');
    if (attr == "macro") {
      macro[metric] = std::stod(value);
    } else if (attr != "micro") {
      by_metric[metric].push_back(std::stod(value));
    }
  }
  for (const auto& [metric, values] : by_metric) {
    double s = 0;
    for (double v : values) s += v;
    CHECK(macro.at(metric) == doctest::Approx(s / values.size()).epsilon(1e-12));
  }
  CHECK(std::filesystem::exists(dir / "micro_roc.csv"));
  CHECK(std::filesystem::exists(dir / "attr_b_pr.csv"));
  CHECK(std::filesystem::exists(dir / "attr_c_reliability.csv"));
}
