#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "gjem/autodiff.hpp"
#include "gjem/energy.hpp"
#include "gjem/mlp.hpp"
#include "gjem/rng.hpp"
#include "gjem/tensor.hpp"

namespace gjem::test {

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

inline AttributeVector random_labels(std::size_t k, Rng& rng) {
  AttributeVector y(k);
  for (auto& v : y) v = bernoulli(rng, 0.5) ? 1 : 0;
  return y;
}

// Random MLP with nonzero biases so that every parameter carries gradient.
inline ParameterSet random_mlp(const MlpSpec& spec, Rng& rng) {
  ParameterSet p = init_mlp_parameters(spec, rng());
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.name(i).ends_with(".bias")) {
      for (double& v : p.mutable_values()[i].data()) v = uniform(rng, -0.5, 0.5);
    }
  }
  p.reset_average();
  return p;
}

inline MlpSpec random_spec(Rng& rng, std::size_t max_dim = 32, std::size_t max_k = 8) {
  MlpSpec spec;
  spec.input_dim = 1 + uniform_index(rng, max_dim);
  spec.num_attributes = 1 + uniform_index(rng, max_k);
  const std::size_t layers = 1 + uniform_index(rng, 2);
  for (std::size_t l = 0; l < layers; ++l) spec.hidden.push_back(2 + uniform_index(rng, 15));
  return spec;
}

// Parameters copied into plain arrays of S, in ParameterSet order.
template <class S>
std::vector<std::vector<S>> widen(std::span<const Tensor> params) {
  std::vector<std::vector<S>> out;
  for (const Tensor& t : params) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

// Independent scalar forward pass: swish hidden layers, linear head, [K, 2]
// logits. Weights are [out, in] row-major.
template <class S>
std::vector<S> reference_logits_t(const MlpSpec& spec, const std::vector<std::vector<S>>& params,
                                  std::vector<S> h) {
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto& w = params[2 * l];
    const auto& b = params[2 * l + 1];
    const std::size_t out = b.size(), in = h.size();
    std::vector<S> next(out);
    for (std::size_t o = 0; o < out; ++o) {
      S z = b[o];
      for (std::size_t i = 0; i < in; ++i) z += w[o * in + i] * h[i];
      const bool last = l + 1 == spec.num_layers();
      next[o] = last ? z : z / (S(1) + std::exp(-z));
    }
    h = std::move(next);
  }
  return h;
}

template <class S>
S reference_joint_energy_t(const MlpSpec& spec, const std::vector<std::vector<S>>& params, std::vector<S> x,
                           std::span<const std::uint8_t> y) {
  const auto l = reference_logits_t(spec, params, std::move(x));
  S f = 0;
  for (std::size_t k = 0; k < y.size(); ++k) f += l[2 * k + y[k]];
  return f;
}

inline std::vector<double> reference_logits(const MlpSpec& spec, std::span<const Tensor> params,
                                            std::span<const double> x) {
  return reference_logits_t(spec, widen<double>(params), std::vector<double>(x.begin(), x.end()));
}

inline double reference_joint_energy(const MlpSpec& spec, std::span<const Tensor> params, std::span<const double> x,
                                     std::span<const std::uint8_t> y) {
  return reference_joint_energy_t(spec, widen<double>(params), std::vector<double>(x.begin(), x.end()), y);
}

inline double central_difference(const std::function<double(double)>& f, double h = 1e-5) {
  return (f(h) - f(-h)) / (2.0 * h);
}

// Same stencil evaluated in extended precision, so that cancellation in the
// numerator stays far below the tolerance of the comparison.
inline double central_difference_ld(const std::function<long double(long double)>& f, long double h = 1e-5L) {
  return static_cast<double>((f(h) - f(-h)) / (2.0L * h));
}

inline double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

// Mann-Whitney pair count with ties worth one half.
inline double pair_count_auroc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

// Mean over positives of the precision among everything scored at least as high.
inline double threshold_ap(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double total = 0, positives = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    positives += 1;
    double tp = 0, predicted = 0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (s[j] >= s[i]) {
        predicted += 1;
        tp += y[j];
      }
    }
    total += tp / predicted;
  }
  return total / positives;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("gjem_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::filesystem::path path_;
};

}  // namespace gjem::test
