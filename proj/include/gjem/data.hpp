#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gjem/energy.hpp"
#include "gjem/rng.hpp"
#include "gjem/samplers.hpp"
#include "gjem/tensor.hpp"

namespace gjem {

// One Gaussian component per reachable label vector. Means and sigma are in
// unit coordinates; generated points are squeezed into [0.1, 0.9] by
// x = 0.1 + 0.8 * raw and then clamped to [0, 1].
struct MixtureComponent {
  AttributeVector y;
  std::vector<double> mean;
  double sigma = 0.1;
  double weight = 1.0;
};

struct MixtureSpec {
  std::size_t dim = 0;
  std::size_t num_attributes = 0;
  std::vector<MixtureComponent> components;
  std::vector<std::string> names;  // defaults to a0, a1, ...

  void validate() const;
  std::vector<std::string> attribute_names() const;
  // Index of the component labelled y, or -1.
  std::ptrdiff_t find(std::span<const std::uint8_t> y) const;

  // Four equally weighted modes at the corners {lo, hi}^2 with y = corner bits.
  static MixtureSpec four_corners(double lo, double hi, double sigma);
};

inline constexpr double kSqueezeOffset = 0.1;
inline constexpr double kSqueezeScale = 0.8;

enum class Split : std::uint8_t { train = 0, validation = 1, heldout = 2 };

struct Dataset {
  Tensor x;                     // [N, D]
  std::vector<std::uint8_t> y;  // [N * K]
  std::size_t num_attributes = 0;
  std::vector<std::string> names;
  std::vector<Split> split;  // one entry per example
  std::vector<ConditioningSpec> heldout_combos;

  std::size_t size() const { return split.size(); }
  std::size_t dim() const { return x.extent(1); }
  std::span<const std::uint8_t> labels(std::size_t i) const { return {y.data() + i * num_attributes, num_attributes}; }
  JointSample sample(std::size_t i) const;
  std::vector<std::size_t> indices(Split s) const;
  std::size_t count(Split s) const;
  // Rows of x and y restricted to one split.
  Tensor split_x(Split s) const;
  std::vector<std::uint8_t> split_y(Split s) const;

  // Throws ShapeError or ConfigError.
  void validate() const;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

Dataset generate_mixture(const MixtureSpec& spec, std::size_t n, Rng& rng);

// Moves min(5000, N/10) randomly chosen training examples to validation.
void assign_validation_split(Dataset& ds, Rng& rng);
std::size_t default_validation_size(std::size_t n);

// Every train/validation example matching a combination moves to the held-out
// pool. Throws ConfigError when no training example remains.
Dataset split_holdout(const Dataset& ds, std::span<const ConditioningSpec> combos);

// Keeps attributes whose positive frequency is at least min_frequency.
Dataset filter_attributes_by_frequency(const Dataset& ds, double min_frequency);

// Exact quantities of a MixtureSpec.
class MixtureOracle {
 public:
  explicit MixtureOracle(MixtureSpec spec);

  const MixtureSpec& spec() const { return spec_; }
  double prior(std::span<const std::uint8_t> y) const;
  // Marginal p(y_k = 1).
  std::vector<double> attribute_prior() const;
  // Component posteriors p(component | x), including the atoms at the clamp
  // boundaries (coordinates exactly 0 or 1 use the clamped tail mass).
  std::vector<double> component_posterior(std::span<const double> x) const;
  // p(y_k = 1 | x)
  std::vector<double> attribute_posterior(std::span<const double> x) const;
  // p(y_k = 1 | y_c)
  std::vector<double> attribute_given(const ConditioningSpec& spec) const;
  // E[x | y_c] after squeeze and clamp, closed form.
  std::vector<double> conditional_mean(const ConditioningSpec& spec) const;
  // Same quantity by adaptive Gauss-Kronrod quadrature; throws
  // std::runtime_error if the error estimate exceeds `tolerance`.
  std::vector<double> conditional_mean_quadrature(const ConditioningSpec& spec, double tolerance = 1e-8) const;

 private:
  double component_log_likelihood(std::size_t c, std::span<const double> x) const;
  std::vector<double> matching_weights(const ConditioningSpec& spec) const;

  MixtureSpec spec_;
};

// Dequantization of 8-bit values: (x + u) / 256 with u ~ U[0, 1], plus
// N(0, noise_sigma^2), clamped to [0, 1].
double dequantize_value(double x_int, double u, double noise);
Tensor dequantize(const Tensor& x_int, Rng& rng, double noise_sigma = 0.001);

// Container IO (lossless). Records: dataset/x, dataset/y, dataset/split,
// dataset/names, dataset/heldout.
void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& path);

// CSV with header y_<name>...,x_0...x_{D-1}. On import, columns named
// c_<name> hold categorical values and expand into one binary attribute
// <name>_<value> per distinct value (sorted). Missing cells are rejected.
// Imported examples are all in the training split.
void write_dataset_csv(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset_csv(const std::filesystem::path& path);
Dataset parse_dataset_csv(std::string_view text);

}  // namespace gjem
