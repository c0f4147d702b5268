#pragma once

#include <array>
#include <span>
#include <vector>

#include "gjem/energy.hpp"

namespace gjem {

// Logits that ignore x. Useful for hand-checked label arithmetic.
class ConstantLogitModel final : public LogitModel {
 public:
  ConstantLogitModel(std::size_t input_dim, Tensor logits);
  std::size_t input_dim() const override { return input_dim_; }
  std::size_t num_attributes() const override { return logits_.extent(0); }
  Var logits(Tape& tape, Var x) const override;

 private:
  std::size_t input_dim_;
  Tensor logits_;  // [K, 2]
};

// Closed-form toy energies: f(x)[k][v] = bias - |x - center|^2 / (2 scale^2)
// with one (center, scale, bias) per attribute value. With K = 1 the joint
// exp f(x, y) is an unnormalized two-component Gaussian mixture.
class QuadraticLogitModel final : public LogitModel {
 public:
  struct Term {
    std::vector<double> center;  // D
    double scale = 1.0;
    double bias = 0.0;
  };

  // terms[k][v]
  QuadraticLogitModel(std::size_t input_dim, std::vector<std::array<Term, 2>> terms);
  std::size_t input_dim() const override { return input_dim_; }
  std::size_t num_attributes() const override { return terms_.size(); }
  Var logits(Tape& tape, Var x) const override;

  double logit(std::size_t k, std::size_t v, std::span<const double> x) const;

 private:
  std::size_t input_dim_;
  std::vector<std::array<Term, 2>> terms_;
};

}  // namespace gjem
