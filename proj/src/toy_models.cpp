#include "gjem/toy_models.hpp"

#include "gjem/errors.hpp"

namespace gjem {

ConstantLogitModel::ConstantLogitModel(std::size_t input_dim, Tensor logits)
    : input_dim_(input_dim), logits_(std::move(logits)) {
  if (logits_.rank() != 2 || logits_.extent(1) != 2) throw ShapeError("constant logits must be [K, 2]");
}

Var ConstantLogitModel::logits(Tape& tape, Var x) const {
  if (x.shape().size() != 2 || x.shape()[1] != input_dim_) throw ShapeError("input does not match model dimension");
  const std::size_t rows = x.shape()[0];
  Tensor out(Shape{rows, logits_.extent(0), 2});
  for (std::size_t b = 0; b < rows; ++b) {
    std::copy(logits_.data().begin(), logits_.data().end(), out.data().begin() + b * logits_.size());
  }
  return tape.constant(std::move(out));
}

QuadraticLogitModel::QuadraticLogitModel(std::size_t input_dim, std::vector<std::array<Term, 2>> terms)
    : input_dim_(input_dim), terms_(std::move(terms)) {
  if (terms_.empty()) throw ConfigError("quadratic toy needs at least one attribute");
  for (const auto& pair : terms_) {
    for (const Term& t : pair) {
      if (t.center.size() != input_dim_) throw ShapeError("toy center does not match input dimension");
      if (!(t.scale > 0.0)) throw ConfigError("toy scale must be positive");
    }
  }
}

double QuadraticLogitModel::logit(std::size_t k, std::size_t v, std::span<const double> x) const {
  const Term& t = terms_[k][v];
  double sq = 0.0;
  for (std::size_t d = 0; d < input_dim_; ++d) sq += (x[d] - t.center[d]) * (x[d] - t.center[d]);
  return t.bias - sq / (2.0 * t.scale * t.scale);
}

Var QuadraticLogitModel::logits(Tape& tape, Var x) const {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.extent(1) != input_dim_) throw ShapeError("input does not match model dimension");
  const std::size_t rows = xv.extent(0), k_count = terms_.size(), d_count = input_dim_;
  Tensor out(Shape{rows, k_count, 2});
  for (std::size_t b = 0; b < rows; ++b) {
    const std::span<const double> xb = xv.data().subspan(b * d_count, d_count);
    for (std::size_t k = 0; k < k_count; ++k) {
      for (std::size_t v = 0; v < 2; ++v) out[(b * k_count + k) * 2 + v] = logit(k, v, xb);
    }
  }
  return tape.record(std::move(out), {x}, [this, x, rows, k_count, d_count](Tape& t, const Tensor& up) {
    const Tensor& xv = t.value(x);
    Tensor g(Shape{rows, d_count});
    for (std::size_t b = 0; b < rows; ++b) {
      for (std::size_t k = 0; k < k_count; ++k) {
        for (std::size_t v = 0; v < 2; ++v) {
          const Term& term = terms_[k][v];
          const double u = up[(b * k_count + k) * 2 + v] / (term.scale * term.scale);
          for (std::size_t d = 0; d < d_count; ++d) g[b * d_count + d] -= u * (xv[b * d_count + d] - term.center[d]);
        }
      }
    }
    t.accumulate(x, g);
  });
}

}  // namespace gjem
