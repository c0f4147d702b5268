#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gjem/tensor.hpp"

namespace gjem {

class Tape;

// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Reverse-mode tape. Operations append nodes in evaluation order; backward()
// walks them in reverse and accumulates adjoints into every node that
// (transitively) depends on a leaf created with requires_grad.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Used by operation implementations. `fn` is dropped when no parent needs
  // gradients.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(output)/d(output) = 1 and propagates. Resets previously
  // accumulated gradients, so calling it twice gives the same result.
  void backward(Var output);

  // Gradient of the last backward() output with respect to `v`. Zero-filled
  // if `v` does not influence the output.
  Tensor grad(Var v) const;

  // For BackwardFn implementations.
  void accumulate(Var v, const Tensor& g);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  void check(Var v) const;

  std::vector<Node> nodes_;
  bool has_backward_ = false;
};

namespace ad {

// Logit reduction codes: 0/1 selects that logit, kMarginalize log-sum-exps
// the pair.
inline constexpr std::int8_t kMarginalize = -1;

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var square(Var a);
Var sigmoid(Var a);
Var swish(Var a);
// Elementwise derivative of swish, differentiable itself.
Var swish_grad(Var a);
Var clamp(Var a, double lo, double hi);
Var reshape(Var a, Shape shape);

Var sum(Var a);
Var mean(Var a);
// [B, K] -> [B]
Var row_sum(Var a);

// x: [B, n], w: [m, n] -> x w^T : [B, m]
Var matmul_nt(Var x, Var w);
// x: [B, m], b: [m]
Var add_bias(Var x, Var b);

// logits: [B, K, 2]; codes: B*K entries in {0, 1, kMarginalize}. Output [B, K]
// holds the selected logit or the pair's log-sum-exp.
Var reduce_logits(Var logits, std::span<const std::int8_t> codes);

}  // namespace ad

double logsumexp2(double a, double b);
double sigmoid(double z);

}  // namespace gjem
