#include "gjem/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gjem/errors.hpp"

namespace gjem {

double logsumexp2(double a, double b) {
  const double hi = std::max(a, b);
  if (std::isinf(hi)) return hi;
  return hi + std::log(std::exp(a - hi) + std::exp(b - hi));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

const Tensor& Var::value() const {
  if (tape == nullptr) throw std::logic_error("Var is not attached to a tape");
  return tape->value(*this);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  bool needs = false;
  for (Var p : parents) {
    check(p);
    needs = needs || nodes_[p.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Tensor{}, needs, needs ? std::move(fn) : nullptr});
  return Var{this, nodes_.size() - 1};
}

void Tape::check(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) {
    throw std::invalid_argument("variable is not recorded on this tape");
  }
}

const Tensor& Tape::value(Var v) const {
  check(v);
  return nodes_[v.id].value;
}

bool Tape::requires_grad(Var v) const {
  check(v);
  return nodes_[v.id].requires_grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var output) {
  check(output);
  if (nodes_[output.id].value.size() != 1) {
    throw ShapeError("backward() needs a scalar output, got shape " +
                     shape_string(nodes_[output.id].value.shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor{};
  has_backward_ = true;
  if (!nodes_[output.id].requires_grad) return;
  nodes_[output.id].grad = Tensor(nodes_[output.id].value.shape(), 1.0);
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    // The closure may accumulate into earlier nodes only, so `n` stays valid.
    const Tensor upstream = n.grad;
    n.backward(*this, upstream);
  }
}

Tensor Tape::grad(Var v) const {
  check(v);
  const Node& n = nodes_[v.id];
  if (!n.requires_grad) throw std::invalid_argument("gradient requested for a variable not marked differentiable");
  if (!has_backward_) throw std::logic_error("grad() called before backward()");
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

namespace ad {
namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw std::invalid_argument("operands recorded on different tapes");
  return *a.tape;
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  return t.record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& up) {
    tape.accumulate(a, up);
    tape.accumulate(b, up);
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& up) {
    tape.accumulate(a, up);
    Tensor neg = up;
    neg *= -1.0;
    tape.accumulate(b, neg);
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& up) {
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    if (tape.requires_grad(a)) {
      Tensor g(up.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = up[i] * bv[i];
      tape.accumulate(a, g);
    }
    if (tape.requires_grad(b)) {
      Tensor g(up.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = up[i] * av[i];
      tape.accumulate(b, g);
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  out *= factor;
  return a.tape->record(std::move(out), {a}, [a, factor](Tape& tape, const Tensor& up) {
    Tensor g = up;
    g *= factor;
    tape.accumulate(a, g);
  });
}

Var square(Var a) {
  Tensor out = map(a.value(), [](double v) { return v * v; });
  return a.tape->record(std::move(out), {a}, [a](Tape& tape, const Tensor& up) {
    const Tensor& av = tape.value(a);
    Tensor g(up.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * av[i] * up[i];
    tape.accumulate(a, g);
  });
}

Var sigmoid(Var a) {
  Tensor out = map(a.value(), [](double v) { return gjem::sigmoid(v); });
  const std::size_t self = a.tape->size();
  return a.tape->record(std::move(out), {a}, [a, self](Tape& tape, const Tensor& up) {
    const Tensor& s = tape.value(Var{&tape, self});
    Tensor g(up.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = up[i] * s[i] * (1.0 - s[i]);
    tape.accumulate(a, g);
  });
}

Var swish(Var a) {
  Tensor out = map(a.value(), [](double z) { return z * gjem::sigmoid(z); });
  return a.tape->record(std::move(out), {a}, [a](Tape& tape, const Tensor& up) {
    const Tensor& z = tape.value(a);
    Tensor g(up.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = gjem::sigmoid(z[i]);
      g[i] = up[i] * s * (1.0 + z[i] * (1.0 - s));
    }
    tape.accumulate(a, g);
  });
}

Var swish_grad(Var a) {
  Tensor out = map(a.value(), [](double z) {
    const double s = gjem::sigmoid(z);
    return s * (1.0 + z * (1.0 - s));
  });
  return a.tape->record(std::move(out), {a}, [a](Tape& tape, const Tensor& up) {
    const Tensor& z = tape.value(a);
    Tensor g(up.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = gjem::sigmoid(z[i]);
      g[i] = up[i] * s * (1.0 - s) * (2.0 + z[i] * (1.0 - 2.0 * s));
    }
    tape.accumulate(a, g);
  });
}

Var clamp(Var a, double lo, double hi) {
  Tensor out = map(a.value(), [lo, hi](double v) { return std::clamp(v, lo, hi); });
  return a.tape->record(std::move(out), {a}, [a, lo, hi](Tape& tape, const Tensor& up) {
    const Tensor& av = tape.value(a);
    Tensor g(up.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (av[i] >= lo && av[i] <= hi) ? up[i] : 0.0;
    tape.accumulate(a, g);
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const Shape original = a.value().shape();
  return a.tape->record(std::move(out), {a}, [a, original](Tape& tape, const Tensor& up) {
    tape.accumulate(a, up.reshaped(original));
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const Shape shape = a.value().shape();
  return a.tape->record(Tensor::scalar(s), {a}, [a, shape](Tape& tape, const Tensor& up) {
    tape.accumulate(a, Tensor(shape, up.item()));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const Shape shape = a.value().shape();
  return a.tape->record(Tensor::scalar(s / n), {a}, [a, shape, n](Tape& tape, const Tensor& up) {
    tape.accumulate(a, Tensor(shape, up.item() / n));
  });
}

Var row_sum(Var a) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw ShapeError("row_sum expects [B, K], got " + shape_string(av.shape()));
  const std::size_t rows = av.extent(0), cols = av.extent(1);
  Tensor out(Shape{rows});
  for (std::size_t b = 0; b < rows; ++b) {
    double s = 0.0;
    for (std::size_t k = 0; k < cols; ++k) s += av[b * cols + k];
    out[b] = s;
  }
  return a.tape->record(std::move(out), {a}, [a, rows, cols](Tape& tape, const Tensor& up) {
    Tensor g(Shape{rows, cols});
    for (std::size_t b = 0; b < rows; ++b) {
      for (std::size_t k = 0; k < cols; ++k) g[b * cols + k] = up[b];
    }
    tape.accumulate(a, g);
  });
}

Var matmul_nt(Var x, Var w) {
  Tape& t = same_tape(x, w);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.extent(1) != wv.extent(1)) {
    throw ShapeError("matmul_nt: incompatible shapes " + shape_string(xv.shape()) + " and " +
                     shape_string(wv.shape()));
  }
  const std::size_t rows = xv.extent(0), in = xv.extent(1), out_dim = wv.extent(0);
  Tensor out(Shape{rows, out_dim});
  const double* xp = xv.raw();
  const double* wp = wv.raw();
  double* op = out.raw();
  for (std::size_t b = 0; b < rows; ++b) {
    const double* xr = xp + b * in;
    for (std::size_t i = 0; i < out_dim; ++i) {
      const double* wr = wp + i * in;
      double s = 0.0;
      for (std::size_t j = 0; j < in; ++j) s += xr[j] * wr[j];
      op[b * out_dim + i] = s;
    }
  }
  return t.record(std::move(out), {x, w}, [x, w, rows, in, out_dim](Tape& tape, const Tensor& up) {
    const double* upp = up.raw();
    if (tape.requires_grad(x)) {
      const double* wp = tape.value(w).raw();
      Tensor gx(Shape{rows, in});
      double* gp = gx.raw();
      for (std::size_t b = 0; b < rows; ++b) {
        double* gr = gp + b * in;
        for (std::size_t i = 0; i < out_dim; ++i) {
          const double u = upp[b * out_dim + i];
          const double* wr = wp + i * in;
          for (std::size_t j = 0; j < in; ++j) gr[j] += u * wr[j];
        }
      }
      tape.accumulate(x, gx);
    }
    if (tape.requires_grad(w)) {
      const double* xp = tape.value(x).raw();
      Tensor gw(Shape{out_dim, in});
      double* gp = gw.raw();
      for (std::size_t b = 0; b < rows; ++b) {
        const double* xr = xp + b * in;
        for (std::size_t i = 0; i < out_dim; ++i) {
          const double u = upp[b * out_dim + i];
          double* gr = gp + i * in;
          for (std::size_t j = 0; j < in; ++j) gr[j] += u * xr[j];
        }
      }
      tape.accumulate(w, gw);
    }
  });
}

Var add_bias(Var x, Var b) {
  Tape& t = same_tape(x, b);
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 2 || bv.rank() != 1 || xv.extent(1) != bv.extent(0)) {
    throw ShapeError("add_bias: incompatible shapes " + shape_string(xv.shape()) + " and " +
                     shape_string(bv.shape()));
  }
  const std::size_t rows = xv.extent(0), cols = xv.extent(1);
  Tensor out = xv;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  }
  return t.record(std::move(out), {x, b}, [x, b, rows, cols](Tape& tape, const Tensor& up) {
    tape.accumulate(x, up);
    if (tape.requires_grad(b)) {
      Tensor gb(Shape{cols});
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) gb[c] += up[r * cols + c];
      }
      tape.accumulate(b, gb);
    }
  });
}

Var reduce_logits(Var logits, std::span<const std::int8_t> codes) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 3 || lv.extent(2) != 2) {
    throw ShapeError("reduce_logits expects [B, K, 2], got " + shape_string(lv.shape()));
  }
  const std::size_t rows = lv.extent(0), k = lv.extent(1);
  if (codes.size() != rows * k) {
    throw ShapeError("reduce_logits: expected " + std::to_string(rows * k) + " codes, got " +
                     std::to_string(codes.size()));
  }
  Tensor out(Shape{rows, k});
  for (std::size_t i = 0; i < rows * k; ++i) {
    const double l0 = lv[2 * i], l1 = lv[2 * i + 1];
    switch (codes[i]) {
      case 0: out[i] = l0; break;
      case 1: out[i] = l1; break;
      case kMarginalize: out[i] = logsumexp2(l0, l1); break;
      default: throw std::invalid_argument("reduce_logits: code must be 0, 1 or marginalize");
    }
  }
  std::vector<std::int8_t> kept(codes.begin(), codes.end());
  return logits.tape->record(std::move(out), {logits}, [logits, kept = std::move(kept)](Tape& tape, const Tensor& up) {
    const Tensor& lv = tape.value(logits);
    Tensor g(lv.shape());
    for (std::size_t i = 0; i < kept.size(); ++i) {
      if (kept[i] == kMarginalize) {
        const double p1 = gjem::sigmoid(lv[2 * i + 1] - lv[2 * i]);
        g[2 * i] = up[i] * (1.0 - p1);
        g[2 * i + 1] = up[i] * p1;
      } else {
        g[2 * i + static_cast<std::size_t>(kept[i])] = up[i];
      }
    }
    tape.accumulate(logits, g);
  });
}

}  // namespace ad
}  // namespace gjem
