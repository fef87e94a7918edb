#pragma once

// Reverse-mode automatic differentiation over dense double tensors.
//
// A Tape records every operation eagerly; Var is a cheap handle to a tape
// node. Gradients are themselves recorded on the tape (reverse-over-reverse),
// so a scalar function of a gradient can be differentiated again. Binary
// elementwise ops broadcast scalars and rank-2 operands along size-1
// dimensions; nothing else broadcasts.

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nehad/tensor.hpp"

namespace nehad::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const noexcept { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

enum class OpKind {
  leaf,
  constant,
  add,
  sub,
  mul,
  div,
  neg,
  scale,
  add_scalar,
  matmul,
  transpose,
  relu,
  tanh,
  sin,
  cos,
  exp,
  log,
  sqrt,
  abs,
  sigmoid,
  sum,
  sum_to,
  broadcast_to,
  slice_cols,
  pad_cols,
  concat_cols,
  reshape,
  row_norm,
  custom,
};

std::string_view op_name(OpKind kind);

// Escape hatch for fused kernels (rasterizer, SSIM, grid lookups). The
// backward rule returns plain tensors, so gradients flowing out of a custom
// op are constants on the tape: custom ops are first-order only.
class CustomOp {
 public:
  virtual ~CustomOp() = default;
  virtual std::string_view name() const = 0;
  // One gradient per input, shaped like that input. An empty tensor means
  // "no gradient" for that input.
  virtual std::vector<Tensor> backward(const Tensor& grad_output, std::span<const Tensor* const> inputs,
                                       const Tensor& output) const = 0;
};

struct GradResult {
  std::vector<Var> grads;
  // True where the requested variable does not influence the output; the
  // matching entry in `grads` is a zero constant.
  std::vector<bool> detached;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);
  Var custom(std::shared_ptr<const CustomOp> op, std::vector<Var> inputs, Tensor output);

  const Tensor& value(Var v) const;
  OpKind kind(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // d(output)/d(wrt[i]) for a one-element output. With create_graph the
  // gradient nodes are differentiable again (through primitive ops).
  GradResult grad(Var output, std::span<const Var> wrt, bool create_graph = false);

  // Number of nodes whose backward rule ran during the last grad() call, and
  // the largest per-node visit count observed (1 for a well-formed sweep).
  std::size_t last_backward_visits() const noexcept { return last_visits_; }
  std::size_t last_max_visits_per_node() const noexcept { return last_max_visits_; }

  // When enabled, every recorded value is checked and NaN/Inf throws
  // NonFiniteError naming the op.
  void set_check_finite(bool on) noexcept { check_finite_ = on; }
  bool check_finite() const noexcept { return check_finite_; }

  // Internal: append a primitive node. Public so op free functions can use it.
  struct Node {
    OpKind kind = OpKind::leaf;
    Tensor value;
    std::vector<int> parents;
    double param = 0.0;
    std::size_t i0 = 0;
    std::size_t i1 = 0;
    Tensor aux;
    std::shared_ptr<const CustomOp> custom;
    bool requires_grad = false;
  };
  Var push(Node node);
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

 private:
  std::vector<Var> backward_rule(int id, Var g, const std::vector<char>& need, bool create_graph);

  std::vector<Node> nodes_;
  bool check_finite_ = default_check_finite();
  bool in_create_graph_ = false;
  std::size_t last_visits_ = 0;
  std::size_t last_max_visits_ = 0;

  static bool default_check_finite();
};

// Process-wide default for new tapes' finite checking (on unless disabled).
void set_default_check_finite(bool on);

// Elementwise and structural ops. All operands must live on the same tape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double k);
Var add_scalar(Var a, double k);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var relu(Var a);
Var tanh(Var a);
Var sin(Var a);
Var cos(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var abs(Var a);
Var sigmoid(Var a);
Var sum(Var a);
Var mean(Var a);
Var sum_to(Var a, const Shape& shape);
Var broadcast_to(Var a, const Shape& shape);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var pad_cols(Var a, std::size_t total_cols, std::size_t offset);
Var concat_cols(std::span<const Var> parts);
Var reshape(Var a, const Shape& shape);
// Euclidean norm of each row of a rank-2 tensor -> [rows, 1]; gradient is
// taken as zero at a zero row.
Var row_norm(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(Var a, double k) { return scale(a, k); }
inline Var operator*(double k, Var a) { return scale(a, k); }
inline Var operator+(Var a, double k) { return add_scalar(a, k); }
inline Var operator+(double k, Var a) { return add_scalar(a, k); }
inline Var operator-(Var a, double k) { return add_scalar(a, -k); }
inline Var operator-(double k, Var a) { return add_scalar(neg(a), k); }

// Broadcast result shape of an elementwise binary op, or ShapeError.
Shape broadcast_shape(std::string_view op, const Shape& a, const Shape& b);

}  // namespace nehad::ad
