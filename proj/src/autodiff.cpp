#include "nehad/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "nehad/error.hpp"

namespace nehad::ad {

namespace {

std::atomic<bool> g_default_check_finite{true};

bool is_scalar(const Shape& s) { return shape_numel(s) == 1; }

// Flat source index of output element i for a broadcast operand.
inline std::size_t bindex(const Tensor& t, const Shape& out, std::size_t i) {
  if (t.size() == 1) return 0;
  if (t.shape() == out) return i;
  const std::size_t oc = out[1];
  const std::size_t r = i / oc;
  const std::size_t c = i % oc;
  const std::size_t tr = t.shape()[0];
  const std::size_t tc = t.shape()[1];
  return (tr == 1 ? 0 : r) * tc + (tc == 1 ? 0 : c);
}

template <class F>
Tensor binary(const Tensor& a, const Tensor& b, const Shape& out, F f) {
  Tensor r(out);
  auto rd = r.data();
  auto ad = a.data();
  auto bd = b.data();
  if (a.shape() == out && b.shape() == out) {
    for (std::size_t i = 0; i < rd.size(); ++i) rd[i] = f(ad[i], bd[i]);
  } else {
    for (std::size_t i = 0; i < rd.size(); ++i) rd[i] = f(ad[bindex(a, out, i)], bd[bindex(b, out, i)]);
  }
  return r;
}

template <class F>
Tensor unary(const Tensor& a, F f) {
  Tensor r(a.shape());
  auto rd = r.data();
  auto ad = a.data();
  for (std::size_t i = 0; i < rd.size(); ++i) rd[i] = f(ad[i]);
  return r;
}

Tensor sum_to_value(const Tensor& x, const Shape& target) {
  if (x.shape() == target) return x;
  if (is_scalar(target)) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return Tensor(target, std::vector<double>{s});
  }
  if (x.rank() != 2 || target.size() != 2) {
    throw ShapeError("sum_to: cannot reduce " + shape_str(x.shape()) + " to " + shape_str(target));
  }
  const std::size_t R = x.shape()[0], C = x.shape()[1];
  if ((target[0] != R && target[0] != 1) || (target[1] != C && target[1] != 1)) {
    throw ShapeError("sum_to: cannot reduce " + shape_str(x.shape()) + " to " + shape_str(target));
  }
  Tensor r(target);
  for (std::size_t i = 0; i < R; ++i) {
    for (std::size_t j = 0; j < C; ++j) {
      r.at(target[0] == 1 ? 0 : i, target[1] == 1 ? 0 : j) += x.at(i, j);
    }
  }
  return r;
}

Tensor broadcast_value(const Tensor& x, const Shape& target) {
  if (x.shape() == target) return x;
  if (x.size() == 1) return Tensor(target, x[0]);
  if (x.rank() != 2 || target.size() != 2) {
    throw ShapeError("broadcast_to: cannot expand " + shape_str(x.shape()) + " to " + shape_str(target));
  }
  if ((x.shape()[0] != target[0] && x.shape()[0] != 1) || (x.shape()[1] != target[1] && x.shape()[1] != 1)) {
    throw ShapeError("broadcast_to: cannot expand " + shape_str(x.shape()) + " to " + shape_str(target));
  }
  Tensor r(target);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = x[bindex(x, target, i)];
  return r;
}

void require_same_tape(std::string_view op, Var a, Var b) {
  if (!a.valid() || !b.valid() || a.tape != b.tape) {
    throw Error(std::string(op) + ": operands are invalid or live on different tapes");
  }
}

void require_rank2(std::string_view op, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + shape_str(t.shape()));
}

Var make(Tape& tape, OpKind kind, Tensor value, std::vector<int> parents) {
  Tape::Node n;
  n.kind = kind;
  n.value = std::move(value);
  n.parents = std::move(parents);
  return tape.push(std::move(n));
}

Var make_binary(OpKind kind, Var a, Var b, Tensor value) { return make(*a.tape, kind, std::move(value), {a.id, b.id}); }

}  // namespace

void set_default_check_finite(bool on) { g_default_check_finite = on; }
bool Tape::default_check_finite() { return g_default_check_finite.load(); }

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::constant: return "constant";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::neg: return "neg";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::relu: return "relu";
    case OpKind::tanh: return "tanh";
    case OpKind::sin: return "sin";
    case OpKind::cos: return "cos";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::sqrt: return "sqrt";
    case OpKind::abs: return "abs";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::sum: return "sum";
    case OpKind::sum_to: return "sum_to";
    case OpKind::broadcast_to: return "broadcast_to";
    case OpKind::slice_cols: return "slice_cols";
    case OpKind::pad_cols: return "pad_cols";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::reshape: return "reshape";
    case OpKind::row_norm: return "row_norm";
    case OpKind::custom: return "custom";
  }
  return "?";
}

Shape broadcast_shape(std::string_view op, const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (is_scalar(a) && is_scalar(b)) return a.size() >= b.size() ? a : b;
  if (is_scalar(a)) return b;
  if (is_scalar(b)) return a;
  if (a.size() == 2 && b.size() == 2) {
    Shape out(2);
    for (int d = 0; d < 2; ++d) {
      if (a[d] == b[d] || b[d] == 1) {
        out[d] = a[d];
      } else if (a[d] == 1) {
        out[d] = b[d];
      } else {
        throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
      }
    }
    return out;
  }
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

const Tensor& Var::value() const {
  if (!valid()) throw Error("Var: use of an unbound variable");
  return tape->value(*this);
}

Var Tape::push(Node node) {
  if (check_finite_ && !node.value.all_finite()) {
    std::string name(op_name(node.kind));
    if (node.custom) name += ":" + std::string(node.custom->name());
    throw NonFiniteError("non-finite value produced by op '" + name + "'");
  }
  if (node.kind == OpKind::leaf) {
    node.requires_grad = true;
  } else if (node.kind != OpKind::constant) {
    node.requires_grad = false;
    for (int p : node.parents) node.requires_grad = node.requires_grad || nodes_[static_cast<std::size_t>(p)].requires_grad;
  }
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.kind = OpKind::leaf;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.kind = OpKind::constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::custom(std::shared_ptr<const CustomOp> op, std::vector<Var> inputs, Tensor output) {
  Node n;
  n.kind = OpKind::custom;
  n.value = std::move(output);
  n.custom = std::move(op);
  for (const Var& v : inputs) {
    if (v.tape != this) throw Error("custom op: input from a different tape");
    n.parents.push_back(v.id);
  }
  return push(std::move(n));
}

const Tensor& Tape::value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
OpKind Tape::kind(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).kind; }
bool Tape::requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }

GradResult Tape::grad(Var output, std::span<const Var> wrt, bool create_graph) {
  if (output.tape != this) throw Error("grad: output belongs to another tape");
  if (value(output).size() != 1) {
    throw ShapeError("grad: output must be scalar, got shape " + shape_str(value(output).shape()));
  }
  const auto n = static_cast<std::size_t>(output.id) + 1;
  std::vector<char> reach(n, 0);
  for (const Var& w : wrt) {
    if (w.tape != this) throw Error("grad: variable belongs to another tape");
    if (static_cast<std::size_t>(w.id) < n) reach[static_cast<std::size_t>(w.id)] = 1;
  }
  for (std::size_t id = 0; id < n; ++id) {
    if (reach[id]) continue;
    for (int p : nodes_[id].parents) {
      if (reach[static_cast<std::size_t>(p)]) {
        reach[id] = 1;
        break;
      }
    }
  }

  std::vector<int> gid(n, -1);
  std::vector<unsigned> visits(n, 0);
  gid[n - 1] = constant(Tensor(value(output).shape(), 1.0)).id;
  last_visits_ = 0;
  last_max_visits_ = 0;

  std::vector<char> need;
  for (std::size_t k = n; k-- > 0;) {
    if (gid[k] < 0 || !reach[k]) continue;
    const Node& node = nodes_[k];
    if (node.kind == OpKind::leaf || node.kind == OpKind::constant) continue;
    need.assign(node.parents.size(), 0);
    bool any = false;
    for (std::size_t j = 0; j < node.parents.size(); ++j) {
      need[j] = reach[static_cast<std::size_t>(node.parents[j])];
      any = any || need[j];
    }
    if (!any) continue;
    ++visits[k];
    ++last_visits_;
    last_max_visits_ = std::max<std::size_t>(last_max_visits_, visits[k]);
    const std::vector<int> parents = node.parents;  // nodes_ may reallocate below
    std::vector<Var> pg = backward_rule(static_cast<int>(k), Var{this, gid[k]}, need, create_graph);
    for (std::size_t j = 0; j < parents.size(); ++j) {
      if (!need[j] || !pg[j].valid()) continue;
      auto p = static_cast<std::size_t>(parents[j]);
      gid[p] = gid[p] < 0 ? pg[j].id : add(Var{this, gid[p]}, pg[j]).id;
    }
  }

  GradResult result;
  for (const Var& w : wrt) {
    const auto id = static_cast<std::size_t>(w.id);
    if (id < n && gid[id] >= 0) {
      result.grads.push_back(Var{this, gid[id]});
      result.detached.push_back(false);
    } else {
      result.grads.push_back(constant(Tensor(value(w).shape(), 0.0)));
      result.detached.push_back(true);
    }
  }
  return result;
}

std::vector<Var> Tape::backward_rule(int id, Var g, const std::vector<char>& need, bool create_graph) {
  // Copy what we need: pushing nodes may invalidate references into nodes_.
  const OpKind kind = nodes_[static_cast<std::size_t>(id)].kind;
  const std::vector<int> parents = nodes_[static_cast<std::size_t>(id)].parents;
  const Var out{this, id};
  auto P = [&](std::size_t j) { return Var{this, parents[j]}; };
  auto pshape = [&](std::size_t j) { return nodes_[static_cast<std::size_t>(parents[j])].value.shape(); };
  std::vector<Var> r(parents.size());

  switch (kind) {
    case OpKind::add:
      if (need[0]) r[0] = sum_to(g, pshape(0));
      if (need[1]) r[1] = sum_to(g, pshape(1));
      break;
    case OpKind::sub:
      if (need[0]) r[0] = sum_to(g, pshape(0));
      if (need[1]) r[1] = sum_to(neg(g), pshape(1));
      break;
    case OpKind::mul:
      if (need[0]) r[0] = sum_to(mul(g, P(1)), pshape(0));
      if (need[1]) r[1] = sum_to(mul(g, P(0)), pshape(1));
      break;
    case OpKind::div:
      if (need[0]) r[0] = sum_to(div(g, P(1)), pshape(0));
      if (need[1]) r[1] = sum_to(neg(div(mul(g, out), P(1))), pshape(1));
      break;
    case OpKind::neg:
      r[0] = neg(g);
      break;
    case OpKind::scale:
      r[0] = scale(g, nodes_[static_cast<std::size_t>(id)].param);
      break;
    case OpKind::add_scalar:
      r[0] = g;
      break;
    case OpKind::matmul:
      if (need[0]) r[0] = matmul(g, transpose(P(1)));
      if (need[1]) r[1] = matmul(transpose(P(0)), g);
      break;
    case OpKind::transpose:
      r[0] = transpose(g);
      break;
    case OpKind::relu: {
      Tensor mask = unary(nodes_[static_cast<std::size_t>(parents[0])].value, [](double x) { return x > 0 ? 1.0 : 0.0; });
      r[0] = mul(g, constant(std::move(mask)));
      break;
    }
    case OpKind::tanh:
      r[0] = mul(g, add_scalar(neg(mul(out, out)), 1.0));
      break;
    case OpKind::sin:
      r[0] = mul(g, cos(P(0)));
      break;
    case OpKind::cos:
      r[0] = neg(mul(g, sin(P(0))));
      break;
    case OpKind::exp:
      r[0] = mul(g, out);
      break;
    case OpKind::log:
      r[0] = div(g, P(0));
      break;
    case OpKind::sqrt:
      r[0] = div(g, scale(out, 2.0));
      break;
    case OpKind::abs: {
      Tensor sign = unary(nodes_[static_cast<std::size_t>(parents[0])].value,
                          [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
      r[0] = mul(g, constant(std::move(sign)));
      break;
    }
    case OpKind::sigmoid:
      r[0] = mul(g, mul(out, add_scalar(neg(out), 1.0)));
      break;
    case OpKind::sum:
    case OpKind::sum_to:
      r[0] = broadcast_to(g, pshape(0));
      break;
    case OpKind::broadcast_to:
      r[0] = sum_to(g, pshape(0));
      break;
    case OpKind::slice_cols: {
      const auto& nd = nodes_[static_cast<std::size_t>(id)];
      r[0] = pad_cols(g, pshape(0)[1], nd.i0);
      break;
    }
    case OpKind::pad_cols: {
      const std::size_t off = nodes_[static_cast<std::size_t>(id)].i0;
      r[0] = slice_cols(g, off, off + pshape(0)[1]);
      break;
    }
    case OpKind::concat_cols: {
      std::size_t off = 0;
      for (std::size_t j = 0; j < parents.size(); ++j) {
        const std::size_t c = pshape(j)[1];
        if (need[j]) r[j] = slice_cols(g, off, off + c);
        off += c;
      }
      break;
    }
    case OpKind::reshape:
      r[0] = reshape(g, pshape(0));
      break;
    case OpKind::row_norm: {
      Tensor zero_mask = unary(nodes_[static_cast<std::size_t>(id)].value, [](double x) { return x == 0.0 ? 1.0 : 0.0; });
      r[0] = div(mul(g, P(0)), add(out, constant(std::move(zero_mask))));
      break;
    }
    case OpKind::custom: {
      if (create_graph) {
        throw Error("grad: custom op '" + std::string(nodes_[static_cast<std::size_t>(id)].custom->name()) +
                    "' is first-order only and cannot be differentiated with create_graph");
      }
      const auto op = nodes_[static_cast<std::size_t>(id)].custom;
      std::vector<const Tensor*> inputs;
      inputs.reserve(parents.size());
      for (int p : parents) inputs.push_back(&nodes_[static_cast<std::size_t>(p)].value);
      std::vector<Tensor> grads = op->backward(value(g), inputs, nodes_[static_cast<std::size_t>(id)].value);
      for (std::size_t j = 0; j < parents.size(); ++j) {
        if (need[j] && j < grads.size() && !grads[j].empty()) r[j] = constant(std::move(grads[j]));
      }
      break;
    }
    case OpKind::leaf:
    case OpKind::constant:
      break;
  }
  return r;
}

Var add(Var a, Var b) {
  require_same_tape("add", a, b);
  const Shape s = broadcast_shape("add", a.shape(), b.shape());
  return make_binary(OpKind::add, a, b, binary(a.value(), b.value(), s, [](double x, double y) { return x + y; }));
}

Var sub(Var a, Var b) {
  require_same_tape("sub", a, b);
  const Shape s = broadcast_shape("sub", a.shape(), b.shape());
  return make_binary(OpKind::sub, a, b, binary(a.value(), b.value(), s, [](double x, double y) { return x - y; }));
}

Var mul(Var a, Var b) {
  require_same_tape("mul", a, b);
  const Shape s = broadcast_shape("mul", a.shape(), b.shape());
  return make_binary(OpKind::mul, a, b, binary(a.value(), b.value(), s, [](double x, double y) { return x * y; }));
}

Var div(Var a, Var b) {
  require_same_tape("div", a, b);
  const Shape s = broadcast_shape("div", a.shape(), b.shape());
  return make_binary(OpKind::div, a, b, binary(a.value(), b.value(), s, [](double x, double y) { return x / y; }));
}

Var neg(Var a) { return make(*a.tape, OpKind::neg, unary(a.value(), [](double x) { return -x; }), {a.id}); }

Var scale(Var a, double k) {
  Tape::Node n;
  n.kind = OpKind::scale;
  n.value = unary(a.value(), [k](double x) { return k * x; });
  n.parents = {a.id};
  n.param = k;
  return a.tape->push(std::move(n));
}

Var add_scalar(Var a, double k) {
  return make(*a.tape, OpKind::add_scalar, unary(a.value(), [k](double x) { return x + k; }), {a.id});
}

Var matmul(Var a, Var b) {
  require_same_tape("matmul", a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.shape()[1] != B.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  }
  const std::size_t M = A.shape()[0], K = A.shape()[1], N = B.shape()[1];
  Tensor C({M, N});
  const double* ad = A.data().data();
  const double* bd = B.data().data();
  double* cd = C.data().data();
  for (std::size_t i = 0; i < M; ++i) {
    double* crow = cd + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double aik = ad[i * K + k];
      if (aik == 0.0) continue;
      const double* brow = bd + k * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += aik * brow[j];
    }
  }
  return make_binary(OpKind::matmul, a, b, std::move(C));
}

Var transpose(Var a) {
  const Tensor& A = a.value();
  require_rank2("transpose", A);
  const std::size_t R = A.shape()[0], C = A.shape()[1];
  Tensor T({C, R});
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) T.at(j, i) = A.at(i, j);
  return make(*a.tape, OpKind::transpose, std::move(T), {a.id});
}

Var relu(Var a) { return make(*a.tape, OpKind::relu, unary(a.value(), [](double x) { return x > 0 ? x : 0.0; }), {a.id}); }
Var tanh(Var a) { return make(*a.tape, OpKind::tanh, unary(a.value(), [](double x) { return std::tanh(x); }), {a.id}); }
Var sin(Var a) { return make(*a.tape, OpKind::sin, unary(a.value(), [](double x) { return std::sin(x); }), {a.id}); }
Var cos(Var a) { return make(*a.tape, OpKind::cos, unary(a.value(), [](double x) { return std::cos(x); }), {a.id}); }
Var exp(Var a) { return make(*a.tape, OpKind::exp, unary(a.value(), [](double x) { return std::exp(x); }), {a.id}); }
Var log(Var a) { return make(*a.tape, OpKind::log, unary(a.value(), [](double x) { return std::log(x); }), {a.id}); }
Var sqrt(Var a) { return make(*a.tape, OpKind::sqrt, unary(a.value(), [](double x) { return std::sqrt(x); }), {a.id}); }
Var abs(Var a) { return make(*a.tape, OpKind::abs, unary(a.value(), [](double x) { return std::abs(x); }), {a.id}); }

Var sigmoid(Var a) {
  return make(*a.tape, OpKind::sigmoid, unary(a.value(), [](double x) { return 1.0 / (1.0 + std::exp(-x)); }), {a.id});
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return make(*a.tape, OpKind::sum, Tensor::scalar(s), {a.id});
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var sum_to(Var a, const Shape& shape) {
  if (a.shape() == shape) return a;
  return make(*a.tape, OpKind::sum_to, sum_to_value(a.value(), shape), {a.id});
}

Var broadcast_to(Var a, const Shape& shape) {
  if (a.shape() == shape) return a;
  return make(*a.tape, OpKind::broadcast_to, broadcast_value(a.value(), shape), {a.id});
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& A = a.value();
  require_rank2("slice_cols", A);
  const std::size_t R = A.shape()[0], C = A.shape()[1];
  if (begin > end || end > C) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
                     shape_str(A.shape()));
  }
  Tensor S({R, end - begin});
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = begin; j < end; ++j) S.at(i, j - begin) = A.at(i, j);
  Tape::Node n;
  n.kind = OpKind::slice_cols;
  n.value = std::move(S);
  n.parents = {a.id};
  n.i0 = begin;
  n.i1 = end;
  return a.tape->push(std::move(n));
}

Var pad_cols(Var a, std::size_t total_cols, std::size_t offset) {
  const Tensor& A = a.value();
  require_rank2("pad_cols", A);
  const std::size_t R = A.shape()[0], C = A.shape()[1];
  if (offset + C > total_cols) throw ShapeError("pad_cols: " + shape_str(A.shape()) + " does not fit");
  Tensor P({R, total_cols});
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) P.at(i, offset + j) = A.at(i, j);
  Tape::Node n;
  n.kind = OpKind::pad_cols;
  n.value = std::move(P);
  n.parents = {a.id};
  n.i0 = offset;
  return a.tape->push(std::move(n));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  Tape* tape = parts[0].tape;
  const std::size_t R = parts[0].value().rows();
  std::size_t C = 0;
  for (const Var& p : parts) {
    require_same_tape("concat_cols", parts[0], p);
    require_rank2("concat_cols", p.value());
    if (p.value().shape()[0] != R) throw ShapeError("concat_cols: row mismatch " + shape_str(p.value().shape()));
    C += p.value().shape()[1];
  }
  Tensor out({R, C});
  std::size_t off = 0;
  std::vector<int> ids;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const std::size_t c = v.shape()[1];
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < c; ++j) out.at(i, off + j) = v.at(i, j);
    off += c;
    ids.push_back(p.id);
  }
  return make(*tape, OpKind::concat_cols, std::move(out), std::move(ids));
}

Var reshape(Var a, const Shape& shape) {
  if (a.shape() == shape) return a;
  return make(*a.tape, OpKind::reshape, a.value().reshaped(shape), {a.id});
}

Var row_norm(Var a) {
  const Tensor& A = a.value();
  require_rank2("row_norm", A);
  const std::size_t R = A.shape()[0], C = A.shape()[1];
  Tensor N({R, 1});
  for (std::size_t i = 0; i < R; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < C; ++j) s += A.at(i, j) * A.at(i, j);
    N.at(i, 0) = std::sqrt(s);
  }
  return make(*a.tape, OpKind::row_norm, std::move(N), {a.id});
}

}  // namespace nehad::ad
