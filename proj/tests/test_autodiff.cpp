#include <cmath>
#include <functional>

#include "doctest.h"
#include "nehad/autodiff.hpp"
#include "nehad/error.hpp"
#include "nehad/optim.hpp"
#include "support.hpp"

using namespace nehad;
using testing::grad_close;
using testing::numeric_grad;
using testing::random_tensor;

TEST_CASE("forward examples") {
  ad::Tape tape;
  const auto r = ad::relu(tape.leaf(Tensor::row({-1.0, 2.0})));
  CHECK(r.value()[0] == 0.0);
  CHECK(r.value()[1] == 2.0);

  const Tensor x = random_tensor({3, 2});
  const auto y = ad::matmul(tape.constant(Tensor::identity(3)), tape.leaf(x));
  CHECK(y.value() == x);

  CHECK(ad::sum(ad::exp(tape.leaf(Tensor({3}, 0.0)))).value().item() == 3.0);
}

TEST_CASE("shape errors name the op and shapes") {
  ad::Tape tape;
  const auto a = tape.leaf(Tensor({2, 3}));
  const auto b = tape.leaf(Tensor({4, 3}));
  try {
    (void)ad::add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("2") != std::string::npos);
    CHECK(msg.find("4") != std::string::npos);
  }
  CHECK_THROWS_AS((void)ad::matmul(a, b), ShapeError);
}

TEST_CASE("grad examples") {
  ad::Tape tape;
  const auto x = tape.leaf(Tensor::row({1.0, 2.0}));
  const ad::Var wrt[] = {x};
  const auto g = tape.grad(ad::sum(x * x), wrt);
  CHECK(g.grads[0].value()[0] == 2.0);
  CHECK(g.grads[0].value()[1] == 4.0);
  CHECK_FALSE(g.detached[0]);

  const auto c = tape.constant(Tensor::scalar(3.0));
  const auto gc = tape.grad(c, wrt);
  CHECK(gc.detached[0]);
  CHECK(gc.grads[0].value()[0] == 0.0);
  CHECK(gc.grads[0].value()[1] == 0.0);
}

TEST_CASE("grad of non-scalar output is an error") {
  ad::Tape tape;
  const auto x = tape.leaf(Tensor::row({1.0, 2.0}));
  const ad::Var wrt[] = {x};
  CHECK_THROWS_AS((void)tape.grad(x * x, wrt), ShapeError);
}

namespace {

using UnaryOp = std::function<ad::Var(ad::Var)>;

// Checks d/dx sum(w ⊙ op(x)) against central differences at 20 random points.
void check_unary(const char* name, const UnaryOp& op, const Shape& shape, double lo, double hi) {
  CAPTURE(name);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x0 = random_tensor(shape, lo, hi);
    ad::Tape probe;
    const Shape out_shape = op(probe.constant(x0)).shape();
    const Tensor w = random_tensor(out_shape);
    auto f = [&](const Tensor& x) {
      ad::Tape t;
      return ad::sum(op(t.constant(x)) * t.constant(w)).value().item();
    };
    ad::Tape tape;
    const auto x = tape.leaf(x0);
    const ad::Var wrt[] = {x};
    const Tensor g = tape.grad(ad::sum(op(x) * tape.constant(w)), wrt).grads[0].value();
    const Tensor n = numeric_grad(f, x0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      CAPTURE(i);
      CHECK(grad_close(g[i], n[i], 1e-5, 1e-7));
    }
  }
}

}  // namespace

TEST_CASE("every primitive op matches finite differences") {
  const Shape s{3, 4};
  check_unary("neg", [](ad::Var a) { return -a; }, s, -1, 1);
  check_unary("scale", [](ad::Var a) { return a * 2.5; }, s, -1, 1);
  check_unary("add_scalar", [](ad::Var a) { return a + 0.7; }, s, -1, 1);
  check_unary("relu", [](ad::Var a) { return ad::relu(a); }, s, -1, 1);
  check_unary("tanh", [](ad::Var a) { return ad::tanh(a); }, s, -2, 2);
  check_unary("sin", [](ad::Var a) { return ad::sin(a); }, s, -3, 3);
  check_unary("cos", [](ad::Var a) { return ad::cos(a); }, s, -3, 3);
  check_unary("exp", [](ad::Var a) { return ad::exp(a); }, s, -2, 2);
  check_unary("log", [](ad::Var a) { return ad::log(a); }, s, 0.2, 3);
  check_unary("sqrt", [](ad::Var a) { return ad::sqrt(a); }, s, 0.2, 3);
  check_unary("abs", [](ad::Var a) { return ad::abs(a); }, s, -1, 1);
  check_unary("sigmoid", [](ad::Var a) { return ad::sigmoid(a); }, s, -3, 3);
  check_unary("sum", [](ad::Var a) { return ad::sum(a); }, s, -1, 1);
  check_unary("mean", [](ad::Var a) { return ad::mean(a); }, s, -1, 1);
  check_unary("transpose", [](ad::Var a) { return ad::transpose(a); }, s, -1, 1);
  check_unary("sum_to", [](ad::Var a) { return ad::sum_to(a, {1, 4}); }, s, -1, 1);
  check_unary("sum_to_col", [](ad::Var a) { return ad::sum_to(a, {3, 1}); }, s, -1, 1);
  check_unary("broadcast_to", [](ad::Var a) { return ad::broadcast_to(ad::sum_to(a, {1, 4}), {5, 4}); }, s, -1, 1);
  check_unary("slice_cols", [](ad::Var a) { return ad::slice_cols(a, 1, 3); }, s, -1, 1);
  check_unary("pad_cols", [](ad::Var a) { return ad::pad_cols(a, 7, 2); }, s, -1, 1);
  check_unary("reshape", [](ad::Var a) { return ad::reshape(a, {2, 6}); }, s, -1, 1);
  check_unary("row_norm", [](ad::Var a) { return ad::row_norm(a); }, s, -1, 1);
  check_unary("concat_cols",
              [](ad::Var a) {
                const ad::Var parts[] = {ad::slice_cols(a, 2, 4), a, ad::exp(ad::slice_cols(a, 0, 1))};
                return ad::concat_cols(parts);
              },
              s, -1, 1);

  // Binary ops: differentiate w.r.t. both operands by packing them in one tensor.
  const Tensor other = random_tensor({3, 4}, 0.5, 1.5);
  const Tensor row = random_tensor({1, 4}, 0.5, 1.5);
  const Tensor mat = random_tensor({4, 2});
  check_unary("add", [&](ad::Var a) { return a + a.tape->constant(other); }, s, -1, 1);
  check_unary("sub", [&](ad::Var a) { return a.tape->constant(other) - a; }, s, -1, 1);
  check_unary("mul", [&](ad::Var a) { return a * a.tape->constant(other); }, s, -1, 1);
  check_unary("div_num", [&](ad::Var a) { return a / a.tape->constant(other); }, s, -1, 1);
  check_unary("div_den", [&](ad::Var a) { return a.tape->constant(other) / a; }, s, 0.5, 2);
  check_unary("mul_self", [](ad::Var a) { return a * a; }, s, -1, 1);
  check_unary("broadcast_row", [&](ad::Var a) { return a * a.tape->constant(row); }, s, -1, 1);
  check_unary("broadcast_operand", [&](ad::Var a) { return a.tape->constant(other) * ad::sum_to(a, {1, 4}); }, s, -1,
              1);
  check_unary("broadcast_scalar", [&](ad::Var a) { return a.tape->constant(other) * ad::sum(a); }, s, -1, 1);
  check_unary("matmul_left", [&](ad::Var a) { return ad::matmul(a, a.tape->constant(mat)); }, s, -1, 1);
  check_unary("matmul_right", [&](ad::Var a) { return ad::matmul(a.tape->constant(mat.reshaped({2, 4})), ad::transpose(a)); },
              s, -1, 1);
}

TEST_CASE("second order: gradient norm of half squared norm") {
  const Tensor x0 = random_tensor({1, 5});
  ad::Tape tape;
  const auto x = tape.leaf(x0);
  const ad::Var wrt[] = {x};
  const auto g = tape.grad(0.5 * ad::sum(x * x), wrt, true).grads[0];
  const auto gg = tape.grad(ad::sum(g * g), wrt).grads[0];
  for (std::size_t i = 0; i < x0.size(); ++i) CHECK(gg.value()[i] == 2.0 * x0[i]);
}

TEST_CASE("second order through tanh matches finite differences of the gradient") {
  // h(x) = Σ (∂/∂x Σ tanh(xW))² ; compare d h/dx to numeric differences of h.
  const Tensor W = random_tensor({3, 4});
  auto h_of = [&](const Tensor& xv, Tensor* grad) {
    ad::Tape tape;
    const auto x = tape.leaf(xv);
    const ad::Var wrt[] = {x};
    const auto g = tape.grad(ad::sum(ad::tanh(ad::matmul(x, tape.constant(W)))), wrt, true).grads[0];
    const auto h = ad::sum(g * g);
    if (grad) *grad = tape.grad(h, wrt).grads[0].value();
    return h.value().item();
  };
  const Tensor x0 = random_tensor({2, 3});
  Tensor g;
  h_of(x0, &g);
  const Tensor n = numeric_grad([&](const Tensor& x) { return h_of(x, nullptr); }, x0);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(grad_close(g[i], n[i], 1e-5, 1e-7));
}

TEST_CASE("backward touches each node once") {
  ad::Tape tape;
  const auto x = tape.leaf(random_tensor({4, 4}));
  auto y = x;
  for (int i = 0; i < 5; ++i) y = ad::tanh(y) * x + y;  // heavy reuse of x and y
  const ad::Var wrt[] = {x};
  (void)tape.grad(ad::sum(y), wrt);
  CHECK(tape.last_max_visits_per_node() == 1);
  CHECK(tape.last_backward_visits() > 0);
}

TEST_CASE("finite checking") {
  ad::Tape tape;
  tape.set_check_finite(true);
  CHECK_THROWS_AS((void)ad::log(tape.leaf(Tensor::row({-1.0}))), NonFiniteError);
  ad::Tape loose;
  loose.set_check_finite(false);
  CHECK(std::isnan(ad::log(loose.leaf(Tensor::row({-1.0}))).value()[0]));
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves the parameter unchanged") {
    const Tensor p = random_tensor({2, 3});
    AdamState st = AdamState::for_shape(p.shape());
    const Tensor q = adam_step(p, Tensor(p.shape()), st, 0.1);
    CHECK(q == p);
    CHECK(st.step == 1);
  }
  SUBCASE("first step moves by about lr against the gradient sign") {
    const Tensor p = Tensor::row({0.0, 0.0, 0.0});
    const Tensor g = Tensor::row({3.0, -0.5, 1e-3});
    AdamState st = AdamState::for_shape(p.shape());
    const Tensor q = adam_step(p, g, st, 0.01);
    for (std::size_t i = 0; i < 3; ++i) {
      const double expect = -0.01 * g[i] / (std::abs(g[i]) + st.eps);
      CHECK(q[i] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  SUBCASE("converges on a quadratic") {
    Tensor x = Tensor::row({1.0, 1.0});
    AdamState st = AdamState::for_shape(x.shape());
    for (int i = 0; i < 1000; ++i) {
      Tensor g = x;
      for (double& v : g.data()) v *= 2.0;
      adam_update(x, g, st, 0.01);
    }
    CHECK(std::hypot(x[0], x[1]) < 1e-3);
  }
  SUBCASE("shape mismatch") {
    AdamState st = AdamState::for_shape({2});
    CHECK_THROWS_AS((void)adam_step(Tensor({2}), Tensor({3}), st, 0.1), ShapeError);
  }
}
