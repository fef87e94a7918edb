#include "nehad/optim.hpp"

#include <cmath>

#include "nehad/error.hpp"

namespace nehad {

void adam_update(Tensor& param, const Tensor& grad, AdamState& state, double lr) {
  if (param.shape() != grad.shape()) {
    throw ShapeError("adam_step: parameter " + shape_str(param.shape()) + " vs gradient " + shape_str(grad.shape()));
  }
  if (state.m.empty() && state.v.empty() && state.step == 0) {
    state.m = Tensor(param.shape());
    state.v = Tensor(param.shape());
  }
  if (state.m.shape() != param.shape() || state.v.shape() != param.shape()) {
    throw ShapeError("adam_step: state moments " + shape_str(state.m.shape()) + " do not match parameter " +
                     shape_str(param.shape()));
  }
  ++state.step;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double step_size = lr / c1;
  const double inv_sqrt_c2 = 1.0 / std::sqrt(c2);
  auto p = param.data();
  auto g = grad.data();
  auto m = state.m.data();
  auto v = state.v.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    p[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_c2 + state.eps);
  }
}

Tensor adam_step(const Tensor& param, const Tensor& grad, AdamState& state, double lr) {
  Tensor out = param;
  adam_update(out, grad, state, lr);
  return out;
}

}  // namespace nehad
