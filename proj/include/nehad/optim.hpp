#pragma once

#include <cstdint>

#include "nehad/tensor.hpp"

namespace nehad {

struct AdamState {
  Tensor m;
  Tensor v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_shape(const Shape& shape) { return AdamState{Tensor(shape), Tensor(shape)}; }
};

// Bias-corrected Adam update; returns the new parameter and advances `state`.
Tensor adam_step(const Tensor& param, const Tensor& grad, AdamState& state, double lr);

// In-place variant used by the training loop.
void adam_update(Tensor& param, const Tensor& grad, AdamState& state, double lr);

}  // namespace nehad
