#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "nehad/tensor.hpp"

namespace testing {

inline std::mt19937_64& rng() {
  static std::mt19937_64 r(12345);
  return r;
}

inline double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng()); }

inline nehad::Tensor random_tensor(const nehad::Shape& shape, double lo = -1.0, double hi = 1.0) {
  nehad::Tensor t(shape);
  for (double& v : t.data()) v = uniform(lo, hi);
  return t;
}

// Central-difference gradient of a scalar function of a tensor.
inline nehad::Tensor numeric_grad(const std::function<double(const nehad::Tensor&)>& f, nehad::Tensor x,
                                  double h = 1e-6) {
  nehad::Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Relative error with an absolute floor for entries near zero.
inline bool grad_close(double analytic, double numeric, double rel, double abs_floor) {
  const double d = std::abs(analytic - numeric);
  return d <= abs_floor || d <= rel * std::max(std::abs(analytic), std::abs(numeric));
}

}  // namespace testing
