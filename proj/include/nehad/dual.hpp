#pragma once

// Forward-mode dual numbers with N tangent directions. Used to get exact
// Jacobians of small per-primitive kernels (projection, rotation updates)
// written once as templates over the scalar type.

#include <array>
#include <cmath>

namespace nehad {

template <int N>
struct Dual {
  double v = 0.0;
  std::array<double, N> d{};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit from constants is intended

  static Dual variable(double value, int index) {
    Dual x(value);
    x.d[static_cast<std::size_t>(index)] = 1.0;
    return x;
  }

  Dual& operator+=(const Dual& o) {
    v += o.v;
    for (int i = 0; i < N; ++i) d[i] += o.d[i];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    for (int i = 0; i < N; ++i) d[i] -= o.d[i];
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    for (int i = 0; i < N; ++i) d[i] = d[i] * o.v + v * o.d[i];
    v *= o.v;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const double inv = 1.0 / o.v;
    for (int i = 0; i < N; ++i) d[i] = (d[i] - v * inv * o.d[i]) * inv;
    v *= inv;
    return *this;
  }
};

template <int N> Dual<N> operator+(Dual<N> a, const Dual<N>& b) { return a += b; }
template <int N> Dual<N> operator-(Dual<N> a, const Dual<N>& b) { return a -= b; }
template <int N> Dual<N> operator*(Dual<N> a, const Dual<N>& b) { return a *= b; }
template <int N> Dual<N> operator/(Dual<N> a, const Dual<N>& b) { return a /= b; }
template <int N> Dual<N> operator+(Dual<N> a, double b) { a.v += b; return a; }
template <int N> Dual<N> operator+(double b, Dual<N> a) { a.v += b; return a; }
template <int N> Dual<N> operator-(Dual<N> a, double b) { a.v -= b; return a; }
template <int N> Dual<N> operator-(double b, const Dual<N>& a) {
  Dual<N> r;
  r.v = b - a.v;
  for (int i = 0; i < N; ++i) r.d[i] = -a.d[i];
  return r;
}
template <int N> Dual<N> operator-(const Dual<N>& a) { return 0.0 - a; }
template <int N> Dual<N> operator*(Dual<N> a, double b) {
  a.v *= b;
  for (auto& x : a.d) x *= b;
  return a;
}
template <int N> Dual<N> operator*(double b, Dual<N> a) { return a * b; }
template <int N> Dual<N> operator/(Dual<N> a, double b) { return a * (1.0 / b); }
template <int N> Dual<N> operator/(double b, const Dual<N>& a) { return Dual<N>(b) / a; }

template <int N> bool operator<(const Dual<N>& a, const Dual<N>& b) { return a.v < b.v; }
template <int N> bool operator<(const Dual<N>& a, double b) { return a.v < b; }
template <int N> bool operator>(const Dual<N>& a, double b) { return a.v > b; }

namespace detail {
template <int N, class F, class DF>
Dual<N> chain(const Dual<N>& a, F f, DF df) {
  Dual<N> r;
  r.v = f(a.v);
  const double k = df(a.v, r.v);
  for (int i = 0; i < N; ++i) r.d[i] = k * a.d[i];
  return r;
}
}  // namespace detail

template <int N> Dual<N> sqrt(const Dual<N>& a) {
  return detail::chain(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}
template <int N> Dual<N> exp(const Dual<N>& a) {
  return detail::chain(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
template <int N> Dual<N> log(const Dual<N>& a) {
  return detail::chain(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
template <int N> Dual<N> sin(const Dual<N>& a) {
  return detail::chain(a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}
template <int N> Dual<N> cos(const Dual<N>& a) {
  return detail::chain(a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}
template <int N> Dual<N> tanh(const Dual<N>& a) {
  return detail::chain(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}
template <int N> Dual<N> atan2(const Dual<N>& y, const Dual<N>& x) {
  Dual<N> r;
  r.v = std::atan2(y.v, x.v);
  const double den = x.v * x.v + y.v * y.v;
  for (int i = 0; i < N; ++i) r.d[i] = (x.v * y.d[i] - y.v * x.d[i]) / den;
  return r;
}

inline double value_of(double x) { return x; }
template <int N> double value_of(const Dual<N>& x) { return x.v; }

}  // namespace nehad
