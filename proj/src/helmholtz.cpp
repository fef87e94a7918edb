#include "nehad/helmholtz.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace nehad {

namespace {
bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }
}  // namespace

GridField::GridField(std::size_t size) : n(size), values(size * size * size, Vec3{0.0, 0.0, 0.0}) {}

GridField GridField::sample(std::size_t n, const std::function<Vec3(double, double, double)>& f) {
  GridField g(n);
  const double h = 1.0 / static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < n; ++i) g.at(i, j, k) = f(i * h, j * h, k * h);
  return g;
}

void GridField::validate() const {
  if (n < 4) throw Error("GridField: n must be >= 4, got " + std::to_string(n));
  if (!is_pow2(n)) throw Error("GridField: n must be a power of two, got " + std::to_string(n));
  if (values.size() != n * n * n) {
    throw ShapeError("GridField: grid is not cubic (" + std::to_string(values.size()) + " sites for n = " +
                     std::to_string(n) + ")");
  }
}

void fft(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (!is_pow2(n)) throw Error("fft: length must be a power of two, got " + std::to_string(n));
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w = std::polar(1.0, ang * static_cast<double>(k));
        const std::complex<double> u = a[i + k], v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

namespace {

using Grid = std::vector<std::complex<double>>;

void fft3(Grid& g, std::size_t n, bool inverse) {
  std::vector<std::complex<double>> line(n);
  const std::size_t strides[3] = {1, n, n * n};
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const std::size_t s = strides[axis];
    for (std::size_t base = 0; base < n * n * n; ++base) {
      // Visit each line once: skip bases whose coordinate along `axis` is nonzero.
      if ((base / s) % n != 0) continue;
      for (std::size_t t = 0; t < n; ++t) line[t] = g[base + t * s];
      fft(line, inverse);
      for (std::size_t t = 0; t < n; ++t) g[base + t * s] = line[t];
    }
  }
}

}  // namespace

HelmholtzParts decompose(const GridField& field) {
  field.validate();
  const std::size_t n = field.n, total = n * n * n;
  Grid hat[3];
  for (int c = 0; c < 3; ++c) {
    hat[c].resize(total);
    for (std::size_t s = 0; s < total; ++s) hat[c][s] = field.values[s][c];
    fft3(hat[c], n, false);
  }
  std::vector<double> ktilde(n);
  for (std::size_t m = 0; m < n; ++m) ktilde[m] = static_cast<double>(n) * std::sin(2.0 * std::numbers::pi * m / n);

  Grid cons[3], sol[3];
  for (int c = 0; c < 3; ++c) {
    cons[c].assign(total, 0.0);
    sol[c].assign(total, 0.0);
  }
  HelmholtzParts out;
  for (int c = 0; c < 3; ++c) out.mean[c] = hat[c][0].real() / static_cast<double>(total);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t s = (k * n + j) * n + i;
        if (s == 0) continue;  // zero mode reported separately
        const double kv[3] = {ktilde[i], ktilde[j], ktilde[k]};
        const double k2 = kv[0] * kv[0] + kv[1] * kv[1] + kv[2] * kv[2];
        if (k2 < 1e-20) {
          // Nyquist-only modes are invisible to central differences: both
          // curl and divergence vanish; keep them on the solenoidal side.
          for (int c = 0; c < 3; ++c) sol[c][s] = hat[c][s];
          continue;
        }
        const std::complex<double> dot = kv[0] * hat[0][s] + kv[1] * hat[1][s] + kv[2] * hat[2][s];
        for (int c = 0; c < 3; ++c) {
          cons[c][s] = kv[c] * dot / k2;
          sol[c][s] = hat[c][s] - cons[c][s];
        }
      }
    }
  }
  out.conservative = GridField(n);
  out.solenoidal = GridField(n);
  for (int c = 0; c < 3; ++c) {
    fft3(cons[c], n, true);
    fft3(sol[c], n, true);
    for (std::size_t s = 0; s < total; ++s) {
      out.conservative.values[s][c] = cons[c][s].real();
      out.solenoidal.values[s][c] = sol[c][s].real();
    }
  }
  return out;
}

namespace {
// Central difference of component c along axis a at site (i, j, k).
double dcentral(const GridField& f, std::size_t i, std::size_t j, std::size_t k, int c, int axis) {
  const std::size_t n = f.n;
  std::size_t ip = i, im = i, jp = j, jm = j, kp = k, km = k;
  if (axis == 0) {
    ip = (i + 1) % n;
    im = (i + n - 1) % n;
  } else if (axis == 1) {
    jp = (j + 1) % n;
    jm = (j + n - 1) % n;
  } else {
    kp = (k + 1) % n;
    km = (k + n - 1) % n;
  }
  const Vec3& a = axis == 0 ? f.at(ip, j, k) : axis == 1 ? f.at(i, jp, k) : f.at(i, j, kp);
  const Vec3& b = axis == 0 ? f.at(im, j, k) : axis == 1 ? f.at(i, jm, k) : f.at(i, j, km);
  return (a[c] - b[c]) * 0.5 * static_cast<double>(n);
}
}  // namespace

ScalarGrid divergence(const GridField& f) {
  f.validate();
  ScalarGrid out{f.n, std::vector<double>(f.values.size())};
  for (std::size_t k = 0; k < f.n; ++k)
    for (std::size_t j = 0; j < f.n; ++j)
      for (std::size_t i = 0; i < f.n; ++i)
        out.values[f.index(i, j, k)] = dcentral(f, i, j, k, 0, 0) + dcentral(f, i, j, k, 1, 1) + dcentral(f, i, j, k, 2, 2);
  return out;
}

GridField curl(const GridField& f) {
  f.validate();
  GridField out(f.n);
  for (std::size_t k = 0; k < f.n; ++k) {
    for (std::size_t j = 0; j < f.n; ++j) {
      for (std::size_t i = 0; i < f.n; ++i) {
        out.at(i, j, k) = {dcentral(f, i, j, k, 2, 1) - dcentral(f, i, j, k, 1, 2),
                           dcentral(f, i, j, k, 0, 2) - dcentral(f, i, j, k, 2, 0),
                           dcentral(f, i, j, k, 1, 0) - dcentral(f, i, j, k, 0, 1)};
      }
    }
  }
  return out;
}

namespace {
GridField combine(const GridField& a, const GridField& b, double sign) {
  if (a.n != b.n || a.values.size() != b.values.size()) throw ShapeError("GridField: size mismatch");
  GridField out(a.n);
  for (std::size_t s = 0; s < a.values.size(); ++s) {
    for (int c = 0; c < 3; ++c) out.values[s][c] = a.values[s][c] + sign * b.values[s][c];
  }
  return out;
}
}  // namespace

GridField operator+(const GridField& a, const GridField& b) { return combine(a, b, 1.0); }
GridField operator-(const GridField& a, const GridField& b) { return combine(a, b, -1.0); }

double max_norm(const GridField& f) {
  double m = 0.0;
  for (const Vec3& v : f.values) m = std::max({m, std::abs(v[0]), std::abs(v[1]), std::abs(v[2])});
  return m;
}

double max_norm(const ScalarGrid& f) {
  double m = 0.0;
  for (double v : f.values) m = std::max(m, std::abs(v));
  return m;
}

double inner(const GridField& a, const GridField& b) {
  if (a.values.size() != b.values.size()) throw ShapeError("inner: size mismatch");
  double acc = 0.0;
  for (std::size_t s = 0; s < a.values.size(); ++s) {
    acc += a.values[s][0] * b.values[s][0] + a.values[s][1] * b.values[s][1] + a.values[s][2] * b.values[s][2];
  }
  return acc;
}

double l2_norm(const GridField& f) { return std::sqrt(inner(f, f)); }

}  // namespace nehad
