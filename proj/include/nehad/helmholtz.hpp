#pragma once

// Spectral Helmholtz–Hodge decomposition on periodic n³ lattices (unit
// torus, spacing 1/n). Used as an independent oracle for the conservative /
// solenoidal split.

#include <complex>
#include <cstddef>
#include <functional>
#include <vector>

#include "nehad/gauss.hpp"

namespace nehad {

struct GridField {
  std::size_t n = 0;
  std::vector<Vec3> values;  // index (k * n + j) * n + i for site (i, j, k) at (i/n, j/n, k/n)

  GridField() = default;
  explicit GridField(std::size_t n);

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return (k * n + j) * n + i; }
  Vec3& at(std::size_t i, std::size_t j, std::size_t k) { return values[index(i, j, k)]; }
  const Vec3& at(std::size_t i, std::size_t j, std::size_t k) const { return values[index(i, j, k)]; }

  static GridField sample(std::size_t n, const std::function<Vec3(double, double, double)>& f);
  // Throws unless n >= 4, n is a power of two and values holds n³ sites.
  void validate() const;
};

struct ScalarGrid {
  std::size_t n = 0;
  std::vector<double> values;
};

struct HelmholtzParts {
  GridField conservative;  // F_c: curl-free
  GridField solenoidal;    // F_s: divergence-free
  Vec3 mean{0.0, 0.0, 0.0};  // F_0: the constant (zero-wavevector) mode
};

// Split uses the central-difference wavevector n·sin(2πm/n), so the discrete
// divergence of F_s and curl of F_c vanish to rounding.
HelmholtzParts decompose(const GridField& field);

ScalarGrid divergence(const GridField& field);
GridField curl(const GridField& field);

GridField operator+(const GridField& a, const GridField& b);
GridField operator-(const GridField& a, const GridField& b);
double max_norm(const GridField& f);
double max_norm(const ScalarGrid& f);
double l2_norm(const GridField& f);
// Lattice inner product Σ_sites a·b.
double inner(const GridField& a, const GridField& b);

// In-place radix-2 complex FFT (length must be a power of two). The inverse
// includes the 1/n factor.
void fft(std::vector<std::complex<double>>& data, bool inverse);

}  // namespace nehad
