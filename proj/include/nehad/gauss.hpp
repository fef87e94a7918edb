#pragma once

// Gaussian primitives, quaternion/covariance math and PLY persistence.
//
// Quaternions are [w, x, y, z] (Hamilton convention). Scales are stored as
// log-scale and opacity as a logit, so exp/sigmoid keep them positive and
// inside (0, 1).

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "nehad/error.hpp"

namespace nehad {

template <class T> using Vec3T = std::array<T, 3>;
template <class T> using QuatT = std::array<T, 4>;
template <class T> using Mat3T = std::array<std::array<T, 3>, 3>;

using Vec3 = Vec3T<double>;
using Quat = QuatT<double>;
using Mat3 = Mat3T<double>;

inline constexpr Quat kIdentityQuat{1.0, 0.0, 0.0, 0.0};

template <class T>
QuatT<T> quat_mul(const QuatT<T>& a, const QuatT<T>& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
          a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
          a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

template <class T>
T quat_norm(const QuatT<T>& q) {
  using std::sqrt;
  return sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
}

// Unchecked normalization for templated kernels; callers guarantee ‖q‖ > 0.
template <class T>
QuatT<T> quat_unit(const QuatT<T>& q) {
  const T n = quat_norm(q);
  return {q[0] / n, q[1] / n, q[2] / n, q[3] / n};
}

// Throws on ‖q‖ <= 1e-12 (degenerate rotation).
Quat quat_normalize(const Quat& q);

template <class T>
Mat3T<T> quat_to_rotmat(const QuatT<T>& q) {
  const T w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3T<T> R;
  R[0] = {1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)};
  R[1] = {2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)};
  R[2] = {2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)};
  return R;
}

// Σ = R diag(s)² Rᵀ without any validation, for templated kernels.
template <class T>
Mat3T<T> covariance_unchecked(const Vec3T<T>& s, const QuatT<T>& rot) {
  const Mat3T<T> R = quat_to_rotmat(rot);
  Mat3T<T> S;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      T acc = R[i][0] * R[j][0] * s[0] * s[0];
      acc += R[i][1] * R[j][1] * s[1] * s[1];
      acc += R[i][2] * R[j][2] * s[2] * s[2];
      S[i][j] = acc;
    }
  }
  return S;
}

// Checked covariance: rejects quaternions further than 1e-4 from unit norm.
Mat3 covariance(const Vec3& scale, const Quat& rot);

struct GaussianPrimitive {
  Vec3 mu{0.0, 0.0, 0.0};
  Vec3 log_scale{0.0, 0.0, 0.0};
  Quat rot = kIdentityQuat;
  double opacity_logit = 0.0;
  Vec3 color{0.5, 0.5, 0.5};
  Vec3 mu_eq{0.0, 0.0, 0.0};
  double t_eq_pos = 0.5;
  double t_eq_scale = 0.5;

  Vec3 scale() const { return {std::exp(log_scale[0]), std::exp(log_scale[1]), std::exp(log_scale[2])}; }
  double opacity() const { return 1.0 / (1.0 + std::exp(-opacity_logit)); }

  // Primitive at `mu` with equilibrium defaults (mu_eq = mu, t_eq = 0.5).
  static GaussianPrimitive at(const Vec3& mu);

  friend bool operator==(const GaussianPrimitive&, const GaussianPrimitive&) = default;
};

struct Aabb {
  Vec3 lo{-1.0, -1.0, -1.0};
  Vec3 hi{1.0, 1.0, 1.0};

  Vec3 extent() const { return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}; }
  double diagonal() const;
  // Maps a point into [0,1]³ (no clamping).
  Vec3 normalize(const Vec3& p) const;

  friend bool operator==(const Aabb&, const Aabb&) = default;
};

struct Scene {
  std::vector<GaussianPrimitive> primitives;
  Aabb bounds;

  std::size_t size() const noexcept { return primitives.size(); }
  // Bounds of all positions, padded by `margin` times the extent (min 1e-3).
  void fit_bounds(double margin = 0.1);

  friend bool operator==(const Scene&, const Scene&) = default;
};

// Binary little-endian PLY with 3DGS property names plus eq_x, eq_y, eq_z,
// eq_t_pos, eq_t_scale. Values are stored as float32.
void save_ply(const Scene& scene, const std::filesystem::path& path);
Scene load_ply(const std::filesystem::path& path);
// In-memory form of the same file layout.
std::string encode_ply(const Scene& scene);
Scene decode_ply(std::string_view bytes);

// SH degree-0 coefficient used to map between RGB and f_dc.
inline constexpr double kShC0 = 0.28209479177387814;

}  // namespace nehad
