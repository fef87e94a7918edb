#pragma once

// Position Verlet update and the rotation-increment rigidity clamp.

#include <cmath>
#include <numbers>

#include "nehad/autodiff.hpp"
#include "nehad/dual.hpp"
#include "nehad/gauss.hpp"

namespace nehad {

struct IntegratorConfig {
  double dt = 1.0 / 19.0;
  double phi_max = 0.35;  // radians

  void validate() const;
};

// μ̃ = μ + dt Δμ + dt²/2 F
Vec3 verlet_position(const Vec3& mu, const Vec3& dmu, const Vec3& force, double dt);
ad::Var verlet_position(ad::Var mu, ad::Var dmu, ad::Var force, double dt);

// Limits the rotation angle of an increment to phi_max·tanh(φ/phi_max),
// keeping its axis. Returns identity when the axis is numerically zero.
template <class T>
QuatT<T> clamp_rotation_t(const QuatT<T>& dr, double phi_max) {
  using std::atan2;
  using std::cos;
  using std::sin;
  using std::sqrt;
  using std::tanh;
  const T gn2 = dr[1] * dr[1] + dr[2] * dr[2] + dr[3] * dr[3];
  if (value_of(gn2) < 1e-18) return {T(1.0), T(0.0), T(0.0), T(0.0)};
  const T gn = sqrt(gn2);
  const T phi = 2.0 * atan2(gn, dr[0]);
  const T half = 0.5 * phi_max * tanh(phi / phi_max);
  const T k = sin(half) / gn;
  return {cos(half), k * dr[1], k * dr[2], k * dr[3]};
}

// Throws on a (near) zero increment.
Quat clamp_rotation(const Quat& dr, double phi_max);

// Full rotation angle 2·atan2(‖g‖, w) of a quaternion, in [0, 2π].
double rotation_angle(const Quat& q);

// r' = normalize(r ⊗ Δr'). Both inputs must be unit within 1e-4.
Quat apply_rotation(const Quat& r, const Quat& dr_clamped);

// Batched clamp + apply: rot, dr are [N,4]; rot is normalized first (it is a
// free parameter during training). Differentiable in both inputs.
ad::Var rotate_clamped(ad::Var rot, ad::Var dr, double phi_max);

}  // namespace nehad
