#pragma once

// Boltzmann equilibrium decomposition: per-primitive deviation energies,
// soft static/dynamic masks and mask-weighted blending.

#include <cmath>
#include <utility>

#include "nehad/autodiff.hpp"
#include "nehad/gauss.hpp"

namespace nehad {

struct BedConfig {
  double sigma_s = 0.1;   // scene units
  double sigma_t = 0.2;   // normalized time
  double coupling_lambda = 0.1;
  double beta = 1.0;
  double gamma = 0.05;

  // Throws ConfigError unless sigma_s, sigma_t, beta > 0, 0 <= gamma < 1, |lambda| < 1.
  void validate() const;
  // Defaults with sigma_s = 0.1 * scene diagonal.
  static BedConfig for_scene(const Aabb& bounds);
};

// (Δd, Δτ) = (‖μ − μ_eq‖ / σ_s, (t − t_eq) / σ_t).
template <class T>
std::pair<T, T> deviations(const Vec3T<T>& mu, const Vec3T<T>& mu_eq, T t, T t_eq, T sigma_s, T sigma_t) {
  using std::sqrt;
  const T dx = mu[0] - mu_eq[0], dy = mu[1] - mu_eq[1], dz = mu[2] - mu_eq[2];
  return {sqrt(dx * dx + dy * dy + dz * dz) / sigma_s, (t - t_eq) / sigma_t};
}
std::pair<double, double> deviations(const Vec3& mu, const Vec3& mu_eq, double t, double t_eq, const BedConfig& cfg);

template <class T>
T spatial_temporal_energy(T dd, T dtau, double lambda) {
  return 0.5 * (dd * dd + dtau * dtau) + lambda * dd * dtau;
}
double spatial_temporal_energy(double dd, double dtau, const BedConfig& cfg);

double temporal_energy(double t, double t_eq, const BedConfig& cfg);

template <class T>
T boltzmann_mask(T energy, double beta, double gamma) {
  using std::exp;
  return (1.0 - gamma) * exp(-beta * energy) + gamma;
}
double boltzmann_mask(double energy, const BedConfig& cfg);

// μ' = μ̃ (1 − M) + μ M. Throws if M is outside [0, 1].
Vec3 blend_position(const Vec3& mu, const Vec3& mu_tilde, double mask);
// s' = s + Δs (1 − M). Throws if M is outside [0, 1].
Vec3 blend_scale(const Vec3& s, const Vec3& ds, double mask);

// Batched tape versions. mu, mu_eq: [N,3]; t_eq: [N,1]; masks come back [N,1].
ad::Var position_mask(ad::Var mu, ad::Var mu_eq, double t, ad::Var t_eq, const BedConfig& cfg);
ad::Var scale_mask(double t, ad::Var t_eq, const BedConfig& cfg);
ad::Var blend_position(ad::Var mu, ad::Var mu_tilde, ad::Var mask);
ad::Var blend_scale(ad::Var s, ad::Var ds, ad::Var mask);

}  // namespace nehad
