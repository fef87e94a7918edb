#include "nehad/bed.hpp"

#include <string>

namespace nehad {

void BedConfig::validate() const {
  if (!(sigma_s > 0.0)) throw ConfigError("bed: sigma_s must be > 0, got " + std::to_string(sigma_s));
  if (!(sigma_t > 0.0)) throw ConfigError("bed: sigma_t must be > 0, got " + std::to_string(sigma_t));
  if (!(beta > 0.0)) throw ConfigError("bed: beta must be > 0, got " + std::to_string(beta));
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("bed: gamma must lie in [0, 1), got " + std::to_string(gamma));
  if (!(std::abs(coupling_lambda) < 1.0)) {
    throw ConfigError("bed: |coupling_lambda| must be < 1 so the energy stays non-negative, got " +
                      std::to_string(coupling_lambda));
  }
}

BedConfig BedConfig::for_scene(const Aabb& bounds) {
  BedConfig c;
  c.sigma_s = 0.1 * bounds.diagonal();
  return c;
}

std::pair<double, double> deviations(const Vec3& mu, const Vec3& mu_eq, double t, double t_eq, const BedConfig& cfg) {
  return deviations<double>(mu, mu_eq, t, t_eq, cfg.sigma_s, cfg.sigma_t);
}

double spatial_temporal_energy(double dd, double dtau, const BedConfig& cfg) {
  return spatial_temporal_energy<double>(dd, dtau, cfg.coupling_lambda);
}

double temporal_energy(double t, double t_eq, const BedConfig& cfg) {
  const double x = (t - t_eq) / cfg.sigma_t;
  return 0.5 * x * x;
}

double boltzmann_mask(double energy, const BedConfig& cfg) { return boltzmann_mask<double>(energy, cfg.beta, cfg.gamma); }

namespace {
void check_mask(double m, const char* who) {
  if (!(m >= 0.0 && m <= 1.0)) throw Error(std::string(who) + ": mask " + std::to_string(m) + " outside [0, 1]");
}
}  // namespace

Vec3 blend_position(const Vec3& mu, const Vec3& mu_tilde, double mask) {
  check_mask(mask, "blend_position");
  Vec3 out;
  for (int i = 0; i < 3; ++i) out[i] = mu_tilde[i] * (1.0 - mask) + mu[i] * mask;
  return out;
}

Vec3 blend_scale(const Vec3& s, const Vec3& ds, double mask) {
  check_mask(mask, "blend_scale");
  Vec3 out;
  for (int i = 0; i < 3; ++i) out[i] = s[i] + ds[i] * (1.0 - mask);
  return out;
}

ad::Var position_mask(ad::Var mu, ad::Var mu_eq, double t, ad::Var t_eq, const BedConfig& cfg) {
  const ad::Var dd = ad::row_norm(mu - mu_eq) * (1.0 / cfg.sigma_s);
  const ad::Var dtau = (t - t_eq) * (1.0 / cfg.sigma_t);
  const ad::Var e = 0.5 * (dd * dd + dtau * dtau) + cfg.coupling_lambda * (dd * dtau);
  return (1.0 - cfg.gamma) * ad::exp(e * -cfg.beta) + cfg.gamma;
}

ad::Var scale_mask(double t, ad::Var t_eq, const BedConfig& cfg) {
  const ad::Var dtau = (t - t_eq) * (1.0 / cfg.sigma_t);
  return (1.0 - cfg.gamma) * ad::exp((dtau * dtau) * (-0.5 * cfg.beta)) + cfg.gamma;
}

ad::Var blend_position(ad::Var mu, ad::Var mu_tilde, ad::Var mask) { return mu_tilde * (1.0 - mask) + mu * mask; }

ad::Var blend_scale(ad::Var s, ad::Var ds, ad::Var mask) { return s + ds * (1.0 - mask); }

}  // namespace nehad
