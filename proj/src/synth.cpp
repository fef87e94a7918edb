#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "nehad/pipeline.hpp"

namespace nehad {

SynthKind parse_synth_kind(const std::string& s) {
  if (s == "pendulum") return SynthKind::pendulum;
  if (s == "orbit") return SynthKind::orbit;
  if (s == "mixed") return SynthKind::mixed;
  throw ConfigError("synth: unknown kind '" + s + "' (pendulum, orbit, mixed)");
}

const char* synth_kind_name(SynthKind k) {
  switch (k) {
    case SynthKind::pendulum:
      return "pendulum";
    case SynthKind::orbit:
      return "orbit";
    case SynthKind::mixed:
      return "mixed";
  }
  return "?";
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Quat z_rotation(double angle) { return {std::cos(0.5 * angle), 0.0, 0.0, std::sin(0.5 * angle)}; }

Vec3 rotate_z(const Vec3& v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]};
}

// Rigid motion of a primitive group: world = center(t) + R_z(angle(t)) offset.
struct Group {
  std::vector<std::size_t> members;
  std::vector<Vec3> offsets;
  std::function<Vec3(double)> center;
  std::function<double(double)> angle;
};

struct Builder {
  std::mt19937_64 rng;
  std::vector<GaussianPrimitive> rest;  // attributes at zero angle, offsets in `mu`
  std::vector<Group> groups;

  double uni(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }

  GaussianPrimitive random_look(const Vec3& base_color) {
    GaussianPrimitive g;
    for (int i = 0; i < 3; ++i) {
      g.log_scale[i] = std::log(uni(0.03, 0.065));
      g.color[i] = std::clamp(base_color[i] + uni(-0.15, 0.15), 0.0, 1.0);
    }
    std::normal_distribution<double> n01(0.0, 1.0);
    g.rot = quat_normalize({n01(rng), n01(rng), n01(rng), n01(rng)});
    g.opacity_logit = uni(1.5, 3.0);
    return g;
  }

  void add_group(std::size_t count, const Vec3& base_color, const std::function<Vec3()>& offset,
                 std::function<Vec3(double)> center, std::function<double(double)> angle) {
    Group grp;
    grp.center = std::move(center);
    grp.angle = std::move(angle);
    for (std::size_t i = 0; i < count; ++i) {
      grp.members.push_back(rest.size());
      grp.offsets.push_back(offset());
      rest.push_back(random_look(base_color));
    }
    groups.push_back(std::move(grp));
  }

  Scene at(double t) const {
    Scene s;
    s.primitives = rest;
    for (const Group& g : groups) {
      const Vec3 c = g.center(t);
      const double a = g.angle(t);
      const Quat q = z_rotation(a);
      for (std::size_t k = 0; k < g.members.size(); ++k) {
        GaussianPrimitive& p = s.primitives[g.members[k]];
        const Vec3 o = rotate_z(g.offsets[k], a);
        p.mu = {c[0] + o[0], c[1] + o[1], c[2] + o[2]};
        p.rot = quat_mul(q, p.rot);
        p.mu_eq = p.mu;
      }
    }
    return s;
  }
};

}  // namespace

SynthResult synth_scene(SynthKind kind, std::size_t n_frames, std::size_t n_gaussians, int resolution,
                        std::uint64_t seed) {
  if (n_frames == 0) throw ConfigError("synth: need at least one frame");
  if (n_gaussians == 0) throw ConfigError("synth: need at least one primitive");
  if (resolution < 1) throw ConfigError("synth: resolution must be positive");
  Builder b{std::mt19937_64(seed), {}, {}};

  // Small-angle pendulum: θ(t) = θ0 cos(ωt), unit mass, g/L = ω².
  const double omega = kTwoPi, theta0 = 0.45;
  auto pendulum = [&](std::size_t count, const Vec3& pivot, double length, double bob_radius) {
    auto offset = [&, length, bob_radius]() -> Vec3 {
      if (b.uni(0.0, 1.0) < 0.25) return {b.uni(-0.03, 0.03), b.uni(0.15, 1.0) * length, b.uni(-0.03, 0.03)};
      for (;;) {
        const Vec3 v{b.uni(-1, 1), b.uni(-1, 1), b.uni(-1, 1)};
        if (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] <= 1.0) {
          return {v[0] * bob_radius, length + v[1] * bob_radius, v[2] * bob_radius * 0.5};
        }
      }
    };
    b.add_group(count, {0.85, 0.25, 0.2}, offset, [pivot](double) { return pivot; },
                [=](double t) { return -theta0 * std::cos(omega * t); });
  };
  auto pendulum_energy = [&](double length, double t) {
    const double th = theta0 * std::cos(omega * t), thd = -theta0 * omega * std::sin(omega * t);
    return 0.5 * length * length * thd * thd + 0.5 * omega * omega * length * length * th * th;
  };

  std::size_t n_static = 0;
  double pend_length = 0.0;
  switch (kind) {
    case SynthKind::pendulum:
      pend_length = 0.9;
      pendulum(n_gaussians, {0.0, -0.95, 0.0}, pend_length, 0.25);
      break;
    case SynthKind::orbit: {
      const double R = 0.55;
      const std::size_t half = n_gaussians / 2;
      for (int k = 0; k < 2; ++k) {
        const std::size_t count = k == 0 ? half : n_gaussians - half;
        auto ball = [&]() -> Vec3 {
          for (;;) {
            const Vec3 v{b.uni(-1, 1), b.uni(-1, 1), b.uni(-1, 1)};
            if (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] <= 1.0) return {0.22 * v[0], 0.22 * v[1], 0.11 * v[2]};
          }
        };
        const double phase = k * std::numbers::pi;
        b.add_group(count, k == 0 ? Vec3{0.2, 0.35, 0.85} : Vec3{0.2, 0.75, 0.3}, ball,
                    [=](double t) { return Vec3{R * std::cos(kTwoPi * t + phase), R * std::sin(kTwoPi * t + phase), 0.0}; },
                    [](double) { return 0.0; });
      }
      break;
    }
    case SynthKind::mixed: {
      n_static = n_gaussians / 2;
      auto band = [&]() -> Vec3 { return {b.uni(-1.0, 1.0), b.uni(0.45, 0.95), b.uni(-0.15, 0.15)}; };
      b.add_group(n_static, {0.25, 0.45, 0.8}, band, [](double) { return Vec3{0.0, 0.0, 0.0}; },
                  [](double) { return 0.0; });
      pend_length = 0.7;
      pendulum(n_gaussians - n_static, {0.0, -1.1, 0.0}, pend_length, 0.2);
      break;
    }
  }

  SynthResult out;
  out.is_static.assign(n_gaussians, false);
  for (std::size_t i = 0; i < n_static; ++i) out.is_static[i] = true;
  const Camera cam = Camera::centered(resolution, resolution, static_cast<double>(resolution), 3.0);

  std::vector<double> times(n_frames);
  for (std::size_t k = 0; k < n_frames; ++k) times[k] = n_frames == 1 ? 0.5 : static_cast<double>(k) / (n_frames - 1);

  Scene all_positions;
  for (double t : times) {
    Scene s = b.at(t);
    Frame f;
    f.t = t;
    f.camera = cam;
    f.image = rasterize(s, cam, Vec3{1.0, 1.0, 1.0});
    for (const auto& g : s.primitives) {
      f.trajectory.push_back(g.mu);
      all_positions.primitives.push_back(g);
    }
    out.dataset.frames.push_back(std::move(f));
    if (kind == SynthKind::orbit) {
      const double v = 0.55 * kTwoPi;
      out.energy.push_back(0.5 * v * v);
    } else {
      out.energy.push_back(pendulum_energy(pend_length, t));
    }
  }
  all_positions.fit_bounds(0.1);

  out.gt_canonical = b.at(0.5);
  out.gt_canonical.bounds = all_positions.bounds;

  // Starting point: the canonical configuration with jittered attributes.
  Scene init = out.gt_canonical;
  std::normal_distribution<double> n01(0.0, 1.0);
  for (auto& g : init.primitives) {
    for (int i = 0; i < 3; ++i) {
      g.mu[i] += 0.02 * n01(b.rng);
      g.log_scale[i] += 0.1 * n01(b.rng);
      g.color[i] = std::clamp(g.color[i] + 0.08 * n01(b.rng), 0.0, 1.0);
    }
    g.mu_eq = g.mu;
    g.t_eq_pos = 0.5;
    g.t_eq_scale = 0.5;
  }
  out.dataset.init = init;
  out.dataset.gt = out.gt_canonical;
  out.dataset.meta = {{"kind", synth_kind_name(kind)},
                      {"frames", std::to_string(n_frames)},
                      {"gaussians", std::to_string(n_gaussians)},
                      {"resolution", std::to_string(resolution)},
                      {"seed", std::to_string(seed)},
                      {"static_count", std::to_string(n_static)}};
  return out;
}

}  // namespace nehad
