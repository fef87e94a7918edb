#include <cmath>

#include "nehad/pipeline.hpp"

namespace nehad {

Model init_model(const TrainConfig& cfg, const Scene& init) {
  cfg.validate();
  if (init.size() == 0) throw Error("init_model: empty initial scene");
  Model m;
  m.scene = init;
  m.encoder = HexPlaneEncoder(cfg.hexplane(), cfg.seed);
  m.decoder = DeformDecoder(m.encoder.feature_dim(), cfg.decoder(), cfg.seed + 101);
  return m;
}

SceneTensors SceneTensors::from_scene(const Scene& s) {
  const std::size_t n = s.size();
  SceneTensors t{Tensor({n, 3}), Tensor({n, 3}), Tensor({n, 4}), Tensor({n, 1}),
                 Tensor({n, 3}), Tensor({n, 3}), Tensor({n, 1}), Tensor({n, 1})};
  for (std::size_t i = 0; i < n; ++i) {
    const GaussianPrimitive& g = s.primitives[i];
    for (std::size_t k = 0; k < 3; ++k) {
      t.mu.at(i, k) = g.mu[k];
      t.log_scale.at(i, k) = g.log_scale[k];
      t.color.at(i, k) = g.color[k];
      t.mu_eq.at(i, k) = g.mu_eq[k];
    }
    for (std::size_t k = 0; k < 4; ++k) t.rot.at(i, k) = g.rot[k];
    t.opacity.at(i, 0) = g.opacity_logit;
    t.t_eq_pos.at(i, 0) = g.t_eq_pos;
    t.t_eq_scale.at(i, 0) = g.t_eq_scale;
  }
  return t;
}

void SceneTensors::to_scene(Scene& s) const {
  const std::size_t n = mu.rows();
  s.primitives.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    GaussianPrimitive& g = s.primitives[i];
    for (std::size_t k = 0; k < 3; ++k) {
      g.mu[k] = mu.at(i, k);
      g.log_scale[k] = log_scale.at(i, k);
      g.color[k] = color.at(i, k);
      g.mu_eq[k] = mu_eq.at(i, k);
    }
    for (std::size_t k = 0; k < 4; ++k) g.rot[k] = rot.at(i, k);
    g.opacity_logit = opacity.at(i, 0);
    g.t_eq_pos = t_eq_pos.at(i, 0);
    g.t_eq_scale = t_eq_scale.at(i, 0);
  }
}

DeformSettings deform_settings(const TrainConfig& cfg, const Aabb& bounds, std::size_t num_frames) {
  return {cfg.bed(bounds), cfg.integrator(num_frames), cfg.use_bed, bounds};
}

BoundModel bind_model(ad::Tape& tape, const SceneTensors& st, const Model& model) {
  BoundModel m;
  auto leaf = [&](const Tensor& t) {
    const ad::Var v = tape.leaf(t);
    m.leaves.push_back(v);
    return v;
  };
  m.splat.mu = leaf(st.mu);
  m.mu_eq = leaf(st.mu_eq);
  m.t_eq_pos = leaf(st.t_eq_pos);
  m.t_eq_scale = leaf(st.t_eq_scale);
  m.splat.log_scale = leaf(st.log_scale);
  m.splat.rot = leaf(st.rot);
  m.splat.opacity_logit = leaf(st.opacity);
  m.splat.color = leaf(st.color);
  for (const PlaneGrid& p : model.encoder.planes()) m.planes.push_back(leaf(p.params));
  m.decoder = model.decoder.bind(tape, m.leaves);
  return m;
}

DeformedVars deform_batch(const BoundModel& m, const HexPlaneEncoder& encoder, double t, const DeformSettings& s,
                          std::vector<std::string>* trace) {
  if (!(t >= 0.0 && t <= 1.0)) throw Error("deform: t = " + std::to_string(t) + " outside [0, 1]");
  auto mark = [&](const char* stage) {
    if (trace) trace->emplace_back(stage);
  };
  ad::Tape& tape = *m.splat.mu.tape;
  const std::size_t n = m.splat.mu.shape()[0];

  const Vec3 ext = s.bounds.extent();
  Tensor lo({1, 3}), inv({1, 3});
  for (std::size_t k = 0; k < 3; ++k) {
    lo[k] = s.bounds.lo[k];
    inv[k] = 1.0 / ext[k];
  }
  const ad::Var unit = (m.splat.mu - tape.constant(lo)) * tape.constant(inv);
  const ad::Var coord_parts[] = {unit, tape.constant(Tensor({n, 1}, t))};
  const ad::Var coords = ad::concat_cols(coord_parts);

  mark("encode");
  const ad::Var features = encoder.encode(coords, m.planes);
  mark("latent");
  const ad::Var h = latent(m.decoder, features);
  mark("vector_fields");
  const VectorFields vf = vector_fields(m.decoder, h);
  mark("deform");
  const Deformation d = deform(m.decoder, vf.v);
  mark("force");
  const ad::Var F = force(m.decoder, vf.v_c);
  mark("verlet");
  const ad::Var mu_tilde = verlet_position(m.splat.mu, d.d_mu, F, s.integrator.dt);

  mark("masks");
  ad::Var mask_pos, mask_scale;
  if (s.use_bed) {
    mask_pos = position_mask(m.splat.mu, m.mu_eq, t, m.t_eq_pos, s.bed);
    mask_scale = scale_mask(t, m.t_eq_scale, s.bed);
  } else {
    mask_pos = tape.constant(Tensor({n, 1}));
    mask_scale = tape.constant(Tensor({n, 1}));
  }

  mark("blend");
  // Same value as mu_tilde (1 - M) + mu M, written so that a zero field
  // reproduces mu bit for bit.
  DeformedVars out;
  out.splat.mu = m.splat.mu + (mu_tilde - m.splat.mu) * (1.0 - mask_pos);
  out.splat.log_scale = blend_scale(m.splat.log_scale, d.d_s, mask_scale);

  mark("clamp_rotation");
  const ad::Var dr = d.d_rot + tape.constant(Tensor::row({1.0, 0.0, 0.0, 0.0}));
  mark("apply_rotation");
  out.splat.rot = rotate_clamped(m.splat.rot, dr, s.integrator.phi_max);

  out.splat.opacity_logit = m.splat.opacity_logit;
  out.splat.color = m.splat.color;
  out.mask_pos = mask_pos;
  out.mask_scale = mask_scale;
  out.mu_tilde = mu_tilde;
  return out;
}

Scene deform_scene(const Model& model, double t, const DeformSettings& s, std::vector<std::string>* trace) {
  ad::Tape tape;
  const SceneTensors st = SceneTensors::from_scene(model.scene);
  const BoundModel bm = bind_model(tape, st, model);
  const DeformedVars dv = deform_batch(bm, model.encoder, t, s, trace);
  SceneTensors out = st;
  out.mu = dv.splat.mu.value();
  out.log_scale = dv.splat.log_scale.value();
  out.rot = dv.splat.rot.value();
  Scene result;
  result.bounds = model.scene.bounds;
  out.to_scene(result);
  return result;
}

}  // namespace nehad
