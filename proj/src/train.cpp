#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

#include "nehad/pipeline.hpp"

namespace nehad {

namespace {

double image_psnr(const Tensor& render, const Tensor& gt) {
  double se = 0.0;
  for (std::size_t i = 0; i < render.size(); ++i) {
    const double d = render[i] - gt[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(render.size());
  return mse == 0.0 ? INFINITY : 10.0 * std::log10(1.0 / mse);
}

void renormalize_rows(Tensor& rot) {
  for (std::size_t i = 0; i < rot.rows(); ++i) {
    double n2 = 0.0;
    for (std::size_t k = 0; k < 4; ++k) n2 += rot.at(i, k) * rot.at(i, k);
    if (!(n2 > 1e-24)) {
      for (std::size_t k = 0; k < 4; ++k) rot.at(i, k) = k == 0 ? 1.0 : 0.0;
      continue;
    }
    const double n = std::sqrt(n2);
    for (std::size_t k = 0; k < 4; ++k) rot.at(i, k) /= n;
  }
}

// Frames used at one iteration.
std::vector<std::size_t> pick_frames(const TrainConfig& cfg, std::size_t it, std::size_t n_frames,
                                     std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  switch (cfg.frame_sampling) {
    case FrameSampling::nested:
      for (std::size_t i = 0; i < n_frames; ++i) out.push_back(i);
      break;
    case FrameSampling::ordered:
      for (std::size_t b = 0; b < cfg.batch_size; ++b) out.push_back((it * cfg.batch_size + b) % n_frames);
      break;
    case FrameSampling::random: {
      std::uniform_int_distribution<std::size_t> pick(0, n_frames - 1);
      for (std::size_t b = 0; b < cfg.batch_size; ++b) out.push_back(pick(rng));
      break;
    }
  }
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& cfg_in, const FrameDataset& dataset, const TrainOptions& opts) {
  {
    // A zero-iteration run is allowed here and returns the initialization.
    TrainConfig check = cfg_in;
    check.iterations = std::max<std::size_t>(check.iterations, 1);
    check.validate();
  }
  if (dataset.frames.empty()) throw Error("train: dataset has no frames");
  if (!dataset.init) throw Error("train: dataset has no initial scene (init.ply)");
  dataset.validate();

  TrainConfig init_cfg = cfg_in;
  init_cfg.iterations = std::max<std::size_t>(init_cfg.iterations, 1);
  Model model = init_model(init_cfg, *dataset.init);
  const std::size_t n_frames = dataset.frames.size();

  // The checkpoint carries the resolved automatic values so it can be
  // rendered without the dataset.
  TrainConfig cfg = cfg_in;
  cfg.dt = cfg.integrator(n_frames).dt;
  cfg.sigma_s = cfg.bed(model.scene.bounds).sigma_s;
  const DeformSettings settings = deform_settings(cfg, model.scene.bounds, n_frames);
  const LossConfig loss_cfg = cfg.loss();
  RasterConfig raster;
  raster.background = cfg.background_rgb();

  SceneTensors st = SceneTensors::from_scene(model.scene);

  // Parameter tensors in bind_model leaf order, with their learning rates.
  enum class Group { position, equilibrium, scale, rotation, opacity, color, encoder, decoder };
  std::vector<Tensor*> params{&st.mu, &st.mu_eq, &st.t_eq_pos, &st.t_eq_scale, &st.log_scale, &st.rot, &st.opacity,
                              &st.color};
  std::vector<Group> groups{Group::position, Group::equilibrium, Group::equilibrium, Group::equilibrium,
                            Group::scale,    Group::rotation,    Group::opacity,     Group::color};
  for (PlaneGrid& p : model.encoder.planes()) {
    params.push_back(&p.params);
    groups.push_back(Group::encoder);
  }
  for (Tensor* t : model.decoder.parameters()) {
    params.push_back(t);
    groups.push_back(Group::decoder);
  }
  std::vector<AdamState> adam;
  for (Tensor* t : params) adam.push_back(AdamState::for_shape(t->shape()));

  auto snapshot = [&](std::uint64_t iteration) {
    Checkpoint ck;
    ck.config = cfg;
    ck.iteration = iteration;
    ck.model = model;
    st.to_scene(ck.model.scene);
    ck.optimizer = adam;
    return ck;
  };

  std::vector<Tensor> gts;
  for (const Frame& f : dataset.frames) gts.push_back(f.image.to_tensor());

  std::mt19937_64 rng(cfg.seed);
  TrainResult result;
  result.losses.reserve(cfg.iterations);
  const double lr_ratio = cfg.encoder_lr_end / cfg.encoder_lr_start;

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    ad::Tape tape;
    tape.set_check_finite(cfg.check_finite);
    const std::vector<std::size_t> batch = pick_frames(cfg, it, n_frames, rng);

    double loss_value = 0.0;
    double psnr_value = 0.0;
    std::vector<Tensor> grads;
    try {
      const BoundModel bm = bind_model(tape, st, model);
      const ad::Var tv = cfg.tv_weight > 0.0 ? model.encoder.tv_loss(bm.planes) : ad::Var{};
      ad::Var loss;
      for (std::size_t k = 0; k < batch.size(); ++k) {
        const Frame& f = dataset.frames[batch[k]];
        const DeformedVars dv = deform_batch(bm, model.encoder, f.t, settings);
        const ad::Var render = rasterize(dv.splat, f.camera, raster);
        const ad::Var gt = tape.constant(gts[batch[k]]);
        const ad::Var l = total_loss(render, gt, tv, f.camera.width, f.camera.height, loss_cfg);
        loss = k == 0 ? l : loss + l;
        if (k == 0) psnr_value = image_psnr(render.value(), gts[batch[k]]);
      }
      if (batch.size() > 1) loss = loss * (1.0 / static_cast<double>(batch.size()));
      loss_value = loss.value().item();
      if (std::isfinite(loss_value)) {
        const auto g = tape.grad(loss, bm.leaves);
        for (const ad::Var& v : g.grads) grads.push_back(v.value());
      }
    } catch (const NonFiniteError&) {
      loss_value = NAN;
    }

    bool finite = std::isfinite(loss_value);
    for (std::size_t i = 0; finite && i < grads.size(); ++i) finite = grads[i].all_finite();
    if (!finite) {
      if (!opts.abort_dump.empty()) save_checkpoint(snapshot(it), opts.abort_dump);
      throw NonFiniteError("train: non-finite loss or gradient at iteration " + std::to_string(it) +
                           (opts.abort_dump.empty() ? "" : "; last good state written to " + opts.abort_dump.string()));
    }

    const double progress = static_cast<double>(it) / static_cast<double>(cfg.iterations);
    const double encoder_lr = cfg.encoder_lr_start * std::pow(lr_ratio, progress);
    for (std::size_t i = 0; i < params.size(); ++i) {
      double lr = 0.0;
      switch (groups[i]) {
        case Group::position:
          lr = cfg.position_lr;
          break;
        case Group::equilibrium:
          lr = cfg.equilibrium_lr;
          break;
        case Group::scale:
          lr = cfg.scale_lr;
          break;
        case Group::rotation:
          lr = cfg.rotation_lr;
          break;
        case Group::opacity:
          lr = cfg.opacity_lr;
          break;
        case Group::color:
          lr = cfg.color_lr;
          break;
        case Group::encoder:
          lr = encoder_lr;
          break;
        case Group::decoder:
          lr = cfg.decoder_lr;
          break;
      }
      adam_update(*params[i], grads[i], adam[i], lr);
    }
    renormalize_rows(st.rot);
    for (double& c : st.color.data()) c = std::clamp(c, 0.0, 1.0);
    for (double& c : st.t_eq_pos.data()) c = std::clamp(c, 0.0, 1.0);
    for (double& c : st.t_eq_scale.data()) c = std::clamp(c, 0.0, 1.0);

    result.losses.push_back(loss_value);
    if (opts.on_step) opts.on_step(it, loss_value);
    if (opts.log && cfg.log_interval > 0 && ((it + 1) % cfg.log_interval == 0 || it + 1 == cfg.iterations)) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "iter %zu loss %.6f psnr %s\n", it + 1, loss_value,
                    format_metric(psnr_value).c_str());
      *opts.log << buf << std::flush;
    }
  }

  result.checkpoint = snapshot(cfg.iterations);
  return result;
}

}  // namespace nehad
