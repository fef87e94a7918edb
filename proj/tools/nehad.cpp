// Command-line front end: synth, train, eval, render, stream-pack,
// stream-sweep, helmholtz-check.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>

#include "CLI11.hpp"
#include "nehad/helmholtz.hpp"
#include "nehad/pipeline.hpp"
#include "nehad/stream.hpp"

using namespace nehad;

namespace {

TrainConfig make_config(const std::string& preset, const std::string& path, const std::vector<std::string>& sets) {
  TrainConfig cfg;
  if (preset == "toy") {
    cfg = toy_config();
  } else if (preset != "default") {
    throw ConfigError("unknown preset '" + preset + "' (default, toy)");
  }
  if (!path.empty()) {
    // File keys override the preset.
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::string line;
    while (std::getline(in, line)) {
      const auto b = line.find_first_not_of(" \t\r");
      if (b == std::string::npos || line[b] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("config: expected key=value, got '" + line + "'");
      auto strip = [](std::string s) {
        const auto x = s.find_first_not_of(" \t\r");
        const auto y = s.find_last_not_of(" \t\r");
        return x == std::string::npos ? std::string() : s.substr(x, y - x + 1);
      };
      cfg.set(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
    }
  }
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

std::vector<View> dataset_views(const FrameDataset& ds, std::size_t frame) {
  if (frame >= ds.frames.size()) throw Error("frame index out of range");
  return {View{ds.frames[frame].camera, ds.frames[frame].image}};
}

int helmholtz_check(std::size_t n, std::uint64_t seed) {
  // Lattice gradient of a random potential plus lattice curl of a random
  // vector potential, plus a constant.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  std::vector<double> phi(n * n * n);
  for (double& v : phi) v = U(rng);
  GridField A(n);
  for (Vec3& v : A.values) v = {U(rng), U(rng), U(rng)};
  const Vec3 mean{U(rng), U(rng), U(rng)};
  GridField grad_part(n);
  const double h2 = 0.5 * static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        auto at = [&](std::size_t a, std::size_t b, std::size_t c) { return phi[grad_part.index(a % n, b % n, c % n)]; };
        grad_part.at(i, j, k) = {h2 * (at(i + 1, j, k) - at(i + n - 1, j, k)),
                                 h2 * (at(i, j + 1, k) - at(i, j + n - 1, k)),
                                 h2 * (at(i, j, k + 1) - at(i, j, k + n - 1))};
      }
    }
  }
  const GridField curl_part = curl(A);
  GridField field = grad_part + curl_part;
  for (Vec3& v : field.values) {
    for (int i = 0; i < 3; ++i) v[i] += mean[i];
  }
  const HelmholtzParts parts = decompose(field);
  GridField recon = parts.conservative + parts.solenoidal;
  for (Vec3& v : recon.values) {
    for (int i = 0; i < 3; ++i) v[i] += parts.mean[i];
  }
  const double rec = max_norm(recon - field);
  const double orth = std::abs(inner(parts.conservative, parts.solenoidal));
  const double div_s = max_norm(divergence(parts.solenoidal));
  const double curl_c = max_norm(curl(parts.conservative));
  const HelmholtzParts pg = decompose(grad_part);
  const HelmholtzParts pc = decompose(curl_part);
  std::printf("n=%zu\nreconstruction_max_err=%.3e\northogonality=%.3e\ndiv_solenoidal=%.3e\ncurl_conservative=%.3e\n",
              n, rec, orth, div_s, curl_c);
  std::printf("gradient_field_solenoidal_max=%.3e\ncurl_field_conservative_max=%.3e\n", max_norm(pg.solenoidal),
              max_norm(pc.conservative));
  const bool ok = rec < 1e-10 && orth < 1e-8 && max_norm(pg.solenoidal) < 1e-8 && max_norm(pc.conservative) < 1e-8;
  std::printf("%s\n", ok ? "ok" : "FAILED");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nehad: Hamiltonian Gaussian deformation fields"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string kind = "pendulum", synth_out;
  std::size_t n_frames = 20, n_gauss = 300;
  int resolution = 64;
  std::uint64_t seed = 0;
  synth->add_option("--kind", kind, "pendulum, orbit or mixed")->capture_default_str();
  synth->add_option("--frames", n_frames)->capture_default_str();
  synth->add_option("--gaussians", n_gauss)->capture_default_str();
  synth->add_option("--resolution", resolution)->capture_default_str();
  synth->add_option("--seed", seed)->capture_default_str();
  synth->add_option("--out", synth_out, "output directory")->required();

  // train
  auto* trn = app.add_subcommand("train", "train a model on a dataset");
  std::string config_path, data_dir, ckpt_out, preset = "default", abort_dump;
  std::vector<std::string> sets;
  trn->add_option("--config", config_path, "key=value config file");
  trn->add_option("--preset", preset, "default or toy (applied before --config)")->capture_default_str();
  trn->add_option("--set", sets, "extra key=value overrides");
  trn->add_option("--data", data_dir)->required();
  trn->add_option("--out", ckpt_out)->required();
  trn->add_option("--abort-dump", abort_dump, "checkpoint written on a non-finite loss");

  // eval
  auto* evl = app.add_subcommand("eval", "per-frame PSNR/SSIM of a checkpoint");
  std::string eval_ckpt, eval_data, eval_out;
  evl->add_option("--ckpt", eval_ckpt)->required();
  evl->add_option("--data", eval_data)->required();
  evl->add_option("--out", eval_out, "CSV path (stdout if omitted)");

  // render
  auto* rnd = app.add_subcommand("render", "render a time sequence");
  std::string rnd_ckpt, rnd_cam, rnd_data, rnd_out, rnd_traj;
  std::size_t rnd_frames = 0;
  std::vector<double> rnd_times;
  rnd->add_option("--ckpt", rnd_ckpt)->required();
  rnd->add_option("--camera", rnd_cam, ".cam file");
  rnd->add_option("--data", rnd_data, "dataset whose first camera is used");
  rnd->add_option("--frames", rnd_frames, "evenly spaced timestamps in [0, 1]");
  rnd->add_option("--times", rnd_times, "explicit timestamps");
  rnd->add_option("--out", rnd_out)->required();
  rnd->add_option("--traj", rnd_traj, "trajectory CSV");

  // stream-pack
  auto* pack = app.add_subcommand("stream-pack", "train a layered scene from one dataset frame");
  std::string pack_data, pack_out;
  std::size_t pack_frame = 0;
  LayeredTrainConfig lcfg;
  pack->add_option("--data", pack_data)->required();
  pack->add_option("--frame", pack_frame)->capture_default_str();
  pack->add_option("--layers", lcfg.layers)->capture_default_str();
  pack->add_option("--iterations", lcfg.iterations_per_layer)->capture_default_str();
  pack->add_option("--spawn", lcfg.spawn_per_layer)->capture_default_str();
  pack->add_option("--seed", lcfg.seed)->capture_default_str();
  pack->add_option("--out", pack_out)->required();

  // stream-sweep
  auto* sweep = app.add_subcommand("stream-sweep", "rate/quality table of a layered scene");
  std::string sweep_dir, sweep_data, sweep_out;
  std::size_t sweep_frame = 0;
  sweep->add_option("--layered", sweep_dir)->required();
  sweep->add_option("--data", sweep_data)->required();
  sweep->add_option("--frame", sweep_frame)->capture_default_str();
  sweep->add_option("--out", sweep_out, "CSV path (stdout if omitted)");

  // helmholtz-check
  auto* hh = app.add_subcommand("helmholtz-check", "spectral decomposition self-check");
  std::size_t hh_n = 16;
  std::uint64_t hh_seed = 0;
  hh->add_option("--n", hh_n)->capture_default_str();
  hh->add_option("--seed", hh_seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const SynthResult r = synth_scene(parse_synth_kind(kind), n_frames, n_gauss, resolution, seed);
      save_dataset(r.dataset, synth_out);
      std::printf("wrote %zu frames to %s\n", r.dataset.frames.size(), synth_out.c_str());
    } else if (*trn) {
      const TrainConfig cfg = make_config(preset, config_path, sets);
      const FrameDataset ds = load_dataset(data_dir);
      TrainOptions opts;
      opts.log = &std::cout;
      opts.abort_dump = abort_dump;
      const TrainResult r = train(cfg, ds, opts);
      save_checkpoint(r.checkpoint, ckpt_out);
    } else if (*evl) {
      const EvalTable t = eval(load_checkpoint(eval_ckpt), load_dataset(eval_data));
      if (eval_out.empty()) {
        write_eval_csv(t, std::cout);
      } else {
        std::ofstream out(eval_out);
        if (!out) throw Error("cannot write " + eval_out);
        write_eval_csv(t, out);
      }
    } else if (*rnd) {
      const Checkpoint ck = load_checkpoint(rnd_ckpt);
      Camera cam;
      if (!rnd_cam.empty()) {
        std::ifstream in(rnd_cam);
        if (!in) throw Error("cannot open " + rnd_cam);
        cam = read_camera(in).first;
      } else if (!rnd_data.empty()) {
        const FrameDataset ds = load_dataset(rnd_data);
        if (ds.frames.empty()) throw Error("dataset has no frames");
        cam = ds.frames[0].camera;
      } else {
        throw ConfigError("render needs --camera or --data");
      }
      std::vector<double> times = rnd_times;
      for (std::size_t k = 0; k < rnd_frames; ++k) {
        times.push_back(rnd_frames == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(rnd_frames - 1));
      }
      render_sequence(ck, cam, times, rnd_out, rnd_traj);
    } else if (*pack) {
      const FrameDataset ds = load_dataset(pack_data);
      if (!ds.init) throw Error("dataset has no init.ply");
      const LayeredScene layered = train_layered(*ds.init, dataset_views(ds, pack_frame), lcfg);
      save_layered(layered, pack_out);
      std::printf("wrote %zu layers to %s\n", layered.num_residuals() + 1, pack_out.c_str());
    } else if (*sweep) {
      const FrameDataset ds = load_dataset(sweep_data);
      const auto rows = rate_quality_sweep(load_layered(sweep_dir), dataset_views(ds, sweep_frame));
      if (sweep_out.empty()) {
        write_sweep_csv(rows, std::cout);
      } else {
        std::ofstream out(sweep_out);
        if (!out) throw Error("cannot write " + sweep_out);
        write_sweep_csv(rows, out);
      }
    } else if (*hh) {
      return helmholtz_check(hh_n, hh_seed);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
