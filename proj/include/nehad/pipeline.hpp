#pragma once

// Training pipeline: configuration, datasets, synthetic scenes, the batched
// per-primitive deformation, the optimization loop, checkpoints, evaluation
// and sequence rendering.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nehad/autodiff.hpp"
#include "nehad/bed.hpp"
#include "nehad/gauss.hpp"
#include "nehad/hexplane.hpp"
#include "nehad/hnn.hpp"
#include "nehad/optim.hpp"
#include "nehad/physics.hpp"
#include "nehad/render.hpp"

namespace nehad {

// ---------------------------------------------------------------- config

enum class FrameSampling {
  random,   // one uniformly drawn frame per step
  ordered,  // frames in timestamp order, cycling
  nested,   // every frame each step (loss averaged)
};

struct TrainConfig {
  std::size_t iterations = 20000;
  std::size_t batch_size = 1;
  double encoder_lr_start = 0.0016;
  double encoder_lr_end = 0.00016;
  double decoder_lr = 0.001;
  std::size_t base_resolution = 64;
  std::vector<std::size_t> upsampling{2, 4};
  std::size_t channels = 16;
  std::size_t decoder_depth = 2;
  std::size_t decoder_width = 64;
  std::size_t head_hidden = 64;
  DecoderKind decoder_kind = DecoderKind::hamiltonian;
  double position_lr = 1.6e-4;
  double equilibrium_lr = 1.6e-4;
  double scale_lr = 0.005;
  double rotation_lr = 0.001;
  double opacity_lr = 0.05;
  double color_lr = 0.0025;
  double dt = 0.0;  // 0: 1 / (T - 1) from the dataset
  double phi_max = 0.35;
  double sigma_s = 0.0;  // 0: 0.1 * scene diagonal
  double sigma_t = 0.2;
  double coupling_lambda = 0.1;
  double beta = 1.0;
  double gamma = 0.05;
  bool use_bed = true;
  double lambda_dssim = 0.2;
  double tv_weight = 1.0;
  std::uint64_t seed = 0;
  std::string background = "white";
  FrameSampling frame_sampling = FrameSampling::random;
  std::size_t pruning_interval = 8000;  // recorded only; pruning is not performed
  std::size_t log_interval = 100;
  bool check_finite = false;

  void validate() const;
  Vec3 background_rgb() const;
  HexPlaneConfig hexplane() const;
  DecoderConfig decoder() const;
  LossConfig loss() const;
  // Resolves the automatic sigma_s against the scene bounds.
  BedConfig bed(const Aabb& bounds) const;
  // Resolves the automatic dt against the number of timestamps.
  IntegratorConfig integrator(std::size_t num_frames) const;

  // Flat key=value text; keys are the field names above.
  std::string to_text() const;
  static TrainConfig from_text(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
  // Applies one key=value assignment; unknown keys and bad values throw ConfigError.
  void set(const std::string& key, const std::string& value);
  static const std::vector<std::string>& keys();
};

// Small preset used by the toy scenes and acceptance runs.
TrainConfig toy_config();

// ---------------------------------------------------------------- dataset

struct Frame {
  double t = 0.0;
  Camera camera;
  ImageBuffer image;
  std::vector<Vec3> trajectory;  // optional ground-truth primitive positions
};

struct FrameDataset {
  std::vector<Frame> frames;
  std::optional<Scene> init;  // starting canonical scene (init.ply)
  std::optional<Scene> gt;    // ground-truth canonical scene (gt.ply)
  std::map<std::string, std::string> meta;  // meta.txt key/value pairs

  // Throws unless timestamps are sorted, unique and within [0, 1].
  void validate() const;
};

void save_dataset(const FrameDataset& ds, const std::filesystem::path& dir);
FrameDataset load_dataset(const std::filesystem::path& dir);

void write_camera(const Camera& cam, double t, std::ostream& out);
std::pair<Camera, double> read_camera(std::istream& in);

// ---------------------------------------------------------------- synthetic scenes

enum class SynthKind { pendulum, orbit, mixed };
SynthKind parse_synth_kind(const std::string& s);
const char* synth_kind_name(SynthKind k);

struct SynthResult {
  FrameDataset dataset;
  Scene gt_canonical;  // configuration at t = 0.5
  std::vector<bool> is_static;
  std::vector<double> energy;  // analytic total energy per frame (pendulum part)
};

SynthResult synth_scene(SynthKind kind, std::size_t n_frames, std::size_t n_gaussians, int resolution,
                        std::uint64_t seed);

// ---------------------------------------------------------------- model

struct Model {
  Scene scene;
  HexPlaneEncoder encoder;
  DeformDecoder decoder;
};

Model init_model(const TrainConfig& cfg, const Scene& init);

// Per-primitive canonical parameters as tensors, in a fixed group order.
struct SceneTensors {
  Tensor mu, log_scale, rot, opacity, color, mu_eq, t_eq_pos, t_eq_scale;

  static SceneTensors from_scene(const Scene& s);
  void to_scene(Scene& s) const;
};

struct DeformSettings {
  BedConfig bed;
  IntegratorConfig integrator;
  bool use_bed = true;
  Aabb bounds;
};

DeformSettings deform_settings(const TrainConfig& cfg, const Aabb& bounds, std::size_t num_frames);

// Model parameters bound on one tape.
struct BoundModel {
  SplatVars splat;
  ad::Var mu_eq, t_eq_pos, t_eq_scale;
  std::vector<ad::Var> planes;
  DecoderVars decoder;
  std::vector<ad::Var> leaves;  // every parameter leaf, in parameter-group order
};

BoundModel bind_model(ad::Tape& tape, const SceneTensors& scene, const Model& model);

struct DeformedVars {
  SplatVars splat;  // deformed mu, log_scale, rot; opacity and color pass through
  ad::Var mask_pos, mask_scale, mu_tilde;
};

// Batched deformation at normalized time t. `trace`, when given, records the
// stage names in execution order.
DeformedVars deform_batch(const BoundModel& m, const HexPlaneEncoder& encoder, double t, const DeformSettings& s,
                          std::vector<std::string>* trace = nullptr);

Scene deform_scene(const Model& model, double t, const DeformSettings& s, std::vector<std::string>* trace = nullptr);

// ---------------------------------------------------------------- checkpoint

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  TrainConfig config;
  std::uint64_t iteration = 0;
  Model model;
  std::vector<AdamState> optimizer;  // one per parameter leaf
};

std::string encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------- training

struct TrainOptions {
  std::ostream* log = nullptr;               // progress lines every log_interval
  std::filesystem::path abort_dump;          // last good checkpoint on NaN abort
  std::function<void(std::size_t, double)> on_step;  // (iteration, loss)
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> losses;
};

// Requires dataset.init. Deterministic for a fixed config and dataset.
TrainResult train(const TrainConfig& cfg, const FrameDataset& dataset, const TrainOptions& opts = {});

// ---------------------------------------------------------------- evaluation

struct EvalRow {
  std::size_t frame = 0;
  double t = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalTable {
  std::vector<EvalRow> rows;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

EvalTable eval_images(const std::vector<ImageBuffer>& renders, const FrameDataset& dataset);
EvalTable eval(const Checkpoint& ck, const FrameDataset& dataset);
void write_eval_csv(const EvalTable& table, std::ostream& out);

std::vector<ImageBuffer> render_frames(const Checkpoint& ck, const FrameDataset& dataset);

// Writes <out_dir>/NNNN.ppm per timestamp and, when traj_csv is non-empty,
// a "t,primitive,x,y,z" CSV of deformed positions.
void render_sequence(const Checkpoint& ck, const Camera& camera, const std::vector<double>& timestamps,
                     const std::filesystem::path& out_dir, const std::filesystem::path& traj_csv);

}  // namespace nehad
