#pragma once

// Streaming support: anisotropic mip level selection, box-filtered mip
// chains with trilinear sampling, and layered (progressive) scenes with
// opacity thresholding and rate/quality sweeps.

#include <array>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "nehad/gauss.hpp"
#include "nehad/hexplane.hpp"
#include "nehad/render.hpp"

namespace nehad {

// ---------------------------------------------------------------- mip level

struct MipSelectConfig {
  std::array<int, 3> r{8, 8, 8};  // per-axis resolution ratios (>= 1)
  Vec3 base_scale{1.0, 1.0, 1.0};  // scale mapped to level 0

  void validate() const;
};

struct MipLevelDetail {
  Vec3 s_clamped{};
  Vec3 l{};                  // per-axis level log2(2 s̃ / base)
  int dominant = 0;          // argmax of l_i / log2 r_i
  std::array<double, 4> L{};  // (l_0, l_1, l_2, l_dominant)
  double L_bar = 0.0;        // mean of the per-axis levels
  double rho = 1.0;          // anisotropy max(l) / min(l); +inf when min is 0
  double beta_raw = 0.0;
  double beta = 0.0;         // beta_raw clamped to [0, 0.5]
  std::array<double, 4> l_hat{};
};

// tanh(ρ/3 − 1) / (1 + tanh(ρ/3 − 1)); 0.5 at ρ = +inf.
double mip_beta_raw(double rho);
MipLevelDetail mip_level_detail(const Vec3& s, const MipSelectConfig& cfg);
std::array<double, 4> mip_level(const Vec3& s, const MipSelectConfig& cfg);

// ---------------------------------------------------------------- mip chain

struct MipChain {
  std::vector<ImageBuffer> levels;
  Counter clamps;  // out-of-range level queries

  std::size_t max_level() const { return levels.empty() ? 0 : levels.size() - 1; }
};

// Level k+1 has floor(dims_k / 2) (min 1) per axis; 2×2 box filter.
MipChain build_mipchain(const ImageBuffer& image);
// Bilinear at a single level; uv in [0,1]², texel centers at (i + 0.5) / size,
// clamp-to-edge.
Vec3 bilinear_sample(const ImageBuffer& level, double u, double v);
Vec3 trilinear_sample(const MipChain& chain, double u, double v, double level);

// ---------------------------------------------------------------- layers

struct SceneDelta {
  std::vector<GaussianPrimitive> offsets;   // fieldwise offsets for the first offsets.size() primitives
  std::vector<GaussianPrimitive> appended;  // new primitives
};

// Fieldwise sum of two primitives (every stored attribute).
GaussianPrimitive add_fields(const GaussianPrimitive& a, const GaussianPrimitive& b);
GaussianPrimitive sub_fields(const GaussianPrimitive& a, const GaussianPrimitive& b);
// All-zero primitive (identity for add_fields).
GaussianPrimitive zero_fields();

struct LayeredScene {
  Scene base;
  std::vector<SceneDelta> residuals;
  std::vector<double> thresholds;  // opacity threshold per level 0..N (empty = all zero)

  std::size_t num_residuals() const { return residuals.size(); }
  double threshold(std::size_t level) const { return level < thresholds.size() ? thresholds[level] : 0.0; }
};

// G_i = G_0 + Σ_{j<=i} ΔG_j. Throws for i > N or mismatched offset counts.
Scene compose(const LayeredScene& layered, std::size_t i);
// Keeps primitives with sigmoid(opacity_logit) >= threshold, order preserved.
Scene opacity_prune(const Scene& scene, double threshold);

// Bytes needed to stream levels 0..i (base plus residual PLY payloads).
std::size_t layered_bytes(const LayeredScene& layered, std::size_t i);

struct View {
  Camera camera;
  ImageBuffer image;
};

struct SweepRow {
  std::size_t level = 0;
  std::size_t count = 0;
  std::size_t bytes = 0;
  double psnr = 0.0;
};

std::vector<SweepRow> rate_quality_sweep(const LayeredScene& layered, const std::vector<View>& views,
                                         const RasterConfig& raster = {});
void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out);

// base.ply, residual_<j>.ply and manifest.txt inside `dir`.
void save_layered(const LayeredScene& layered, const std::filesystem::path& dir);
LayeredScene load_layered(const std::filesystem::path& dir);

// ---------------------------------------------------------------- layered training

struct LayeredTrainConfig {
  std::size_t layers = 3;  // G_0 plus layers-1 residuals
  std::size_t iterations_per_layer = 300;
  std::size_t spawn_per_layer = 24;
  double lr_position = 1e-3;
  double lr_scale = 5e-3;
  double lr_opacity = 5e-2;
  double lr_color = 1e-2;
  LossConfig loss{0.2, 0.0};
  RasterConfig raster;
  std::uint64_t seed = 0;

  void validate() const;
};

// Camera for an image downsampled by 2^level with the box filter.
Camera downsample_camera(const Camera& cam, std::size_t level);

// Trains G_0 at the coarsest resolution, then each residual at twice the
// previous resolution with earlier layers frozen. Views must share one size.
LayeredScene train_layered(const Scene& init, const std::vector<View>& views, const LayeredTrainConfig& cfg);

}  // namespace nehad
