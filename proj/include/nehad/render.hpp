#pragma once

// CPU Gaussian splat rasterizer (EWA projection, per-pixel depth-sorted
// alpha compositing), its analytic backward, the L1/SSIM/TV loss stack and
// image metrics.
//
// Pixel (x, y) has its center at continuous coordinates (x, y). Cameras look
// along +z with x right and y down. Images on the tape are [H*W, 3] tensors in
// row-major pixel order.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "nehad/autodiff.hpp"
#include "nehad/gauss.hpp"
#include "nehad/hexplane.hpp"

namespace nehad {

struct Camera {
  std::array<double, 16> view{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};  // world -> camera, row-major
  double fx = 64.0;
  double fy = 64.0;
  double cx = 31.5;
  double cy = 31.5;
  int width = 64;
  int height = 64;
  double znear = 0.01;

  // Camera at (0, 0, -distance) looking along +z with fx = fy = focal and a
  // centered principal point.
  static Camera centered(int width, int height, double focal, double distance);

  // Throws unless the view rotation is orthonormal within 1e-6 and sizes are positive.
  void validate() const;

  Vec3 to_camera(const Vec3& p) const;

  friend bool operator==(const Camera&, const Camera&) = default;
};

struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;  // 3 * width * height, row-major, channels interleaved

  ImageBuffer() = default;
  ImageBuffer(int w, int h, const Vec3& fill = {0.0, 0.0, 0.0});

  std::size_t pixels() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  double& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  Tensor to_tensor() const;  // [H*W, 3]
  static ImageBuffer from_tensor(const Tensor& t, int width, int height);

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;
};

struct Projection {
  bool visible = false;
  std::array<double, 2> mean{0.0, 0.0};
  std::array<double, 3> cov{0.0, 0.0, 0.0};  // (xx, xy, yy) in px²
  double depth = 0.0;
};

inline constexpr double kDefaultDilation = 0.3;

// EWA projection of one primitive. Behind-camera primitives come back with
// visible = false. The quaternion is normalized internally.
Projection project(const GaussianPrimitive& g, const Camera& cam, double dilation = kDefaultDilation);

struct RasterConfig {
  Vec3 background{1.0, 1.0, 1.0};
  double dilation = kDefaultDilation;
  double cutoff_sigma = 3.0;
};

struct RasterStats {
  std::size_t culled = 0;    // behind the near plane
  std::size_t singular = 0;  // cov2d condition number above 1e12
  std::size_t splats = 0;    // primitive-pixel evaluations
};

ImageBuffer rasterize(const Scene& scene, const Camera& cam, const RasterConfig& cfg = {}, RasterStats* stats = nullptr);
ImageBuffer rasterize(const Scene& scene, const Camera& cam, const Vec3& background);

// Tape handles for per-primitive attributes; shapes [N,3], [N,3], [N,4],
// [N,1], [N,3].
struct SplatVars {
  ad::Var mu;
  ad::Var log_scale;
  ad::Var rot;
  ad::Var opacity_logit;
  ad::Var color;
};

// Differentiable render -> [H*W, 3].
ad::Var rasterize(const SplatVars& vars, const Camera& cam, const RasterConfig& cfg = {}, RasterStats* stats = nullptr);

struct LossConfig {
  double lambda_dssim = 0.2;
  double tv_weight = 1.0;

  void validate() const;
};

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

double loss_l1(const ImageBuffer& a, const ImageBuffer& b);
ad::Var loss_l1(ad::Var a, ad::Var b);

// Mean SSIM over all valid 11×11 windows and channels.
double ssim(const ImageBuffer& a, const ImageBuffer& b);
double dssim(const ImageBuffer& a, const ImageBuffer& b);
// a, b: [H*W, 3] (either may be a constant).
ad::Var ssim(ad::Var a, ad::Var b, int width, int height);

// (1 − λ) L1 + λ DSSIM + w_tv TV.
double total_loss(const ImageBuffer& render, const ImageBuffer& gt, const HexPlaneEncoder& encoder,
                  const LossConfig& cfg = {});
ad::Var total_loss(ad::Var render, ad::Var gt, ad::Var tv, int width, int height, const LossConfig& cfg = {});

// 10 log10(1 / MSE); +inf for identical images.
double psnr(const ImageBuffer& a, const ImageBuffer& b);
// Fixed-precision text for metric tables; "inf" for the identical-image sentinel.
std::string format_metric(double v);

// Binary PPM (P6, maxval 255).
void write_ppm(const ImageBuffer& img, const std::filesystem::path& path);
ImageBuffer read_ppm(const std::filesystem::path& path);

}  // namespace nehad
