#include "nehad/render.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <memory>

#include "nehad/dual.hpp"

namespace nehad {

// ---------------------------------------------------------------- camera

Camera Camera::centered(int width, int height, double focal, double distance) {
  Camera c;
  c.width = width;
  c.height = height;
  c.fx = c.fy = focal;
  c.cx = 0.5 * (width - 1);
  c.cy = 0.5 * (height - 1);
  c.view = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, distance, 0, 0, 0, 1};
  return c;
}

void Camera::validate() const {
  if (width <= 0 || height <= 0) throw Error("camera: image size must be positive");
  if (!(znear > 0.0)) throw Error("camera: znear must be > 0");
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += view[i * 4 + k] * view[j * 4 + k];
      if (std::abs(dot - (i == j ? 1.0 : 0.0)) > 1e-6) throw Error("camera: view rotation is not orthonormal");
    }
  }
}

Vec3 Camera::to_camera(const Vec3& p) const {
  Vec3 out;
  for (int i = 0; i < 3; ++i) out[i] = view[i * 4] * p[0] + view[i * 4 + 1] * p[1] + view[i * 4 + 2] * p[2] + view[i * 4 + 3];
  return out;
}

// ---------------------------------------------------------------- image

ImageBuffer::ImageBuffer(int w, int h, const Vec3& fill) : width(w), height(h) {
  if (w < 0 || h < 0) throw Error("ImageBuffer: negative size");
  rgb.resize(3 * pixels());
  for (std::size_t p = 0; p < pixels(); ++p) {
    for (int c = 0; c < 3; ++c) rgb[p * 3 + c] = fill[c];
  }
}

Tensor ImageBuffer::to_tensor() const { return Tensor({pixels(), 3}, rgb); }

ImageBuffer ImageBuffer::from_tensor(const Tensor& t, int width, int height) {
  const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (t.size() != 3 * n) throw ShapeError("ImageBuffer::from_tensor: " + shape_str(t.shape()) + " is not a " +
                                          std::to_string(width) + "x" + std::to_string(height) + " RGB image");
  ImageBuffer img;
  img.width = width;
  img.height = height;
  img.rgb = t.vec();
  for (double& v : img.rgb) v = std::clamp(v, 0.0, 1.0);
  return img;
}

// ---------------------------------------------------------------- projection

namespace {

template <class T>
struct ProjT {
  T mx, my, ca, cb, cc, depth;
};

template <class T>
bool project_t(const Vec3T<T>& mu, const Vec3T<T>& log_s, const QuatT<T>& rot, const Camera& cam, double dilation,
               ProjT<T>& out) {
  using std::exp;
  const auto& V = cam.view;
  const T x = V[0] * mu[0] + V[1] * mu[1] + V[2] * mu[2] + V[3];
  const T y = V[4] * mu[0] + V[5] * mu[1] + V[6] * mu[2] + V[7];
  const T z = V[8] * mu[0] + V[9] * mu[1] + V[10] * mu[2] + V[11];
  if (!(value_of(z) > cam.znear)) return false;
  const T iz = 1.0 / z;
  out.mx = cam.fx * x * iz + cam.cx;
  out.my = cam.fy * y * iz + cam.cy;
  out.depth = z;

  const Vec3T<T> s{exp(log_s[0]), exp(log_s[1]), exp(log_s[2])};
  const Mat3T<T> sigma = covariance_unchecked(s, quat_unit(rot));
  // Camera-frame covariance W Σ Wᵀ.
  Mat3T<T> ws, sc;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      T acc = V[i * 4] * sigma[0][j];
      acc += V[i * 4 + 1] * sigma[1][j];
      acc += V[i * 4 + 2] * sigma[2][j];
      ws[i][j] = acc;
    }
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      T acc = ws[i][0] * V[j * 4];
      acc += ws[i][1] * V[j * 4 + 1];
      acc += ws[i][2] * V[j * 4 + 2];
      sc[i][j] = acc;
    }
  }
  // J = [[fx/z, 0, -fx x/z²], [0, fy/z, -fy y/z²]]
  const T j00 = cam.fx * iz, j02 = -cam.fx * x * iz * iz;
  const T j11 = cam.fy * iz, j12 = -cam.fy * y * iz * iz;
  const T m00 = j00 * sc[0][0] + j02 * sc[2][0];
  const T m01 = j00 * sc[0][1] + j02 * sc[2][1];
  const T m02 = j00 * sc[0][2] + j02 * sc[2][2];
  const T m10 = j11 * sc[1][0] + j12 * sc[2][0];
  const T m11 = j11 * sc[1][1] + j12 * sc[2][1];
  const T m12 = j11 * sc[1][2] + j12 * sc[2][2];
  out.ca = m00 * j00 + m02 * j02 + dilation;
  out.cb = m01 * j11 + m02 * j12;
  out.cc = m11 * j11 + m12 * j12 + dilation;
  (void)m10;
  return true;
}

struct Splat {
  std::size_t index = 0;
  double mx = 0, my = 0;
  double A = 0, B = 0, C = 0;  // conic = cov2d⁻¹
  double alpha = 0;
  std::array<double, 3> color{};
  double depth = 0;
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
};

struct SplatInput {
  Vec3 mu, log_s;
  Quat rot;
  double logit;
  Vec3 color;
};

enum class SplatStatus { ok, culled, singular };

SplatStatus make_splat(const SplatInput& in, std::size_t index, const Camera& cam, const RasterConfig& cfg, Splat& s) {
  if (!(quat_norm(in.rot) > 1e-12)) throw Error("rasterize: degenerate rotation at primitive " + std::to_string(index));
  ProjT<double> p;
  if (!project_t<double>(in.mu, in.log_s, in.rot, cam, cfg.dilation, p)) return SplatStatus::culled;
  const double det = p.ca * p.cc - p.cb * p.cb;
  const double mid = 0.5 * (p.ca + p.cc);
  const double disc = std::sqrt(std::max(0.0, mid * mid - det));
  const double lmax = mid + disc, lmin = mid - disc;
  if (!(lmin > 0.0) || lmax / lmin > 1e12 || !(det > 0.0)) return SplatStatus::singular;
  s.index = index;
  s.mx = p.mx;
  s.my = p.my;
  s.A = p.cc / det;
  s.B = -p.cb / det;
  s.C = p.ca / det;
  s.alpha = 1.0 / (1.0 + std::exp(-in.logit));
  s.color = in.color;
  s.depth = p.depth;
  const double rx = cfg.cutoff_sigma * std::sqrt(p.ca), ry = cfg.cutoff_sigma * std::sqrt(p.cc);
  const double fx0 = std::ceil(p.mx - rx), fx1 = std::floor(p.mx + rx);
  const double fy0 = std::ceil(p.my - ry), fy1 = std::floor(p.my + ry);
  s.x0 = static_cast<int>(std::clamp(fx0, 0.0, static_cast<double>(cam.width)));
  s.x1 = static_cast<int>(std::clamp(fx1, -1.0, static_cast<double>(cam.width - 1)));
  s.y0 = static_cast<int>(std::clamp(fy0, 0.0, static_cast<double>(cam.height)));
  s.y1 = static_cast<int>(std::clamp(fy1, -1.0, static_cast<double>(cam.height - 1)));
  return SplatStatus::ok;
}

// Depth-sorted splats plus per-pixel lists (CSR) into them, front to back.
struct RasterFrame {
  std::vector<Splat> splats;
  std::vector<std::uint32_t> offsets;
  std::vector<std::uint32_t> ids;
};

RasterFrame build_frame(const std::vector<SplatInput>& inputs, const Camera& cam, const RasterConfig& cfg, RasterStats* stats) {
  cam.validate();
  RasterFrame f;
  f.splats.reserve(inputs.size());
  RasterStats local;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Splat s;
    switch (make_splat(inputs[i], i, cam, cfg, s)) {
      case SplatStatus::ok:
        f.splats.push_back(s);
        break;
      case SplatStatus::culled:
        ++local.culled;
        break;
      case SplatStatus::singular:
        ++local.singular;
        break;
    }
  }
  std::stable_sort(f.splats.begin(), f.splats.end(), [](const Splat& a, const Splat& b) { return a.depth < b.depth; });
  const std::size_t npx = static_cast<std::size_t>(cam.width) * static_cast<std::size_t>(cam.height);
  f.offsets.assign(npx + 1, 0);
  for (const Splat& s : f.splats) {
    for (int y = s.y0; y <= s.y1; ++y) {
      for (int x = s.x0; x <= s.x1; ++x) ++f.offsets[static_cast<std::size_t>(y) * cam.width + x + 1];
    }
  }
  for (std::size_t p = 0; p < npx; ++p) f.offsets[p + 1] += f.offsets[p];
  f.ids.resize(f.offsets[npx]);
  std::vector<std::uint32_t> cursor(f.offsets.begin(), f.offsets.end() - 1);
  for (std::uint32_t k = 0; k < f.splats.size(); ++k) {
    const Splat& s = f.splats[k];
    for (int y = s.y0; y <= s.y1; ++y) {
      for (int x = s.x0; x <= s.x1; ++x) f.ids[cursor[static_cast<std::size_t>(y) * cam.width + x]++] = k;
    }
  }
  local.splats = f.ids.size();
  if (stats) {
    stats->culled += local.culled;
    stats->singular += local.singular;
    stats->splats += local.splats;
  }
  return f;
}

inline double splat_power(const Splat& s, double dx, double dy) {
  return -0.5 * (s.A * dx * dx + s.C * dy * dy) - s.B * dx * dy;
}

std::vector<double> composite(const RasterFrame& f, const Camera& cam, const Vec3& bg) {
  std::vector<double> out(3 * static_cast<std::size_t>(cam.width) * cam.height);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * cam.width + x;
      double T = 1.0;
      double c[3] = {0.0, 0.0, 0.0};
      for (std::uint32_t k = f.offsets[p]; k < f.offsets[p + 1]; ++k) {
        const Splat& s = f.splats[f.ids[k]];
        const double a = s.alpha * std::exp(splat_power(s, x - s.mx, y - s.my));
        const double w = T * a;
        c[0] += w * s.color[0];
        c[1] += w * s.color[1];
        c[2] += w * s.color[2];
        T *= 1.0 - a;
      }
      for (int ch = 0; ch < 3; ++ch) out[p * 3 + ch] = c[ch] + T * bg[ch];
    }
  }
  return out;
}

SplatInput input_from(const GaussianPrimitive& g) { return {g.mu, g.log_scale, g.rot, g.opacity_logit, g.color}; }

class RasterOp final : public ad::CustomOp {
 public:
  RasterOp(const Camera& cam, const RasterConfig& cfg, RasterFrame frame) : cam_(cam), cfg_(cfg), frame_(std::move(frame)) {}
  std::string_view name() const override { return "rasterize"; }

  std::vector<Tensor> backward(const Tensor& g, std::span<const Tensor* const> in, const Tensor&) const override {
    const Tensor& mu = *in[0];
    const Tensor& ls = *in[1];
    const Tensor& rot = *in[2];
    const Tensor& logit = *in[3];
    const Tensor& color = *in[4];
    const std::size_t ns = frame_.splats.size();
    // Per-splat screen-space gradients: mx, my, A, B, C, alpha, r, g, b.
    std::vector<std::array<double, 9>> gs(ns, std::array<double, 9>{});

    std::vector<double> a_buf, t_buf;
    for (int y = 0; y < cam_.height; ++y) {
      for (int x = 0; x < cam_.width; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * cam_.width + x;
        const std::uint32_t b = frame_.offsets[p], e = frame_.offsets[p + 1];
        if (b == e) continue;
        const double G[3] = {g[p * 3], g[p * 3 + 1], g[p * 3 + 2]};
        if (G[0] == 0.0 && G[1] == 0.0 && G[2] == 0.0) continue;
        a_buf.resize(e - b);
        t_buf.resize(e - b);
        double T = 1.0;
        for (std::uint32_t k = b; k < e; ++k) {
          const Splat& s = frame_.splats[frame_.ids[k]];
          const double a = s.alpha * std::exp(splat_power(s, x - s.mx, y - s.my));
          a_buf[k - b] = a;
          t_buf[k - b] = T;
          T *= 1.0 - a;
        }
        // Back to front: B is the color seen behind the current splat.
        double B[3] = {cfg_.background[0], cfg_.background[1], cfg_.background[2]};
        for (std::uint32_t k = e; k-- > b;) {
          const std::uint32_t sid = frame_.ids[k];
          const Splat& s = frame_.splats[sid];
          const double a = a_buf[k - b], Ti = t_buf[k - b];
          auto& acc = gs[sid];
          double da = 0.0;
          for (int ch = 0; ch < 3; ++ch) {
            acc[6 + ch] += G[ch] * a * Ti;
            da += G[ch] * (s.color[ch] - B[ch]);
            B[ch] = s.color[ch] * a + (1.0 - a) * B[ch];
          }
          da *= Ti;
          const double dx = x - s.mx, dy = y - s.my;
          acc[5] += da * (a / s.alpha);
          const double dp = da * a;
          acc[0] += dp * (s.A * dx + s.B * dy);
          acc[1] += dp * (s.B * dx + s.C * dy);
          acc[2] += dp * (-0.5 * dx * dx);
          acc[3] += dp * (-dx * dy);
          acc[4] += dp * (-0.5 * dy * dy);
        }
      }
    }

    Tensor gmu(mu.shape()), gls(ls.shape()), grot(rot.shape()), glogit(logit.shape()), gcolor(color.shape());
    using D = Dual<10>;
    for (std::size_t k = 0; k < ns; ++k) {
      const Splat& s = frame_.splats[k];
      const auto& acc = gs[k];
      const std::size_t n = s.index;
      glogit[n] += acc[5] * s.alpha * (1.0 - s.alpha);
      for (int ch = 0; ch < 3; ++ch) gcolor.at(n, ch) += acc[6 + ch];
      if (acc[0] == 0.0 && acc[1] == 0.0 && acc[2] == 0.0 && acc[3] == 0.0 && acc[4] == 0.0) continue;
      Vec3T<D> dmu, dls;
      QuatT<D> dq;
      for (int i = 0; i < 3; ++i) {
        dmu[i] = D::variable(mu.at(n, i), i);
        dls[i] = D::variable(ls.at(n, i), 3 + i);
      }
      for (int i = 0; i < 4; ++i) dq[i] = D::variable(rot.at(n, i), 6 + i);
      ProjT<D> p;
      project_t<D>(dmu, dls, dq, cam_, cfg_.dilation, p);
      const D det = p.ca * p.cc - p.cb * p.cb;
      const D A = p.cc / det, Bc = -p.cb / det, C = p.ca / det;
      const D* outs[5] = {&p.mx, &p.my, &A, &Bc, &C};
      for (int o = 0; o < 5; ++o) {
        const double w = acc[o];
        if (w == 0.0) continue;
        for (int i = 0; i < 3; ++i) {
          gmu.at(n, i) += w * outs[o]->d[i];
          gls.at(n, i) += w * outs[o]->d[3 + i];
        }
        for (int i = 0; i < 4; ++i) grot.at(n, i) += w * outs[o]->d[6 + i];
      }
    }
    return {gmu, gls, grot, glogit, gcolor};
  }

 private:
  Camera cam_;
  RasterConfig cfg_;
  RasterFrame frame_;
};

void check_rows(const Tensor& t, std::size_t n, std::size_t cols, const char* what) {
  if (t.rank() != 2 || t.rows() != n || t.cols() != cols) {
    throw ShapeError(std::string("rasterize: ") + what + " must be [" + std::to_string(n) + "," + std::to_string(cols) +
                     "], got " + shape_str(t.shape()));
  }
}

}  // namespace

Projection project(const GaussianPrimitive& g, const Camera& cam, double dilation) {
  Projection out;
  ProjT<double> p;
  if (!(quat_norm(g.rot) > 1e-12)) throw Error("project: degenerate rotation");
  if (!project_t<double>(g.mu, g.log_scale, g.rot, cam, dilation, p)) return out;
  out.visible = true;
  out.mean = {p.mx, p.my};
  out.cov = {p.ca, p.cb, p.cc};
  out.depth = p.depth;
  return out;
}

ImageBuffer rasterize(const Scene& scene, const Camera& cam, const RasterConfig& cfg, RasterStats* stats) {
  std::vector<SplatInput> inputs;
  inputs.reserve(scene.size());
  for (const auto& g : scene.primitives) inputs.push_back(input_from(g));
  const RasterFrame f = build_frame(inputs, cam, cfg, stats);
  ImageBuffer img;
  img.width = cam.width;
  img.height = cam.height;
  img.rgb = composite(f, cam, cfg.background);
  for (double& v : img.rgb) v = std::clamp(v, 0.0, 1.0);
  return img;
}

ImageBuffer rasterize(const Scene& scene, const Camera& cam, const Vec3& background) {
  RasterConfig cfg;
  cfg.background = background;
  return rasterize(scene, cam, cfg);
}

ad::Var rasterize(const SplatVars& v, const Camera& cam, const RasterConfig& cfg, RasterStats* stats) {
  const Tensor& mu = v.mu.value();
  const std::size_t n = mu.rank() == 2 ? mu.rows() : 0;
  check_rows(mu, n, 3, "mu");
  check_rows(v.log_scale.value(), n, 3, "log_scale");
  check_rows(v.rot.value(), n, 4, "rot");
  check_rows(v.opacity_logit.value(), n, 1, "opacity_logit");
  check_rows(v.color.value(), n, 3, "color");
  std::vector<SplatInput> inputs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor& ls = v.log_scale.value();
    const Tensor& r = v.rot.value();
    const Tensor& c = v.color.value();
    inputs[i] = {{mu.at(i, 0), mu.at(i, 1), mu.at(i, 2)},
                 {ls.at(i, 0), ls.at(i, 1), ls.at(i, 2)},
                 {r.at(i, 0), r.at(i, 1), r.at(i, 2), r.at(i, 3)},
                 v.opacity_logit.value()[i],
                 {c.at(i, 0), c.at(i, 1), c.at(i, 2)}};
  }
  RasterFrame f = build_frame(inputs, cam, cfg, stats);
  std::vector<double> pixels = composite(f, cam, cfg.background);
  Tensor out({static_cast<std::size_t>(cam.width) * cam.height, 3}, std::move(pixels));
  auto op = std::make_shared<RasterOp>(cam, cfg, std::move(f));
  return v.mu.tape->custom(op, {v.mu, v.log_scale, v.rot, v.opacity_logit, v.color}, std::move(out));
}

// ---------------------------------------------------------------- losses

void LossConfig::validate() const {
  if (!(lambda_dssim >= 0.0 && lambda_dssim <= 1.0)) throw ConfigError("loss: lambda_dssim must lie in [0, 1]");
  if (!(tv_weight >= 0.0)) throw ConfigError("loss: tv_weight must be >= 0");
}

namespace {

void check_same(const ImageBuffer& a, const ImageBuffer& b, const char* who) {
  if (a.width != b.width || a.height != b.height) {
    throw ShapeError(std::string(who) + ": image sizes differ (" + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" + std::to_string(b.height) + ")");
  }
}

const std::array<double, kSsimWindow>& ssim_window() {
  static const std::array<double, kSsimWindow> w = [] {
    std::array<double, kSsimWindow> k{};
    double total = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double d = i - kSsimWindow / 2;
      k[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
      total += k[i];
    }
    for (double& v : k) v /= total;
    return k;
  }();
  return w;
}

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

// Valid separable Gaussian filter of an H×W plane -> (H-10)×(W-10).
void filter_valid(const std::vector<double>& src, int H, int W, std::vector<double>& dst) {
  const auto& w = ssim_window();
  const int oh = H - kSsimWindow + 1, ow = W - kSsimWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(H) * ow);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) acc += w[k] * src[static_cast<std::size_t>(y) * W + x + k];
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  dst.assign(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) acc += w[k] * tmp[static_cast<std::size_t>(y + k) * ow + x];
      dst[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
}

// Adjoint of filter_valid: (H-10)×(W-10) -> H×W.
void filter_adjoint(const std::vector<double>& src, int H, int W, std::vector<double>& dst) {
  const auto& w = ssim_window();
  const int oh = H - kSsimWindow + 1, ow = W - kSsimWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(H) * ow, 0.0);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      const double v = src[static_cast<std::size_t>(y) * ow + x];
      for (int k = 0; k < kSsimWindow; ++k) tmp[static_cast<std::size_t>(y + k) * ow + x] += w[k] * v;
    }
  }
  dst.assign(static_cast<std::size_t>(H) * W, 0.0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < ow; ++x) {
      const double v = tmp[static_cast<std::size_t>(y) * ow + x];
      for (int k = 0; k < kSsimWindow; ++k) dst[static_cast<std::size_t>(y) * W + x + k] += w[k] * v;
    }
  }
}

// Mean SSIM of interleaved RGB images; optionally the gradient w.r.t. `a`.
double ssim_core(std::span<const double> a, std::span<const double> b, int W, int H, std::vector<double>* grad_a) {
  if (W < kSsimWindow || H < kSsimWindow) {
    throw ShapeError("ssim: images must be at least 11x11, got " + std::to_string(W) + "x" + std::to_string(H));
  }
  const std::size_t npx = static_cast<std::size_t>(W) * H;
  const int oh = H - kSsimWindow + 1, ow = W - kSsimWindow + 1;
  const std::size_t nout = static_cast<std::size_t>(oh) * ow;
  const double inv_p = 1.0 / (3.0 * static_cast<double>(nout));
  if (grad_a) grad_a->assign(3 * npx, 0.0);
  std::vector<double> x(npx), y(npx), xx(npx), yy(npx), xy(npx);
  std::vector<double> mx, my, mxx, myy, mxy;
  std::vector<double> ga, gb, gc, adj;
  double total = 0.0;
  for (int ch = 0; ch < 3; ++ch) {
    for (std::size_t p = 0; p < npx; ++p) {
      x[p] = a[p * 3 + ch];
      y[p] = b[p * 3 + ch];
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    filter_valid(x, H, W, mx);
    filter_valid(y, H, W, my);
    filter_valid(xx, H, W, mxx);
    filter_valid(yy, H, W, myy);
    filter_valid(xy, H, W, mxy);
    if (grad_a) {
      ga.assign(nout, 0.0);
      gb.assign(nout, 0.0);
      gc.assign(nout, 0.0);
    }
    for (std::size_t o = 0; o < nout; ++o) {
      const double ux = mx[o], uy = my[o];
      const double sxx = mxx[o] - ux * ux, syy = myy[o] - uy * uy, sxy = mxy[o] - ux * uy;
      const double n1 = 2.0 * ux * uy + kC1, n2 = 2.0 * sxy + kC2;
      const double d1 = ux * ux + uy * uy + kC1, d2 = sxx + syy + kC2;
      const double s = n1 * n2 / (d1 * d2);
      total += s;
      if (grad_a) {
        const double ds_dux = 2.0 * uy * n2 / (d1 * d2) - s * 2.0 * ux / d1;
        const double ds_dsxx = -s / d2;
        const double ds_dsxy = 2.0 * n1 / (d1 * d2);
        ga[o] = inv_p * (ds_dux - 2.0 * ux * ds_dsxx - uy * ds_dsxy);
        gb[o] = inv_p * 2.0 * ds_dsxx;
        gc[o] = inv_p * ds_dsxy;
      }
    }
    if (grad_a) {
      filter_adjoint(ga, H, W, adj);
      for (std::size_t p = 0; p < npx; ++p) (*grad_a)[p * 3 + ch] += adj[p];
      filter_adjoint(gb, H, W, adj);
      for (std::size_t p = 0; p < npx; ++p) (*grad_a)[p * 3 + ch] += x[p] * adj[p];
      filter_adjoint(gc, H, W, adj);
      for (std::size_t p = 0; p < npx; ++p) (*grad_a)[p * 3 + ch] += y[p] * adj[p];
    }
  }
  return total * inv_p;
}

class SsimOp final : public ad::CustomOp {
 public:
  SsimOp(int w, int h, bool need_a, bool need_b) : w_(w), h_(h), need_a_(need_a), need_b_(need_b) {}
  std::string_view name() const override { return "ssim"; }
  std::vector<Tensor> backward(const Tensor& g, std::span<const Tensor* const> in, const Tensor&) const override {
    const double go = g.item();
    std::vector<Tensor> out(2);
    std::vector<double> grad;
    if (need_a_) {
      ssim_core(in[0]->data(), in[1]->data(), w_, h_, &grad);
      for (double& v : grad) v *= go;
      out[0] = Tensor(in[0]->shape(), std::move(grad));
    }
    if (need_b_) {
      ssim_core(in[1]->data(), in[0]->data(), w_, h_, &grad);
      for (double& v : grad) v *= go;
      out[1] = Tensor(in[1]->shape(), std::move(grad));
    }
    return out;
  }

 private:
  int w_, h_;
  bool need_a_, need_b_;
};

}  // namespace

double loss_l1(const ImageBuffer& a, const ImageBuffer& b) {
  check_same(a, b, "loss_l1");
  if (a.rgb.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) acc += std::abs(a.rgb[i] - b.rgb[i]);
  return acc / static_cast<double>(a.rgb.size());
}

ad::Var loss_l1(ad::Var a, ad::Var b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("loss_l1: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  return ad::mean(ad::abs(a - b));
}

double ssim(const ImageBuffer& a, const ImageBuffer& b) {
  check_same(a, b, "ssim");
  return ssim_core(a.rgb, b.rgb, a.width, a.height, nullptr);
}

double dssim(const ImageBuffer& a, const ImageBuffer& b) { return 0.5 * (1.0 - ssim(a, b)); }

ad::Var ssim(ad::Var a, ad::Var b, int width, int height) {
  const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  const Shape want{n, 3};
  if (a.shape() != want || b.shape() != want) {
    throw ShapeError("ssim: expected " + shape_str(want) + " images, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const double s = ssim_core(a.value().data(), b.value().data(), width, height, nullptr);
  auto op = std::make_shared<SsimOp>(width, height, a.tape->requires_grad(a), b.tape->requires_grad(b));
  return a.tape->custom(op, {a, b}, Tensor::scalar(s));
}

double total_loss(const ImageBuffer& render, const ImageBuffer& gt, const HexPlaneEncoder& encoder,
                  const LossConfig& cfg) {
  return (1.0 - cfg.lambda_dssim) * loss_l1(render, gt) + cfg.lambda_dssim * dssim(render, gt) +
         cfg.tv_weight * encoder.tv_loss();
}

ad::Var total_loss(ad::Var render, ad::Var gt, ad::Var tv, int width, int height, const LossConfig& cfg) {
  ad::Var loss = loss_l1(render, gt) * (1.0 - cfg.lambda_dssim);
  if (cfg.lambda_dssim > 0.0) loss = loss + (1.0 - ssim(render, gt, width, height)) * (0.5 * cfg.lambda_dssim);
  if (cfg.tv_weight > 0.0 && tv.valid()) loss = loss + tv * cfg.tv_weight;
  return loss;
}

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  check_same(a, b, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = a.rgb[i] - b.rgb[i];
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = se / static_cast<double>(a.rgb.size());
  return 10.0 * std::log10(1.0 / mse);
}

std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// ---------------------------------------------------------------- PPM

void write_ppm(const ImageBuffer& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_ppm: cannot open " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> bytes(img.rgb.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img.rgb[i], 0.0, 1.0) * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write_ppm: write failed for " + path.string());
}

ImageBuffer read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_ppm: cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto skip_ws = [&] {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        return;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_ws();
    const std::size_t start = pos;
    long long v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1'000'000) throw FormatError(std::string("PPM header: ") + what + " too large", start);
      ++pos;
    }
    if (pos == start) throw FormatError(std::string("PPM header: expected ") + what, start);
    return static_cast<int>(v);
  };
  if (bytes.compare(0, 2, "P6") != 0) throw FormatError("PPM header: missing P6 magic", 0);
  pos = 2;
  const int w = read_int("width");
  const int h = read_int("height");
  const int maxval = read_int("maxval");
  if (maxval < 1 || maxval > 255) throw FormatError("PPM header: only maxval 1..255 is supported", pos);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("PPM header: expected whitespace after maxval", pos);
  }
  ++pos;
  const std::size_t need = 3 * static_cast<std::size_t>(w) * h;
  if (bytes.size() - pos != need) {
    throw FormatError("PPM body: expected " + std::to_string(need) + " bytes, found " + std::to_string(bytes.size() - pos),
                      std::min(bytes.size(), pos + need));
  }
  ImageBuffer img(w, h);
  for (std::size_t i = 0; i < need; ++i) img.rgb[i] = static_cast<unsigned char>(bytes[pos + i]) / static_cast<double>(maxval);
  return img;
}

}  // namespace nehad
