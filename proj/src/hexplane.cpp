#include "nehad/hexplane.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include "nehad/error.hpp"

namespace nehad {

std::array<int, 2> plane_coords(PlaneAxes axes) {
  switch (axes) {
    case PlaneAxes::xy: return {0, 1};
    case PlaneAxes::xz: return {0, 2};
    case PlaneAxes::yz: return {1, 2};
    case PlaneAxes::xt: return {0, 3};
    case PlaneAxes::yt: return {1, 3};
    case PlaneAxes::zt: return {2, 3};
  }
  return {0, 1};
}

const char* plane_name(PlaneAxes axes) {
  switch (axes) {
    case PlaneAxes::xy: return "XY";
    case PlaneAxes::xz: return "XZ";
    case PlaneAxes::yz: return "YZ";
    case PlaneAxes::xt: return "XT";
    case PlaneAxes::yt: return "YT";
    case PlaneAxes::zt: return "ZT";
  }
  return "?";
}

namespace {

// Bilinear cell location of a normalized coordinate along an axis with n nodes.
struct Cell {
  std::size_t i0;
  double w;      // weight of node i0 + 1
  bool clamped;  // coordinate was outside [0,1]
};

inline Cell locate(double u, std::size_t n) {
  bool clamped = false;
  if (!(u >= 0.0)) {
    u = 0.0;
    clamped = true;
  } else if (u > 1.0) {
    u = 1.0;
    clamped = true;
  }
  const double f = u * static_cast<double>(n - 1);
  auto i0 = static_cast<std::size_t>(std::floor(f));
  if (i0 > n - 2) i0 = n - 2;
  return {i0, f - static_cast<double>(i0), clamped};
}

void validate_planes(const std::vector<PlaneGrid>& planes) {
  if (planes.empty() || planes.size() % 6 != 0) {
    throw ShapeError("hexplane: expected 6 planes per level, got " + std::to_string(planes.size()));
  }
  const std::size_t C = planes[0].params.rank() == 3 ? planes[0].channels() : 0;
  std::size_t prev_res = 0;
  for (std::size_t i = 0; i < planes.size(); ++i) {
    const auto& p = planes[i];
    if (p.params.rank() != 3) throw ShapeError("hexplane: plane params must be [H,W,C], got " + shape_str(p.params.shape()));
    if (p.height() < 2 || p.width() < 2) throw ShapeError("hexplane: plane needs H, W >= 2, got " + shape_str(p.params.shape()));
    if (p.channels() != C) throw ShapeError("hexplane: channel count differs across planes");
    if (p.axes != kAllPlanes[i % 6]) throw ShapeError("hexplane: planes must follow XY,XZ,YZ,XT,YT,ZT order per level");
    if (i % 6 == 0) {
      if (p.height() <= prev_res && i > 0) throw ShapeError("hexplane: level resolutions must strictly increase");
      prev_res = p.height();
    }
  }
}

// Shared forward/backward kernel. `coords` is [N,4]; plane i data in planes[i].
struct LookupKernel {
  std::span<const PlaneAxes> axes;
  std::span<const Tensor* const> planes;
  std::size_t C;
  std::size_t L;

  // Forward features [N, C*L]; returns number of clamped coordinates.
  std::size_t forward(const Tensor& coords, Tensor& out) const {
    const std::size_t N = coords.rows();
    out = Tensor({N, C * L});
    std::size_t clamps = 0;
    std::vector<double> look(C);
    for (std::size_t n = 0; n < N; ++n) {
      for (int a = 0; a < 4; ++a) {
        const double u = coords.at(n, static_cast<std::size_t>(a));
        if (!(u >= 0.0 && u <= 1.0)) ++clamps;
      }
      for (std::size_t l = 0; l < L; ++l) {
        double* f = &out.at(n, l * C);
        std::fill(f, f + C, 1.0);
        for (std::size_t k = 0; k < 6; ++k) {
          const std::size_t pi = l * 6 + k;
          lookup(*planes[pi], axes[pi], coords, n, look.data());
          for (std::size_t c = 0; c < C; ++c) f[c] *= look[c];
        }
      }
    }
    return clamps;
  }

  static void lookup(const Tensor& P, PlaneAxes ax, const Tensor& coords, std::size_t n, double* out) {
    const auto [ca, cb] = plane_coords(ax);
    const std::size_t H = P.shape()[0], W = P.shape()[1], C = P.shape()[2];
    const Cell cx = locate(coords.at(n, static_cast<std::size_t>(ca)), W);
    const Cell cy = locate(coords.at(n, static_cast<std::size_t>(cb)), H);
    const double* d = P.data().data();
    const double* p00 = d + (cy.i0 * W + cx.i0) * C;
    const double* p01 = p00 + C;
    const double* p10 = p00 + W * C;
    const double* p11 = p10 + C;
    // Nested lerps: exact on constant cells and at nodes.
    for (std::size_t c = 0; c < C; ++c) {
      const double top = p00[c] + cx.w * (p01[c] - p00[c]);
      const double bot = p10[c] + cx.w * (p11[c] - p10[c]);
      out[c] = top + cy.w * (bot - top);
    }
  }
};

class HexLookupOp final : public ad::CustomOp {
 public:
  explicit HexLookupOp(std::vector<PlaneAxes> axes) : axes_(std::move(axes)) {}
  std::string_view name() const override { return "hexplane_encode"; }

  std::vector<Tensor> backward(const Tensor& g, std::span<const Tensor* const> inputs, const Tensor&) const override {
    const Tensor& coords = *inputs[0];
    const std::size_t N = coords.rows();
    const std::size_t P = axes_.size();
    const std::size_t L = P / 6;
    const std::size_t C = inputs[1]->shape()[2];
    std::vector<Tensor> grads(inputs.size());
    grads[0] = Tensor(coords.shape());
    for (std::size_t i = 0; i < P; ++i) grads[i + 1] = Tensor(inputs[i + 1]->shape());

    std::vector<double> look(6 * C);
    std::vector<double> others(C);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t k = 0; k < 6; ++k) {
          LookupKernel::lookup(*inputs[1 + l * 6 + k], axes_[l * 6 + k], coords, n, &look[k * C]);
        }
        for (std::size_t k = 0; k < 6; ++k) {
          const std::size_t pi = l * 6 + k;
          // Upstream times the product of the other five lookups.
          for (std::size_t c = 0; c < C; ++c) {
            double prod = g.at(n, l * C + c);
            for (std::size_t j = 0; j < 6; ++j) {
              if (j != k) prod *= look[j * C + c];
            }
            others[c] = prod;
          }
          const Tensor& Pt = *inputs[1 + pi];
          Tensor& G = grads[1 + pi];
          const auto [ca, cb] = plane_coords(axes_[pi]);
          const std::size_t H = Pt.shape()[0], W = Pt.shape()[1];
          const Cell cx = locate(coords.at(n, static_cast<std::size_t>(ca)), W);
          const Cell cy = locate(coords.at(n, static_cast<std::size_t>(cb)), H);
          const std::size_t b00 = (cy.i0 * W + cx.i0) * C, b01 = b00 + C, b10 = b00 + W * C, b11 = b10 + C;
          const double w00 = (1 - cx.w) * (1 - cy.w), w01 = cx.w * (1 - cy.w), w10 = (1 - cx.w) * cy.w,
                       w11 = cx.w * cy.w;
          double* gd = G.data().data();
          const double* pd = Pt.data().data();
          double dua = 0.0, dub = 0.0;
          for (std::size_t c = 0; c < C; ++c) {
            const double o = others[c];
            gd[b00 + c] += w00 * o;
            gd[b01 + c] += w01 * o;
            gd[b10 + c] += w10 * o;
            gd[b11 + c] += w11 * o;
            dua += o * ((1 - cy.w) * (pd[b01 + c] - pd[b00 + c]) + cy.w * (pd[b11 + c] - pd[b10 + c]));
            dub += o * ((1 - cx.w) * (pd[b10 + c] - pd[b00 + c]) + cx.w * (pd[b11 + c] - pd[b01 + c]));
          }
          if (!cx.clamped) grads[0].at(n, static_cast<std::size_t>(ca)) += dua * static_cast<double>(W - 1);
          if (!cy.clamped) grads[0].at(n, static_cast<std::size_t>(cb)) += dub * static_cast<double>(H - 1);
        }
      }
    }
    return grads;
  }

 private:
  std::vector<PlaneAxes> axes_;
};

double plane_tv(const Tensor& P, Tensor* grad, double upstream) {
  const std::size_t H = P.shape()[0], W = P.shape()[1], C = P.shape()[2];
  const double count = static_cast<double>(H * (W - 1) * C + (H - 1) * W * C);
  double acc = 0.0;
  const double k = 2.0 * upstream / count;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < C; ++c) {
        const double v = P[(y * W + x) * C + c];
        if (x + 1 < W) {
          const double d = P[(y * W + x + 1) * C + c] - v;
          acc += d * d;
          if (grad) {
            (*grad)[(y * W + x + 1) * C + c] += k * d;
            (*grad)[(y * W + x) * C + c] -= k * d;
          }
        }
        if (y + 1 < H) {
          const double d = P[((y + 1) * W + x) * C + c] - v;
          acc += d * d;
          if (grad) {
            (*grad)[((y + 1) * W + x) * C + c] += k * d;
            (*grad)[(y * W + x) * C + c] -= k * d;
          }
        }
      }
    }
  }
  return acc / count;
}

class TvOp final : public ad::CustomOp {
 public:
  std::string_view name() const override { return "hexplane_tv"; }
  std::vector<Tensor> backward(const Tensor& g, std::span<const Tensor* const> inputs, const Tensor&) const override {
    std::vector<Tensor> grads;
    grads.reserve(inputs.size());
    for (const Tensor* P : inputs) {
      Tensor G(P->shape());
      plane_tv(*P, &G, g.item());
      grads.push_back(std::move(G));
    }
    return grads;
  }
};

}  // namespace

HexPlaneEncoder::HexPlaneEncoder(const HexPlaneConfig& config, std::uint64_t seed) {
  if (config.base_resolution < 2) throw ConfigError("hexplane: base resolution must be >= 2");
  if (config.channels == 0) throw ConfigError("hexplane: channels must be > 0");
  std::vector<std::size_t> res{config.base_resolution};
  for (std::size_t f : config.upsampling) {
    if (f < 2) throw ConfigError("hexplane: upsampling factors must be >= 2 so resolutions strictly increase");
    res.push_back(config.base_resolution * f);
  }
  for (std::size_t i = 1; i < res.size(); ++i) {
    if (res[i] <= res[i - 1]) throw ConfigError("hexplane: level resolutions must strictly increase");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(config.init_lo, config.init_hi);
  for (std::size_t r : res) {
    for (PlaneAxes ax : kAllPlanes) {
      PlaneGrid p{ax, Tensor({r, r, config.channels})};
      for (double& v : p.params.data()) v = dist(rng);
      planes_.push_back(std::move(p));
    }
  }
}

HexPlaneEncoder::HexPlaneEncoder(std::vector<PlaneGrid> planes) : planes_(std::move(planes)) { validate_planes(planes_); }

std::vector<double> HexPlaneEncoder::encode(const std::array<double, 4>& u) const {
  Tensor coords({1, 4}, std::vector<double>(u.begin(), u.end()));
  return encode(coords).vec();
}

Tensor HexPlaneEncoder::encode(const Tensor& coords) const {
  if (coords.rank() != 2 || coords.shape()[1] != 4) {
    throw ShapeError("hexplane encode: coordinates must be [N,4], got " + shape_str(coords.shape()));
  }
  std::vector<PlaneAxes> axes;
  std::vector<const Tensor*> ptrs;
  for (const auto& p : planes_) {
    axes.push_back(p.axes);
    ptrs.push_back(&p.params);
  }
  Tensor out;
  const LookupKernel kernel{axes, ptrs, channels(), num_levels()};
  clamps_.add(kernel.forward(coords, out));
  return out;
}

ad::Var HexPlaneEncoder::encode(ad::Var coords, std::span<const ad::Var> plane_vars) const {
  if (plane_vars.size() != planes_.size()) throw ShapeError("hexplane encode: expected one Var per plane");
  const Tensor& cv = coords.value();
  if (cv.rank() != 2 || cv.shape()[1] != 4) {
    throw ShapeError("hexplane encode: coordinates must be [N,4], got " + shape_str(cv.shape()));
  }
  std::vector<PlaneAxes> axes;
  std::vector<const Tensor*> ptrs;
  std::vector<ad::Var> inputs{coords};
  for (std::size_t i = 0; i < planes_.size(); ++i) {
    if (plane_vars[i].shape() != planes_[i].params.shape()) throw ShapeError("hexplane encode: plane Var shape mismatch");
    axes.push_back(planes_[i].axes);
    ptrs.push_back(&plane_vars[i].value());
    inputs.push_back(plane_vars[i]);
  }
  Tensor out;
  const LookupKernel kernel{axes, ptrs, channels(), num_levels()};
  clamps_.add(kernel.forward(cv, out));
  return coords.tape->custom(std::make_shared<HexLookupOp>(std::move(axes)), std::move(inputs), std::move(out));
}

double HexPlaneEncoder::tv_loss() const {
  double s = 0.0;
  for (const auto& p : planes_) s += plane_tv(p.params, nullptr, 0.0);
  return s;
}

ad::Var HexPlaneEncoder::tv_loss(std::span<const ad::Var> plane_vars) const {
  if (plane_vars.empty()) throw ShapeError("hexplane tv_loss: no planes");
  double s = 0.0;
  std::vector<ad::Var> inputs(plane_vars.begin(), plane_vars.end());
  for (const auto& v : inputs) s += plane_tv(v.value(), nullptr, 0.0);
  return inputs[0].tape->custom(std::make_shared<TvOp>(), std::move(inputs), Tensor::scalar(s));
}

}  // namespace nehad
