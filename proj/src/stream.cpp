#include "nehad/stream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "nehad/optim.hpp"

namespace nehad {

// ---------------------------------------------------------------- mip level

void MipSelectConfig::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (r[i] < 1) throw ConfigError("mip_level: resolution ratios must be >= 1");
    if (!(base_scale[i] > 0.0)) throw ConfigError("mip_level: base_scale must be > 0");
  }
}

double mip_beta_raw(double rho) {
  if (std::isinf(rho)) return 0.5;
  const double t = std::tanh(rho / 3.0 - 1.0);
  return t / (1.0 + t);
}

MipLevelDetail mip_level_detail(const Vec3& s, const MipSelectConfig& cfg) {
  cfg.validate();
  for (double v : s) {
    if (!(v > 0.0)) throw Error("mip_level: scale components must be > 0");
  }
  MipLevelDetail d;
  double best_ratio = -1.0;
  for (int i = 0; i < 3; ++i) {
    const double lo = 0.5 * cfg.base_scale[i], hi = 0.5 * cfg.base_scale[i] * cfg.r[i];
    d.s_clamped[i] = std::clamp(s[i], lo, hi);
    d.l[i] = std::log2(2.0 * d.s_clamped[i] / cfg.base_scale[i]);
    const double lmax = std::log2(static_cast<double>(cfg.r[i]));
    const double ratio = lmax > 0.0 ? d.l[i] / lmax : 0.0;
    if (ratio > best_ratio) {
      best_ratio = ratio;
      d.dominant = i;
    }
  }
  d.L = {d.l[0], d.l[1], d.l[2], d.l[d.dominant]};
  d.L_bar = (d.l[0] + d.l[1] + d.l[2]) / 3.0;
  const double lmax = std::max({d.l[0], d.l[1], d.l[2]});
  const double lmin = std::min({d.l[0], d.l[1], d.l[2]});
  if (lmax == 0.0) {
    d.rho = 1.0;
  } else if (lmin == 0.0) {
    d.rho = std::numeric_limits<double>::infinity();
  } else {
    d.rho = lmax / lmin;
  }
  d.beta_raw = mip_beta_raw(d.rho);
  d.beta = std::clamp(d.beta_raw, 0.0, 0.5);
  for (int i = 0; i < 4; ++i) d.l_hat[i] = d.L[i] - d.beta * (d.L[i] - d.L_bar);
  return d;
}

std::array<double, 4> mip_level(const Vec3& s, const MipSelectConfig& cfg) { return mip_level_detail(s, cfg).l_hat; }

// ---------------------------------------------------------------- mip chain

MipChain build_mipchain(const ImageBuffer& image) {
  if (image.width < 1 || image.height < 1) throw Error("build_mipchain: image must be at least 1x1");
  MipChain chain;
  chain.levels.push_back(image);
  while (chain.levels.back().width > 1 || chain.levels.back().height > 1) {
    const ImageBuffer& src = chain.levels.back();
    const int w = std::max(1, src.width / 2), h = std::max(1, src.height / 2);
    ImageBuffer dst(w, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int xs[2] = {std::min(2 * x, src.width - 1), std::min(2 * x + 1, src.width - 1)};
        const int ys[2] = {std::min(2 * y, src.height - 1), std::min(2 * y + 1, src.height - 1)};
        for (int c = 0; c < 3; ++c) {
          dst.at(x, y, c) =
              0.25 * (src.at(xs[0], ys[0], c) + src.at(xs[1], ys[0], c) + src.at(xs[0], ys[1], c) + src.at(xs[1], ys[1], c));
        }
      }
    }
    chain.levels.push_back(std::move(dst));
  }
  return chain;
}

Vec3 bilinear_sample(const ImageBuffer& img, double u, double v) {
  const double fx = std::clamp(u * img.width - 0.5, 0.0, static_cast<double>(img.width - 1));
  const double fy = std::clamp(v * img.height - 0.5, 0.0, static_cast<double>(img.height - 1));
  const int x0 = std::min(static_cast<int>(fx), std::max(0, img.width - 2));
  const int y0 = std::min(static_cast<int>(fy), std::max(0, img.height - 2));
  const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
  const double ax = fx - x0, ay = fy - y0;
  Vec3 out;
  for (int c = 0; c < 3; ++c) {
    const double top = (1.0 - ax) * img.at(x0, y0, c) + ax * img.at(x1, y0, c);
    const double bot = (1.0 - ax) * img.at(x0, y1, c) + ax * img.at(x1, y1, c);
    out[c] = (1.0 - ay) * top + ay * bot;
  }
  return out;
}

Vec3 trilinear_sample(const MipChain& chain, double u, double v, double level) {
  if (chain.levels.empty()) throw Error("trilinear_sample: empty mip chain");
  const double top = static_cast<double>(chain.max_level());
  if (!(level >= 0.0 && level <= top)) {
    chain.clamps.add();
    level = std::isnan(level) ? 0.0 : std::clamp(level, 0.0, top);
  }
  const std::size_t l0 = static_cast<std::size_t>(std::floor(level));
  const std::size_t l1 = std::min(l0 + 1, chain.max_level());
  const double f = level - static_cast<double>(l0);
  const Vec3 a = bilinear_sample(chain.levels[l0], u, v);
  if (f == 0.0) return a;
  const Vec3 b = bilinear_sample(chain.levels[l1], u, v);
  return {(1.0 - f) * a[0] + f * b[0], (1.0 - f) * a[1] + f * b[1], (1.0 - f) * a[2] + f * b[2]};
}

// ---------------------------------------------------------------- layers

namespace {
template <class Op>
GaussianPrimitive zip_fields(const GaussianPrimitive& a, const GaussianPrimitive& b, Op op) {
  GaussianPrimitive r;
  for (int i = 0; i < 3; ++i) {
    r.mu[i] = op(a.mu[i], b.mu[i]);
    r.log_scale[i] = op(a.log_scale[i], b.log_scale[i]);
    r.color[i] = op(a.color[i], b.color[i]);
    r.mu_eq[i] = op(a.mu_eq[i], b.mu_eq[i]);
  }
  for (int i = 0; i < 4; ++i) r.rot[i] = op(a.rot[i], b.rot[i]);
  r.opacity_logit = op(a.opacity_logit, b.opacity_logit);
  r.t_eq_pos = op(a.t_eq_pos, b.t_eq_pos);
  r.t_eq_scale = op(a.t_eq_scale, b.t_eq_scale);
  return r;
}
}  // namespace

GaussianPrimitive add_fields(const GaussianPrimitive& a, const GaussianPrimitive& b) {
  return zip_fields(a, b, [](double x, double y) { return x + y; });
}

GaussianPrimitive sub_fields(const GaussianPrimitive& a, const GaussianPrimitive& b) {
  return zip_fields(a, b, [](double x, double y) { return x - y; });
}

GaussianPrimitive zero_fields() {
  GaussianPrimitive z;
  return zip_fields(z, z, [](double, double) { return 0.0; });
}

Scene compose(const LayeredScene& layered, std::size_t i) {
  if (i > layered.residuals.size()) {
    throw Error("compose: level " + std::to_string(i) + " out of range [0, " + std::to_string(layered.residuals.size()) +
                "]");
  }
  Scene s = layered.base;
  for (std::size_t j = 0; j < i; ++j) {
    const SceneDelta& d = layered.residuals[j];
    if (d.offsets.size() > s.primitives.size()) {
      throw Error("compose: residual " + std::to_string(j + 1) + " has " + std::to_string(d.offsets.size()) +
                  " offsets for " + std::to_string(s.primitives.size()) + " primitives");
    }
    for (std::size_t k = 0; k < d.offsets.size(); ++k) s.primitives[k] = add_fields(s.primitives[k], d.offsets[k]);
    s.primitives.insert(s.primitives.end(), d.appended.begin(), d.appended.end());
  }
  return s;
}

Scene opacity_prune(const Scene& scene, double threshold) {
  Scene out;
  out.bounds = scene.bounds;
  for (const auto& g : scene.primitives) {
    if (g.opacity() >= threshold) out.primitives.push_back(g);
  }
  return out;
}

namespace {
Scene delta_scene(const SceneDelta& d, const Aabb& bounds) {
  Scene s;
  s.bounds = bounds;
  s.primitives = d.offsets;
  s.primitives.insert(s.primitives.end(), d.appended.begin(), d.appended.end());
  return s;
}
}  // namespace

std::size_t layered_bytes(const LayeredScene& layered, std::size_t i) {
  if (i > layered.residuals.size()) throw Error("layered_bytes: level out of range");
  std::size_t total = encode_ply(layered.base).size();
  for (std::size_t j = 0; j < i; ++j) total += encode_ply(delta_scene(layered.residuals[j], layered.base.bounds)).size();
  return total;
}

std::vector<SweepRow> rate_quality_sweep(const LayeredScene& layered, const std::vector<View>& views,
                                         const RasterConfig& raster) {
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i <= layered.residuals.size(); ++i) {
    const Scene s = opacity_prune(compose(layered, i), layered.threshold(i));
    SweepRow row;
    row.level = i;
    row.count = s.size();
    row.bytes = layered_bytes(layered, i);
    double acc = 0.0;
    for (const View& v : views) acc += psnr(rasterize(s, v.camera, raster), v.image);
    row.psnr = views.empty() ? 0.0 : acc / static_cast<double>(views.size());
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out) {
  out << "level,count,bytes,psnr\n";
  for (const auto& r : rows) out << r.level << "," << r.count << "," << r.bytes << "," << format_metric(r.psnr) << "\n";
}

void save_layered(const LayeredScene& layered, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_ply(layered.base, dir / "base.ply");
  std::ofstream m(dir / "manifest.txt");
  if (!m) throw Error("save_layered: cannot write manifest in " + dir.string());
  m.precision(17);
  m << "nehad-layered 1\n";
  m << "layers " << layered.residuals.size() << "\n";
  m << "base base.ply threshold " << layered.threshold(0) << "\n";
  for (std::size_t j = 0; j < layered.residuals.size(); ++j) {
    const std::string name = "residual_" + std::to_string(j + 1) + ".ply";
    save_ply(delta_scene(layered.residuals[j], layered.base.bounds), dir / name);
    m << "residual " << (j + 1) << " " << name << " offsets " << layered.residuals[j].offsets.size() << " appended "
      << layered.residuals[j].appended.size() << " threshold " << layered.threshold(j + 1) << "\n";
  }
}

LayeredScene load_layered(const std::filesystem::path& dir) {
  std::ifstream m(dir / "manifest.txt");
  if (!m) throw Error("load_layered: missing manifest.txt in " + dir.string());
  std::string line;
  auto fail = [&](const std::string& why) { throw Error("load_layered: " + why + " in manifest line '" + line + "'"); };
  std::getline(m, line);
  if (line != "nehad-layered 1") fail("bad magic");
  std::getline(m, line);
  std::istringstream ls(line);
  std::string key;
  std::size_t n = 0;
  if (!(ls >> key >> n) || key != "layers") fail("expected 'layers N'");
  LayeredScene out;
  std::getline(m, line);
  {
    std::istringstream bs(line);
    std::string file, tkey;
    double thr = 0.0;
    if (!(bs >> key >> file >> tkey >> thr) || key != "base" || tkey != "threshold") fail("expected base entry");
    out.base = load_ply(dir / file);
    out.thresholds.push_back(thr);
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (!std::getline(m, line)) fail("missing residual entry");
    std::istringstream rs(line);
    std::size_t idx = 0, noff = 0, napp = 0;
    std::string file, k1, k2, k3;
    double thr = 0.0;
    if (!(rs >> key >> idx >> file >> k1 >> noff >> k2 >> napp >> k3 >> thr) || key != "residual" || k1 != "offsets" ||
        k2 != "appended" || k3 != "threshold" || idx != j + 1) {
      fail("malformed residual entry");
    }
    const Scene s = load_ply(dir / file);
    if (s.size() != noff + napp) fail("primitive count does not match offsets + appended");
    SceneDelta d;
    d.offsets.assign(s.primitives.begin(), s.primitives.begin() + static_cast<std::ptrdiff_t>(noff));
    d.appended.assign(s.primitives.begin() + static_cast<std::ptrdiff_t>(noff), s.primitives.end());
    out.residuals.push_back(std::move(d));
    out.thresholds.push_back(thr);
  }
  return out;
}

// ---------------------------------------------------------------- layered training

void LayeredTrainConfig::validate() const {
  if (layers < 1) throw ConfigError("layered training: need at least one layer");
  if (!(lr_position > 0 && lr_scale > 0 && lr_opacity > 0 && lr_color > 0)) {
    throw ConfigError("layered training: learning rates must be > 0");
  }
  loss.validate();
}

Camera downsample_camera(const Camera& cam, std::size_t level) {
  Camera c = cam;
  for (std::size_t i = 0; i < level; ++i) {
    c.width = std::max(1, c.width / 2);
    c.height = std::max(1, c.height / 2);
    c.fx *= 0.5;
    c.fy *= 0.5;
    c.cx = (c.cx - 0.5) * 0.5;
    c.cy = (c.cy - 0.5) * 0.5;
  }
  return c;
}

namespace {

struct PrimTensors {
  Tensor mu, log_scale, rot, opacity, color;
};

PrimTensors to_tensors(const Scene& s) {
  const std::size_t n = s.size();
  PrimTensors t{Tensor({n, 3}), Tensor({n, 3}), Tensor({n, 4}), Tensor({n, 1}), Tensor({n, 3})};
  for (std::size_t i = 0; i < n; ++i) {
    const auto& g = s.primitives[i];
    for (int k = 0; k < 3; ++k) {
      t.mu.at(i, k) = g.mu[k];
      t.log_scale.at(i, k) = g.log_scale[k];
      t.color.at(i, k) = g.color[k];
    }
    for (int k = 0; k < 4; ++k) t.rot.at(i, k) = g.rot[k];
    t.opacity[i] = g.opacity_logit;
  }
  return t;
}

void from_tensors(const PrimTensors& t, Scene& s) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto& g = s.primitives[i];
    for (int k = 0; k < 3; ++k) {
      g.mu[k] = t.mu.at(i, k);
      g.log_scale[k] = t.log_scale.at(i, k);
      g.color[k] = t.color.at(i, k);
    }
    g.opacity_logit = t.opacity[i];
  }
}

// New primitives at the pixels with the largest error, back-projected to the
// depth of the nearest existing splat.
std::vector<GaussianPrimitive> spawn(const Scene& current, const Camera& cam, const ImageBuffer& render,
                                     const ImageBuffer& gt, std::size_t count) {
  std::vector<std::pair<double, std::size_t>> err;
  for (std::size_t p = 0; p < render.pixels(); ++p) {
    double e = 0.0;
    for (int c = 0; c < 3; ++c) e += std::abs(render.rgb[p * 3 + c] - gt.rgb[p * 3 + c]);
    err.emplace_back(-e, p);
  }
  std::sort(err.begin(), err.end());
  std::vector<Projection> proj;
  for (const auto& g : current.primitives) proj.push_back(project(g, cam));
  std::vector<double> depths;
  for (const auto& p : proj) {
    if (p.visible) depths.push_back(p.depth);
  }
  std::sort(depths.begin(), depths.end());
  const double median_depth = depths.empty() ? 1.0 : depths[depths.size() / 2];

  std::vector<GaussianPrimitive> out;
  for (std::size_t k = 0; k < std::min(count, err.size()); ++k) {
    const std::size_t p = err[k].second;
    const double px = static_cast<double>(p % static_cast<std::size_t>(cam.width));
    const double py = static_cast<double>(p / static_cast<std::size_t>(cam.width));
    double depth = median_depth, best = std::numeric_limits<double>::infinity();
    for (const auto& pr : proj) {
      if (!pr.visible) continue;
      const double d2 = (pr.mean[0] - px) * (pr.mean[0] - px) + (pr.mean[1] - py) * (pr.mean[1] - py);
      if (d2 < best) {
        best = d2;
        depth = pr.depth;
      }
    }
    const Vec3 pc{(px - cam.cx) / cam.fx * depth, (py - cam.cy) / cam.fy * depth, depth};
    const auto& V = cam.view;
    Vec3 world;
    for (int i = 0; i < 3; ++i) {
      world[i] = V[0 * 4 + i] * (pc[0] - V[3]) + V[1 * 4 + i] * (pc[1] - V[7]) + V[2 * 4 + i] * (pc[2] - V[11]);
    }
    GaussianPrimitive g = GaussianPrimitive::at(world);
    const double s = std::log(0.5 * depth / cam.fx);
    g.log_scale = {s, s, s};
    g.opacity_logit = 0.0;
    g.color = {gt.rgb[p * 3], gt.rgb[p * 3 + 1], gt.rgb[p * 3 + 2]};
    out.push_back(g);
  }
  return out;
}

void optimize(Scene& scene, const std::vector<View>& views, const std::vector<ImageBuffer>& targets,
              const std::vector<Camera>& cams, const LayeredTrainConfig& cfg) {
  PrimTensors t = to_tensors(scene);
  AdamState s_mu, s_ls, s_op, s_col;
  LossConfig loss = cfg.loss;
  // SSIM needs an 11×11 window; coarse levels fall back to L1 only.
  if (cams[0].width < kSsimWindow || cams[0].height < kSsimWindow) loss.lambda_dssim = 0.0;
  for (std::size_t it = 0; it < cfg.iterations_per_layer; ++it) {
    const std::size_t v = it % views.size();
    ad::Tape tape;
    tape.set_check_finite(false);
    SplatVars sv{tape.leaf(t.mu), tape.leaf(t.log_scale), tape.constant(t.rot), tape.leaf(t.opacity),
                 tape.leaf(t.color)};
    const ad::Var img = rasterize(sv, cams[v], cfg.raster);
    const ad::Var gt = tape.constant(targets[v].to_tensor());
    const ad::Var l = total_loss(img, gt, ad::Var{}, cams[v].width, cams[v].height, loss);
    const ad::Var wrt[] = {sv.mu, sv.log_scale, sv.opacity_logit, sv.color};
    const auto g = tape.grad(l, wrt);
    adam_update(t.mu, g.grads[0].value(), s_mu, cfg.lr_position);
    adam_update(t.log_scale, g.grads[1].value(), s_ls, cfg.lr_scale);
    adam_update(t.opacity, g.grads[2].value(), s_op, cfg.lr_opacity);
    adam_update(t.color, g.grads[3].value(), s_col, cfg.lr_color);
    for (double& c : t.color.data()) c = std::clamp(c, 0.0, 1.0);
  }
  from_tensors(t, scene);
}

}  // namespace

LayeredScene train_layered(const Scene& init, const std::vector<View>& views, const LayeredTrainConfig& cfg) {
  cfg.validate();
  if (views.empty()) throw Error("train_layered: no views");
  for (const View& v : views) {
    if (v.image.width != views[0].image.width || v.image.height != views[0].image.height) {
      throw Error("train_layered: views must share one image size");
    }
  }
  std::vector<MipChain> chains;
  for (const View& v : views) chains.push_back(build_mipchain(v.image));
  if (cfg.layers - 1 > chains[0].max_level()) throw Error("train_layered: too many layers for the image size");

  LayeredScene out;
  out.thresholds.assign(cfg.layers, 0.0);
  for (std::size_t j = 0; j < cfg.layers; ++j) {
    const std::size_t level = cfg.layers - 1 - j;
    std::vector<Camera> cams;
    std::vector<ImageBuffer> targets;
    for (std::size_t v = 0; v < views.size(); ++v) {
      cams.push_back(downsample_camera(views[v].camera, level));
      targets.push_back(chains[v].levels[level]);
    }
    if (j == 0) {
      out.base = init;
      optimize(out.base, views, targets, cams, cfg);
      continue;
    }
    const Scene prev = compose(out, j - 1);
    Scene cur = prev;
    const ImageBuffer r = rasterize(prev, cams[0], cfg.raster);
    const auto fresh = spawn(prev, cams[0], r, targets[0], cfg.spawn_per_layer);
    cur.primitives.insert(cur.primitives.end(), fresh.begin(), fresh.end());
    optimize(cur, views, targets, cams, cfg);
    SceneDelta d;
    for (std::size_t k = 0; k < prev.size(); ++k) d.offsets.push_back(sub_fields(cur.primitives[k], prev.primitives[k]));
    d.appended.assign(cur.primitives.begin() + static_cast<std::ptrdiff_t>(prev.size()), cur.primitives.end());
    out.residuals.push_back(std::move(d));
  }
  return out;
}

}  // namespace nehad
