#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "nehad/pipeline.hpp"

namespace nehad {

void FrameDataset::validate() const {
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const double t = frames[i].t;
    if (!(t >= 0.0 && t <= 1.0)) throw Error("dataset: timestamp " + std::to_string(t) + " outside [0, 1]");
    if (i > 0 && !(frames[i - 1].t < t)) throw Error("dataset: timestamps must be sorted and unique");
    frames[i].camera.validate();
    if (frames[i].image.width != frames[i].camera.width || frames[i].image.height != frames[i].camera.height) {
      throw Error("dataset: frame " + std::to_string(i) + " image size does not match its camera");
    }
  }
}

void write_camera(const Camera& cam, double t, std::ostream& out) {
  char buf[64];
  auto put = [&](double v, char sep) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf << sep;
  };
  for (int i = 0; i < 16; ++i) put(cam.view[i], (i % 4 == 3) ? '\n' : ' ');
  put(cam.fx, ' ');
  put(cam.fy, ' ');
  put(cam.cx, ' ');
  put(cam.cy, '\n');
  out << cam.width << ' ' << cam.height << '\n';
  put(t, '\n');
}

std::pair<Camera, double> read_camera(std::istream& in) {
  Camera c;
  double t = 0.0;
  for (double& v : c.view) in >> v;
  in >> c.fx >> c.fy >> c.cx >> c.cy >> c.width >> c.height >> t;
  if (!in) throw Error("camera file: expected 16 view values, fx fy cx cy, width height, timestamp");
  return {c, t};
}

namespace {

std::string frame_stem(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return buf;
}

}  // namespace

void save_dataset(const FrameDataset& ds, const std::filesystem::path& dir) {
  const auto fdir = dir / "frames";
  std::filesystem::create_directories(fdir);
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    const Frame& f = ds.frames[i];
    const std::string stem = frame_stem(i);
    write_ppm(f.image, fdir / (stem + ".ppm"));
    std::ofstream cam(fdir / (stem + ".cam"));
    write_camera(f.camera, f.t, cam);
    if (!f.trajectory.empty()) {
      std::ofstream tr(fdir / (stem + ".traj"));
      tr << std::setprecision(17);
      for (const Vec3& p : f.trajectory) tr << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
    }
  }
  if (ds.init) save_ply(*ds.init, dir / "init.ply");
  if (ds.gt) save_ply(*ds.gt, dir / "gt.ply");
  if (!ds.meta.empty()) {
    std::ofstream m(dir / "meta.txt");
    for (const auto& [k, v] : ds.meta) m << k << '=' << v << '\n';
  }
}

FrameDataset load_dataset(const std::filesystem::path& dir) {
  const auto fdir = dir / "frames";
  if (!std::filesystem::is_directory(fdir)) throw Error("dataset: missing frames/ directory in " + dir.string());
  FrameDataset ds;
  for (std::size_t i = 0;; ++i) {
    const std::string stem = frame_stem(i);
    const auto cam_path = fdir / (stem + ".cam");
    if (!std::filesystem::exists(cam_path)) break;
    Frame f;
    std::ifstream cam(cam_path);
    std::tie(f.camera, f.t) = read_camera(cam);
    f.image = read_ppm(fdir / (stem + ".ppm"));
    const auto traj = fdir / (stem + ".traj");
    if (std::filesystem::exists(traj)) {
      std::ifstream tr(traj);
      Vec3 p;
      while (tr >> p[0] >> p[1] >> p[2]) f.trajectory.push_back(p);
    }
    ds.frames.push_back(std::move(f));
  }
  if (std::filesystem::exists(dir / "init.ply")) ds.init = load_ply(dir / "init.ply");
  if (std::filesystem::exists(dir / "gt.ply")) ds.gt = load_ply(dir / "gt.ply");
  if (std::filesystem::exists(dir / "meta.txt")) {
    std::ifstream m(dir / "meta.txt");
    std::string line;
    while (std::getline(m, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) ds.meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  ds.validate();
  return ds;
}

}  // namespace nehad
