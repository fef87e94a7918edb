#include <cstdio>
#include <fstream>
#include <ostream>

#include "nehad/pipeline.hpp"

namespace nehad {

namespace {

DeformSettings settings_for(const Checkpoint& ck, std::size_t n_frames) {
  return deform_settings(ck.config, ck.model.scene.bounds, n_frames);
}

RasterConfig raster_for(const Checkpoint& ck) {
  RasterConfig r;
  r.background = ck.config.background_rgb();
  return r;
}

}  // namespace

EvalTable eval_images(const std::vector<ImageBuffer>& renders, const FrameDataset& dataset) {
  if (renders.size() != dataset.frames.size()) throw Error("eval: render count does not match frame count");
  EvalTable table;
  double sp = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < renders.size(); ++i) {
    EvalRow row{i, dataset.frames[i].t, psnr(renders[i], dataset.frames[i].image),
                ssim(renders[i], dataset.frames[i].image)};
    sp += row.psnr;
    ss += row.ssim;
    table.rows.push_back(row);
  }
  if (!table.rows.empty()) {
    table.mean_psnr = sp / static_cast<double>(table.rows.size());
    table.mean_ssim = ss / static_cast<double>(table.rows.size());
  }
  return table;
}

std::vector<ImageBuffer> render_frames(const Checkpoint& ck, const FrameDataset& dataset) {
  const DeformSettings s = settings_for(ck, dataset.frames.size());
  const RasterConfig r = raster_for(ck);
  std::vector<ImageBuffer> out;
  for (const Frame& f : dataset.frames) out.push_back(rasterize(deform_scene(ck.model, f.t, s), f.camera, r));
  return out;
}

EvalTable eval(const Checkpoint& ck, const FrameDataset& dataset) {
  return eval_images(render_frames(ck, dataset), dataset);
}

void write_eval_csv(const EvalTable& table, std::ostream& out) {
  char buf[64];
  out << "frame,t,psnr,ssim\n";
  for (const EvalRow& r : table.rows) {
    std::snprintf(buf, sizeof buf, "%.6f", r.t);
    out << r.frame << ',' << buf << ',' << format_metric(r.psnr) << ',' << format_metric(r.ssim) << '\n';
  }
  out << "mean,," << format_metric(table.mean_psnr) << ',' << format_metric(table.mean_ssim) << '\n';
}

void render_sequence(const Checkpoint& ck, const Camera& camera, const std::vector<double>& timestamps,
                     const std::filesystem::path& out_dir, const std::filesystem::path& traj_csv) {
  camera.validate();
  std::filesystem::create_directories(out_dir);
  std::ofstream traj;
  if (!traj_csv.empty()) {
    traj.open(traj_csv);
    if (!traj) throw Error("render: cannot write " + traj_csv.string());
    traj << "t,primitive,x,y,z\n";
  }
  // dt was resolved at training time, so the frame count is irrelevant here.
  const DeformSettings s = settings_for(ck, 2);
  const RasterConfig r = raster_for(ck);
  char buf[160];
  for (std::size_t k = 0; k < timestamps.size(); ++k) {
    const Scene deformed = deform_scene(ck.model, timestamps[k], s);
    std::snprintf(buf, sizeof buf, "%04zu.ppm", k);
    write_ppm(rasterize(deformed, camera, r), out_dir / buf);
    if (traj) {
      for (std::size_t i = 0; i < deformed.size(); ++i) {
        const Vec3& p = deformed.primitives[i].mu;
        std::snprintf(buf, sizeof buf, "%.9g,%zu,%.9g,%.9g,%.9g\n", timestamps[k], i, p[0], p[1], p[2]);
        traj << buf;
      }
    }
  }
  if (traj && !traj.flush()) throw Error("render: write failed for " + traj_csv.string());
}

}  // namespace nehad
