#include "nehad/gauss.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>

namespace nehad {

Quat quat_normalize(const Quat& q) {
  const double n = quat_norm(q);
  if (!(n > 1e-12)) throw Error("quat_normalize: degenerate (near-zero) quaternion");
  return {q[0] / n, q[1] / n, q[2] / n, q[3] / n};
}

Mat3 covariance(const Vec3& scale, const Quat& rot) {
  if (std::abs(quat_norm(rot) - 1.0) > 1e-4) {
    throw Error("covariance: rotation quaternion is not unit (norm " + std::to_string(quat_norm(rot)) + ")");
  }
  return covariance_unchecked(scale, rot);
}

GaussianPrimitive GaussianPrimitive::at(const Vec3& mu) {
  GaussianPrimitive g;
  g.mu = mu;
  g.mu_eq = mu;
  return g;
}

double Aabb::diagonal() const {
  const Vec3 e = extent();
  return std::sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2]);
}

Vec3 Aabb::normalize(const Vec3& p) const {
  Vec3 u;
  for (int i = 0; i < 3; ++i) u[i] = (p[i] - lo[i]) / (hi[i] - lo[i]);
  return u;
}

void Scene::fit_bounds(double margin) {
  if (primitives.empty()) {
    bounds = Aabb{};
    return;
  }
  Vec3 lo = primitives[0].mu, hi = primitives[0].mu;
  for (const auto& g : primitives) {
    for (int i = 0; i < 3; ++i) {
      lo[i] = std::min(lo[i], g.mu[i]);
      hi[i] = std::max(hi[i], g.mu[i]);
    }
  }
  for (int i = 0; i < 3; ++i) {
    const double pad = std::max(margin * (hi[i] - lo[i]), 1e-3);
    lo[i] -= pad;
    hi[i] += pad;
  }
  bounds = Aabb{lo, hi};
}

namespace {

static_assert(std::endian::native == std::endian::little, "PLY I/O assumes a little-endian host");

constexpr const char* kProps[] = {"x",       "y",       "z",       "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                                  "scale_0", "scale_1", "scale_2", "rot_0",  "rot_1",  "rot_2",  "rot_3",
                                  "eq_x",    "eq_y",    "eq_z",    "eq_t_pos", "eq_t_scale"};
constexpr std::size_t kNumProps = std::size(kProps);
constexpr std::size_t kFirstOptional = 14;  // eq_* may be absent

std::array<double, kNumProps> pack(const GaussianPrimitive& g) {
  return {g.mu[0],
          g.mu[1],
          g.mu[2],
          (g.color[0] - 0.5) / kShC0,
          (g.color[1] - 0.5) / kShC0,
          (g.color[2] - 0.5) / kShC0,
          g.opacity_logit,
          g.log_scale[0],
          g.log_scale[1],
          g.log_scale[2],
          g.rot[0],
          g.rot[1],
          g.rot[2],
          g.rot[3],
          g.mu_eq[0],
          g.mu_eq[1],
          g.mu_eq[2],
          g.t_eq_pos,
          g.t_eq_scale};
}

std::size_t type_size(const std::string& type) {
  if (type == "float" || type == "float32" || type == "int" || type == "int32" || type == "uint" || type == "uint32")
    return 4;
  if (type == "double" || type == "float64") return 8;
  if (type == "uchar" || type == "uint8" || type == "char" || type == "int8") return 1;
  if (type == "short" || type == "int16" || type == "ushort" || type == "uint16") return 2;
  return 0;
}

double read_scalar(const std::string& type, const char* p) {
  if (type == "float" || type == "float32") {
    float f;
    std::memcpy(&f, p, 4);
    return f;
  }
  if (type == "double" || type == "float64") {
    double d;
    std::memcpy(&d, p, 8);
    return d;
  }
  if (type == "uchar" || type == "uint8") return static_cast<unsigned char>(*p);
  if (type == "char" || type == "int8") return static_cast<signed char>(*p);
  if (type == "int" || type == "int32") {
    std::int32_t v;
    std::memcpy(&v, p, 4);
    return v;
  }
  if (type == "uint" || type == "uint32") {
    std::uint32_t v;
    std::memcpy(&v, p, 4);
    return v;
  }
  if (type == "short" || type == "int16") {
    std::int16_t v;
    std::memcpy(&v, p, 2);
    return v;
  }
  std::uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}

}  // namespace

std::string encode_ply(const Scene& scene) {
  std::ostringstream out;
  out << "ply\nformat binary_little_endian 1.0\n";
  char buf[256];
  const auto& b = scene.bounds;
  std::snprintf(buf, sizeof buf, "comment nehad_bounds %.17g %.17g %.17g %.17g %.17g %.17g\n", b.lo[0], b.lo[1],
                b.lo[2], b.hi[0], b.hi[1], b.hi[2]);
  out << buf;
  out << "element vertex " << scene.primitives.size() << "\n";
  for (const char* p : kProps) out << "property float " << p << "\n";
  out << "end_header\n";
  std::vector<float> row(kNumProps);
  for (const auto& g : scene.primitives) {
    const auto values = pack(g);
    for (std::size_t i = 0; i < kNumProps; ++i) row[i] = static_cast<float>(values[i]);
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  return out.str();
}

void save_ply(const Scene& scene, const std::filesystem::path& path) {
  const std::string bytes = encode_ply(scene);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_ply: cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("save_ply: write failed for " + path.string());
}

Scene load_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_ply: cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_ply(bytes);
}

Scene decode_ply(std::string_view bytes) {

  std::size_t pos = 0;
  auto next_line = [&](std::size_t& line_start) -> std::string {
    line_start = pos;
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw FormatError("PLY header: missing end_header", pos);
    std::string line(bytes.substr(pos, nl - pos));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = nl + 1;
    return line;
  };

  std::size_t at = 0;
  if (next_line(at) != "ply") throw FormatError("PLY header: missing 'ply' magic", 0);

  Scene scene;
  bool have_bounds = false;
  bool have_format = false;
  std::size_t vertex_count = 0;
  bool in_vertex = false;
  bool seen_vertex = false;
  struct Prop {
    std::string type;
    std::string name;
    std::size_t offset;
  };
  std::vector<Prop> props;
  std::size_t stride = 0;
  std::size_t header_end = 0;

  for (;;) {
    const std::string line = next_line(at);
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "end_header") {
      header_end = pos;
      break;
    }
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "binary_little_endian") throw FormatError("PLY header: unsupported format '" + fmt + "'", at);
      have_format = true;
    } else if (key == "comment") {
      std::string tag;
      ls >> tag;
      if (tag == "nehad_bounds") {
        Aabb bb;
        ls >> bb.lo[0] >> bb.lo[1] >> bb.lo[2] >> bb.hi[0] >> bb.hi[1] >> bb.hi[2];
        if (!ls) throw FormatError("PLY header: malformed nehad_bounds comment", at);
        scene.bounds = bb;
        have_bounds = true;
      }
    } else if (key == "element") {
      std::string name;
      long long count = -1;
      ls >> name >> count;
      if (!ls || count < 0) throw FormatError("PLY header: malformed element line", at);
      in_vertex = name == "vertex";
      if (in_vertex) {
        vertex_count = static_cast<std::size_t>(count);
        seen_vertex = true;
      } else if (count != 0) {
        throw FormatError("PLY header: unsupported non-empty element '" + name + "'", at);
      }
    } else if (key == "property") {
      std::string type, name;
      ls >> type;
      if (type == "list") throw FormatError("PLY header: list properties are not supported", at);
      ls >> name;
      const std::size_t sz = type_size(type);
      if (!ls || sz == 0) throw FormatError("PLY header: malformed property line '" + line + "'", at);
      if (in_vertex) {
        props.push_back({type, name, stride});
        stride += sz;
      }
    } else if (!key.empty() && key != "obj_info") {
      throw FormatError("PLY header: unexpected keyword '" + key + "'", at);
    }
  }
  if (!have_format) throw FormatError("PLY header: missing format line", 0);
  if (!seen_vertex) throw FormatError("PLY header: missing 'element vertex'", header_end);

  std::array<int, kNumProps> index;
  index.fill(-1);
  for (std::size_t i = 0; i < props.size(); ++i) {
    for (std::size_t k = 0; k < kNumProps; ++k) {
      if (props[i].name == kProps[k]) index[k] = static_cast<int>(i);
    }
  }
  for (std::size_t k = 0; k < kFirstOptional; ++k) {
    if (index[k] < 0) throw FormatError(std::string("PLY header: missing required property '") + kProps[k] + "'", header_end);
  }

  const std::size_t need = vertex_count * stride;
  if (bytes.size() - header_end < need) {
    throw FormatError("PLY body: expected " + std::to_string(vertex_count) + " vertices (" + std::to_string(need) +
                          " bytes) but only " + std::to_string(bytes.size() - header_end) + " bytes follow",
                      bytes.size());
  }
  if (bytes.size() - header_end > need) {
    throw FormatError("PLY body: " + std::to_string(bytes.size() - header_end - need) +
                          " trailing bytes after declared vertex count",
                      header_end + need);
  }

  scene.primitives.resize(vertex_count);
  for (std::size_t v = 0; v < vertex_count; ++v) {
    const char* rowp = bytes.data() + header_end + v * stride;
    auto get = [&](std::size_t k) {
      const Prop& p = props[static_cast<std::size_t>(index[k])];
      return read_scalar(p.type, rowp + p.offset);
    };
    GaussianPrimitive& g = scene.primitives[v];
    g.mu = {get(0), get(1), get(2)};
    g.color = {0.5 + kShC0 * get(3), 0.5 + kShC0 * get(4), 0.5 + kShC0 * get(5)};
    g.opacity_logit = get(6);
    g.log_scale = {get(7), get(8), get(9)};
    g.rot = {get(10), get(11), get(12), get(13)};
    g.mu_eq = g.mu;
    if (index[14] >= 0 && index[15] >= 0 && index[16] >= 0) g.mu_eq = {get(14), get(15), get(16)};
    g.t_eq_pos = index[17] >= 0 ? get(17) : 0.5;
    g.t_eq_scale = index[18] >= 0 ? get(18) : 0.5;
  }
  if (!have_bounds) scene.fit_bounds();
  return scene;
}

}  // namespace nehad
