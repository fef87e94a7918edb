#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "nehad/pipeline.hpp"

namespace nehad {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) {
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (v.empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_uint(key, trim(item)));
  return out;
}

struct Field {
  const char* name;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

#define NEHAD_DOUBLE(f)                                                                \
  Field {                                                                              \
    #f, [](const TrainConfig& c) { return fmt_double(c.f); },                          \
        [](TrainConfig& c, const std::string& v) { c.f = parse_double(#f, v); }        \
  }
#define NEHAD_UINT(f)                                                                  \
  Field {                                                                              \
    #f, [](const TrainConfig& c) { return std::to_string(c.f); },                      \
        [](TrainConfig& c, const std::string& v) { c.f = parse_uint(#f, v); }          \
  }
#define NEHAD_BOOL(f)                                                                  \
  Field {                                                                              \
    #f, [](const TrainConfig& c) { return std::string(c.f ? "true" : "false"); },      \
        [](TrainConfig& c, const std::string& v) { c.f = parse_bool(#f, v); }          \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      NEHAD_UINT(iterations),
      NEHAD_UINT(batch_size),
      NEHAD_DOUBLE(encoder_lr_start),
      NEHAD_DOUBLE(encoder_lr_end),
      NEHAD_DOUBLE(decoder_lr),
      NEHAD_UINT(base_resolution),
      Field{"upsampling",
            [](const TrainConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.upsampling.size(); ++i) s += (i ? "," : "") + std::to_string(c.upsampling[i]);
              return s;
            },
            [](TrainConfig& c, const std::string& v) { c.upsampling = parse_list("upsampling", v); }},
      NEHAD_UINT(channels),
      NEHAD_UINT(decoder_depth),
      NEHAD_UINT(decoder_width),
      NEHAD_UINT(head_hidden),
      Field{"decoder_kind",
            [](const TrainConfig& c) {
              return std::string(c.decoder_kind == DecoderKind::hamiltonian ? "hamiltonian" : "linear");
            },
            [](TrainConfig& c, const std::string& v) {
              if (v == "hamiltonian") {
                c.decoder_kind = DecoderKind::hamiltonian;
              } else if (v == "linear") {
                c.decoder_kind = DecoderKind::linear;
              } else {
                throw ConfigError("config: decoder_kind must be hamiltonian or linear, got '" + v + "'");
              }
            }},
      NEHAD_DOUBLE(position_lr),
      NEHAD_DOUBLE(equilibrium_lr),
      NEHAD_DOUBLE(scale_lr),
      NEHAD_DOUBLE(rotation_lr),
      NEHAD_DOUBLE(opacity_lr),
      NEHAD_DOUBLE(color_lr),
      NEHAD_DOUBLE(dt),
      NEHAD_DOUBLE(phi_max),
      NEHAD_DOUBLE(sigma_s),
      NEHAD_DOUBLE(sigma_t),
      NEHAD_DOUBLE(coupling_lambda),
      NEHAD_DOUBLE(beta),
      NEHAD_DOUBLE(gamma),
      NEHAD_BOOL(use_bed),
      NEHAD_DOUBLE(lambda_dssim),
      NEHAD_DOUBLE(tv_weight),
      NEHAD_UINT(seed),
      Field{"background", [](const TrainConfig& c) { return c.background; },
            [](TrainConfig& c, const std::string& v) {
              if (v != "white" && v != "black") throw ConfigError("config: background must be white or black");
              c.background = v;
            }},
      Field{"frame_sampling",
            [](const TrainConfig& c) {
              switch (c.frame_sampling) {
                case FrameSampling::random:
                  return std::string("random");
                case FrameSampling::ordered:
                  return std::string("ordered");
                case FrameSampling::nested:
                  return std::string("nested");
              }
              return std::string("random");
            },
            [](TrainConfig& c, const std::string& v) {
              if (v == "random") {
                c.frame_sampling = FrameSampling::random;
              } else if (v == "ordered") {
                c.frame_sampling = FrameSampling::ordered;
              } else if (v == "nested") {
                c.frame_sampling = FrameSampling::nested;
              } else {
                throw ConfigError("config: frame_sampling must be random, ordered or nested, got '" + v + "'");
              }
            }},
      NEHAD_UINT(pruning_interval),
      NEHAD_UINT(log_interval),
      NEHAD_BOOL(check_finite),
  };
  return table;
}

#undef NEHAD_DOUBLE
#undef NEHAD_UINT
#undef NEHAD_BOOL

}  // namespace

void TrainConfig::validate() const {
  if (iterations == 0) throw ConfigError("config: iterations must be > 0");
  if (batch_size == 0) throw ConfigError("config: batch_size must be > 0");
  for (double lr : {encoder_lr_start, encoder_lr_end, decoder_lr, position_lr, equilibrium_lr, scale_lr, rotation_lr,
                    opacity_lr, color_lr}) {
    if (!(lr > 0.0)) throw ConfigError("config: learning rates must be > 0");
  }
  if (dt < 0.0) throw ConfigError("config: dt must be > 0 (or 0 for automatic)");
  if (sigma_s < 0.0) throw ConfigError("config: sigma_s must be > 0 (or 0 for automatic)");
  BedConfig b{sigma_s > 0.0 ? sigma_s : 1.0, sigma_t, coupling_lambda, beta, gamma};
  b.validate();
  IntegratorConfig{dt > 0.0 ? dt : 1.0, phi_max}.validate();
  loss().validate();
  if (decoder_width == 0 || decoder_width % 2 != 0) throw ConfigError("config: decoder_width must be even and > 0");
}

Vec3 TrainConfig::background_rgb() const {
  return background == "black" ? Vec3{0.0, 0.0, 0.0} : Vec3{1.0, 1.0, 1.0};
}

HexPlaneConfig TrainConfig::hexplane() const {
  HexPlaneConfig h;
  h.base_resolution = base_resolution;
  h.upsampling = upsampling;
  h.channels = channels;
  return h;
}

DecoderConfig TrainConfig::decoder() const { return {decoder_depth, decoder_width, head_hidden, decoder_kind}; }

LossConfig TrainConfig::loss() const { return {lambda_dssim, tv_weight}; }

BedConfig TrainConfig::bed(const Aabb& bounds) const {
  BedConfig b{sigma_s > 0.0 ? sigma_s : 0.1 * bounds.diagonal(), sigma_t, coupling_lambda, beta, gamma};
  b.validate();
  return b;
}

IntegratorConfig TrainConfig::integrator(std::size_t num_frames) const {
  IntegratorConfig ic{dt, phi_max};
  if (!(dt > 0.0)) ic.dt = num_frames > 1 ? 1.0 / static_cast<double>(num_frames - 1) : 1.0;
  ic.validate();
  return ic;
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const Field& f : fields()) out += std::string(f.name) + "=" + f.get(*this) + "\n";
  return out;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (key == f.name) {
      f.set(*this, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const Field& f : fields()) out.emplace_back(f.name);
    return out;
  }();
  return k;
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
    }
    c.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

TrainConfig toy_config() {
  TrainConfig c;
  c.iterations = 5000;
  c.base_resolution = 16;
  c.upsampling = {2};
  c.channels = 8;
  c.decoder_width = 32;
  c.head_hidden = 32;
  c.log_interval = 500;
  return c;
}

}  // namespace nehad
