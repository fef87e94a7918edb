#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nehad/pipeline.hpp"

namespace nehad {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'N', 'E', 'H', 'A', 'D', 'C', 'K', '1'};

class Writer {
 public:
  template <class T>
  void pod(T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out_.append(b, sizeof(T));
  }
  void u32(std::uint32_t v) { pod(v); }
  void u64(std::uint64_t v) { pod(v); }
  void f64(double v) { pod(v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void tensor(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) u64(d);
    for (double v : t.data()) f64(v);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}

  template <class T>
  T pod(const char* what) {
    if (s_.size() - pos_ < sizeof(T)) throw FormatError(std::string("checkpoint: truncated ") + what, pos_);
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::uint32_t u32(const char* what) { return pod<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return pod<std::uint64_t>(what); }
  double f64(const char* what) { return pod<double>(what); }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    if (s_.size() - pos_ < n) throw FormatError(std::string("checkpoint: truncated ") + what, pos_);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  Tensor tensor(const char* what) {
    const std::size_t at = pos_;
    const std::uint32_t rank = u32(what);
    if (rank > 8) throw FormatError(std::string("checkpoint: implausible rank in ") + what, at);
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = u64(what);
      n *= d;
    }
    if (n > (s_.size() - pos_) / 8) throw FormatError(std::string("checkpoint: truncated ") + what, pos_);
    std::vector<double> data(n);
    for (double& v : data) v = f64(what);
    return Tensor(std::move(shape), std::move(data));
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == s_.size(); }

 private:
  const std::string& s_;
  std::size_t pos_ = 0;
};

void write_scene(Writer& w, const Scene& s) {
  for (double v : s.bounds.lo) w.f64(v);
  for (double v : s.bounds.hi) w.f64(v);
  w.u64(s.size());
  for (const GaussianPrimitive& g : s.primitives) {
    for (double v : g.mu) w.f64(v);
    for (double v : g.log_scale) w.f64(v);
    for (double v : g.rot) w.f64(v);
    w.f64(g.opacity_logit);
    for (double v : g.color) w.f64(v);
    for (double v : g.mu_eq) w.f64(v);
    w.f64(g.t_eq_pos);
    w.f64(g.t_eq_scale);
  }
}

Scene read_scene(Reader& r) {
  Scene s;
  for (double& v : s.bounds.lo) v = r.f64("bounds");
  for (double& v : s.bounds.hi) v = r.f64("bounds");
  const std::uint64_t n = r.u64("primitive count");
  for (std::uint64_t i = 0; i < n; ++i) {
    GaussianPrimitive g;
    for (double& v : g.mu) v = r.f64("primitive");
    for (double& v : g.log_scale) v = r.f64("primitive");
    for (double& v : g.rot) v = r.f64("primitive");
    g.opacity_logit = r.f64("primitive");
    for (double& v : g.color) v = r.f64("primitive");
    for (double& v : g.mu_eq) v = r.f64("primitive");
    g.t_eq_pos = r.f64("primitive");
    g.t_eq_scale = r.f64("primitive");
    s.primitives.push_back(g);
  }
  return s;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ck) {
  Writer w;
  for (char c : kMagic) w.pod(c);
  w.u32(Checkpoint::kVersion);
  w.str(ck.config.to_text());
  w.u64(ck.iteration);
  write_scene(w, ck.model.scene);

  const auto& planes = ck.model.encoder.planes();
  w.u32(static_cast<std::uint32_t>(planes.size()));
  for (const PlaneGrid& p : planes) {
    w.u32(static_cast<std::uint32_t>(p.axes));
    w.tensor(p.params);
  }

  DeformDecoder dec = ck.model.decoder;
  const auto names = dec.parameter_names();
  const auto params = dec.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    w.str(names[i]);
    w.tensor(*params[i]);
  }

  w.u64(ck.optimizer.size());
  for (const AdamState& a : ck.optimizer) {
    w.pod(a.step);
    w.f64(a.beta1);
    w.f64(a.beta2);
    w.f64(a.eps);
    w.tensor(a.m);
    w.tensor(a.v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  for (char c : kMagic) {
    if (r.pod<char>("magic") != c) throw FormatError("checkpoint: bad magic", 0);
  }
  const std::uint32_t version = r.u32("version");
  if (version != Checkpoint::kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version), 8);
  }
  Checkpoint ck;
  ck.config = TrainConfig::from_text(r.str("config"));
  ck.iteration = r.u64("iteration");
  ck.model.scene = read_scene(r);

  const std::uint32_t n_planes = r.u32("plane count");
  std::vector<PlaneGrid> planes;
  for (std::uint32_t i = 0; i < n_planes; ++i) {
    const std::size_t at = r.pos();
    const std::uint32_t axes = r.u32("plane axes");
    if (axes > 5) throw FormatError("checkpoint: bad plane axes", at);
    planes.push_back({static_cast<PlaneAxes>(axes), r.tensor("plane")});
  }
  ck.model.encoder = HexPlaneEncoder(std::move(planes));

  DeformDecoder dec(ck.model.encoder.feature_dim(), ck.config.decoder(), 0);
  const auto names = dec.parameter_names();
  auto params = dec.parameters();
  const std::size_t at = r.pos();
  if (r.u32("decoder tensor count") != params.size()) throw FormatError("checkpoint: decoder layout mismatch", at);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t here = r.pos();
    const std::string name = r.str("decoder tensor name");
    Tensor t = r.tensor("decoder tensor");
    if (name != names[i] || t.shape() != params[i]->shape()) {
      throw FormatError("checkpoint: decoder tensor '" + name + "' does not match the configured layout", here);
    }
    *params[i] = std::move(t);
  }
  ck.model.decoder = std::move(dec);

  const std::uint64_t n_opt = r.u64("optimizer count");
  for (std::uint64_t i = 0; i < n_opt; ++i) {
    AdamState a;
    a.step = r.pod<std::int64_t>("adam step");
    a.beta1 = r.f64("adam beta1");
    a.beta2 = r.f64("adam beta2");
    a.eps = r.f64("adam eps");
    a.m = r.tensor("adam m");
    a.v = r.tensor("adam v");
    ck.optimizer.push_back(std::move(a));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes", r.pos());
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("checkpoint: cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace nehad
