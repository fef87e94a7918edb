#include "nehad/hnn.hpp"

#include <cmath>
#include <random>

#include "nehad/error.hpp"

namespace nehad {

namespace {

Tensor uniform(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

ad::Var activate(Activation a, ad::Var x) { return a == Activation::relu ? ad::relu(x) : ad::tanh(x); }

ad::Var row_input(ad::Tape& tape, std::span<const double> v) {
  return tape.constant(Tensor({1, v.size()}, std::vector<double>(v.begin(), v.end())));
}

}  // namespace

Mlp Mlp::make(std::span<const std::size_t> sizes, Activation act, std::uint64_t seed, bool bias) {
  if (sizes.size() < 2) throw ConfigError("Mlp: need at least input and output sizes");
  std::mt19937_64 rng(seed);
  Mlp m;
  m.activation = act;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes[i]));
    Linear l;
    l.weight = uniform({sizes[i], sizes[i + 1]}, bound, rng);
    if (bias) l.bias = uniform({1, sizes[i + 1]}, bound, rng);
    m.layers.push_back(std::move(l));
  }
  return m;
}

ad::Var apply(const LinearVars& layer, ad::Var x) {
  ad::Var y = ad::matmul(x, layer.weight);
  if (layer.bias.valid()) y = y + layer.bias;
  return y;
}

ad::Var apply(const MlpVars& mlp, ad::Var x) {
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    x = apply(mlp.layers[i], x);
    if (i + 1 < mlp.layers.size()) x = activate(mlp.activation, x);
  }
  return x;
}

MlpVars bind(ad::Tape& tape, const Mlp& mlp, std::vector<ad::Var>& leaves) {
  MlpVars vars;
  vars.activation = mlp.activation;
  for (const Linear& l : mlp.layers) {
    LinearVars lv;
    lv.weight = tape.leaf(l.weight);
    leaves.push_back(lv.weight);
    if (!l.bias.empty()) {
      lv.bias = tape.leaf(l.bias);
      leaves.push_back(lv.bias);
    }
    vars.layers.push_back(lv);
  }
  return vars;
}

void collect_parameters(Mlp& mlp, std::vector<Tensor*>& out) {
  for (Linear& l : mlp.layers) {
    out.push_back(&l.weight);
    if (!l.bias.empty()) out.push_back(&l.bias);
  }
}

DeformDecoder::DeformDecoder(std::size_t feature_dim, const DecoderConfig& config, std::uint64_t seed)
    : config_(config) {
  if (config.width == 0 || config.width % 2 != 0) {
    throw ConfigError("DeformDecoder: latent width W must be even and positive, got " + std::to_string(config.width));
  }
  if (config.depth == 0) throw ConfigError("DeformDecoder: depth must be >= 1");
  if (feature_dim == 0) throw ConfigError("DeformDecoder: feature dimension must be > 0");
  std::vector<std::size_t> sizes{feature_dim};
  for (std::size_t i = 0; i < config.depth; ++i) sizes.push_back(config.width);
  mlp_ = Mlp::make(sizes, Activation::relu, seed);

  std::vector<std::size_t> head{config.width};
  if (config.head_hidden > 0) head.push_back(config.head_hidden);
  head.push_back(1);
  f1_ = Mlp::make(head, Activation::tanh, seed + 1);
  f2_ = Mlp::make(head, Activation::tanh, seed + 2);

  std::mt19937_64 rng(seed + 3);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.width));
  a_mu_ = uniform({config.width, 3}, bound, rng);
  a_s_ = uniform({config.width, 3}, bound, rng);
  a_r_ = uniform({config.width, 4}, bound, rng);
}

void DeformDecoder::zero_fields() {
  for (Mlp* head : {&f1_, &f2_}) {
    Linear& last = head->layers.back();
    for (double& v : last.weight.data()) v = 0.0;
    for (double& v : last.bias.data()) v = 0.0;
  }
  for (Tensor* a : {&a_mu_, &a_s_, &a_r_}) {
    for (double& v : a->data()) v = 0.0;
  }
}

std::vector<Tensor*> DeformDecoder::parameters() {
  std::vector<Tensor*> out;
  collect_parameters(mlp_, out);
  collect_parameters(f1_, out);
  collect_parameters(f2_, out);
  out.push_back(&a_mu_);
  out.push_back(&a_s_);
  out.push_back(&a_r_);
  return out;
}

std::vector<std::string> DeformDecoder::parameter_names() const {
  std::vector<std::string> names;
  auto add = [&](const Mlp& m, const std::string& prefix) {
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      names.push_back(prefix + "." + std::to_string(i) + ".weight");
      if (!m.layers[i].bias.empty()) names.push_back(prefix + "." + std::to_string(i) + ".bias");
    }
  };
  add(mlp_, "mlp");
  add(f1_, "f1");
  add(f2_, "f2");
  names.insert(names.end(), {"adapter_mu", "adapter_s", "adapter_r"});
  return names;
}

DecoderVars DeformDecoder::bind(ad::Tape& tape, std::vector<ad::Var>& leaves) const {
  DecoderVars d;
  d.kind = config_.kind;
  d.mlp = nehad::bind(tape, mlp_, leaves);
  d.f1 = nehad::bind(tape, f1_, leaves);
  d.f2 = nehad::bind(tape, f2_, leaves);
  d.a_mu = tape.leaf(a_mu_);
  d.a_s = tape.leaf(a_s_);
  d.a_r = tape.leaf(a_r_);
  leaves.insert(leaves.end(), {d.a_mu, d.a_s, d.a_r});
  return d;
}

ad::Var latent(const DecoderVars& dec, ad::Var features) {
  const std::size_t in = dec.mlp.layers.front().weight.shape()[0];
  if (features.value().rank() != 2 || features.shape()[1] != in) {
    throw ShapeError("latent: feature shape " + shape_str(features.shape()) + " does not match MLP input " +
                     std::to_string(in));
  }
  return apply(dec.mlp, features);
}

ad::Var potential(const MlpVars& head, ad::Var h) { return apply(head, h); }

ad::Var symplectic_rotate(ad::Var g) {
  const std::size_t W = g.shape()[1];
  if (W % 2 != 0) throw ShapeError("symplectic_rotate: odd latent width " + std::to_string(W));
  const std::size_t d = W / 2;
  const ad::Var parts[] = {ad::slice_cols(g, d, W), ad::neg(ad::slice_cols(g, 0, d))};
  return ad::concat_cols(parts);
}

VectorFields vector_fields(const DecoderVars& dec, ad::Var h) {
  const std::size_t W = h.shape()[1];
  if (W % 2 != 0) throw ShapeError("vector_fields: odd latent width " + std::to_string(W));
  ad::Tape& tape = *h.tape;
  if (dec.kind == DecoderKind::linear) {
    const ad::Var zero = tape.constant(Tensor(h.shape()));
    return {zero, zero, h};
  }
  // Rows are independent, so the gradient of the summed potential is the
  // per-row gradient.
  const ad::Var wrt[] = {h};
  const ad::Var v_c = tape.grad(ad::sum(potential(dec.f1, h)), wrt, true).grads[0];
  const ad::Var g2 = tape.grad(ad::sum(potential(dec.f2, h)), wrt, true).grads[0];
  const ad::Var v_s = symplectic_rotate(g2);
  return {v_c, v_s, v_c + v_s};
}

Deformation deform(const DecoderVars& dec, ad::Var v) {
  return {ad::matmul(v, dec.a_mu), ad::matmul(v, dec.a_s), ad::matmul(v, dec.a_r)};
}

ad::Var force(const DecoderVars& dec, ad::Var v_c) { return ad::matmul(v_c, dec.a_mu); }

std::vector<double> DeformDecoder::latent(std::span<const double> features) const {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  const DecoderVars d = bind(tape, leaves);
  return nehad::latent(d, row_input(tape, features)).value().vec();
}

DeformDecoder::FieldValues DeformDecoder::vector_fields(std::span<const double> h) const {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  const DecoderVars d = bind(tape, leaves);
  if (h.size() != config_.width) throw ShapeError("vector_fields: latent length does not match W");
  const VectorFields f = nehad::vector_fields(d, row_input(tape, h));
  return {f.v_c.value().vec(), f.v_s.value().vec(), f.v.value().vec()};
}

DeformDecoder::DeformValues DeformDecoder::deform(std::span<const double> v) const {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  const DecoderVars d = bind(tape, leaves);
  if (v.size() != config_.width) throw ShapeError("deform: field length does not match W");
  const Deformation def = nehad::deform(d, row_input(tape, v));
  DeformValues out{};
  for (int i = 0; i < 3; ++i) {
    out.d_mu[i] = def.d_mu.value()[i];
    out.d_s[i] = def.d_s.value()[i];
  }
  for (int i = 0; i < 4; ++i) out.d_rot[i] = def.d_rot.value()[i];
  return out;
}

std::array<double, 3> DeformDecoder::force(std::span<const double> h) const {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  const DecoderVars d = bind(tape, leaves);
  if (h.size() != config_.width) throw ShapeError("force: latent length does not match W");
  const VectorFields f = nehad::vector_fields(d, row_input(tape, h));
  const ad::Var F = nehad::force(d, f.v_c);
  return {F.value()[0], F.value()[1], F.value()[2]};
}

ad::Var canonical_loss(const MlpVars& hamiltonian, ad::Var q, ad::Var p, ad::Var dq_dt, ad::Var dp_dt) {
  return canonical_loss([&](ad::Var x) { return apply(hamiltonian, x); }, q, p, dq_dt, dp_dt);
}

ad::Var canonical_loss(const std::function<ad::Var(ad::Var)>& hamiltonian, ad::Var q, ad::Var p, ad::Var dq_dt,
                       ad::Var dp_dt) {
  if (q.shape() != p.shape() || q.shape() != dq_dt.shape() || q.shape() != dp_dt.shape()) {
    throw ShapeError("canonical_loss: q, p, dq/dt, dp/dt must share a shape");
  }
  ad::Tape& tape = *q.tape;
  const ad::Var parts[] = {q, p};
  const ad::Var x = ad::concat_cols(parts);
  const ad::Var H = ad::sum(hamiltonian(x));
  const ad::Var wrt[] = {q, p};
  const auto g = tape.grad(H, wrt, true);
  const ad::Var dH_dq = g.grads[0];
  const ad::Var dH_dp = g.grads[1];
  const ad::Var per_row = ad::row_norm(dH_dp - dq_dt) + ad::row_norm(dH_dq + dp_dt);
  return ad::mean(per_row);
}

double canonical_loss(const Mlp& hamiltonian, std::span<const double> q, std::span<const double> p,
                      std::span<const double> dq_dt, std::span<const double> dp_dt) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  const MlpVars H = bind(tape, hamiltonian, leaves);
  return canonical_loss(H, row_input(tape, q), row_input(tape, p), row_input(tape, dq_dt), row_input(tape, dp_dt))
      .value()
      .item();
}

Tensor hamiltonian_field(const Mlp& hamiltonian, const Tensor& x) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  const MlpVars H = bind(tape, hamiltonian, leaves);
  const ad::Var xv = tape.constant(x);
  const ad::Var wrt[] = {xv};
  const ad::Var g = tape.grad(ad::sum(apply(H, xv)), wrt).grads[0];
  const std::size_t d = x.shape()[1] / 2;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      out.at(r, j) = g.value().at(r, d + j);
      out.at(r, d + j) = -g.value().at(r, j);
    }
  }
  return out;
}

}  // namespace nehad
