#pragma once

// Hamiltonian deformation decoder.
//
// features f --MLP(ReLU)--> latent h in R^W, W = 2d
// v_c = ∇_h F1(h)                 (conservative, curl-free)
// v_s = ∇_h F2(h) Mᵀ, M = [[0, I], [-I, 0]]  (solenoidal, divergence-free)
// v   = v_c + v_s
// Δμ = A_μ v, Δs = A_s v, Δr = A_r v, force = A_μ v_c
//
// Both potentials are tanh networks so their gradients stay differentiable;
// the gradients are recorded on the tape and train end-to-end.

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nehad/autodiff.hpp"
#include "nehad/tensor.hpp"

namespace nehad {

enum class Activation { relu, tanh };

struct Linear {
  Tensor weight;  // [in, out]; applied as x·W + b
  Tensor bias;    // [1, out], or empty for a bias-free map

  std::size_t in() const { return weight.shape()[0]; }
  std::size_t out() const { return weight.shape()[1]; }
};

struct LinearVars {
  ad::Var weight;
  ad::Var bias;  // invalid when the layer has no bias
};

// Stack of linear layers with `activation` between them (none after the last).
struct Mlp {
  std::vector<Linear> layers;
  Activation activation = Activation::relu;

  // sizes = {in, hidden..., out}; PyTorch-style uniform(±1/sqrt(in)) init.
  static Mlp make(std::span<const std::size_t> sizes, Activation act, std::uint64_t seed, bool bias = true);
  std::size_t in() const { return layers.front().in(); }
  std::size_t out() const { return layers.back().out(); }
};

struct MlpVars {
  std::vector<LinearVars> layers;
  Activation activation = Activation::relu;
};

ad::Var apply(const LinearVars& layer, ad::Var x);
ad::Var apply(const MlpVars& mlp, ad::Var x);

// Binds every tensor of `mlp` as a tape leaf, appending them to `leaves` in
// parameter order (weight, bias per layer).
MlpVars bind(ad::Tape& tape, const Mlp& mlp, std::vector<ad::Var>& leaves);
void collect_parameters(Mlp& mlp, std::vector<Tensor*>& out);

enum class DecoderKind {
  hamiltonian,  // potentials F1/F2 generate the fields
  linear,       // ablation: adapters read h directly, no force
};

struct DecoderConfig {
  std::size_t depth = 2;          // linear layers in the MLP baseline
  std::size_t width = 64;         // latent dimension W (even)
  std::size_t head_hidden = 64;   // hidden width of each potential head (0 = linear head)
  DecoderKind kind = DecoderKind::hamiltonian;
};

struct DecoderVars {
  MlpVars mlp;
  MlpVars f1;
  MlpVars f2;
  ad::Var a_mu;  // [W, 3]
  ad::Var a_s;   // [W, 3]
  ad::Var a_r;   // [W, 4]
  DecoderKind kind = DecoderKind::hamiltonian;
};

struct VectorFields {
  ad::Var v_c;
  ad::Var v_s;
  ad::Var v;
};

struct Deformation {
  ad::Var d_mu;   // [N, 3]
  ad::Var d_s;    // [N, 3]
  ad::Var d_rot;  // [N, 4]
};

class DeformDecoder {
 public:
  DeformDecoder() = default;
  DeformDecoder(std::size_t feature_dim, const DecoderConfig& config, std::uint64_t seed);

  const DecoderConfig& config() const { return config_; }
  std::size_t feature_dim() const { return mlp_.in(); }
  std::size_t width() const { return config_.width; }

  Mlp& mlp() { return mlp_; }
  Mlp& f1() { return f1_; }
  Mlp& f2() { return f2_; }
  Tensor& a_mu() { return a_mu_; }
  Tensor& a_s() { return a_s_; }
  Tensor& a_r() { return a_r_; }
  const Mlp& mlp() const { return mlp_; }
  const Mlp& f1() const { return f1_; }
  const Mlp& f2() const { return f2_; }
  const Tensor& a_mu() const { return a_mu_; }
  const Tensor& a_s() const { return a_s_; }
  const Tensor& a_r() const { return a_r_; }

  // Zeroes the potential heads' output layers and all adapters: no field,
  // no deformation.
  void zero_fields();

  // Stable parameter order shared by parameters(), parameter_names() and bind().
  std::vector<Tensor*> parameters();
  std::vector<std::string> parameter_names() const;
  DecoderVars bind(ad::Tape& tape, std::vector<ad::Var>& leaves) const;

  // Single-sample conveniences (each builds a private tape).
  std::vector<double> latent(std::span<const double> features) const;
  struct FieldValues {
    std::vector<double> v_c, v_s, v;
  };
  FieldValues vector_fields(std::span<const double> h) const;
  struct DeformValues {
    std::array<double, 3> d_mu, d_s;
    std::array<double, 4> d_rot;
  };
  DeformValues deform(std::span<const double> v) const;
  std::array<double, 3> force(std::span<const double> h) const;

 private:
  DecoderConfig config_;
  Mlp mlp_;
  Mlp f1_;
  Mlp f2_;
  Tensor a_mu_;
  Tensor a_s_;
  Tensor a_r_;
};

ad::Var latent(const DecoderVars& dec, ad::Var features);
// Scalar potential per row: [N, W] -> [N, 1].
ad::Var potential(const MlpVars& head, ad::Var h);
// v_s = g·Mᵀ for a row-batched gradient g = (g_q, g_p): returns (g_p, -g_q).
ad::Var symplectic_rotate(ad::Var g);
VectorFields vector_fields(const DecoderVars& dec, ad::Var h);
Deformation deform(const DecoderVars& dec, ad::Var v);
ad::Var force(const DecoderVars& dec, ad::Var v_c);

// Canonical HNN loss, averaged over rows:
// ‖∂H/∂p − dq/dt‖₂ + ‖∂H/∂q + dp/dt‖₂ with H = hamiltonian(concat(q, p)).
ad::Var canonical_loss(const MlpVars& hamiltonian, ad::Var q, ad::Var p, ad::Var dq_dt, ad::Var dp_dt);
// Same loss for any differentiable H mapping rows (q, p) to [N, 1].
ad::Var canonical_loss(const std::function<ad::Var(ad::Var)>& hamiltonian, ad::Var q, ad::Var p, ad::Var dq_dt,
                       ad::Var dp_dt);
double canonical_loss(const Mlp& hamiltonian, std::span<const double> q, std::span<const double> p,
                      std::span<const double> dq_dt, std::span<const double> dp_dt);

// Symplectic gradient (∂H/∂p, −∂H/∂q) of a learned Hamiltonian at rows of x = (q, p).
Tensor hamiltonian_field(const Mlp& hamiltonian, const Tensor& x);

}  // namespace nehad
