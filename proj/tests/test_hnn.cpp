#include <cmath>
#include <random>

#include "doctest.h"
#include "nehad/error.hpp"
#include "nehad/hexplane.hpp"
#include "nehad/hnn.hpp"
#include "nehad/optim.hpp"
#include "support.hpp"

using namespace nehad;
using testing::grad_close;
using testing::numeric_grad;
using testing::random_tensor;
using testing::uniform;

namespace {

std::vector<double> random_vec(std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = uniform(lo, hi);
  return v;
}

DeformDecoder make_decoder(std::size_t feat = 6, std::size_t W = 8, std::size_t head = 16, std::uint64_t seed = 7) {
  return DeformDecoder(feat, DecoderConfig{2, W, head, DecoderKind::hamiltonian}, seed);
}

}  // namespace

TEST_CASE("latent") {
  DeformDecoder dec = make_decoder();
  SUBCASE("zero final layer yields its bias") {
    Linear& last = dec.mlp().layers.back();
    for (double& v : last.weight.data()) v = 0.0;
    const auto h = dec.latent(random_vec(6));
    REQUIRE(h.size() == 8);
    for (std::size_t i = 0; i < 8; ++i) CHECK(h[i] == last.bias[i]);
  }
  SUBCASE("feature length mismatch") { CHECK_THROWS_AS((void)dec.latent(random_vec(5)), ShapeError); }
  SUBCASE("gradient of |h|² w.r.t. features") {
    const Tensor f0 = random_tensor({3, 6});
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    const DecoderVars d = dec.bind(tape, leaves);
    const ad::Var f = tape.leaf(f0);
    const ad::Var h = latent(d, f);
    const ad::Var wrt[] = {f};
    const Tensor g = tape.grad(ad::sum(h * h), wrt).grads[0].value();
    const Tensor n = numeric_grad(
        [&](const Tensor& x) {
          double s = 0.0;
          for (std::size_t r = 0; r < 3; ++r) {
            for (double v : dec.latent(std::span<const double>(x.data().data() + r * 6, 6))) s += v * v;
          }
          return s;
        },
        f0);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(grad_close(g[i], n[i], 1e-5, 1e-8));
  }
}

TEST_CASE("odd latent width is rejected") {
  CHECK_THROWS_AS(DeformDecoder(4, DecoderConfig{2, 7, 8}, 0), ConfigError);
  ad::Tape tape;
  CHECK_THROWS_AS((void)symplectic_rotate(tape.constant(Tensor({2, 5}))), ShapeError);
}

TEST_CASE("linear potential gives a constant conservative field") {
  DeformDecoder dec = make_decoder(6, 8, 0);
  REQUIRE(dec.f1().layers.size() == 1);
  const Tensor& a = dec.f1().layers[0].weight;  // [W, 1]
  for (int trial = 0; trial < 5; ++trial) {
    const auto f = dec.vector_fields(random_vec(8, -3, 3));
    for (std::size_t i = 0; i < 8; ++i) CHECK(f.v_c[i] == a[i]);
  }
}

TEST_CASE("symplectic rotation of the half squared norm gradient") {
  // ∇(½|h|²) = h, so v_s = (p, -q).
  const Tensor h0 = random_tensor({4, 6});
  ad::Tape tape;
  const ad::Var h = tape.leaf(h0);
  const ad::Var wrt[] = {h};
  const ad::Var g = tape.grad(0.5 * ad::sum(h * h), wrt, true).grads[0];
  const Tensor vs = symplectic_rotate(g).value();
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(vs.at(r, j) == h0.at(r, j + 3));
      CHECK(vs.at(r, j + 3) == -h0.at(r, j));
    }
  }
}

TEST_CASE("curl-free and divergence-free certificates") {
  const DeformDecoder dec = make_decoder(6, 8, 16, 11);
  const double eps = 1e-5;
  for (int trial = 0; trial < 10; ++trial) {
    const auto h = random_vec(8);
    double asym = 0.0, div = 0.0;
    std::vector<std::vector<double>> J(8, std::vector<double>(8));
    for (std::size_t j = 0; j < 8; ++j) {
      auto hp = h, hm = h;
      hp[j] += eps;
      hm[j] -= eps;
      const auto fp = dec.vector_fields(hp), fm = dec.vector_fields(hm);
      for (std::size_t i = 0; i < 8; ++i) J[i][j] = (fp.v_c[i] - fm.v_c[i]) / (2 * eps);
      div += (fp.v_s[j] - fm.v_s[j]) / (2 * eps);
    }
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t j = 0; j < 8; ++j) asym = std::max(asym, std::abs(J[i][j] - J[j][i]));
    }
    CHECK(asym < 1e-4);
    CHECK(std::abs(div) < 1e-4);
    const auto f = dec.vector_fields(h);
    for (std::size_t i = 0; i < 8; ++i) CHECK(f.v[i] == f.v_c[i] + f.v_s[i]);
  }
}

TEST_CASE("deform") {
  DeformDecoder dec = make_decoder();
  SUBCASE("zero field, zero deformation") {
    const auto d = dec.deform(std::vector<double>(8, 0.0));
    for (double x : d.d_mu) CHECK(x == 0.0);
    for (double x : d.d_s) CHECK(x == 0.0);
    for (double x : d.d_rot) CHECK(x == 0.0);
  }
  SUBCASE("selector adapter") {
    dec.a_mu() = Tensor({8, 3});
    for (std::size_t i = 0; i < 3; ++i) dec.a_mu().at(i, i) = 1.0;
    const auto v = random_vec(8);
    const auto d = dec.deform(v);
    for (std::size_t i = 0; i < 3; ++i) CHECK(d.d_mu[i] == v[i]);
  }
  SUBCASE("scale covariance") {
    for (int trial = 0; trial < 10; ++trial) {
      auto v = random_vec(8);
      const auto d1 = dec.deform(v);
      for (double& x : v) x *= 2.0;
      const auto d2 = dec.deform(v);
      for (int i = 0; i < 3; ++i) {
        CHECK(d2.d_mu[i] == 2.0 * d1.d_mu[i]);
        CHECK(d2.d_s[i] == 2.0 * d1.d_s[i]);
      }
      for (int i = 0; i < 4; ++i) CHECK(d2.d_rot[i] == 2.0 * d1.d_rot[i]);
    }
  }
}

TEST_CASE("gradient reaches the plane parameters") {
  const HexPlaneEncoder enc(HexPlaneConfig{4, {2}, 3}, 5);
  const DeformDecoder dec = make_decoder(enc.feature_dim(), 8, 16, 5);
  ad::Tape tape;
  std::vector<ad::Var> planes;
  for (const auto& p : enc.planes()) planes.push_back(tape.leaf(p.params));
  std::vector<ad::Var> leaves;
  const DecoderVars d = dec.bind(tape, leaves);
  const ad::Var coords = tape.constant(random_tensor({5, 4}, 0.1, 0.9));
  const ad::Var h = latent(d, enc.encode(coords, planes));
  const Deformation def = deform(d, vector_fields(d, h).v);
  const auto g = tape.grad(ad::sum(def.d_mu * def.d_mu), planes);
  for (std::size_t k = 0; k < planes.size(); ++k) {
    CHECK_FALSE(g.detached[k]);
    double mx = 0.0;
    for (double v : g.grads[k].value().data()) mx = std::max(mx, std::abs(v));
    CHECK(mx > 0.0);
  }
}

TEST_CASE("force") {
  SUBCASE("constant potential, no force") {
    DeformDecoder dec = make_decoder();
    Linear& last = dec.f1().layers.back();
    for (double& v : last.weight.data()) v = 0.0;
    for (double x : dec.force(random_vec(8))) CHECK(x == 0.0);
  }
  SUBCASE("linear potential gives P·a for every h") {
    DeformDecoder dec = make_decoder(6, 8, 0);
    const Tensor& a = dec.f1().layers[0].weight;
    std::array<double, 3> expect{};
    for (std::size_t k = 0; k < 3; ++k) {
      for (std::size_t i = 0; i < 8; ++i) expect[k] += a[i] * dec.a_mu().at(i, k);
    }
    for (int trial = 0; trial < 5; ++trial) {
      const auto F = dec.force(random_vec(8, -2, 2));
      for (std::size_t k = 0; k < 3; ++k) CHECK(F[k] == doctest::Approx(expect[k]).epsilon(1e-14));
    }
  }
  SUBCASE("force equals the position adapter on v_c, bit for bit") {
    const DeformDecoder dec = make_decoder();
    for (int trial = 0; trial < 5; ++trial) {
      const auto h = random_vec(8);
      const auto F = dec.force(h);
      const auto d = dec.deform(dec.vector_fields(h).v_c);
      for (int k = 0; k < 3; ++k) CHECK(F[k] == d.d_mu[k]);
    }
  }
  SUBCASE("linear ablation has no field and no force") {
    const DeformDecoder dec(6, DecoderConfig{2, 8, 16, DecoderKind::linear}, 3);
    const auto h = random_vec(8);
    const auto f = dec.vector_fields(h);
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(f.v[i] == h[i]);
      CHECK(f.v_c[i] == 0.0);
    }
    for (double x : dec.force(h)) CHECK(x == 0.0);
  }
}

TEST_CASE("canonical loss on the exact oscillator") {
  ad::Tape tape;
  auto H = [](ad::Var x) { return 0.5 * ad::sum_to(x * x, {x.shape()[0], 1}); };
  auto row = [&](double v) { return tape.constant(Tensor::row({v})); };
  CHECK(canonical_loss(H, row(1), row(0), row(0), row(-1)).value().item() == 0.0);
  CHECK(canonical_loss(H, row(1), row(0), row(0), row(0)).value().item() == 1.0);
}

TEST_CASE("canonical loss gradient matches finite differences") {
  const Mlp net = Mlp::make(std::vector<std::size_t>{4, 8, 1}, Activation::tanh, 3);
  const auto q = random_vec(2), p = random_vec(2), dq = random_vec(2), dp = random_vec(2);
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  const MlpVars H = nehad::bind(tape, net, leaves);
  auto row = [&](const std::vector<double>& v) { return tape.constant(Tensor({1, v.size()}, v)); };
  const ad::Var loss = canonical_loss(H, row(q), row(p), row(dq), row(dp));
  CHECK(loss.value().item() == doctest::Approx(canonical_loss(net, q, p, dq, dp)).epsilon(1e-14));
  const auto g = tape.grad(loss, leaves);
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    const Tensor n = numeric_grad(
        [&](const Tensor& x) {
          Mlp m = net;
          std::vector<Tensor*> params;
          collect_parameters(m, params);
          *params[k] = x;
          return canonical_loss(m, q, p, dq, dp);
        },
        leaves[k].value());
    for (std::size_t i = 0; i < n.size(); ++i) CHECK(grad_close(g.grads[k].value()[i], n[i], 1e-5, 1e-8));
  }
}

TEST_CASE("a small net learns the oscillator Hamiltonian") {
  std::mt19937_64 rng(0);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  const std::size_t N = 1000;
  Tensor q({N, 1}), p({N, 1}), dq({N, 1}), dp({N, 1});
  for (std::size_t i = 0; i < N; ++i) {
    q[i] = U(rng);
    p[i] = U(rng);
    dq[i] = p[i];
    dp[i] = -q[i];
  }
  Mlp net = Mlp::make(std::vector<std::size_t>{2, 32, 1}, Activation::tanh, 1);
  std::vector<Tensor*> params;
  collect_parameters(net, params);
  std::vector<AdamState> states;
  for (Tensor* t : params) states.push_back(AdamState::for_shape(t->shape()));
  double loss = 0.0;
  for (int it = 0; it < 1500; ++it) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    const MlpVars H = nehad::bind(tape, net, leaves);
    const ad::Var L = canonical_loss(H, tape.constant(q), tape.constant(p), tape.constant(dq), tape.constant(dp));
    loss = L.value().item();
    const auto g = tape.grad(L, leaves);
    const double lr = it < 1000 ? 1e-2 : 2e-3;
    for (std::size_t k = 0; k < params.size(); ++k) adam_update(*params[k], g.grads[k].value(), states[k], lr);
  }
  MESSAGE("final canonical loss " << loss);
  CHECK(loss < 1e-2);
}
