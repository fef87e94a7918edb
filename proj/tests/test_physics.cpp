#include <cmath>

#include "doctest.h"
#include "nehad/error.hpp"
#include "nehad/physics.hpp"
#include "support.hpp"

using namespace nehad;
using testing::grad_close;
using testing::numeric_grad;
using testing::random_tensor;
using testing::uniform;

namespace {

Quat random_quat() { return {uniform(-1, 1), uniform(-1, 1), uniform(-1, 1), uniform(-1, 1)}; }

Quat axis_angle(Vec3 axis, double angle) {
  const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  const double s = std::sin(angle / 2) / n;
  return {std::cos(angle / 2), axis[0] * s, axis[1] * s, axis[2] * s};
}

}  // namespace

TEST_CASE("integrator config") {
  CHECK_NOTHROW(IntegratorConfig{}.validate());
  CHECK_THROWS_AS((IntegratorConfig{0.0, 0.3}.validate()), ConfigError);
  CHECK_THROWS_AS((IntegratorConfig{0.1, 0.0}.validate()), ConfigError);
  CHECK_THROWS_AS((IntegratorConfig{0.1, 4.0}.validate()), ConfigError);
}

TEST_CASE("verlet examples") {
  const Vec3 mu{0.5, -1, 2};
  CHECK(verlet_position(mu, {1, 2, 3}, {0, 0, 0}, 1.0) == Vec3{1.5, 1, 5});
  CHECK(verlet_position(mu, {0, 0, 0}, {0, 0, -2}, 1.0) == Vec3{0.5, -1, 1});
}

TEST_CASE("verlet superposition") {
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 mu{uniform(-1, 1), uniform(-1, 1), uniform(-1, 1)};
    const Vec3 v1{uniform(-1, 1), uniform(-1, 1), uniform(-1, 1)}, v2{uniform(-1, 1), uniform(-1, 1), uniform(-1, 1)};
    const Vec3 f1{uniform(-1, 1), uniform(-1, 1), uniform(-1, 1)}, f2{uniform(-1, 1), uniform(-1, 1), uniform(-1, 1)};
    const double dt = uniform(0.01, 1);
    const Vec3 a = verlet_position(mu, v1, f1, dt), b = verlet_position(mu, v2, f2, dt);
    const Vec3 c = verlet_position(mu, {v1[0] + v2[0], v1[1] + v2[1], v1[2] + v2[2]},
                                   {f1[0] + f2[0], f1[1] + f2[1], f1[2] + f2[2]}, dt);
    for (int k = 0; k < 3; ++k) CHECK(std::abs((a[k] - mu[k]) + (b[k] - mu[k]) - (c[k] - mu[k])) <= 1e-14);
  }
  // Batched matches the scalar form.
  ad::Tape tape;
  const Tensor mu = random_tensor({4, 3}), v = random_tensor({4, 3}), f = random_tensor({4, 3});
  const Tensor out = verlet_position(tape.constant(mu), tape.constant(v), tape.constant(f), 0.1).value();
  for (std::size_t i = 0; i < 4; ++i) {
    const Vec3 e = verlet_position({mu.at(i, 0), mu.at(i, 1), mu.at(i, 2)}, {v.at(i, 0), v.at(i, 1), v.at(i, 2)},
                                   {f.at(i, 0), f.at(i, 1), f.at(i, 2)}, 0.1);
    for (std::size_t k = 0; k < 3; ++k) CHECK(out.at(i, k) == doctest::Approx(e[k]).epsilon(1e-14));
  }
}

TEST_CASE("oscillator energy drift: Verlet vs explicit Euler") {
  const double dt = 0.01;
  auto energy = [](double x, double v) { return 0.5 * (x * x + v * v); };
  double x = 1.0, v = 0.0;
  const double e0 = energy(x, v);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double f0 = -x;
    x = verlet_position({x, 0, 0}, {v, 0, 0}, {f0, 0, 0}, dt)[0];
    v += 0.5 * dt * (f0 - x);
    worst = std::max(worst, std::abs(energy(x, v) - e0) / e0);
  }
  double xe = 1.0, ve = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double f = -xe;
    xe += dt * ve;
    ve += dt * f;
  }
  const double euler = std::abs(energy(xe, ve) - e0) / e0;
  MESSAGE("verlet drift " << worst << ", euler drift " << euler);
  CHECK(worst < 0.01);
  CHECK(euler > 0.10);
}

TEST_CASE("clamp_rotation") {
  const double phi_max = 0.35;
  CHECK(clamp_rotation(kIdentityQuat, phi_max) == kIdentityQuat);
  CHECK_THROWS_AS((void)clamp_rotation({0, 0, 0, 0}, phi_max), Error);

  SUBCASE("small angles pass through") {
    const double phi = 0.01 * phi_max;
    const Quat q = axis_angle({1, 2, -0.5}, phi);
    const Quat c = clamp_rotation(q, phi_max);
    CHECK(std::abs(rotation_angle(c) - phi) <= 1e-4 * phi);
    const Quat cc = clamp_rotation(c, phi_max);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(cc[i] - c[i]) <= 1e-6);
  }
  SUBCASE("angle bound and axis preservation") {
    for (int trial = 0; trial < 1000; ++trial) {
      const Quat q = random_quat();
      const Quat c = clamp_rotation(q, phi_max);
      CHECK(rotation_angle(c) < phi_max);
      CHECK(std::abs(quat_norm(c) - 1.0) <= 1e-12);
      const double gq = std::sqrt(q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
      const double gc = std::sqrt(c[1] * c[1] + c[2] * c[2] + c[3] * c[3]);
      if (gq > 1e-6) {
        const Vec3 a{q[1] / gq, q[2] / gq, q[3] / gq}, b{c[1] / gc, c[2] / gc, c[3] / gc};
        const Vec3 x{a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
        CHECK(std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) <= 1e-10);
        CHECK(a[0] * b[0] + a[1] * b[1] + a[2] * b[2] > 0.0);
      }
    }
  }
  SUBCASE("tanh law") {
    for (double phi : {0.1, 0.5, 1.0, 2.0, 3.0}) {
      const Quat c = clamp_rotation(axis_angle({0, 1, 0}, phi), phi_max);
      CHECK(rotation_angle(c) == doctest::Approx(phi_max * std::tanh(phi / phi_max)).epsilon(1e-12));
    }
  }
}

TEST_CASE("apply_rotation") {
  const Quat r = quat_normalize(random_quat());
  const Quat d = quat_normalize(random_quat());
  const Quat a = apply_rotation(r, kIdentityQuat);
  const Quat b = apply_rotation(kIdentityQuat, d);
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(a[i] - r[i]) <= 1e-15);
    CHECK(std::abs(b[i] - d[i]) <= 1e-15);
  }
  CHECK_THROWS_AS((void)apply_rotation({2, 0, 0, 0}, kIdentityQuat), Error);
  for (int trial = 0; trial < 100; ++trial) {
    const Quat p = quat_normalize(random_quat()), q = quat_normalize(random_quat());
    const Quat out = apply_rotation(p, q);
    CHECK(std::abs(quat_norm(out) - 1.0) <= 1e-6);
    const Mat3 R = quat_to_rotmat(out), A = quat_to_rotmat(p), B = quat_to_rotmat(q);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double ab = 0.0;
        for (int k = 0; k < 3; ++k) ab += A[i][k] * B[k][j];
        CHECK(std::abs(R[i][j] - ab) <= 1e-10);
      }
    }
  }
}

TEST_CASE("rotate_clamped matches the scalar path and finite differences") {
  const double phi_max = 0.35;
  Tensor rot0 = random_tensor({5, 4}), dr0 = random_tensor({5, 4}, -0.3, 0.3);
  for (std::size_t i = 0; i < 5; ++i) dr0.at(i, 0) += 1.0;
  ad::Tape tape;
  const ad::Var rot = tape.leaf(rot0), dr = tape.leaf(dr0);
  const ad::Var out = rotate_clamped(rot, dr, phi_max);
  for (std::size_t i = 0; i < 5; ++i) {
    const Quat r = quat_normalize({rot0.at(i, 0), rot0.at(i, 1), rot0.at(i, 2), rot0.at(i, 3)});
    const Quat e = apply_rotation(r, clamp_rotation({dr0.at(i, 0), dr0.at(i, 1), dr0.at(i, 2), dr0.at(i, 3)}, phi_max));
    for (std::size_t k = 0; k < 4; ++k) CHECK(out.value().at(i, k) == doctest::Approx(e[k]).epsilon(1e-12));
  }
  const Tensor w = random_tensor({5, 4});
  const ad::Var wrt[] = {rot, dr};
  const auto g = tape.grad(ad::sum(out * tape.constant(w)), wrt);
  auto value = [&](const Tensor& r, const Tensor& d) {
    ad::Tape tp;
    return ad::sum(rotate_clamped(tp.constant(r), tp.constant(d), phi_max) * tp.constant(w)).value().item();
  };
  const Tensor nr = numeric_grad([&](const Tensor& x) { return value(x, dr0); }, rot0);
  const Tensor nd = numeric_grad([&](const Tensor& x) { return value(rot0, x); }, dr0);
  for (std::size_t i = 0; i < nr.size(); ++i) CHECK(grad_close(g.grads[0].value()[i], nr[i], 1e-5, 1e-9));
  for (std::size_t i = 0; i < nd.size(); ++i) CHECK(grad_close(g.grads[1].value()[i], nd[i], 1e-5, 1e-9));
}
