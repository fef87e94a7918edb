#include "nehad/physics.hpp"

#include <memory>
#include <string>

namespace nehad {

void IntegratorConfig::validate() const {
  if (!(dt > 0.0)) throw ConfigError("integrator: dt must be > 0, got " + std::to_string(dt));
  if (!(phi_max > 0.0 && phi_max <= std::numbers::pi)) {
    throw ConfigError("integrator: phi_max must lie in (0, pi], got " + std::to_string(phi_max));
  }
}

Vec3 verlet_position(const Vec3& mu, const Vec3& dmu, const Vec3& force, double dt) {
  Vec3 out;
  for (int i = 0; i < 3; ++i) out[i] = mu[i] + dt * dmu[i] + 0.5 * dt * dt * force[i];
  return out;
}

ad::Var verlet_position(ad::Var mu, ad::Var dmu, ad::Var force, double dt) {
  return mu + dmu * dt + force * (0.5 * dt * dt);
}

Quat clamp_rotation(const Quat& dr, double phi_max) {
  if (!(quat_norm(dr) > 1e-12)) throw Error("clamp_rotation: zero quaternion increment");
  return clamp_rotation_t<double>(dr, phi_max);
}

double rotation_angle(const Quat& q) {
  return 2.0 * std::atan2(std::sqrt(q[1] * q[1] + q[2] * q[2] + q[3] * q[3]), q[0]);
}

Quat apply_rotation(const Quat& r, const Quat& dr_clamped) {
  if (std::abs(quat_norm(r) - 1.0) > 1e-4 || std::abs(quat_norm(dr_clamped) - 1.0) > 1e-4) {
    throw Error("apply_rotation: inputs must be unit quaternions");
  }
  return quat_normalize(quat_mul(r, dr_clamped));
}

namespace {

class RotateClampedOp final : public ad::CustomOp {
 public:
  explicit RotateClampedOp(double phi_max) : phi_max_(phi_max) {}
  std::string_view name() const override { return "rotate_clamped"; }

  template <class T>
  QuatT<T> eval(const QuatT<T>& r, const QuatT<T>& dr) const {
    return quat_unit(quat_mul(quat_unit(r), clamp_rotation_t<T>(dr, phi_max_)));
  }

  std::vector<Tensor> backward(const Tensor& g, std::span<const Tensor* const> in, const Tensor&) const override {
    const Tensor& rot = *in[0];
    const Tensor& dr = *in[1];
    Tensor grot(rot.shape()), gdr(dr.shape());
    using D = Dual<8>;
    for (std::size_t n = 0; n < rot.rows(); ++n) {
      QuatT<D> r, d;
      for (int k = 0; k < 4; ++k) {
        r[k] = D::variable(rot.at(n, k), k);
        d[k] = D::variable(dr.at(n, k), 4 + k);
      }
      const QuatT<D> out = eval(r, d);
      for (int j = 0; j < 4; ++j) {
        const double go = g.at(n, j);
        if (go == 0.0) continue;
        for (int k = 0; k < 4; ++k) {
          grot.at(n, k) += go * out[j].d[k];
          gdr.at(n, k) += go * out[j].d[4 + k];
        }
      }
    }
    return {grot, gdr};
  }

 private:
  double phi_max_;
};

}  // namespace

ad::Var rotate_clamped(ad::Var rot, ad::Var dr, double phi_max) {
  const Tensor& r = rot.value();
  const Tensor& d = dr.value();
  if (r.rank() != 2 || r.cols() != 4 || d.shape() != r.shape()) {
    throw ShapeError("rotate_clamped: expected matching [N,4] inputs, got " + shape_str(r.shape()) + " and " +
                     shape_str(d.shape()));
  }
  auto op = std::make_shared<RotateClampedOp>(phi_max);
  Tensor out(r.shape());
  for (std::size_t n = 0; n < r.rows(); ++n) {
    const Quat q{r.at(n, 0), r.at(n, 1), r.at(n, 2), r.at(n, 3)};
    const Quat dq{d.at(n, 0), d.at(n, 1), d.at(n, 2), d.at(n, 3)};
    if (!(quat_norm(q) > 1e-12)) throw Error("rotate_clamped: degenerate rotation at primitive " + std::to_string(n));
    if (!(quat_norm(dq) > 1e-12)) {
      throw Error("rotate_clamped: zero rotation increment at primitive " + std::to_string(n));
    }
    const Quat o = op->eval<double>(q, dq);
    for (int k = 0; k < 4; ++k) out.at(n, k) = o[k];
  }
  return rot.tape->custom(op, {rot, dr}, std::move(out));
}

}  // namespace nehad
