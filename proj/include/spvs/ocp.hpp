#pragma once

// Optimal control problem data and pure evaluators: action and perception
// objectives, visibility / time-to-collision / distance residuals and the
// slack penalty, plus the Gauss-Newton linearizations the solver consumes.

#include "spvs/camera.hpp"
#include "spvs/dynamics.hpp"

#include <array>
#include <span>
#include <stdexcept>
#include <vector>

namespace spvs {

struct OcpWeights {
  Vec3 q_p{10.0, 10.0, 10.0};
  Vec3 q_v{1.0, 1.0, 1.0};
  Vec4 q_q{1.0, 1.0, 1.0, 1.0};
  Vec4 r{0.1, 1.0, 1.0, 1.0};
  double q_u = 5.0;
  double w_z_l1 = 50.0;
  double w_z_l2 = 500.0;

  void validate() const {
    if ((q_p.array() < 0.0).any() || (q_v.array() < 0.0).any() || (q_q.array() < 0.0).any() || q_u < 0.0)
      throw std::invalid_argument("weights: state weights must be nonnegative");
    if (!((r.array() > 0.0).all())) throw std::invalid_argument("weights: input weights must be positive");
    if (!(w_z_l1 > 0.0 && w_z_l2 > 0.0)) throw std::invalid_argument("weights: slack weights must be positive");
  }
};

struct OcpReferences {
  Vec3 p_star = Vec3::Zero();
  Vec3 v_star = Vec3::Zero();
  UnitQuaternion q_wb_star;
  ControlInput u_star{9.81, Vec3::Zero()};
  Vec3 rho_star = Vec3::UnitZ();
  double r_star = 0.0;
  /// Optional time-varying relative position, one entry per node; overrides p_star when non-empty.
  std::vector<Vec3> p_star_path;

  const Vec3& p_star_at(int node) const {
    if (p_star_path.empty()) return p_star;
    return p_star_path[std::min<std::size_t>(node, p_star_path.size() - 1)];
  }

  /// Body-to-target vector when the target sits at range r_star along rho_star
  /// with the vehicle at attitude q_wb_star.
  static Vec3 relative_position_for(double r_star, const Vec3& rho_star, const UnitQuaternion& q_wb_star,
                                    const RigExtrinsics& rig) {
    return q_wb_star.matrix() * (rig.q_bc.matrix() * rho_star.normalized() * r_star + rig.p_cb_b);
  }
};

enum class ApproachConstraint { none, ttc, distance };

struct ConstraintSet {
  ImageBound bound{278.5 / 376.0, 168.0 / 376.0};
  ApproachConstraint approach = ApproachConstraint::ttc;
  double t_c_min = 2.0;
  double r_min = 0.0;  // distance mode
  double c_min = 2.0;
  double c_max = 20.0;
  double omega_max = 3.0;

  void validate() const {
    if (!(bound.half_width_n > 0.0 && bound.half_height_n > 0.0)) throw std::invalid_argument("constraints: bound must be positive");
    if (!(t_c_min > 0.0)) throw std::invalid_argument("constraints: t_c_min must be positive");
    if (!(c_min < c_max)) throw std::invalid_argument("constraints: c_min must be below c_max");
    if (!(omega_max > 0.0)) throw std::invalid_argument("constraints: omega_max must be positive");
    if (r_min < 0.0) throw std::invalid_argument("constraints: r_min must be nonnegative");
  }
};

struct Horizon {
  int steps = 20;
  double dt = 0.05;

  void validate() const {
    if (steps < 1) throw std::invalid_argument("horizon: need at least one step");
    if (!(dt > 0.0)) throw std::invalid_argument("horizon: dt must be positive");
  }
};

struct OcpProblem {
  Horizon horizon;
  OcpWeights weights;
  OcpReferences refs;
  ConstraintSet constraints;
  RigExtrinsics rig;
  WorldConstants world;

  void validate() const {
    horizon.validate();
    weights.validate();
    constraints.validate();
  }
};

// ---------------------------------------------------------------------------
// Scalar evaluators

/// Body-to-landmark vector in the world frame.
inline Vec3 relative_position(const ServoState& x, const RigExtrinsics& rig) {
  return x.q_wb.matrix() * (rig.q_bc.matrix() * x.feature.bearing() * x.r + rig.p_cb_b);
}

/// q flipped into the hemisphere of ref.
inline Vec4 aligned_coeffs(const UnitQuaternion& q, const UnitQuaternion& ref) {
  const Vec4 c = q.coeffs_wxyz();
  return c.dot(ref.coeffs_wxyz()) < 0.0 ? Vec4(-c) : c;
}

inline double action_cost(const ServoState& x, const ControlInput& u, const OcpReferences& refs,
                          const OcpWeights& weights, const RigExtrinsics& rig, int node = 0) {
  const Vec3 dp = refs.p_star_at(node) - relative_position(x, rig);
  const Vec3 dv = refs.v_star - x.v_w;
  const Vec4 dq = refs.q_wb_star.coeffs_wxyz() - aligned_coeffs(x.q_wb, refs.q_wb_star);
  const Vec4 du = refs.u_star.vector() - u.vector();
  return dp.dot(weights.q_p.cwiseProduct(dp)) + dv.dot(weights.q_v.cwiseProduct(dv)) +
         dq.dot(weights.q_q.cwiseProduct(dq)) + du.dot(weights.r.cwiseProduct(du));
}

/// Squared horizontal image coordinate; there is intentionally no vertical term.
inline double perception_cost(const ServoState& x, const OcpWeights& weights) {
  const auto p = to_image_normalized(x.feature.bearing());
  if (!p) throw std::domain_error("perception_cost: feature is behind the camera");
  return weights.q_u * p->x * p->x;
}

/// Visibility rows in g <= z form: x - sx, -x - sx, y - sy, -y - sy.
/// Behind-camera features report 10 * s_max on every row.
inline std::array<double, 4> visibility_residuals(const ServoState& x, const ImageBound& bound) {
  const auto p = to_image_normalized(x.feature.bearing());
  if (!p) {
    const double sx = 10.0 * bound.half_width_n;
    const double sy = 10.0 * bound.half_height_n;
    return {sx, sx, sy, sy};
  }
  return {p->x - bound.half_width_n, -p->x - bound.half_width_n, p->y - bound.half_height_n,
          -p->y - bound.half_height_n};
}

/// Closing speed along the bearing, positive while approaching.
inline double closing_rate(const ServoState& x, const ControlInput& u, const RigExtrinsics& rig) {
  return -range_rate(x.feature, camera_twist(x, u, rig).v_c);
}

/// closing_rate / r - 1 / t_c_min; positive means the time to collision is below t_c_min.
inline double ttc_residual(const ServoState& x, const ControlInput& u, const RigExtrinsics& rig, double t_c_min) {
  if (!(x.r > 0.0)) throw std::domain_error("ttc_residual: range must be positive");
  return closing_rate(x, u, rig) / x.r - 1.0 / t_c_min;
}

inline double distance_residual(const ServoState& x, double r_min) { return r_min - x.r; }

inline double slack_penalty(std::span<const double> z, const OcpWeights& weights) {
  double l1 = 0.0;
  double l2 = 0.0;
  for (double zi : z) {
    l1 += std::abs(zi);
    l2 += zi * zi;
  }
  return weights.w_z_l2 * l2 + weights.w_z_l1 * l1;
}

inline double stage_cost(const ServoState& x, const ControlInput& u, std::span<const double> z,
                         const OcpReferences& refs, const OcpWeights& weights, const RigExtrinsics& rig,
                         int node = 0) {
  return action_cost(x, u, refs, weights, rig, node) + perception_cost(x, weights) + slack_penalty(z, weights);
}

// ---------------------------------------------------------------------------
// Gauss-Newton linearizations with respect to the state tangent (see
// dynamics.hpp for its layout) and the input vector [c, omega_b].

inline constexpr int kCostRows = 15;  // position 3, velocity 3, attitude 4, input 4, perception 1

struct CostLinearization {
  Eigen::Matrix<double, kCostRows, 1> residual;
  Eigen::Matrix<double, kCostRows, kStateTangentDim> jx;
  Eigen::Matrix<double, kCostRows, kInputDim> ju;

  double value() const { return residual.squaredNorm(); }
};

struct ConstraintLinearization {
  Eigen::VectorXd g;
  Eigen::Matrix<double, Eigen::Dynamic, kStateTangentDim> jx;
  Eigen::Matrix<double, Eigen::Dynamic, kInputDim> ju;
};

/// Residual r with ||r||^2 = action_cost + perception_cost. The input block is
/// zeroed on the terminal node. The perception row clamps n_z at the front
/// threshold so the evaluator is total.
inline CostLinearization linearize_cost(const ServoState& x, const ControlInput& u, const OcpProblem& prob, int node,
                                        bool terminal) {
  const OcpWeights& w = prob.weights;
  const OcpReferences& refs = prob.refs;
  const RigExtrinsics& rig = prob.rig;
  CostLinearization lin;
  lin.residual.setZero();
  lin.jx.setZero();
  lin.ju.setZero();

  const Mat3 c_wb = x.q_wb.matrix();
  const Mat3 c_bc = rig.q_bc.matrix();
  const Vec3 n = x.feature.bearing();
  const Mat32 jn = bearing_jacobian(x.feature);
  const Vec3 p = c_wb * (c_bc * n * x.r + rig.p_cb_b);

  const Vec3 sp = w.q_p.cwiseSqrt();
  lin.residual.segment<3>(0) = sp.cwiseProduct(refs.p_star_at(node) - p);
  lin.jx.block<3, 3>(0, 3) = sp.asDiagonal() * skew(p);
  lin.jx.block<3, 2>(0, 6) = -(sp.asDiagonal() * (c_wb * c_bc * jn * x.r));
  lin.jx.block<3, 1>(0, 8) = -(sp.asDiagonal() * (c_wb * c_bc * n));

  const Vec3 sv = w.q_v.cwiseSqrt();
  lin.residual.segment<3>(3) = sv.cwiseProduct(refs.v_star - x.v_w);
  lin.jx.block<3, 3>(3, 0) = -Mat3(sv.asDiagonal());

  const Vec4 sq = w.q_q.cwiseSqrt();
  const Vec4 q_ref = refs.q_wb_star.coeffs_wxyz();
  const Vec4 qc = x.q_wb.coeffs_wxyz();
  const double sign = qc.dot(q_ref) < 0.0 ? -1.0 : 1.0;
  lin.residual.segment<4>(6) = sq.cwiseProduct(q_ref - sign * qc);
  // d/dtheta of exp(theta) (x) q at theta = 0
  Eigen::Matrix<double, 4, 3> dq;
  dq.row(0) = -0.5 * qc.tail<3>().transpose();
  dq.bottomRows<3>() = 0.5 * (qc(0) * Mat3::Identity() - skew(qc.tail<3>()));
  lin.jx.block<4, 3>(6, 3) = -sign * sq.asDiagonal() * dq;

  if (!terminal) {
    const Vec4 sr = w.r.cwiseSqrt();
    lin.residual.segment<4>(10) = sr.cwiseProduct(refs.u_star.vector() - u.vector());
    lin.ju.block<4, 4>(10, 0) = -Eigen::Matrix4d(sr.asDiagonal());
  }

  const double su = std::sqrt(w.q_u);
  if (n.z() > kFrontEpsilon) {
    lin.residual(14) = su * n.x() / n.z();
    const Eigen::RowVector3d dxbar(1.0 / n.z(), 0.0, -n.x() / (n.z() * n.z()));
    lin.jx.block<1, 2>(14, 6) = su * dxbar * jn;
  } else {
    lin.residual(14) = su * n.x() / kFrontEpsilon;
  }
  return lin;
}

/// Rows in g <= z form, all sharing the node's slack: four visibility rows, the
/// front-hemisphere row eps_front - n_z, then the approach row (TTC or
/// distance) when enabled.
inline ConstraintLinearization linearize_constraints(const ServoState& x, const ControlInput& u,
                                                     const OcpProblem& prob) {
  const ConstraintSet& cs = prob.constraints;
  const int rows = 5 + (cs.approach == ApproachConstraint::none ? 0 : 1);
  ConstraintLinearization lin;
  lin.g.setZero(rows);
  lin.jx.setZero(rows, kStateTangentDim);
  lin.ju.setZero(rows, kInputDim);

  const Vec3 n = x.feature.bearing();
  const Mat32 jn = bearing_jacobian(x.feature);
  const auto vis = visibility_residuals(x, cs.bound);
  for (int i = 0; i < 4; ++i) lin.g(i) = vis[i];
  if (n.z() > kFrontEpsilon) {
    const Eigen::RowVector3d dxbar(1.0 / n.z(), 0.0, -n.x() / (n.z() * n.z()));
    const Eigen::RowVector3d dybar(0.0, 1.0 / n.z(), -n.y() / (n.z() * n.z()));
    const Eigen::RowVector2d jxbar = dxbar * jn;
    const Eigen::RowVector2d jybar = dybar * jn;
    lin.jx.block<1, 2>(0, 6) = jxbar;
    lin.jx.block<1, 2>(1, 6) = -jxbar;
    lin.jx.block<1, 2>(2, 6) = jybar;
    lin.jx.block<1, 2>(3, 6) = -jybar;
  }

  lin.g(4) = kFrontEpsilon - n.z();
  lin.jx.block<1, 2>(4, 6) = -jn.row(2);

  if (cs.approach == ApproachConstraint::ttc) {
    const Mat3 c_wb_t = x.q_wb.matrix().transpose();
    const Mat3 c_bc_t = prob.rig.q_bc.matrix().transpose();
    const double r = std::max(x.r, kRangeFloor);
    const Vec3 v_c = camera_twist(x, u, prob.rig).v_c;
    const double closing = n.dot(v_c);
    const Eigen::RowVector3d nt = n.transpose() * c_bc_t;
    lin.g(5) = closing / r - 1.0 / cs.t_c_min;
    lin.jx.block<1, 3>(5, 0) = nt * c_wb_t / r;
    lin.jx.block<1, 3>(5, 3) = nt * c_wb_t * skew(x.v_w) / r;
    lin.jx.block<1, 2>(5, 6) = v_c.transpose() * jn / r;
    lin.jx(5, 8) = x.r > kRangeFloor ? -closing / (r * r) : 0.0;
    lin.ju.block<1, 3>(5, 1) = -nt * skew(prob.rig.p_cb_b) / r;
  } else if (cs.approach == ApproachConstraint::distance) {
    lin.g(5) = distance_residual(x, cs.r_min);
    lin.jx(5, 8) = -1.0;
  }
  return lin;
}

}  // namespace spvs
