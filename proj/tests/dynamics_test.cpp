#include "spvs/dynamics.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace spvs {
namespace {

ServoState random_state(test::Sampler& s, double r_lo = 0.5, double r_hi = 20.0) {
  ServoState x;
  x.v_w = s.vec3(-2.0, 2.0);
  x.q_wb = s.quaternion();
  x.feature = s.bearing_rotation();
  x.r = s.uniform(r_lo, r_hi);
  return x;
}

ControlInput random_input(test::Sampler& s) { return {s.uniform(5.0, 15.0), s.vec3(-1.0, 1.0)}; }

// Camera pose in the world for a body that starts at the origin with velocity
// v_w (constant), attitude q_wb * exp(omega_b t) and acceleration ignored.
struct CameraPose {
  Vec3 p;
  Mat3 c_wc;
};

CameraPose camera_pose_at(const ServoState& x, const ControlInput& u, const RigExtrinsics& rig, double t) {
  const Mat3 c_wb = (x.q_wb * quat_exp(u.omega_b * t)).matrix();
  return {x.v_w * t + c_wb * rig.p_cb_b, c_wb * rig.q_bc.matrix()};
}

TEST(CameraTwist, IdentityRig) {
  ServoState x;
  x.v_w = Vec3(1.0, -2.0, 0.5);
  const CameraTwist tw = camera_twist(x, {9.81, Vec3::Zero()}, RigExtrinsics{});
  EXPECT_LT((tw.v_c - x.v_w).norm(), 1e-15);
  EXPECT_LT(tw.omega_c.norm(), 1e-15);
}

TEST(CameraTwist, NoLeverArmWithoutOffset) {
  test::Sampler s(1);
  ServoState x = random_state(s);
  RigExtrinsics rig{Vec3::Zero(), s.quaternion()};
  const CameraTwist a = camera_twist(x, {9.81, Vec3::Zero()}, rig);
  const CameraTwist b = camera_twist(x, {9.81, s.vec3(-3.0, 3.0)}, rig);
  EXPECT_LT((a.v_c - b.v_c).norm(), 1e-14);
}

TEST(CameraTwist, MatchesFrameCompositionOracle) {
  test::Sampler s(2);
  const double h = 1e-5;
  for (int i = 0; i < 200; ++i) {
    const ServoState x = random_state(s);
    const ControlInput u = random_input(s);
    const RigExtrinsics rig{s.vec3(-0.3, 0.3), s.quaternion()};
    const CameraPose plus = camera_pose_at(x, u, rig, h);
    const CameraPose minus = camera_pose_at(x, u, rig, -h);
    const CameraPose now = camera_pose_at(x, u, rig, 0.0);
    const Vec3 v_c = now.c_wc.transpose() * (plus.p - minus.p) / (2.0 * h);
    const Vec3 omega_c = quat_log(UnitQuaternion::from_matrix(minus.c_wc.transpose() * plus.c_wc)) / (2.0 * h);
    const CameraTwist tw = camera_twist(x, u, rig);
    EXPECT_LT((tw.v_c - v_c).norm(), 1e-6);
    EXPECT_LT((tw.omega_c - omega_c).norm(), 1e-6);
  }
}

TEST(FeatureRate, RotationAboutBearingAndMotionAlongBearing) {
  test::Sampler s(3);
  for (int i = 0; i < 100; ++i) {
    const BearingRotation q = s.bearing_rotation();
    const Vec3 n = bearing(q);
    EXPECT_LT(feature_rate(q, 2.0, Vec3::Zero(), s.uniform(-3, 3) * n).norm(), 1e-14);
    EXPECT_LT(feature_rate(q, 2.0, s.uniform(-3, 3) * n, Vec3::Zero()).norm(), 1e-14);
  }
  EXPECT_THROW(feature_rate(BearingRotation(), 0.0, Vec3::Zero(), Vec3::Zero()), std::domain_error);
}

// Bearing and range of a fixed landmark seen from a camera moving with a
// constant twist, evaluated from the exact relative geometry.
struct Reprojection {
  Vec3 bearing;
  double range;
};

Reprojection reproject(const Vec3& n0, double r0, const Vec3& v_c, const Vec3& omega_c, double t) {
  const Vec3 landmark = n0 * r0;  // in the initial camera frame
  const Vec3 p_c = v_c * t;       // straight-line translation expressed in the initial frame
  const Mat3 c = quat_exp(omega_c * t).matrix();
  const Vec3 rel = c.transpose() * (landmark - p_c);
  return {rel.normalized(), rel.norm()};
}

TEST(FeatureRate, MatchesReprojectionDerivative) {
  test::Sampler s(4);
  const double h = 1e-4;
  for (int i = 0; i < 500; ++i) {
    const BearingRotation q = s.bearing_rotation();
    const double r = s.uniform(0.5, 20.0);
    const Vec3 v_c = s.vec3(-3.0, 3.0);
    const Vec3 omega_c = s.vec3(-2.0, 2.0);
    // with a twist that is constant in the initial frame the derivative at t=0 is exact
    const Vec3 fd = (reproject(bearing(q), r, v_c, omega_c, h).bearing -
                     reproject(bearing(q), r, v_c, omega_c, -h).bearing) / (2.0 * h);
    const Vec3 model = bearing_jacobian(q) * feature_rate(q, r, v_c, omega_c);
    EXPECT_LT((fd - model).norm(), 1e-4);

    const double r_fd = (reproject(bearing(q), r, v_c, omega_c, h).range -
                         reproject(bearing(q), r, v_c, omega_c, -h).range) / (2.0 * h);
    EXPECT_NEAR(range_rate(q, v_c), r_fd, 1e-6);
  }
}

TEST(RangeRate, Examples) {
  test::Sampler s(5);
  const BearingRotation q = s.bearing_rotation();
  const Vec3 n = bearing(q);
  EXPECT_NEAR(range_rate(q, n), -1.0, 1e-15);
  EXPECT_NEAR(range_rate(q, n.unitOrthogonal() * 4.0), 0.0, 1e-15);
}

TEST(QuadRates, HoverAndFreeFall) {
  ServoState x;
  const WorldConstants w;
  EXPECT_LT(quad_rates(x, {9.81, Vec3::Zero()}, w).v_dot.norm(), 1e-15);
  test::Sampler s(6);
  x.q_wb = s.quaternion();
  EXPECT_LT((quad_rates(x, {0.0, s.vec3(-1, 1)}, w).v_dot - w.g_w).norm(), 1e-15);
}

TEST(QuadRates, FortyFiveDegreeRoll) {
  ServoState x;
  x.q_wb = quat_exp(Vec3(std::numbers::pi / 4.0, 0.0, 0.0));
  const Vec3 a = quad_rates(x, {9.81 * std::sqrt(2.0), Vec3::Zero()}, WorldConstants{}).v_dot;
  EXPECT_LT(std::abs(a.z()), 1e-9);
  EXPECT_NEAR(a.head<2>().norm(), 9.81, 1e-9);
  // positive roll tilts thrust toward -y
  EXPECT_LT(a.y(), 0.0);
}

TEST(QuadRates, QuaternionDerivativeMatchesBodyRates) {
  test::Sampler s(7);
  const double h = 1e-6;
  for (int i = 0; i < 100; ++i) {
    ServoState x;
    x.q_wb = s.quaternion();
    const ControlInput u{9.81, s.vec3(-2, 2)};
    const Vec4 q_dot = quad_rates(x, u, WorldConstants{}).q_dot;
    Vec4 fd = ((x.q_wb * quat_exp(u.omega_b * h)).coeffs_wxyz() - (x.q_wb * quat_exp(-u.omega_b * h)).coeffs_wxyz()) /
              (2.0 * h);
    EXPECT_LT((q_dot - fd).norm(), 1e-8);
  }
}

TEST(PredictFeature, StaticCameraIsFixed) {
  test::Sampler s(8);
  const BearingRotation q = s.bearing_rotation();
  const BearingRotation p = predict_feature(q, 3.0, Vec3::Zero(), Vec3::Zero(), 0.05);
  EXPECT_LT((p.quaternion().matrix() - q.quaternion().matrix()).norm(), 1e-15);
}

TEST(PredictFeature, BothFormsAgree) {
  test::Sampler s(9);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const BearingRotation q = s.bearing_rotation();
    const double r = s.uniform(0.5, 20.0);
    const Vec3 v_c = s.vec3(-5.0, 5.0);
    const Vec3 omega_c = s.vec3(-3.0, 3.0);
    const double dt = s.uniform(0.001, 0.1);
    const Mat3 a = predict_feature(q, r, v_c, omega_c, dt).quaternion().matrix();
    const Mat3 b = predict_feature_expanded(q, r, v_c, omega_c, dt).quaternion().matrix();
    worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(PredictFeature, PureRotationMatchesInverseRotation) {
  test::Sampler s(10);
  for (double dt : {0.02, 0.01, 0.005}) {
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
      const BearingRotation q = s.bearing_rotation();
      const Vec3 omega_c = s.vec3(-1.0, 1.0);
      const Vec3 predicted = bearing(predict_feature(q, 2.0, Vec3::Zero(), omega_c, dt));
      const Vec3 truth = quat_exp(omega_c * dt).matrix().transpose() * bearing(q);
      worst = std::max(worst, (predicted - truth).norm());
    }
    // second-order local error: |omega|^2 dt^2 / 2 with |omega| <= sqrt(3)
    EXPECT_LT(worst, 1.5 * dt * dt);
  }
}

TEST(IntegrateState, HoverAtRestIsStationary) {
  test::Sampler s(11);
  ServoState x;
  x.feature = s.bearing_rotation();
  x.r = 4.0;
  const ServoState y = integrate_state(x, {9.81, Vec3::Zero()}, test::forward_rig(), WorldConstants{}, 0.05);
  EXPECT_LT(local(y, x).norm(), 1e-14);
}

TEST(IntegrateState, RangeRateVanishesUnderPureRotation) {
  test::Sampler s(12);
  for (int i = 0; i < 50; ++i) {
    ServoState x;
    x.feature = s.bearing_rotation();
    x.q_wb = s.quaternion();
    x.r = s.uniform(0.5, 10.0);
    // zero lever arm so the camera only rotates
    const RigExtrinsics rig{Vec3::Zero(), s.quaternion()};
    const ControlInput u{0.0, s.vec3(-2.0, 2.0)};
    EXPECT_EQ(range_rate(x.feature, camera_twist(x, u, rig).v_c), 0.0);
  }
}

ServoState integrate_n(ServoState x, const ControlInput& u, const RigExtrinsics& rig, double t, int steps) {
  for (int k = 0; k < steps; ++k) x = integrate_state(x, u, rig, WorldConstants{}, t / steps);
  return x;
}

TEST(IntegrateState, FourthOrderConvergence) {
  test::Sampler s(13);
  const RigExtrinsics rig = test::forward_rig();
  std::vector<double> orders;
  for (int i = 0; i < 30; ++i) {
    const ServoState x = random_state(s, 2.0, 10.0);
    const ControlInput u = random_input(s);
    const double t = 0.4;
    const ServoState ref = integrate_n(x, u, rig, t, 512);
    const double e1 = local(integrate_n(x, u, rig, t, 4), ref).norm();
    const double e2 = local(integrate_n(x, u, rig, t, 8), ref).norm();
    orders.push_back(std::log2(e1 / e2));
  }
  std::sort(orders.begin(), orders.end());
  EXPECT_GE(orders[orders.size() / 2], 3.5);
  EXPECT_GE(orders.front(), 3.0);
}

// World position of the landmark reconstructed from the servo state and the
// camera position, p_l = C(q_wc) n r + p_c.
Vec3 landmark_world(const ServoState& x, const Vec3& p_b, const RigExtrinsics& rig) {
  const Mat3 c_wb = x.q_wb.matrix();
  return c_wb * (rig.q_bc.matrix() * bearing(x.feature) * x.r + rig.p_cb_b) + p_b;
}

TEST(IntegrateState, ConservesLandmarkPosition) {
  test::Sampler s(14);
  const RigExtrinsics rig = test::forward_rig();
  const double dt = 0.05;
  const int fine = 400;
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    ServoState x = random_state(s, 0.5, 20.0);
    x.v_w = s.vec3(-2.0, 2.0);
    const ControlInput u = random_input(s);
    const Vec3 before = landmark_world(x, Vec3::Zero(), rig);

    // body position from Simpson's rule over a fine velocity history
    std::vector<Vec3> v{x.v_w};
    ServoState f = x;
    for (int k = 0; k < fine; ++k) {
      f = integrate_state(f, u, rig, WorldConstants{}, dt / fine);
      v.push_back(f.v_w);
    }
    Vec3 p = v.front() + v.back();
    for (int k = 1; k < fine; ++k) p += (k % 2 ? 4.0 : 2.0) * v[k];
    p *= dt / fine / 3.0;

    const ServoState y = integrate_state(x, u, rig, WorldConstants{}, dt);
    worst = std::max(worst, (landmark_world(y, p, rig) - before).norm());
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(IntegrateState, RangeFloor) {
  ServoState x;
  x.r = 0.1;
  x.v_w = Vec3(10.0, 0.0, 0.0);
  const ServoState y = integrate_state(x, {9.81, Vec3::Zero()}, test::forward_rig(Vec3::Zero()), WorldConstants{}, 0.05);
  EXPECT_GE(y.r, kRangeFloor);
}

TEST(RetractLocal, RoundTrip) {
  test::Sampler s(15);
  for (int i = 0; i < 500; ++i) {
    const ServoState x = random_state(s);
    StateTangent d;
    d << s.vec3(-1, 1), s.unit3() * s.uniform(0, 3.0), s.tangent(3.0), s.uniform(-0.4, 0.4);
    EXPECT_LT((local(retract(x, d), x) - d).norm(), 1e-8);
  }
}

}  // namespace
}  // namespace spvs
