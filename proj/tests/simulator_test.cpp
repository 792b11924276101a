#include "spvs/simulator.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace spvs {
namespace {

using test::forward_rig;

ControlInput hover_command() { return {9.81, Vec3::Zero()}; }

PlantState run_plant(PlantState s, const ControlInput& cmd, double duration, const PlantParams& pp = {}) {
  const int n = static_cast<int>(std::round(duration / 1e-3));
  for (int i = 0; i < n; ++i) s = step_plant(s, cmd, 1e-3, pp);
  return s;
}

Scenario short_stationary(double duration) {
  Scenario sc;
  sc.duration = duration;
  sc.initial.p_w = Vec3(0.0, 0.0, 1.0);
  sc.problem = test::servo_problem(20, 2.0, ApproachConstraint::ttc);
  sc.problem.weights.q_p = Vec3(5.0, 5.0, 25.0);
  sc.problem.weights.q_v = Vec3::Constant(0.2);
  sc.problem.weights.w_z_l1 = 1000.0;
  sc.problem.weights.w_z_l2 = 1e4;
  return sc;
}

TEST(Plant, HoverHoldsPosition) {
  PlantState s;
  s.p_w = Vec3(1.0, -2.0, 3.0);
  const PlantState out = run_plant(s, hover_command(), 1.0);
  EXPECT_LT((out.p_w - s.p_w).norm(), 1e-6);
  EXPECT_LT(out.v_w.norm(), 1e-6);
}

TEST(Plant, RateStepReaches63PercentNearTimeConstant) {
  PlantParams pp;
  const ControlInput cmd{9.81, Vec3(1.0, 0.0, 0.0)};
  PlantState s;
  double t = 0.0;
  while (s.omega_b.x() < 1.0 - std::exp(-1.0)) {
    s = step_plant(s, cmd, 1e-4, pp);
    t += 1e-4;
    ASSERT_LT(t, 1.0);
  }
  EXPECT_NEAR(t, pp.rate_time_constant, 0.1 * pp.rate_time_constant);
}

TEST(Plant, ZeroThrustIsBallistic) {
  PlantState s;
  s.p_w = Vec3(0.0, 0.0, 10.0);
  s.v_w = Vec3(1.0, 2.0, 3.0);
  const double t = 0.5;
  const PlantState out = run_plant(s, {0.0, Vec3::Zero()}, t);
  const Vec3 g(0.0, 0.0, -9.81);
  EXPECT_LT((out.p_w - (s.p_w + s.v_w * t + 0.5 * g * t * t)).norm(), 1e-6);
  EXPECT_LT((out.v_w - (s.v_w + g * t)).norm(), 1e-6);
}

TEST(Plant, RejectsLargeStep) {
  EXPECT_THROW(step_plant(PlantState{}, hover_command(), 2e-3), std::invalid_argument);
  EXPECT_THROW(step_plant(PlantState{}, hover_command(), 0.0), std::invalid_argument);
}

TEST(Track, StationaryStaysPut) {
  TargetTrack track;
  for (double t : {0.0, 1.0, 7.5, 30.0}) EXPECT_LT((target_position(track, t) - Vec3(20.0, 0.0, 1.0)).norm(), 1e-15);
}

TEST(Track, SCurveStartsAtRestAtOrigin) {
  TargetTrack track;
  track.kind = TrackKind::s_curve;
  EXPECT_LT((target_position(track, 0.0) - track.origin).norm(), 1e-12);
  EXPECT_LT(target_velocity(track, 0.0).norm(), 1e-6);
}

TEST(Track, SCurvePeakSpeedMatchesConfiguredMax) {
  TargetTrack track;
  track.kind = TrackKind::s_curve;
  double peak = 0.0;
  for (double t = 0.0; t < 30.0; t += 1e-3) peak = std::max(peak, target_velocity(track, t).norm());
  EXPECT_LE(peak, track.max_speed + 1e-3);
  EXPECT_GT(peak, track.max_speed - 1e-2);
}

TEST(Track, WaypointsInterpolate) {
  TargetTrack track;
  track.kind = TrackKind::waypoints;
  track.waypoint_times = {0.0, 2.0};
  track.waypoints = {Vec3::Zero(), Vec3(2.0, 4.0, 0.0)};
  EXPECT_LT((target_position(track, 1.0) - Vec3(1.0, 2.0, 0.0)).norm(), 1e-12);
  EXPECT_LT((target_position(track, 5.0) - Vec3(2.0, 4.0, 0.0)).norm(), 1e-12);
  track.waypoint_times = {1.0, 1.0};
  EXPECT_THROW(track.validate(), std::invalid_argument);
}

class Observe : public ::testing::Test {
 protected:
  RigExtrinsics rig = forward_rig(Vec3::Zero());
  PinholeIntrinsics k;
  DetectorNoise clean{0.0, 0.0, 0.0};
  std::mt19937_64 rng{7};
};

TEST_F(Observe, OnAxisTarget) {
  PlantState s;
  const DetectionEvent ev = observe(s, Vec3(5.0, 0.0, 0.0), k, rig, clean, 0.75, false, rng);
  ASSERT_TRUE(ev.valid);
  EXPECT_LT((ev.rho - Vec3::UnitZ()).norm(), 1e-12);
  EXPECT_NEAR(range_from_bbox(*ev.bbox, k, 0.75), 5.0, 0.05);
}

TEST_F(Observe, TargetBehindIsInvalid) {
  PlantState s;
  EXPECT_FALSE(observe(s, Vec3(-5.0, 0.0, 0.0), k, rig, clean, 0.75, false, rng).valid);
}

TEST_F(Observe, ForcedDropoutIsInvalid) {
  PlantState s;
  EXPECT_FALSE(observe(s, Vec3(5.0, 0.0, 0.0), k, rig, clean, 0.75, true, rng).valid);
}

TEST_F(Observe, BearingMatchesCameraFramePoint) {
  test::Sampler smp(3);
  for (int i = 0; i < 50; ++i) {
    PlantState s;
    s.q_wb = quat_exp(smp.vec3(-0.3, 0.3));
    const Vec3 target(smp.uniform(3.0, 10.0), smp.uniform(-1.0, 1.0), smp.uniform(-1.0, 1.0));
    const DetectionEvent ev = observe(s, target, k, rig, clean, 0.75, false, rng);
    const Vec3 p_c = camera_frame_point(s, target, rig);
    EXPECT_EQ(ev.valid, project_in_frame(p_c, k).has_value());
    if (ev.valid) EXPECT_LT((ev.rho - p_c.normalized()).norm(), 1e-12);
  }
}

TEST_F(Observe, RandomStreamIndependentOfVisibility) {
  std::mt19937_64 a(11), b(11);
  PlantState s;
  observe(s, Vec3(5.0, 0.0, 0.0), k, rig, DetectorNoise{}, 0.75, false, a);
  observe(s, Vec3(-5.0, 0.0, 0.0), k, rig, DetectorNoise{}, 0.75, false, b);
  EXPECT_EQ(a(), b());
}

TEST(Scenario, ZeroDurationGivesEmptyLog) {
  const ScenarioLog log = run_scenario(short_stationary(0.0));
  EXPECT_TRUE(log.rows.empty());
  EXPECT_FALSE(log.aborted);
  EXPECT_THROW(metrics(log), std::invalid_argument);
}

TEST(Scenario, InvalidConfigurationIsRejected) {
  Scenario sc = short_stationary(1.0);
  sc.physics_dt = 0.003;
  EXPECT_THROW(run_scenario(sc), std::invalid_argument);
  sc = short_stationary(1.0);
  sc.problem.constraints.bound = ImageBound{2.0, 0.5};
  EXPECT_THROW(run_scenario(sc), std::invalid_argument);
}

TEST(Scenario, DeterministicUnderFixedSeed) {
  const ScenarioLog a = run_scenario(short_stationary(1.0));
  const ScenarioLog b = run_scenario(short_stationary(1.0));
  ASSERT_EQ(a.rows.size(), 20u);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].p_w, b.rows[i].p_w);
    EXPECT_EQ(a.rows[i].command.vector(), b.rows[i].command.vector());
  }
}

TEST(Scenario, DropoutReplaysBufferedPlan) {
  Scenario sc = short_stationary(1.5);
  sc.dropout_cycles = {10, 11, 12};
  const ScenarioLog log = run_scenario(sc);
  ASSERT_EQ(log.rows.size(), 30u);
  const auto& plan = log.rows[9].plan;
  ASSERT_EQ(plan.size(), 20u);
  for (int j = 1; j <= 3; ++j) {
    const LogRow& r = log.rows[9 + j];
    EXPECT_FALSE(r.detection_valid);
    EXPECT_EQ(r.buffer_index, j);
    EXPECT_FALSE(r.buffer_outage);
    EXPECT_EQ(r.command.vector(), plan[j].vector());
  }
  EXPECT_TRUE(log.rows[13].detection_valid);
  EXPECT_TRUE(log.rows[13].report.has_value());
}

TEST(Scenario, CsvHasHeaderAndOneLinePerRow) {
  const ScenarioLog log = run_scenario(short_stationary(0.5));
  std::ostringstream os;
  write_log_csv(os, log);
  std::istringstream is(os.str());
  std::string line;
  int comments = 0, data = 0;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.rfind("#", 0) == 0) ++comments;
    else if (!header) {
      EXPECT_EQ(line, kLogColumns);
      header = true;
    } else {
      ++data;
      EXPECT_EQ(std::count(line.begin(), line.end(), ','), 27);
    }
  }
  EXPECT_GT(comments, 0);
  EXPECT_EQ(data, 10);
}

ScenarioLog synthetic_log(const std::vector<double>& xs) {
  ScenarioLog log;
  log.r_star = 2.0;
  log.approach_axis = Vec3::UnitX();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    LogRow r;
    r.t = 0.05 * static_cast<double>(i);
    r.p_w = Vec3(xs[i], 0.0, 1.0);
    r.standoff_w = Vec3(18.0, 0.0, 1.0);
    r.r_true = 20.0 - xs[i];
    r.in_fov = true;
    r.detection_valid = true;
    log.rows.push_back(r);
  }
  return log;
}

TEST(Metrics, NoOvershootWhenApproachIsMonotone) {
  const ScenarioMetrics m = metrics(synthetic_log({0.0, 5.0, 10.0, 15.0, 17.5, 18.0}));
  EXPECT_DOUBLE_EQ(m.overshoot, 0.0);
  EXPECT_DOUBLE_EQ(m.detection_valid_fraction, 1.0);
}

TEST(Metrics, OvershootIsLargestExcursionPastStandoff) {
  const ScenarioMetrics m = metrics(synthetic_log({0.0, 10.0, 18.3, 18.1, 18.0}));
  EXPECT_NEAR(m.overshoot, 0.3, 1e-12);
}

TEST(Metrics, SteadyStateErrorUsesTrailingWindow) {
  std::vector<double> xs(100, 18.0);
  xs[0] = 0.0;
  xs[99] = 18.05;
  const ScenarioMetrics m = metrics(synthetic_log(xs), 1.0);
  EXPECT_NEAR(m.steady_state_range_error, 0.05, 1e-12);
}

}  // namespace
}  // namespace spvs
