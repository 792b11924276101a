#pragma once

// Closed-loop co-simulation: rigid-body quadrotor with a body-rate inner
// loop, scripted target tracks, an emulated detector and the receding-horizon
// controller running at the control rate.

#include "spvs/camera.hpp"
#include "spvs/solver.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace spvs {

struct PlantState {
  Vec3 p_w = Vec3::Zero();
  Vec3 v_w = Vec3::Zero();
  UnitQuaternion q_wb;
  Vec3 omega_b = Vec3::Zero();
  Vec3 rate_error_integral = Vec3::Zero();  // inner-loop PID state
};

/// Commanded body rates are tracked through a first-order lag plus a PID
/// correction on the rate error; collective thrust acts instantly.
struct PlantParams {
  double rate_time_constant = 0.03;
  double kp = 0.0;
  double ki = 0.5;
  double kd = 0.0;
  Vec3 g_w{0.0, 0.0, -9.81};

  void validate() const {
    if (!(rate_time_constant > 0.0)) throw std::invalid_argument("plant: rate time constant must be positive");
    if (kp < 0.0 || ki < 0.0 || kd < 0.0) throw std::invalid_argument("plant: PID gains must be nonnegative");
  }
};

namespace detail {

struct PlantDerivative {
  Vec3 p;
  Vec3 v;
  Vec4 q;
  Vec3 omega;
  Vec3 integral;
};

inline PlantDerivative plant_derivative(const Vec3& v, const Vec4& q, const Vec3& omega, const Vec3& integral,
                                        const ControlInput& cmd, const PlantParams& pp) {
  const Eigen::Quaterniond qe(q(0), q(1), q(2), q(3));
  const Vec3 e = cmd.omega_b - omega;
  PlantDerivative d;
  d.p = v;
  d.v = qe.normalized().toRotationMatrix() * Vec3(0.0, 0.0, cmd.c) + pp.g_w;
  const Eigen::Quaterniond qd = qe * Eigen::Quaterniond(0.0, omega.x(), omega.y(), omega.z());
  d.q = 0.5 * Vec4(qd.w(), qd.x(), qd.y(), qd.z());
  // the derivative term acts on -omega', folded into the effective lag
  d.omega = ((1.0 + pp.kp) * e + pp.ki * integral) / (pp.rate_time_constant + pp.kd);
  d.integral = e;
  return d;
}

}  // namespace detail

/// One RK4 step of the plant with the command held constant.
inline PlantState step_plant(const PlantState& s, const ControlInput& cmd, double dt, const PlantParams& pp = {}) {
  if (!(dt > 0.0 && dt <= 1e-3 + 1e-12)) throw std::invalid_argument("step_plant: physics step must be in (0, 1 ms]");
  using detail::plant_derivative;
  const Vec4 q0 = s.q_wb.coeffs_wxyz();
  const auto k1 = plant_derivative(s.v_w, q0, s.omega_b, s.rate_error_integral, cmd, pp);
  const auto k2 = plant_derivative(s.v_w + 0.5 * dt * k1.v, q0 + 0.5 * dt * k1.q, s.omega_b + 0.5 * dt * k1.omega,
                                   s.rate_error_integral + 0.5 * dt * k1.integral, cmd, pp);
  const auto k3 = plant_derivative(s.v_w + 0.5 * dt * k2.v, q0 + 0.5 * dt * k2.q, s.omega_b + 0.5 * dt * k2.omega,
                                   s.rate_error_integral + 0.5 * dt * k2.integral, cmd, pp);
  const auto k4 = plant_derivative(s.v_w + dt * k3.v, q0 + dt * k3.q, s.omega_b + dt * k3.omega,
                                   s.rate_error_integral + dt * k3.integral, cmd, pp);
  const double h = dt / 6.0;
  PlantState out;
  out.p_w = s.p_w + h * (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p);
  out.v_w = s.v_w + h * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v);
  const Vec4 q = q0 + h * (k1.q + 2.0 * k2.q + 2.0 * k3.q + k4.q);
  out.q_wb = UnitQuaternion(q(0), q(1), q(2), q(3));
  out.omega_b = s.omega_b + h * (k1.omega + 2.0 * k2.omega + 2.0 * k3.omega + k4.omega);
  out.rate_error_integral =
      s.rate_error_integral + h * (k1.integral + 2.0 * k2.integral + 2.0 * k3.integral + k4.integral);
  return out;
}

// ---------------------------------------------------------------------------
// Target tracks

enum class TrackKind { stationary, s_curve, waypoints };

/// Target motion. The S-curve moves along `heading` with a smoothstep speed
/// ramp up to forward_speed and swings sideways as A sin(2 pi d / wavelength),
/// where d is the distance travelled; A is chosen so the peak speed equals
/// max_speed. Waypoints are interpolated piecewise linearly in time.
struct TargetTrack {
  TrackKind kind = TrackKind::stationary;
  Vec3 origin{20.0, 0.0, 1.0};
  Vec3 heading{1.0, 0.0, 0.0};
  double forward_speed = 4.5;
  double wavelength = 20.0;
  double max_speed = 6.0;
  double ramp_time = 2.0;
  std::vector<double> waypoint_times;
  std::vector<Vec3> waypoints;

  double amplitude() const {
    const double ratio = max_speed / forward_speed;
    return wavelength / (2.0 * std::numbers::pi) * std::sqrt(std::max(0.0, ratio * ratio - 1.0));
  }

  void validate() const {
    if (kind == TrackKind::s_curve) {
      if (!(forward_speed > 0.0 && wavelength > 0.0 && ramp_time >= 0.0))
        throw std::invalid_argument("track: s_curve needs positive forward_speed and wavelength");
      if (!(max_speed >= forward_speed)) throw std::invalid_argument("track: max_speed below forward_speed");
      if (!(heading.norm() > 0.0)) throw std::invalid_argument("track: heading must be nonzero");
    }
    if (kind == TrackKind::waypoints) {
      if (waypoints.empty() || waypoints.size() != waypoint_times.size())
        throw std::invalid_argument("track: waypoints and times must be nonempty and of equal length");
      for (std::size_t i = 1; i < waypoint_times.size(); ++i)
        if (!(waypoint_times[i] > waypoint_times[i - 1]))
          throw std::invalid_argument("track: waypoint times must increase");
    }
  }
};

namespace detail {

// Distance travelled under the smoothstep ramp v(t) = V (3 s^2 - 2 s^3), s = t / T.
inline double ramp_distance(double t, double speed, double ramp) {
  if (ramp <= 0.0) return speed * t;
  if (t < ramp) {
    const double s = t / ramp;
    return speed * ramp * (s * s * s - 0.5 * s * s * s * s);
  }
  return speed * (0.5 * ramp + (t - ramp));
}

}  // namespace detail

inline Vec3 target_position(const TargetTrack& track, double t) {
  switch (track.kind) {
    case TrackKind::stationary:
      return track.origin;
    case TrackKind::s_curve: {
      const Vec3 fwd = track.heading.normalized();
      Vec3 side = Vec3::UnitZ().cross(fwd);
      if (side.norm() < 1e-9) side = Vec3::UnitY();
      side.normalize();
      const double d = detail::ramp_distance(std::max(0.0, t), track.forward_speed, track.ramp_time);
      return track.origin + fwd * d + side * track.amplitude() * std::sin(2.0 * std::numbers::pi * d / track.wavelength);
    }
    case TrackKind::waypoints: {
      const auto& ts = track.waypoint_times;
      if (t <= ts.front()) return track.waypoints.front();
      if (t >= ts.back()) return track.waypoints.back();
      const auto it = std::upper_bound(ts.begin(), ts.end(), t);
      const std::size_t i = static_cast<std::size_t>(it - ts.begin());
      const double a = (t - ts[i - 1]) / (ts[i] - ts[i - 1]);
      return (1.0 - a) * track.waypoints[i - 1] + a * track.waypoints[i];
    }
  }
  return track.origin;
}

inline Vec3 target_velocity(const TargetTrack& track, double t, double h = 1e-5) {
  const double t0 = std::max(0.0, t - h);
  return (target_position(track, t + h) - target_position(track, t0)) / (t + h - t0);
}

// ---------------------------------------------------------------------------
// Detector emulation

struct DetectorNoise {
  double pixel_std = 1.0;
  double bbox_rel_std = 0.02;
  double dropout_probability = 0.0;

  void validate() const {
    if (pixel_std < 0.0 || bbox_rel_std < 0.0) throw std::invalid_argument("noise: standard deviations must be nonnegative");
    if (!(dropout_probability >= 0.0 && dropout_probability <= 1.0))
      throw std::invalid_argument("noise: dropout probability must be in [0, 1]");
  }
};

struct DetectionEvent {
  double timestamp = 0.0;
  Vec3 rho = Vec3::UnitZ();
  std::optional<BoundingBox> bbox;
  bool valid = false;
};

/// Landmark position in the camera frame.
inline Vec3 camera_frame_point(const PlantState& s, const Vec3& target, const RigExtrinsics& rig) {
  return rig.q_bc.matrix().transpose() * (s.q_wb.matrix().transpose() * (target - s.p_w) - rig.p_cb_b);
}

/// Pixel of the landmark when it is in front of the camera and inside the frame.
inline std::optional<Vec3> project_in_frame(const Vec3& p_c, const PinholeIntrinsics& k) {
  const auto n = to_image_normalized(p_c.normalized());
  if (!n) return std::nullopt;
  const Vec3 px = to_pixel(*n, k);
  if (px.x() < 0.0 || px.x() > k.width || px.y() < 0.0 || px.y() > k.height) return std::nullopt;
  return px;
}

/// Controller state built from the true plant state, without detector noise.
inline ServoState true_servo_state(const PlantState& s, const Vec3& target, const RigExtrinsics& rig) {
  const Vec3 p_c = camera_frame_point(s, target, rig);
  if (!(p_c.norm() > 0.0)) throw std::invalid_argument("true_servo_state: camera sits on the target");
  ServoState x;
  x.v_w = s.v_w;
  x.q_wb = s.q_wb;
  x.feature = from_bearing(p_c.normalized());
  x.r = p_c.norm();
  return x;
}

/// Emulated detection of a spherical target of diameter d_gate. Pixel noise
/// is added to the box center and multiplicative noise to the box size; the
/// detection is invalid when the (noisy) center leaves the frame or a dropout
/// is forced or drawn.
template <class Rng>
DetectionEvent observe(const PlantState& s, const Vec3& target, const PinholeIntrinsics& k, const RigExtrinsics& rig,
                       const DetectorNoise& noise, double d_gate, bool forced_dropout, Rng& rng, double t = 0.0) {
  DetectionEvent ev;
  ev.timestamp = t;
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> uni;
  // draws happen unconditionally so the random stream does not depend on visibility
  const double nu = gauss(rng), nv = gauss(rng), nw = gauss(rng), nh = gauss(rng), drop = uni(rng);
  const Vec3 p_c = camera_frame_point(s, target, rig);
  if (forced_dropout || drop < noise.dropout_probability) return ev;
  const auto px = project_in_frame(p_c, k);
  if (!px) return ev;
  BoundingBox box;
  box.center_u = px->x() + noise.pixel_std * nu;
  box.center_v = px->y() + noise.pixel_std * nv;
  if (box.center_u < 0.0 || box.center_u > k.width || box.center_v < 0.0 || box.center_v > k.height) return ev;
  box.w_box = k.fx * d_gate / p_c.z() * std::max(0.05, 1.0 + noise.bbox_rel_std * nw);
  box.h_box = k.fy * d_gate / p_c.z() * std::max(0.05, 1.0 + noise.bbox_rel_std * nh);
  ev.rho = to_sphere(Vec3(box.center_u, box.center_v, 1.0), k);
  ev.bbox = box;
  ev.valid = true;
  return ev;
}

// ---------------------------------------------------------------------------
// Scenario

struct Scenario {
  std::string name = "scenario";
  double duration = 15.0;
  double physics_dt = 1e-3;
  unsigned long long seed = 1;
  PlantParams plant;
  PlantState initial;
  PinholeIntrinsics intrinsics;
  TargetTrack track;
  DetectorNoise noise;
  double d_gate = 0.75;
  bool perfect_range = false;
  std::vector<int> dropout_cycles;  // control cycles with a forced detection outage
  OcpProblem problem;
  SolverOptions solver;

  double control_dt() const { return problem.horizon.dt; }

  void validate() const {
    if (!(duration >= 0.0)) throw std::invalid_argument("scenario: duration must be nonnegative");
    if (!(physics_dt > 0.0 && physics_dt <= 1e-3)) throw std::invalid_argument("scenario: physics_dt must be in (0, 1 ms]");
    plant.validate();
    intrinsics.validate();
    track.validate();
    noise.validate();
    problem.validate();
    problem.constraints.bound.validate(intrinsics);
    if (!(d_gate > 0.0)) throw std::invalid_argument("scenario: d_gate must be positive");
    const double ratio = control_dt() / physics_dt;
    if (std::abs(ratio - std::round(ratio)) > 1e-9)
      throw std::invalid_argument("scenario: control period must be a multiple of physics_dt");
    if (solver.max_iterations < 1) throw std::invalid_argument("solver: max_iterations must be at least 1");
  }
};

struct LogRow {
  double t = 0.0;
  Vec3 p_w = Vec3::Zero();
  Vec3 v_w = Vec3::Zero();
  UnitQuaternion q_wb;
  double roll_deg = 0.0;
  double pitch_deg = 0.0;
  double speed = 0.0;
  double u_px = std::numeric_limits<double>::quiet_NaN();
  double v_px = std::numeric_limits<double>::quiet_NaN();
  bool in_fov = false;
  double r_true = 0.0;
  double r_meas = std::numeric_limits<double>::quiet_NaN();
  double closing_rate = 0.0;
  double ttc = std::numeric_limits<double>::infinity();
  ControlInput command;
  double slack_max = 0.0;
  double solve_ms = 0.0;
  bool detection_valid = false;

  // not part of the CSV
  Vec3 target_w = Vec3::Zero();
  Vec3 standoff_w = Vec3::Zero();
  bool buffer_outage = false;
  int buffer_index = -1;
  std::optional<SolveReport> report;
  std::vector<ControlInput> plan;  // inputs of an accepted solve
};

struct ScenarioLog {
  std::vector<LogRow> rows;
  double r_star = 0.0;
  Vec3 approach_axis = Vec3::UnitX();
  bool aborted = false;
  std::string abort_reason;
};

inline constexpr const char* kLogColumns =
    "t,p_x,p_y,p_z,v_x,v_y,v_z,qw,qx,qy,qz,roll_deg,pitch_deg,speed,u_px,v_px,in_fov,r_true,r_meas,"
    "closing_rate,ttc,thrust,wx,wy,wz,slack_max,solve_ms,detection_valid";

inline constexpr const char* kSolveReportColumns = "t,iterations,qp_status,max_gap,max_violation,objective,wall_ms";

/// Roll and pitch (ZYX convention) in degrees.
inline Vec2 roll_pitch_deg(const UnitQuaternion& q) {
  const Mat3 c = q.matrix();
  const double pitch = std::asin(std::clamp(-c(2, 0), -1.0, 1.0));
  const double roll = std::atan2(c(2, 1), c(2, 2));
  return Vec2(roll, pitch) * 180.0 / std::numbers::pi;
}

namespace detail {

inline void write_number(std::ostream& os, double v) {
  if (std::isnan(v)) os << "nan";
  else if (std::isinf(v)) os << (v > 0 ? "inf" : "-inf");
  else os << v;
}

}  // namespace detail

inline void write_log_csv(std::ostream& os, const ScenarioLog& log) {
  os << "# units: t s; p m; v m/s; q unit quaternion (w,x,y,z) body to world; roll/pitch deg; speed m/s;\n"
     << "# u_px/v_px observed feature px (nan when no detection); in_fov 0/1 true projection inside frame;\n"
     << "# r_true/r_meas m; closing_rate m/s; ttc s; thrust m/s^2; wx..wz commanded body rates rad/s;\n"
     << "# slack_max constraint slack; solve_ms wall time ms; detection_valid 0/1\n";
  os << kLogColumns << '\n';
  os.precision(10);
  for (const LogRow& r : log.rows) {
    const double vals[] = {r.t,       r.p_w.x(),   r.p_w.y(),   r.p_w.z(),     r.v_w.x(),  r.v_w.y(),
                           r.v_w.z(), r.q_wb.w(),  r.q_wb.x(),  r.q_wb.y(),    r.q_wb.z(), r.roll_deg,
                           r.pitch_deg, r.speed,   r.u_px,      r.v_px,        r.in_fov ? 1.0 : 0.0,
                           r.r_true,  r.r_meas,    r.closing_rate, r.ttc,      r.command.c,
                           r.command.omega_b.x(),  r.command.omega_b.y(),      r.command.omega_b.z(),
                           r.slack_max, r.solve_ms, r.detection_valid ? 1.0 : 0.0};
    bool first = true;
    for (double v : vals) {
      if (!first) os << ',';
      first = false;
      detail::write_number(os, v);
    }
    os << '\n';
  }
}

inline void write_solve_reports_csv(std::ostream& os, const ScenarioLog& log) {
  os << kSolveReportColumns << '\n';
  os.precision(10);
  for (const LogRow& r : log.rows) {
    if (!r.report) continue;
    const SolveReport& s = *r.report;
    os << r.t << ',' << s.iterations << ',' << to_string(s.qp_status) << ',';
    detail::write_number(os, s.max_gap);
    os << ',';
    detail::write_number(os, s.max_violation);
    os << ',';
    detail::write_number(os, s.objective);
    os << ',' << s.wall_ms << '\n';
  }
}

/// Fixed-step co-simulation: physics at physics_dt, one detection and one
/// controller update per control period. While detections are missing the
/// buffered inputs of the last solution are replayed.
inline ScenarioLog run_scenario(const Scenario& sc) {
  sc.validate();
  ScenarioLog log;
  const OcpProblem& prob = sc.problem;
  log.r_star = prob.refs.r_star;
  const Vec3 p_star = prob.refs.p_star;
  {
    const Vec3 axis = target_position(sc.track, 0.0) - sc.initial.p_w;
    if (axis.norm() > 1e-9) log.approach_axis = axis.normalized();
  }

  const double dt = sc.control_dt();
  const int cycles = static_cast<int>(std::floor(sc.duration / dt + 1e-9));
  const int substeps = static_cast<int>(std::round(dt / sc.physics_dt));
  const std::set<int> dropouts(sc.dropout_cycles.begin(), sc.dropout_cycles.end());
  std::mt19937_64 rng(sc.seed);
  ServoController ctrl(prob, sc.solver);
  PlantState plant = sc.initial;
  ControlInput hover{-prob.world.g_w.z(), Vec3::Zero()};
  int last_solve = -1;

  for (int i = 0; i < cycles; ++i) {
    const double t = i * dt;
    LogRow row;
    row.t = t;
    row.target_w = target_position(sc.track, t);
    row.standoff_w = row.target_w - p_star;

    const Vec3 p_c = camera_frame_point(plant, row.target_w, prob.rig);
    row.r_true = p_c.norm();
    row.in_fov = project_in_frame(p_c, sc.intrinsics).has_value();
    {
      const Vec3 cam_w = plant.p_w + plant.q_wb.rotate(prob.rig.p_cb_b);
      const Vec3 cam_v = plant.v_w + plant.q_wb.rotate(plant.omega_b.cross(prob.rig.p_cb_b));
      const Vec3 los = (row.target_w - cam_w).normalized();
      row.closing_rate = los.dot(cam_v - target_velocity(sc.track, t));
      row.ttc = row.closing_rate > 0.0 ? row.r_true / row.closing_rate : std::numeric_limits<double>::infinity();
    }

    const DetectionEvent det =
        observe(plant, row.target_w, sc.intrinsics, prob.rig, sc.noise, sc.d_gate, dropouts.count(i) > 0, rng, t);
    row.detection_valid = det.valid;

    ControlInput cmd = hover;
    if (det.valid) {
      row.u_px = det.bbox->center_u;
      row.v_px = det.bbox->center_v;
      row.r_meas = sc.perfect_range ? row.r_true : range_from_bbox(*det.bbox, sc.intrinsics, sc.d_gate);
      ServoState x_hat;
      x_hat.v_w = plant.v_w;
      x_hat.q_wb = plant.q_wb;
      x_hat.feature = from_bearing(det.rho);
      x_hat.r = row.r_meas;
      const RecedingResult res = ctrl.update(x_hat, t, last_solve < 0 ? 1 : i - last_solve);
      row.report = res.report;
      row.solve_ms = res.report.wall_ms;
      if (res.report.qp_status == QpStatus::optimal) {
        last_solve = i;
        cmd = res.u0;
        row.plan = res.trajectory.inputs;
        row.slack_max = *std::max_element(res.trajectory.slacks.begin(), res.trajectory.slacks.end());
        row.buffer_index = 0;
      } else if (!ctrl.buffer().empty()) {
        const auto s = ctrl.buffered(t);
        cmd = s.u;
        row.buffer_outage = s.outage;
        row.buffer_index = s.index;
      } else {
        log.aborted = true;
        log.abort_reason = std::string("solver failure: ") + to_string(res.report.qp_status);
      }
    } else {
      if (!ctrl.buffer().empty()) {
        const auto s = ctrl.buffered(t);
        cmd = s.u;
        row.buffer_outage = s.outage;
        row.buffer_index = s.index;
      }
    }
    row.command = cmd;
    row.p_w = plant.p_w;
    row.v_w = plant.v_w;
    row.q_wb = plant.q_wb;
    const Vec2 rp = roll_pitch_deg(plant.q_wb);
    row.roll_deg = rp(0);
    row.pitch_deg = rp(1);
    row.speed = plant.v_w.norm();
    log.rows.push_back(row);
    if (log.aborted) break;

    for (int s = 0; s < substeps; ++s) plant = step_plant(plant, cmd, sc.physics_dt, sc.plant);
    if (!plant.p_w.allFinite() || !plant.v_w.allFinite()) {
      log.aborted = true;
      log.abort_reason = "plant state diverged";
      break;
    }
  }
  return log;
}

inline constexpr const char* kTrajectoryColumns =
    "k,t,v_x,v_y,v_z,qw,qx,qy,qz,rho_x,rho_y,rho_z,r,rel_x,rel_y,rel_z,thrust,wx,wy,wz,slack";

/// Predicted trajectory of one solve; the input columns of the last node repeat the final input.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& t, const OcpProblem& prob) {
  os << kTrajectoryColumns << '\n';
  os.precision(10);
  for (std::size_t k = 0; k < t.states.size(); ++k) {
    const ServoState& x = t.states[k];
    const std::size_t j = std::min(k, t.inputs.size() - 1);
    const ControlInput& u = t.inputs[j];
    const Vec3 n = x.feature.bearing();
    const Vec3 rel = relative_position(x, prob.rig);
    const Vec4 q = x.q_wb.coeffs_wxyz();
    os << k << ',' << static_cast<double>(k) * prob.horizon.dt;
    for (double v : {x.v_w.x(), x.v_w.y(), x.v_w.z(), q(0), q(1), q(2), q(3), n.x(), n.y(), n.z(), x.r, rel.x(),
                     rel.y(), rel.z(), u.c, u.omega_b.x(), u.omega_b.y(), u.omega_b.z(), t.slacks[j]})
      os << ',' << v;
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Metrics

struct ScenarioMetrics {
  double overshoot = 0.0;
  double max_roll_deg = 0.0;
  double max_pitch_deg = 0.0;
  double max_speed = 0.0;
  int fov_violation_cycles = 0;
  double steady_state_range_error = 0.0;
  double detection_valid_fraction = 0.0;
  double median_solve_ms = 0.0;
  int cycles = 0;
};

/// `settle_window` is the trailing time span over which the steady-state
/// range error (max |r_true - r*|) is taken.
inline ScenarioMetrics metrics(const ScenarioLog& log, double settle_window = 2.0) {
  if (log.rows.empty()) throw std::invalid_argument("metrics: empty log");
  ScenarioMetrics m;
  m.cycles = static_cast<int>(log.rows.size());
  const double t_end = log.rows.back().t;
  std::vector<double> solve;
  int valid = 0;
  for (const LogRow& r : log.rows) {
    m.overshoot = std::max(m.overshoot, (r.p_w - r.standoff_w).dot(log.approach_axis));
    m.max_roll_deg = std::max(m.max_roll_deg, std::abs(r.roll_deg));
    m.max_pitch_deg = std::max(m.max_pitch_deg, std::abs(r.pitch_deg));
    m.max_speed = std::max(m.max_speed, r.speed);
    if (!r.in_fov) ++m.fov_violation_cycles;
    if (r.detection_valid) ++valid;
    if (r.t >= t_end - settle_window - 1e-9)
      m.steady_state_range_error = std::max(m.steady_state_range_error, std::abs(r.r_true - log.r_star));
    if (r.report) solve.push_back(r.solve_ms);
  }
  m.detection_valid_fraction = static_cast<double>(valid) / m.cycles;
  if (!solve.empty()) {
    std::nth_element(solve.begin(), solve.begin() + solve.size() / 2, solve.end());
    m.median_solve_ms = solve[solve.size() / 2];
  }
  return m;
}

inline void write_metrics(std::ostream& os, const ScenarioMetrics& m, const ScenarioLog& log) {
  os << "cycles: " << m.cycles << '\n'
     << "aborted: " << (log.aborted ? "true" : "false") << '\n';
  if (log.aborted) os << "abort_reason: \"" << log.abort_reason << "\"\n";
  os << "overshoot_m: " << m.overshoot << '\n'
     << "max_roll_deg: " << m.max_roll_deg << '\n'
     << "max_pitch_deg: " << m.max_pitch_deg << '\n'
     << "max_speed_mps: " << m.max_speed << '\n'
     << "fov_violation_cycles: " << m.fov_violation_cycles << '\n'
     << "steady_state_range_error_m: " << m.steady_state_range_error << '\n'
     << "detection_valid_fraction: " << m.detection_valid_fraction << '\n'
     << "median_solve_ms: " << m.median_solve_ms << '\n';
}

}  // namespace spvs
