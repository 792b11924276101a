#pragma once

// YAML scenario files. Every key is checked: missing required fields, wrong
// types and unknown keys are collected as named violations, then the
// cross-field checks of the library types run on the assembled scenario.
//
// Overrides use dotted paths into the document, e.g. `ttc.enabled=false` or
// `weights.q_p=[5, 5, 25]`; the value is read as YAML.

#include "spvs/simulator.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace spvs {

struct ScenarioConfig {
  Scenario scenario;
  std::string output_dir;  // empty when the file does not name one
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> violations)
      : std::runtime_error(join(violations)), violations_(std::move(violations)) {}

  const std::vector<std::string>& violations() const { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out = "invalid configuration:";
    for (const auto& s : v) out += "\n  " + s;
    return out;
  }

  std::vector<std::string> violations_;
};

namespace detail {

class ConfigReader {
 public:
  std::vector<std::string> errors;

  /// Section access; records the key as known. Missing optional sections read as null.
  YAML::Node section(const YAML::Node& parent, const std::string& path, const std::string& key, bool required) {
    known_.insert(join(path, key));
    const YAML::Node n = parent[key];
    if (!n) {
      if (required) errors.push_back(join(path, key) + ": missing required section");
      return YAML::Node();
    }
    if (!n.IsMap()) {
      errors.push_back(join(path, key) + ": expected a mapping");
      return YAML::Node();
    }
    return n;
  }

  template <class T>
  void scalar(const YAML::Node& parent, const std::string& path, const std::string& key, T& out,
              bool required = false) {
    const std::string full = join(path, key);
    known_.insert(full);
    if (!parent || !parent.IsMap()) {
      if (required) errors.push_back(full + ": missing required field");
      return;
    }
    const YAML::Node n = parent[key];
    if (!n) {
      if (required) errors.push_back(full + ": missing required field");
      return;
    }
    try {
      if (!n.IsScalar()) throw YAML::Exception(YAML::Mark::null_mark(), "not a scalar");
      out = n.as<T>();
    } catch (const YAML::Exception&) {
      errors.push_back(full + ": expected " + type_name<T>());
    }
  }

  template <int Dim>
  void vector(const YAML::Node& parent, const std::string& path, const std::string& key,
              Eigen::Matrix<double, Dim, 1>& out, bool required = false) {
    const std::string full = join(path, key);
    known_.insert(full);
    if (!parent || !parent.IsMap() || !parent[key]) {
      if (required) errors.push_back(full + ": missing required field");
      return;
    }
    const YAML::Node n = parent[key];
    if (!n.IsSequence() || n.size() != static_cast<std::size_t>(Dim)) {
      errors.push_back(full + ": expected a list of " + std::to_string(Dim) + " numbers");
      return;
    }
    try {
      for (int i = 0; i < Dim; ++i) out(i) = n[i].as<double>();
    } catch (const YAML::Exception&) {
      errors.push_back(full + ": expected a list of " + std::to_string(Dim) + " numbers");
    }
  }

  void quaternion(const YAML::Node& parent, const std::string& path, const std::string& key, UnitQuaternion& out,
                  bool required = false) {
    Vec4 c = out.coeffs_wxyz();
    const std::size_t before = errors.size();
    vector<4>(parent, path, key, c, required);
    if (errors.size() != before || !parent || !parent[key]) return;
    if (!(c.norm() > 1e-9)) {
      errors.push_back(join(path, key) + ": quaternion must be nonzero");
      return;
    }
    out = UnitQuaternion(c(0), c(1), c(2), c(3));
  }

  /// Marks a key read by the caller directly.
  void known(const std::string& path, const std::string& key) { known_.insert(join(path, key)); }

  /// Reports keys present in the document that were never read.
  void unknown_keys(const YAML::Node& node, const std::string& path) {
    if (!node.IsMap()) return;
    for (const auto& kv : node) {
      const std::string key = kv.first.as<std::string>();
      const std::string full = join(path, key);
      if (!known_.count(full)) {
        errors.push_back(full + ": unknown key");
        continue;
      }
      if (kv.second.IsMap()) unknown_keys(kv.second, full);
    }
  }

  static std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }

 private:
  template <class T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, bool>) return "true or false";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else return "a string";
  }

  std::set<std::string> known_;
};

inline const char* to_string(TrackKind k) {
  switch (k) {
    case TrackKind::stationary: return "stationary";
    case TrackKind::s_curve: return "s_curve";
    case TrackKind::waypoints: return "waypoints";
  }
  return "stationary";
}

inline std::vector<double> to_std(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
inline std::vector<double> to_std(const Vec4& v) { return {v(0), v(1), v(2), v(3)}; }

inline YAML::Node flow(const std::vector<double>& v) {
  YAML::Node n(YAML::NodeType::Sequence);
  for (double x : v) n.push_back(x);
  n.SetStyle(YAML::EmitterStyle::Flow);
  return n;
}

}  // namespace detail

/// Builds a scenario from a parsed document. Throws ConfigError listing every violation.
inline ScenarioConfig config_from_yaml(const YAML::Node& doc) {
  if (!doc || !doc.IsMap()) throw ConfigError({"document: expected a mapping at the top level"});
  detail::ConfigReader rd;
  ScenarioConfig cfg;
  Scenario& sc = cfg.scenario;
  OcpProblem& prob = sc.problem;

  rd.scalar(doc, "", "name", sc.name, true);
  rd.scalar(doc, "", "duration", sc.duration, true);
  rd.scalar(doc, "", "seed", sc.seed);
  rd.scalar(doc, "", "physics_dt", sc.physics_dt);
  rd.scalar(doc, "", "output", cfg.output_dir);

  {
    const YAML::Node n = rd.section(doc, "", "plant", false);
    rd.scalar(n, "plant", "rate_time_constant", sc.plant.rate_time_constant);
    rd.scalar(n, "plant", "kp", sc.plant.kp);
    rd.scalar(n, "plant", "ki", sc.plant.ki);
    rd.scalar(n, "plant", "kd", sc.plant.kd);
    double g = -sc.plant.g_w.z();
    rd.scalar(n, "plant", "gravity", g);
    if (!(g > 0.0)) rd.errors.push_back("plant.gravity: must be positive");
    sc.plant.g_w = Vec3(0.0, 0.0, -g);
    prob.world.g_w = sc.plant.g_w;
  }
  {
    const YAML::Node n = rd.section(doc, "", "initial", false);
    rd.vector<3>(n, "initial", "position", sc.initial.p_w);
    rd.vector<3>(n, "initial", "velocity", sc.initial.v_w);
    rd.quaternion(n, "initial", "attitude", sc.initial.q_wb);
  }
  {
    const YAML::Node n = rd.section(doc, "", "camera", false);
    rd.scalar(n, "camera", "fx", sc.intrinsics.fx);
    rd.scalar(n, "camera", "fy", sc.intrinsics.fy);
    rd.scalar(n, "camera", "cx", sc.intrinsics.cx);
    rd.scalar(n, "camera", "cy", sc.intrinsics.cy);
    rd.scalar(n, "camera", "width", sc.intrinsics.width);
    rd.scalar(n, "camera", "height", sc.intrinsics.height);
    prob.rig = {Vec3(0.1, 0.0, 0.0), UnitQuaternion(0.5, -0.5, 0.5, -0.5)};
    rd.vector<3>(n, "camera", "offset", prob.rig.p_cb_b);
    rd.quaternion(n, "camera", "rotation", prob.rig.q_bc);
  }
  {
    const YAML::Node n = rd.section(doc, "", "target", true);
    TargetTrack& tr = sc.track;
    std::string kind = "stationary";
    rd.scalar(n, "target", "track", kind, true);
    if (kind == "stationary") tr.kind = TrackKind::stationary;
    else if (kind == "s_curve") tr.kind = TrackKind::s_curve;
    else if (kind == "waypoints") tr.kind = TrackKind::waypoints;
    else rd.errors.push_back("target.track: expected stationary, s_curve or waypoints");
    rd.vector<3>(n, "target", "origin", tr.origin);
    rd.vector<3>(n, "target", "heading", tr.heading);
    rd.scalar(n, "target", "forward_speed", tr.forward_speed);
    rd.scalar(n, "target", "wavelength", tr.wavelength);
    rd.scalar(n, "target", "max_speed", tr.max_speed);
    rd.scalar(n, "target", "ramp_time", tr.ramp_time);
    rd.known("target", "waypoints");
    if (n && n["waypoints"]) {
      const YAML::Node w = n["waypoints"];
      bool ok = w.IsSequence();
      try {
        for (std::size_t i = 0; ok && i < w.size(); ++i) {
          if (!w[i].IsSequence() || w[i].size() != 4) {
            ok = false;
            break;
          }
          tr.waypoint_times.push_back(w[i][0].as<double>());
          tr.waypoints.emplace_back(w[i][1].as<double>(), w[i][2].as<double>(), w[i][3].as<double>());
        }
      } catch (const YAML::Exception&) {
        ok = false;
      }
      if (!ok) rd.errors.push_back("target.waypoints: expected a list of [t, x, y, z]");
    }
  }
  {
    const YAML::Node n = rd.section(doc, "", "detector", false);
    rd.scalar(n, "detector", "pixel_std", sc.noise.pixel_std);
    rd.scalar(n, "detector", "bbox_rel_std", sc.noise.bbox_rel_std);
    rd.scalar(n, "detector", "dropout_probability", sc.noise.dropout_probability);
    rd.scalar(n, "detector", "gate_diameter", sc.d_gate);
    rd.scalar(n, "detector", "perfect_range", sc.perfect_range);
    rd.known("detector", "dropout_cycles");
    if (n && n["dropout_cycles"]) {
      try {
        sc.dropout_cycles = n["dropout_cycles"].as<std::vector<int>>();
      } catch (const YAML::Exception&) {
        rd.errors.push_back("detector.dropout_cycles: expected a list of integers");
      }
    }
  }
  {
    const YAML::Node n = rd.section(doc, "", "horizon", false);
    rd.scalar(n, "horizon", "steps", prob.horizon.steps);
    rd.scalar(n, "horizon", "dt", prob.horizon.dt);
  }
  {
    const YAML::Node n = rd.section(doc, "", "weights", true);
    OcpWeights& w = prob.weights;
    rd.vector<3>(n, "weights", "q_p", w.q_p, true);
    rd.vector<3>(n, "weights", "q_v", w.q_v, true);
    rd.vector<4>(n, "weights", "q_q", w.q_q, true);
    rd.vector<4>(n, "weights", "r", w.r, true);
    rd.scalar(n, "weights", "q_u", w.q_u, true);
    rd.scalar(n, "weights", "slack_l1", w.w_z_l1, true);
    rd.scalar(n, "weights", "slack_l2", w.w_z_l2, true);
  }
  {
    const YAML::Node n = rd.section(doc, "", "references", true);
    OcpReferences& refs = prob.refs;
    rd.scalar(n, "references", "r_star", refs.r_star, true);
    rd.vector<3>(n, "references", "rho_star", refs.rho_star);
    rd.quaternion(n, "references", "attitude", refs.q_wb_star);
    if (!(refs.r_star > 0.0)) rd.errors.push_back("references.r_star: must be positive");
    if (!(refs.rho_star.norm() > 1e-9)) rd.errors.push_back("references.rho_star: must be nonzero");
    else refs.rho_star.normalize();
  }
  {
    const YAML::Node n = rd.section(doc, "", "constraints", false);
    ConstraintSet& cs = prob.constraints;
    double bw = 557.0, bh = 336.0;
    const YAML::Node b = rd.section(n ? n : YAML::Node(), "constraints", "bound", false);
    rd.scalar(b, "constraints.bound", "width", bw);
    rd.scalar(b, "constraints.bound", "height", bh);
    cs.bound = ImageBound::from_pixels(bw, bh, sc.intrinsics);
    rd.scalar(n, "constraints", "thrust_min", cs.c_min);
    rd.scalar(n, "constraints", "thrust_max", cs.c_max);
    rd.scalar(n, "constraints", "rate_max", cs.omega_max);
  }
  {
    const YAML::Node ttc = rd.section(doc, "", "ttc", false);
    const YAML::Node dist = rd.section(doc, "", "distance", false);
    bool ttc_on = true, dist_on = false;
    rd.scalar(ttc, "ttc", "enabled", ttc_on);
    rd.scalar(ttc, "ttc", "t_min", prob.constraints.t_c_min);
    rd.scalar(dist, "distance", "enabled", dist_on);
    rd.scalar(dist, "distance", "r_min", prob.constraints.r_min);
    if (ttc_on && dist_on) rd.errors.push_back("ttc.enabled, distance.enabled: at most one approach constraint");
    prob.constraints.approach =
        ttc_on ? ApproachConstraint::ttc : (dist_on ? ApproachConstraint::distance : ApproachConstraint::none);
  }
  {
    const YAML::Node n = rd.section(doc, "", "solver", false);
    SolverOptions& so = sc.solver;
    rd.scalar(n, "solver", "max_iterations", so.max_iterations);
    rd.scalar(n, "solver", "step_tolerance", so.step_tolerance);
    rd.scalar(n, "solver", "penalty_min", so.penalty_min);
    rd.scalar(n, "solver", "armijo", so.armijo);
    rd.scalar(n, "solver", "max_backtracks", so.max_backtracks);
    rd.scalar(n, "solver", "jacobian_step", so.jacobian_step);
    rd.scalar(n, "solver", "qp_max_iterations", so.qp.max_iterations);
  }
  rd.unknown_keys(doc, "");
  if (!rd.errors.empty()) throw ConfigError(rd.errors);

  prob.refs.p_star =
      OcpReferences::relative_position_for(prob.refs.r_star, prob.refs.rho_star, prob.refs.q_wb_star, prob.rig);
  prob.refs.u_star = ControlInput{-prob.world.g_w.z(), Vec3::Zero()};

  // cross-field checks, one named violation per failing group
  std::vector<std::string> errors;
  const auto check = [&errors](const char* what, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      errors.push_back(std::string(what) + ": " + e.what());
    }
  };
  check("plant", [&] { sc.plant.validate(); });
  check("camera", [&] { sc.intrinsics.validate(); });
  check("target", [&] { sc.track.validate(); });
  check("detector", [&] { sc.noise.validate(); });
  check("horizon", [&] { prob.horizon.validate(); });
  check("weights", [&] { prob.weights.validate(); });
  check("constraints", [&] { prob.constraints.validate(); });
  check("constraints.bound", [&] { prob.constraints.bound.validate(sc.intrinsics); });
  // remaining whole-scenario checks; it repeats the component checks above
  if (errors.empty()) check("scenario", [&] { sc.validate(); });
  if (sc.solver.max_backtracks < 0) errors.push_back("solver.max_backtracks: must be nonnegative");
  if (!(sc.solver.step_tolerance > 0.0)) errors.push_back("solver.step_tolerance: must be positive");
  if (!(sc.solver.jacobian_step > 0.0)) errors.push_back("solver.jacobian_step: must be positive");
  if (!errors.empty()) throw ConfigError(errors);
  return cfg;
}

/// Sets a dotted path inside the document, creating intermediate mappings.
inline void apply_override(YAML::Node& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError({"override '" + assignment + "': expected key=value"});
  const std::string path = assignment.substr(0, eq);
  YAML::Node value;
  try {
    value = YAML::Load(assignment.substr(eq + 1));
  } catch (const YAML::Exception& e) {
    throw ConfigError({"override '" + assignment + "': " + e.msg});
  }
  std::vector<std::string> keys;
  std::stringstream ss(path);
  for (std::string k; std::getline(ss, k, '.');) {
    if (k.empty()) throw ConfigError({"override '" + assignment + "': empty key segment"});
    keys.push_back(k);
  }
  // yaml-cpp nodes are handles; assigning through a copy would rebind it
  std::vector<YAML::Node> chain{doc};
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    YAML::Node next = chain.back()[keys[i]];
    if (next && !next.IsMap())
      throw ConfigError({"override '" + assignment + "': " + keys[i] + " is not a section"});
    if (!next) {
      chain.back()[keys[i]] = YAML::Node(YAML::NodeType::Map);
      next = chain.back()[keys[i]];
    }
    chain.push_back(next);
  }
  chain.back()[keys.back()] = value;
}

inline YAML::Node load_yaml_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"config: cannot read '" + path + "'"});
  try {
    return YAML::Load(in);
  } catch (const YAML::Exception& e) {
    throw ConfigError({"config: " + e.msg + " (line " + std::to_string(e.mark.line + 1) + ")"});
  }
}

inline ScenarioConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  YAML::Node doc = load_yaml_file(path);
  if (!doc.IsMap()) throw ConfigError({"document: expected a mapping at the top level"});
  for (const auto& o : overrides) apply_override(doc, o);
  return config_from_yaml(doc);
}

inline YAML::Node config_to_yaml(const ScenarioConfig& cfg) {
  using detail::flow;
  using detail::to_std;
  const Scenario& sc = cfg.scenario;
  const OcpProblem& prob = sc.problem;
  YAML::Node doc;
  doc["name"] = sc.name;
  doc["duration"] = sc.duration;
  doc["seed"] = sc.seed;
  doc["physics_dt"] = sc.physics_dt;
  if (!cfg.output_dir.empty()) doc["output"] = cfg.output_dir;

  YAML::Node plant;
  plant["rate_time_constant"] = sc.plant.rate_time_constant;
  plant["kp"] = sc.plant.kp;
  plant["ki"] = sc.plant.ki;
  plant["kd"] = sc.plant.kd;
  plant["gravity"] = -sc.plant.g_w.z();
  doc["plant"] = plant;

  YAML::Node init;
  init["position"] = flow(to_std(sc.initial.p_w));
  init["velocity"] = flow(to_std(sc.initial.v_w));
  init["attitude"] = flow(to_std(sc.initial.q_wb.coeffs_wxyz()));
  doc["initial"] = init;

  YAML::Node cam;
  cam["fx"] = sc.intrinsics.fx;
  cam["fy"] = sc.intrinsics.fy;
  cam["cx"] = sc.intrinsics.cx;
  cam["cy"] = sc.intrinsics.cy;
  cam["width"] = sc.intrinsics.width;
  cam["height"] = sc.intrinsics.height;
  cam["offset"] = flow(to_std(prob.rig.p_cb_b));
  cam["rotation"] = flow(to_std(prob.rig.q_bc.coeffs_wxyz()));
  doc["camera"] = cam;

  YAML::Node tgt;
  tgt["track"] = detail::to_string(sc.track.kind);
  tgt["origin"] = flow(to_std(sc.track.origin));
  tgt["heading"] = flow(to_std(sc.track.heading));
  tgt["forward_speed"] = sc.track.forward_speed;
  tgt["wavelength"] = sc.track.wavelength;
  tgt["max_speed"] = sc.track.max_speed;
  tgt["ramp_time"] = sc.track.ramp_time;
  if (!sc.track.waypoints.empty()) {
    YAML::Node w(YAML::NodeType::Sequence);
    for (std::size_t i = 0; i < sc.track.waypoints.size(); ++i) {
      const Vec3& p = sc.track.waypoints[i];
      w.push_back(flow({sc.track.waypoint_times[i], p.x(), p.y(), p.z()}));
    }
    tgt["waypoints"] = w;
  }
  doc["target"] = tgt;

  YAML::Node det;
  det["pixel_std"] = sc.noise.pixel_std;
  det["bbox_rel_std"] = sc.noise.bbox_rel_std;
  det["dropout_probability"] = sc.noise.dropout_probability;
  det["gate_diameter"] = sc.d_gate;
  det["perfect_range"] = sc.perfect_range;
  YAML::Node drops(YAML::NodeType::Sequence);
  for (int c : sc.dropout_cycles) drops.push_back(c);
  drops.SetStyle(YAML::EmitterStyle::Flow);
  det["dropout_cycles"] = drops;
  doc["detector"] = det;

  YAML::Node hor;
  hor["steps"] = prob.horizon.steps;
  hor["dt"] = prob.horizon.dt;
  doc["horizon"] = hor;

  YAML::Node w;
  w["q_p"] = flow(to_std(prob.weights.q_p));
  w["q_v"] = flow(to_std(prob.weights.q_v));
  w["q_q"] = flow(to_std(prob.weights.q_q));
  w["r"] = flow(to_std(prob.weights.r));
  w["q_u"] = prob.weights.q_u;
  w["slack_l1"] = prob.weights.w_z_l1;
  w["slack_l2"] = prob.weights.w_z_l2;
  doc["weights"] = w;

  YAML::Node refs;
  refs["r_star"] = prob.refs.r_star;
  refs["rho_star"] = flow(to_std(prob.refs.rho_star));
  refs["attitude"] = flow(to_std(prob.refs.q_wb_star.coeffs_wxyz()));
  doc["references"] = refs;

  const ConstraintSet& cs = prob.constraints;
  YAML::Node con;
  con["bound"]["width"] = 2.0 * cs.bound.half_width_n * sc.intrinsics.fx;
  con["bound"]["height"] = 2.0 * cs.bound.half_height_n * sc.intrinsics.fy;
  con["thrust_min"] = cs.c_min;
  con["thrust_max"] = cs.c_max;
  con["rate_max"] = cs.omega_max;
  doc["constraints"] = con;
  doc["ttc"]["enabled"] = cs.approach == ApproachConstraint::ttc;
  doc["ttc"]["t_min"] = cs.t_c_min;
  doc["distance"]["enabled"] = cs.approach == ApproachConstraint::distance;
  doc["distance"]["r_min"] = cs.r_min;

  YAML::Node so;
  so["max_iterations"] = sc.solver.max_iterations;
  so["step_tolerance"] = sc.solver.step_tolerance;
  so["penalty_min"] = sc.solver.penalty_min;
  so["armijo"] = sc.solver.armijo;
  so["max_backtracks"] = sc.solver.max_backtracks;
  so["jacobian_step"] = sc.solver.jacobian_step;
  so["qp_max_iterations"] = sc.solver.qp.max_iterations;
  doc["solver"] = so;
  return doc;
}

inline std::string serialize_config(const ScenarioConfig& cfg) {
  YAML::Emitter out;
  out << config_to_yaml(cfg);
  return std::string(out.c_str()) + "\n";
}

inline ScenarioConfig parse_config(const std::string& text) {
  YAML::Node doc;
  try {
    doc = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError({"config: " + e.msg});
  }
  return config_from_yaml(doc);
}

/// Servo state literal as a YAML flow mapping, e.g.
/// `{v: [0, 0, 0], attitude: [1, 0, 0, 0], rho: [0, 0, 1], r: 19.9}`.
/// Omitted fields keep their defaults (at rest, level, on the optical axis).
inline ServoState parse_state_literal(const std::string& text, double default_range) {
  YAML::Node doc;
  try {
    doc = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError({"state: " + e.msg});
  }
  if (!doc.IsMap()) throw ConfigError({"state: expected a mapping such as {r: 5}"});
  detail::ConfigReader rd;
  ServoState x;
  x.r = default_range;
  Vec3 rho = Vec3::UnitZ();
  rd.vector<3>(doc, "state", "v", x.v_w);
  rd.quaternion(doc, "state", "attitude", x.q_wb);
  rd.vector<3>(doc, "state", "rho", rho);
  rd.scalar(doc, "state", "r", x.r);
  rd.unknown_keys(doc, "state");
  if (!(x.r > 0.0)) rd.errors.push_back("state.r: must be positive");
  if (!(rho.norm() > 1e-9)) rd.errors.push_back("state.rho: must be nonzero");
  if (!rd.errors.empty()) throw ConfigError(rd.errors);
  x.feature = from_bearing(rho.normalized());
  return x;
}

}  // namespace spvs
