#pragma once

// Direct multiple shooting and a Gauss-Newton SQP in real-time-iteration
// style for the visual servoing OCP.
//
// Decision variables per stage k = 0..N-1 are the input u_k, the shared slack
// z_k >= 0 of the constraint rows at node k+1, and the state x_{k+1} in
// tangent coordinates. x_0 is pinned to the measurement. Each QP eliminates
// the linearized shooting constraints (condensing the state increments into
// the inputs) and is solved with the dense dual active-set method in qp.hpp.
// Steps are globalized with a backtracking line search on an L1 exact-penalty
// merit function.

#include "spvs/ocp.hpp"
#include "spvs/qp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <vector>

namespace spvs {

struct Trajectory {
  std::vector<ServoState> states;     // N + 1
  std::vector<ControlInput> inputs;   // N
  std::vector<double> slacks;         // N

  int steps() const { return static_cast<int>(inputs.size()); }
};

struct SolverOptions {
  int max_iterations = 3;
  double step_tolerance = 1e-8;
  double penalty_min = 10.0;
  double armijo = 1e-4;
  int max_backtracks = 8;
  double jacobian_step = 1e-6;
  QpOptions qp;
};

struct StepReport {
  QpStatus qp_status = QpStatus::optimal;
  int qp_iterations = 0;
  double step_norm = 0.0;
  double alpha = 0.0;
  double penalty = 0.0;
  double merit_before = 0.0;
  double merit_after = 0.0;
  bool accepted = false;
};

struct SolveReport {
  int iterations = 0;
  QpStatus qp_status = QpStatus::optimal;
  double max_gap = 0.0;
  double max_violation = 0.0;
  double objective = 0.0;
  double wall_ms = 0.0;
};

/// Multiple-shooting NLP for one measurement.
class ShootingNlp {
 public:
  ShootingNlp(OcpProblem problem, ServoState x_hat) : prob_(std::move(problem)), x_hat_(std::move(x_hat)) {
    prob_.validate();
  }

  const OcpProblem& problem() const { return prob_; }
  const ServoState& initial_state() const { return x_hat_; }
  int steps() const { return prob_.horizon.steps; }

  static constexpr int kStageDim = kInputDim + 1 + kStateTangentDim;
  int decision_dimension() const { return steps() * kStageDim; }

  /// Layout per stage: [u_k (4), z_k (1), x_{k+1} - base_{k+1} (9)].
  Eigen::VectorXd pack(const Trajectory& t, const Trajectory& base) const {
    check(t);
    Eigen::VectorXd w(decision_dimension());
    for (int k = 0; k < steps(); ++k) {
      w.segment<kInputDim>(k * kStageDim) = t.inputs[k].vector();
      w(k * kStageDim + kInputDim) = t.slacks[k];
      w.segment<kStateTangentDim>(k * kStageDim + kInputDim + 1) = local(t.states[k + 1], base.states[k + 1]);
    }
    return w;
  }

  Trajectory unpack(const Eigen::VectorXd& w, const Trajectory& base) const {
    if (w.size() != decision_dimension()) throw std::invalid_argument("unpack: wrong decision dimension");
    Trajectory t;
    t.states.push_back(x_hat_);
    for (int k = 0; k < steps(); ++k) {
      t.inputs.push_back(ControlInput::from_vector(w.segment<kInputDim>(k * kStageDim)));
      t.slacks.push_back(w(k * kStageDim + kInputDim));
      t.states.push_back(retract(base.states[k + 1], w.segment<kStateTangentDim>(k * kStageDim + kInputDim + 1)));
    }
    return t;
  }

  void check(const Trajectory& t) const {
    if (t.steps() != steps() || static_cast<int>(t.states.size()) != steps() + 1 ||
        static_cast<int>(t.slacks.size()) != steps())
      throw std::invalid_argument("trajectory does not match the horizon");
  }

  ServoState propagate(const ServoState& x, const ControlInput& u) const {
    return integrate_state(x, u, prob_.rig, prob_.world, prob_.horizon.dt);
  }

  /// Feasible initial guess: hover-like inputs clamped to the box, states rolled out.
  Trajectory rollout(const ControlInput& u) const {
    Trajectory t;
    t.states.push_back(x_hat_);
    const ControlInput uc = clamp_input(u);
    for (int k = 0; k < steps(); ++k) {
      t.inputs.push_back(uc);
      t.states.push_back(propagate(t.states.back(), uc));
    }
    t.slacks.assign(steps(), 0.0);
    for (int k = 0; k < steps(); ++k) t.slacks[k] = std::max(0.0, linearize_constraints(t.states[k + 1], uc, prob_).g.maxCoeff());
    return t;
  }

  ControlInput clamp_input(const ControlInput& u) const {
    const ConstraintSet& cs = prob_.constraints;
    ControlInput out;
    out.c = std::clamp(u.c, cs.c_min, cs.c_max);
    out.omega_b = u.omega_b.cwiseMax(-cs.omega_max).cwiseMin(cs.omega_max);
    return out;
  }

  /// Shooting gap of stage k in the tangent space of x_{k+1}.
  StateTangent gap(const Trajectory& t, int k) const { return local(propagate(t.states[k], t.inputs[k]), t.states[k + 1]); }

  double max_gap(const Trajectory& t) const {
    double g = 0.0;
    for (int k = 0; k < steps(); ++k) g = std::max(g, gap(t, k).cwiseAbs().maxCoeff());
    return g;
  }

  double objective(const Trajectory& t) const {
    double f = 0.0;
    for (int k = 0; k < steps(); ++k) {
      f += linearize_cost(t.states[k], t.inputs[k], prob_, k, false).value();
      f += slack_penalty(std::span<const double>(&t.slacks[k], 1), prob_.weights);
    }
    f += linearize_cost(t.states[steps()], t.inputs.back(), prob_, steps(), true).value();
    return f;
  }

  /// Largest raw soft-constraint residual (the part absorbed by slack).
  double max_violation(const Trajectory& t) const {
    double v = 0.0;
    for (int k = 0; k < steps(); ++k)
      v = std::max(v, linearize_constraints(t.states[k + 1], t.inputs[k], prob_).g.maxCoeff());
    return v;
  }

  /// Constraint residual left after slack: sum of max(0, g - z).
  double infeasibility(const Trajectory& t) const {
    double v = 0.0;
    for (int k = 0; k < steps(); ++k) {
      const Eigen::VectorXd g = linearize_constraints(t.states[k + 1], t.inputs[k], prob_).g;
      v += (g.array() - t.slacks[k]).max(0.0).sum();
    }
    return v;
  }

  double merit(const Trajectory& t, double penalty) const {
    double gaps = 0.0;
    for (int k = 0; k < steps(); ++k) gaps += gap(t, k).lpNorm<1>();
    return objective(t) + penalty * (gaps + infeasibility(t));
  }

  /// Linearized transition of stage k: gap + A dx_k + B du_k.
  struct StageLinearization {
    StateTangent gap;
    Eigen::Matrix<double, kStateTangentDim, kStateTangentDim> a;
    Eigen::Matrix<double, kStateTangentDim, kInputDim> b;
  };

  StageLinearization linearize_dynamics(const Trajectory& t, int k, double h) const {
    StageLinearization lin;
    const ServoState& x = t.states[k];
    const ServoState& next = t.states[k + 1];
    const Vec4 u = t.inputs[k].vector();
    lin.gap = local(propagate(x, t.inputs[k]), next);
    if (k == 0) {
      lin.a.setZero();
    } else {
      for (int i = 0; i < kStateTangentDim; ++i) {
        const StateTangent d = StateTangent::Unit(i) * h;
        lin.a.col(i) = (local(propagate(retract(x, d), t.inputs[k]), next) -
                        local(propagate(retract(x, -d), t.inputs[k]), next)) / (2.0 * h);
      }
    }
    for (int i = 0; i < kInputDim; ++i) {
      const Vec4 d = Vec4::Unit(i) * h;
      lin.b.col(i) = (local(propagate(x, ControlInput::from_vector(u + d)), next) -
                      local(propagate(x, ControlInput::from_vector(u - d)), next)) / (2.0 * h);
    }
    return lin;
  }

 private:
  OcpProblem prob_;
  ServoState x_hat_;
};

namespace detail {

// Condensed QP in y = [du_0..du_{N-1}, dz_0..dz_{N-1}] together with the data
// needed to expand the step and to estimate multipliers.
struct CondensedQp {
  QpProblem qp;
  std::vector<Eigen::MatrixXd> sens;  // d(dx_k)/dy, k = 0..N
  std::vector<StateTangent> offset;   // dx_k at y = 0
  std::vector<ShootingNlp::StageLinearization> dyn;
  std::vector<CostLinearization> cost;              // nodes 0..N
  std::vector<ConstraintLinearization> cons;        // stages 0..N-1 (node k+1)
  std::vector<int> cons_row;                        // first QP row of each stage block
};

inline CondensedQp condense(const ShootingNlp& nlp, const Trajectory& t, double h) {
  const OcpProblem& prob = nlp.problem();
  const int n_steps = nlp.steps();
  const int ny = n_steps * (kInputDim + 1);
  const int z0 = n_steps * kInputDim;
  CondensedQp c;

  c.sens.assign(n_steps + 1, Eigen::MatrixXd::Zero(kStateTangentDim, ny));
  c.offset.assign(n_steps + 1, StateTangent::Zero());
  for (int k = 0; k < n_steps; ++k) {
    c.dyn.push_back(nlp.linearize_dynamics(t, k, h));
    const auto& d = c.dyn.back();
    c.sens[k + 1] = d.a * c.sens[k];
    c.sens[k + 1].block(0, k * kInputDim, kStateTangentDim, kInputDim) += d.b;
    c.offset[k + 1] = d.a * c.offset[k] + d.gap;
  }

  // least-squares objective
  const int cost_rows = kCostRows * (n_steps + 1);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(cost_rows, ny);
  Eigen::VectorXd r0(cost_rows);
  for (int k = 0; k <= n_steps; ++k) {
    const bool terminal = k == n_steps;
    c.cost.push_back(linearize_cost(t.states[k], t.inputs[std::min(k, n_steps - 1)], prob, k, terminal));
    const CostLinearization& cl = c.cost.back();
    m.middleRows(k * kCostRows, kCostRows) = cl.jx * c.sens[k];
    if (!terminal) m.block(k * kCostRows, k * kInputDim, kCostRows, kInputDim) += cl.ju;
    r0.segment<kCostRows>(k * kCostRows) = cl.residual + cl.jx * c.offset[k];
  }
  const OcpWeights& w = prob.weights;
  c.qp.H = 2.0 * m.transpose() * m;
  c.qp.g = 2.0 * m.transpose() * r0;
  for (int k = 0; k < n_steps; ++k) {
    c.qp.H(z0 + k, z0 + k) += 2.0 * w.w_z_l2;
    c.qp.g(z0 + k) += 2.0 * w.w_z_l2 * t.slacks[k] + w.w_z_l1;
  }

  // soft constraints: g + Gx dx_{k+1} + Gu du_k - z_k - dz_k <= 0
  int rows = 0;
  for (int k = 0; k < n_steps; ++k) {
    c.cons.push_back(linearize_constraints(t.states[k + 1], t.inputs[k], prob));
    c.cons_row.push_back(rows);
    rows += static_cast<int>(c.cons.back().g.size());
  }
  c.qp.A.setZero(rows, ny);
  c.qp.b.resize(rows);
  for (int k = 0; k < n_steps; ++k) {
    const ConstraintLinearization& cl = c.cons[k];
    const int r = c.cons_row[k];
    const int nr = static_cast<int>(cl.g.size());
    c.qp.A.middleRows(r, nr) = cl.jx * c.sens[k + 1];
    c.qp.A.block(r, k * kInputDim, nr, kInputDim) += cl.ju;
    c.qp.A.block(r, z0 + k, nr, 1).array() -= 1.0;
    c.qp.b.segment(r, nr) = -(cl.g + cl.jx * c.offset[k + 1]).array() + t.slacks[k];
  }

  // actuation box and slack sign
  const ConstraintSet& cs = prob.constraints;
  c.qp.lb.resize(ny);
  c.qp.ub.resize(ny);
  for (int k = 0; k < n_steps; ++k) {
    const Vec4 u = t.inputs[k].vector();
    c.qp.lb(k * kInputDim) = cs.c_min - u(0);
    c.qp.ub(k * kInputDim) = cs.c_max - u(0);
    for (int i = 1; i < kInputDim; ++i) {
      c.qp.lb(k * kInputDim + i) = -cs.omega_max - u(i);
      c.qp.ub(k * kInputDim + i) = cs.omega_max - u(i);
    }
    c.qp.lb(z0 + k) = -t.slacks[k];
    c.qp.ub(z0 + k) = std::numeric_limits<double>::infinity();
  }
  return c;
}

// Multipliers of the linearized shooting constraints by backward recursion
// of the condensed KKT conditions; their sup-norm sizes the merit penalty.
inline double shooting_multiplier_norm(const CondensedQp& c, const Eigen::VectorXd& y, const QpSolution& sol,
                                       int n_steps) {
  StateTangent lambda = StateTangent::Zero();
  double norm = 0.0;
  for (int k = n_steps; k >= 1; --k) {
    const CostLinearization& cl = c.cost[k];
    const StateTangent dx = c.sens[k] * y + c.offset[k];
    Eigen::Matrix<double, kCostRows, 1> res = cl.residual + cl.jx * dx;
    if (k < n_steps) res += cl.ju * y.segment<kInputDim>(k * kInputDim);
    StateTangent grad = 2.0 * cl.jx.transpose() * res;
    const ConstraintLinearization& g = c.cons[k - 1];
    grad += g.jx.transpose() * sol.row_multipliers.segment(c.cons_row[k - 1], g.g.size());
    if (k < n_steps) grad += c.dyn[k].a.transpose() * lambda;
    lambda = grad;
    norm = std::max(norm, lambda.cwiseAbs().maxCoeff());
  }
  return norm;
}

inline Trajectory apply_step(const ShootingNlp& nlp, const Trajectory& t, const CondensedQp& c,
                             const Eigen::VectorXd& y, double alpha) {
  const int n_steps = nlp.steps();
  const int z0 = n_steps * kInputDim;
  Trajectory out = t;
  for (int k = 0; k < n_steps; ++k) {
    out.inputs[k] = ControlInput::from_vector(t.inputs[k].vector() + alpha * y.segment<kInputDim>(k * kInputDim));
    out.slacks[k] = std::max(0.0, t.slacks[k] + alpha * y(z0 + k));
    out.states[k + 1] = retract(t.states[k + 1], alpha * (c.sens[k + 1] * y + c.offset[k + 1]));
  }
  return out;
}

}  // namespace detail

/// One Gauss-Newton SQP iteration with backtracking on the L1 merit function.
/// The returned trajectory is the input unchanged when no step is accepted.
/// `penalty` is raised as needed and should be carried across iterations of
/// the same solve.
inline std::pair<Trajectory, StepReport> sqp_step(const ShootingNlp& nlp, const Trajectory& t,
                                                  const SolverOptions& opt, double& penalty) {
  nlp.check(t);
  StepReport rep;
  const detail::CondensedQp c = detail::condense(nlp, t, opt.jacobian_step);
  const QpSolution sol = solve_qp(c.qp, opt.qp);
  rep.qp_status = sol.status;
  rep.qp_iterations = sol.iterations;
  if (sol.status != QpStatus::optimal) {
    rep.penalty = penalty;
    rep.merit_before = rep.merit_after = nlp.merit(t, penalty);
    return {t, rep};
  }

  const Eigen::VectorXd& y = sol.y;
  double full = y.squaredNorm();
  for (int k = 1; k <= nlp.steps(); ++k) full += (c.sens[k] * y + c.offset[k]).squaredNorm();
  rep.step_norm = std::sqrt(full);

  const double dual = std::max(detail::shooting_multiplier_norm(c, y, sol, nlp.steps()),
                               sol.row_multipliers.size() ? sol.row_multipliers.maxCoeff() : 0.0);
  penalty = std::max({penalty, opt.penalty_min, 1.1 * dual});
  rep.penalty = penalty;
  rep.merit_before = nlp.merit(t, penalty);
  rep.merit_after = rep.merit_before;

  const double decrease = 0.5 * y.dot(c.qp.H * y);
  double alpha = 1.0;
  for (int i = 0; i <= opt.max_backtracks; ++i, alpha *= 0.5) {
    Trajectory trial = detail::apply_step(nlp, t, c, y, alpha);
    const double m = nlp.merit(trial, penalty);
    if (std::isfinite(m) && m <= rep.merit_before - opt.armijo * alpha * decrease) {
      rep.alpha = alpha;
      rep.merit_after = m;
      rep.accepted = true;
      return {std::move(trial), rep};
    }
  }
  return {t, rep};
}

struct RecedingResult {
  ControlInput u0;
  Trajectory trajectory;
  SolveReport report;
  std::vector<StepReport> steps;
};

/// Runs up to opt.max_iterations SQP iterations from the warm start (or a
/// hover rollout) with x_0 pinned to x_hat. If the QP fails on the first
/// iteration the first input of the warm start is returned.
inline RecedingResult solve_receding(const OcpProblem& problem, const ServoState& x_hat,
                                     const std::optional<Trajectory>& warm, const SolverOptions& opt = {}) {
  const auto start = std::chrono::steady_clock::now();
  const ShootingNlp nlp(problem, x_hat);
  Trajectory t;
  if (warm) {
    nlp.check(*warm);
    t = *warm;
    t.states[0] = x_hat;
  } else {
    t = nlp.rollout(problem.refs.u_star);
  }
  for (auto& u : t.inputs) u = nlp.clamp_input(u);

  RecedingResult out;
  double penalty = opt.penalty_min;
  for (int it = 0; it < opt.max_iterations; ++it) {
    auto [next, rep] = sqp_step(nlp, t, opt, penalty);
    out.steps.push_back(rep);
    out.report.iterations = it + 1;
    out.report.qp_status = rep.qp_status;
    if (rep.qp_status != QpStatus::optimal || !rep.accepted) break;
    t = std::move(next);
    if (rep.step_norm < opt.step_tolerance) break;
  }
  out.u0 = t.inputs.front();
  out.report.max_gap = nlp.max_gap(t);
  out.report.max_violation = nlp.max_violation(t);
  out.report.objective = nlp.objective(t);
  out.trajectory = std::move(t);
  out.report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return out;
}

/// Receding-horizon shift by `cycles` stages: drop the head, repeat the last
/// input and extend the tail by integration.
inline Trajectory shift_trajectory(const Trajectory& t, int cycles, const OcpProblem& problem) {
  Trajectory out = t;
  const int n = t.steps();
  cycles = std::clamp(cycles, 0, n);
  for (int c = 0; c < cycles; ++c) {
    out.states.erase(out.states.begin());
    out.inputs.erase(out.inputs.begin());
    out.slacks.erase(out.slacks.begin());
    const ControlInput last = out.inputs.empty() ? t.inputs.back() : out.inputs.back();
    out.inputs.push_back(last);
    out.slacks.push_back(out.slacks.empty() ? 0.0 : out.slacks.back());
    out.states.push_back(integrate_state(out.states.back(), last, problem.rig, problem.world, problem.horizon.dt));
  }
  return out;
}

/// Time-stamped inputs of the latest solution, replayed in order while no new
/// solution arrives. One producer may refresh while one consumer reads.
class ControlBuffer {
 public:
  struct Sample {
    ControlInput u;
    int index = 0;
    bool outage = false;
  };

  void refresh(const std::vector<ControlInput>& inputs, double t0, double dt) {
    if (inputs.empty()) throw std::invalid_argument("ControlBuffer: empty input sequence");
    if (!(dt > 0.0)) throw std::invalid_argument("ControlBuffer: dt must be positive");
    std::lock_guard lock(mutex_);
    inputs_ = inputs;
    t0_ = t0;
    dt_ = dt;
  }

  /// Input whose slot [t0 + i dt, t0 + (i+1) dt) contains t; past the end the
  /// last input is returned and the outage flag is set.
  Sample next_control(double t) const {
    std::lock_guard lock(mutex_);
    if (inputs_.empty()) throw std::logic_error("ControlBuffer: no inputs buffered");
    const double slot = std::floor((t - t0_) / dt_ + 1e-9);
    const int last = static_cast<int>(inputs_.size()) - 1;
    if (slot > last) return {inputs_.back(), last, true};
    const int i = std::max(0, static_cast<int>(slot));
    return {inputs_[i], i, false};
  }

  bool empty() const {
    std::lock_guard lock(mutex_);
    return inputs_.empty();
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return inputs_.size();
  }

 private:
  mutable std::mutex mutex_;
  std::vector<ControlInput> inputs_;
  double t0_ = 0.0;
  double dt_ = 0.05;
};

/// Stateful receding-horizon controller: warm starts between cycles and keeps
/// the control buffer current.
class ServoController {
 public:
  ServoController(OcpProblem problem, SolverOptions options = {})
      : problem_(std::move(problem)), options_(options) {
    problem_.validate();
  }

  /// Solves from a fresh measurement taken at time t; `cycles_since_last`
  /// shifts the previous solution accordingly.
  RecedingResult update(const ServoState& x_hat, double t, int cycles_since_last = 1) {
    std::optional<Trajectory> warm;
    if (last_) warm = shift_trajectory(*last_, cycles_since_last, problem_);
    RecedingResult res = solve_receding(problem_, x_hat, warm, options_);
    if (res.report.qp_status == QpStatus::optimal) {
      last_ = res.trajectory;
      buffer_.refresh(res.trajectory.inputs, t, problem_.horizon.dt);
    } else if (!buffer_.empty()) {
      res.u0 = buffer_.next_control(t).u;
    }
    return res;
  }

  ControlBuffer::Sample buffered(double t) const { return buffer_.next_control(t); }

  const ControlBuffer& buffer() const { return buffer_; }
  const OcpProblem& problem() const { return problem_; }
  OcpProblem& problem() { return problem_; }
  const std::optional<Trajectory>& last_solution() const { return last_; }

  void reset() { last_.reset(); }

 private:
  OcpProblem problem_;
  SolverOptions options_;
  std::optional<Trajectory> last_;
  ControlBuffer buffer_;
};

}  // namespace spvs
