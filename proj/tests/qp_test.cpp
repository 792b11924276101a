#include "spvs/qp.hpp"

#include <Eigen/LU>
#include <gtest/gtest.h>

#include <random>

namespace spvs {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct RandomQp {
  QpProblem qp;
  explicit RandomQp(std::mt19937& rng, int n, int rows, bool bounds) {
    std::normal_distribution<double> g;
    MatrixXd m(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = g(rng);
    qp.H = m * m.transpose() + 0.5 * MatrixXd::Identity(n, n);
    qp.g.resize(n);
    for (int i = 0; i < n; ++i) qp.g(i) = 3.0 * g(rng);
    qp.A.resize(rows, n);
    qp.b.resize(rows);
    // feasible by construction: y0 satisfies every row with positive margin
    VectorXd y0(n);
    for (int i = 0; i < n; ++i) y0(i) = 0.3 * g(rng);
    for (int r = 0; r < rows; ++r) {
      for (int j = 0; j < n; ++j) qp.A(r, j) = g(rng);
      qp.b(r) = qp.A.row(r).dot(y0) + std::abs(g(rng));
    }
    if (bounds) {
      qp.lb = VectorXd::Constant(n, -1.0);
      qp.ub = VectorXd::Constant(n, 1.0);
      qp.lb(0) = -std::numeric_limits<double>::infinity();
    }
  }
};

// Enumerates every active set, keeps the KKT points, returns the best one.
VectorXd brute_force(const QpProblem& qp) {
  const int n = static_cast<int>(qp.g.size());
  MatrixXd a = qp.A;
  VectorXd b = qp.b;
  for (int i = 0; i < qp.lb.size(); ++i) {
    if (std::isfinite(qp.lb(i))) {
      a.conservativeResize(a.rows() + 1, n);
      b.conservativeResize(b.size() + 1);
      a.row(a.rows() - 1) = -VectorXd::Unit(n, i).transpose();
      b(b.size() - 1) = -qp.lb(i);
    }
    if (std::isfinite(qp.ub(i))) {
      a.conservativeResize(a.rows() + 1, n);
      b.conservativeResize(b.size() + 1);
      a.row(a.rows() - 1) = VectorXd::Unit(n, i).transpose();
      b(b.size() - 1) = qp.ub(i);
    }
  }
  const int m = static_cast<int>(a.rows());
  double best = std::numeric_limits<double>::infinity();
  VectorXd best_y;
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    std::vector<int> act;
    for (int i = 0; i < m; ++i)
      if (mask & (1u << i)) act.push_back(i);
    if (static_cast<int>(act.size()) > n) continue;
    const int k = static_cast<int>(act.size());
    MatrixXd kkt = MatrixXd::Zero(n + k, n + k);
    VectorXd rhs(n + k);
    kkt.topLeftCorner(n, n) = qp.H;
    rhs.head(n) = -qp.g;
    for (int j = 0; j < k; ++j) {
      kkt.block(0, n + j, n, 1) = a.row(act[j]).transpose();
      kkt.block(n + j, 0, 1, n) = a.row(act[j]);
      rhs(n + j) = b(act[j]);
    }
    Eigen::FullPivLU<MatrixXd> lu(kkt);
    if (lu.rank() < n + k) continue;
    const VectorXd sol = lu.solve(rhs);
    const VectorXd y = sol.head(n);
    if (k > 0 && (sol.tail(k).array() < -1e-9).any()) continue;
    if (((a * y - b).array() > 1e-9).any()) continue;
    const double f = 0.5 * y.dot(qp.H * y) + qp.g.dot(y);
    if (f < best) {
      best = f;
      best_y = y;
    }
  }
  return best_y;
}

TEST(SolveQp, UnconstrainedMinimizer) {
  QpProblem qp;
  qp.H = (MatrixXd(2, 2) << 2, 0, 0, 4).finished();
  qp.g = VectorXd::Constant(2, -2.0);
  qp.A.resize(0, 2);
  qp.b.resize(0);
  const QpSolution s = solve_qp(qp);
  ASSERT_EQ(s.status, QpStatus::optimal);
  EXPECT_NEAR(s.y(0), 1.0, 1e-14);
  EXPECT_NEAR(s.y(1), 0.5, 1e-14);
  EXPECT_EQ(s.active_count, 0);
}

TEST(SolveQp, MatchesActiveSetEnumeration) {
  std::mt19937 rng(42);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + trial % 3;
    const int rows = 2 + trial % 4;
    RandomQp r(rng, n, rows, trial % 2 == 0);
    const QpSolution s = solve_qp(r.qp);
    ASSERT_EQ(s.status, QpStatus::optimal) << "trial " << trial;
    const VectorXd oracle = brute_force(r.qp);
    ASSERT_EQ(oracle.size(), n);
    EXPECT_LT((s.y - oracle).norm(), 1e-8) << "trial " << trial;
  }
}

TEST(SolveQp, KktConditionsOnLargerProblems) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    RandomQp r(rng, 40, 80, true);
    const QpSolution s = solve_qp(r.qp);
    ASSERT_EQ(s.status, QpStatus::optimal);
    const QpProblem& qp = r.qp;
    // stationarity: H y + g + A^T lambda - mu_l + mu_u = 0
    const VectorXd grad = qp.H * s.y + qp.g + qp.A.transpose() * s.row_multipliers - s.lower_multipliers +
                          s.upper_multipliers;
    EXPECT_LT(grad.cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((qp.A * s.y - qp.b).maxCoeff(), 1e-9);
    EXPECT_GE(s.row_multipliers.minCoeff(), 0.0);
    // complementarity
    EXPECT_LT((s.row_multipliers.array() * (qp.A * s.y - qp.b).array()).abs().maxCoeff(), 1e-8);
    EXPECT_GE((s.y - qp.lb).minCoeff(), -1e-9);
    EXPECT_LE((s.y - qp.ub).maxCoeff(), 1e-9);
  }
}

TEST(SolveQp, DetectsInfeasibility) {
  QpProblem qp;
  qp.H = MatrixXd::Identity(2, 2);
  qp.g = VectorXd::Zero(2);
  qp.A = (MatrixXd(2, 2) << 1, 0, -1, 0).finished();
  qp.b = (VectorXd(2) << -1.0, -1.0).finished();  // y0 <= -1 and y0 >= 1
  EXPECT_EQ(solve_qp(qp).status, QpStatus::infeasible);
}

TEST(SolveQp, RejectsIndefiniteHessian) {
  QpProblem qp;
  qp.H = (MatrixXd(2, 2) << 1, 0, 0, -1).finished();
  qp.g = VectorXd::Zero(2);
  qp.A.resize(0, 2);
  qp.b.resize(0);
  EXPECT_EQ(solve_qp(qp).status, QpStatus::not_positive_definite);
}

TEST(SolveQp, DuplicateRowsAreHandled) {
  QpProblem qp;
  qp.H = MatrixXd::Identity(2, 2);
  qp.g = (VectorXd(2) << -4.0, -4.0).finished();
  qp.A = (MatrixXd(3, 2) << 1, 1, 1, 1, 2, 2).finished();
  qp.b = (VectorXd(3) << 2.0, 2.0, 4.0).finished();
  const QpSolution s = solve_qp(qp);
  ASSERT_EQ(s.status, QpStatus::optimal);
  EXPECT_NEAR(s.y(0), 1.0, 1e-12);
  EXPECT_NEAR(s.y(1), 1.0, 1e-12);
}

}  // namespace
}  // namespace spvs
