#pragma once

// Dense strictly convex QP solved with the Goldfarb-Idnani dual active-set
// method:
//
//   minimize    1/2 y^T H y + g^T y
//   subject to  A y <= b,  lb <= y <= ub
//
// H must be symmetric positive definite. The dual method starts from the
// unconstrained minimizer and adds violated constraints one at a time, so no
// feasible starting point is needed and infeasibility is detected directly.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace spvs {

struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd A;  // may have zero rows
  Eigen::VectorXd b;
  Eigen::VectorXd lb;  // -inf entries are skipped
  Eigen::VectorXd ub;  // +inf entries are skipped
};

enum class QpStatus { optimal, infeasible, not_positive_definite, iteration_limit };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::infeasible: return "infeasible";
    case QpStatus::not_positive_definite: return "not_positive_definite";
    case QpStatus::iteration_limit: return "iteration_limit";
  }
  return "unknown";
}

struct QpSolution {
  QpStatus status = QpStatus::optimal;
  Eigen::VectorXd y;
  Eigen::VectorXd row_multipliers;    // >= 0, one per row of A
  Eigen::VectorXd lower_multipliers;  // >= 0
  Eigen::VectorXd upper_multipliers;  // >= 0
  double objective = 0.0;
  int iterations = 0;
  int active_count = 0;
};

struct QpOptions {
  int max_iterations = 2000;
  double feasibility_tolerance = 1e-10;
};

namespace detail {

// Constraint i in the internal form n_i^T y + c_i >= 0.
class GoldfarbIdnani {
 public:
  GoldfarbIdnani(const Eigen::MatrixXd& normals, const Eigen::VectorXd& offsets, const QpOptions& opt)
      : normals_(normals), offsets_(offsets), opt_(opt) {}

  QpStatus solve(const Eigen::MatrixXd& H, const Eigen::VectorXd& g, Eigen::VectorXd& y, Eigen::VectorXd& lambda,
                 int& iterations) {
    const int n = static_cast<int>(g.size());
    const int m = static_cast<int>(offsets_.size());
    Eigen::LLT<Eigen::MatrixXd> chol(H);
    if (chol.info() != Eigen::Success) return QpStatus::not_positive_definite;

    // J = L^-T, R upper triangular; active normals satisfy J^T N_active = [R; 0]
    J_ = chol.matrixU().solve(Eigen::MatrixXd::Identity(n, n));
    R_.setZero(n, n);
    y = -chol.solve(g);
    active_.clear();
    u_.setZero(n + 1);
    lambda.setZero(m);
    std::vector<char> is_active(m, 0);
    std::vector<char> excluded(m, 0);
    double r_norm = 1.0;

    Eigen::VectorXd s(m), d(n), z(n), r(n);
    iterations = 0;
    while (true) {
      if (++iterations > opt_.max_iterations) return QpStatus::iteration_limit;
      // most violated inactive constraint
      int p = -1;
      double worst = -opt_.feasibility_tolerance;
      for (int i = 0; i < m; ++i) {
        if (is_active[i] || excluded[i]) continue;
        s(i) = normals_.col(i).dot(y) + offsets_(i);
        const double scaled = s(i) / std::max(1.0, normals_.col(i).norm());
        if (scaled < worst) {
          worst = scaled;
          p = i;
        }
      }
      if (p < 0) break;
      const Eigen::VectorXd np = normals_.col(p);
      const int q0 = static_cast<int>(active_.size());
      u_(q0) = 0.0;

      bool added = false;
      while (!added) {
        const int q = static_cast<int>(active_.size());
        d = J_.transpose() * np;
        z = J_.rightCols(n - q) * d.tail(n - q);
        if (q > 0) r.head(q) = R_.topLeftCorner(q, q).triangularView<Eigen::Upper>().solve(d.head(q));

        // partial (dual) step that drops a blocking active constraint
        double t1 = std::numeric_limits<double>::infinity();
        int drop = -1;
        for (int k = 0; k < q; ++k) {
          if (r(k) > 0.0 && u_(k) / r(k) < t1) {
            t1 = u_(k) / r(k);
            drop = k;
          }
        }
        // full (primal) step that makes p active
        double t2 = std::numeric_limits<double>::infinity();
        const double zn = z.dot(np);
        if (z.squaredNorm() > std::numeric_limits<double>::epsilon() && zn > 0.0) t2 = -s(p) / zn;
        const double t = std::min(t1, t2);
        if (!std::isfinite(t)) return QpStatus::infeasible;

        if (!std::isfinite(t2)) {
          u_.head(q) -= t * r.head(q);
          u_(q) += t;
          is_active[active_[drop]] = 0;
          remove_active(drop, n);
          continue;
        }
        y += t * z;
        u_.head(q) -= t * r.head(q);
        u_(q) += t;
        if (t == t2) {
          if (append_active(d, q, n, r_norm)) {
            active_.push_back(p);
            is_active[p] = 1;
          } else {
            // linearly dependent on the active set; give up on this row
            excluded[p] = 1;
            u_(q) = 0.0;
          }
          added = true;
        } else {
          is_active[active_[drop]] = 0;
          remove_active(drop, n);
          s(p) = np.dot(y) + offsets_(p);
        }
      }
    }
    for (std::size_t k = 0; k < active_.size(); ++k) lambda(active_[k]) = u_(static_cast<Eigen::Index>(k));
    return QpStatus::optimal;
  }

 private:
  // Rotates d so that only its first q+1 entries are nonzero, updating J, and
  // appends the new column to R.
  bool append_active(Eigen::VectorXd& d, int q, int n, double& r_norm) {
    for (int j = n - 1; j >= q + 1; --j) {
      double cc = d(j - 1);
      double ss = d(j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      d(j) = 0.0;
      ss /= h;
      cc /= h;
      if (cc < 0.0) {
        cc = -cc;
        ss = -ss;
        d(j - 1) = -h;
      } else {
        d(j - 1) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (int k = 0; k < n; ++k) {
        const double t1 = J_(k, j - 1);
        const double t2 = J_(k, j);
        J_(k, j - 1) = t1 * cc + t2 * ss;
        J_(k, j) = xny * (t1 + J_(k, j - 1)) - t2;
      }
    }
    if (std::abs(d(q)) <= std::numeric_limits<double>::epsilon() * r_norm) return false;
    R_.col(q).head(q + 1) = d.head(q + 1);
    r_norm = std::max(r_norm, std::abs(d(q)));
    return true;
  }

  // Removes active entry k (its multiplier shifts with it) and restores the
  // triangular structure of R with Givens rotations.
  void remove_active(int k, int n) {
    const int q = static_cast<int>(active_.size());
    for (int i = k; i < q - 1; ++i) {
      active_[i] = active_[i + 1];
      u_(i) = u_(i + 1);
      R_.col(i) = R_.col(i + 1);
    }
    u_(q - 1) = u_(q);
    u_(q) = 0.0;
    active_.pop_back();
    R_.col(q - 1).setZero();
    const int qn = q - 1;
    for (int j = k; j < qn; ++j) {
      double cc = R_(j, j);
      double ss = R_(j + 1, j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      cc /= h;
      ss /= h;
      R_(j + 1, j) = 0.0;
      if (cc < 0.0) {
        R_(j, j) = -h;
        cc = -cc;
        ss = -ss;
      } else {
        R_(j, j) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (int c = j + 1; c < qn; ++c) {
        const double t1 = R_(j, c);
        const double t2 = R_(j + 1, c);
        R_(j, c) = t1 * cc + t2 * ss;
        R_(j + 1, c) = xny * (t1 + R_(j, c)) - t2;
      }
      for (int c = 0; c < n; ++c) {
        const double t1 = J_(c, j);
        const double t2 = J_(c, j + 1);
        J_(c, j) = t1 * cc + t2 * ss;
        J_(c, j + 1) = xny * (J_(c, j) + t1) - t2;
      }
    }
  }

  const Eigen::MatrixXd& normals_;
  const Eigen::VectorXd& offsets_;
  QpOptions opt_;
  Eigen::MatrixXd J_;
  Eigen::MatrixXd R_;
  Eigen::VectorXd u_;
  std::vector<int> active_;
};

}  // namespace detail

inline QpSolution solve_qp(const QpProblem& qp, const QpOptions& opt = {}) {
  const int n = static_cast<int>(qp.g.size());
  const int rows = static_cast<int>(qp.A.rows());
  std::vector<int> lower, upper;
  for (int i = 0; i < n; ++i) {
    if (qp.lb.size() == n && std::isfinite(qp.lb(i))) lower.push_back(i);
    if (qp.ub.size() == n && std::isfinite(qp.ub(i))) upper.push_back(i);
  }
  const int m = rows + static_cast<int>(lower.size() + upper.size());
  Eigen::MatrixXd normals(n, m);
  Eigen::VectorXd offsets(m);
  if (rows > 0) {
    normals.leftCols(rows) = -qp.A.transpose();
    offsets.head(rows) = qp.b;
  }
  int col = rows;
  for (int i : lower) {
    normals.col(col).setZero();
    normals(i, col) = 1.0;
    offsets(col++) = -qp.lb(i);
  }
  for (int i : upper) {
    normals.col(col).setZero();
    normals(i, col) = -1.0;
    offsets(col++) = qp.ub(i);
  }

  QpSolution sol;
  Eigen::VectorXd lambda;
  detail::GoldfarbIdnani gi(normals, offsets, opt);
  sol.status = gi.solve(qp.H, qp.g, sol.y, lambda, sol.iterations);
  if (sol.status == QpStatus::not_positive_definite) return sol;
  sol.row_multipliers = lambda.head(rows);
  sol.lower_multipliers.setZero(n);
  sol.upper_multipliers.setZero(n);
  col = rows;
  for (int i : lower) sol.lower_multipliers(i) = lambda(col++);
  for (int i : upper) sol.upper_multipliers(i) = lambda(col++);
  sol.active_count = static_cast<int>((lambda.array() > 0.0).count());
  sol.objective = 0.5 * sol.y.dot(qp.H * sol.y) + qp.g.dot(sol.y);
  return sol;
}

}  // namespace spvs
