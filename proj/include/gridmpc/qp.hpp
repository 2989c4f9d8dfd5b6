#pragma once

// Sparse convex QP solver:
//
//   min 0.5 z' H z + q' z   s.t.  l <= A z <= u
//
// with H diagonal PSD (the only form this project needs). Operator
// splitting (ADMM) with over-relaxation; the linear-system step runs
// either through a sparse LDLT of the full KKT system or, for small
// dense-ish problems, through a dense Cholesky of the normal equations
// H + sigma I + A' diag(rho) A. Both factorizations persist across
// bound updates, so receding-horizon resolves only pay for iterations.
//
// Equalities are rows with l == u; one-sided rows use +-infinity.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

namespace gridmpc::qp {

struct QpError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct QpProblem {
  Eigen::VectorXd hessian_diag;       // H >= 0, size n
  Eigen::VectorXd linear_cost;        // q, size n
  Eigen::SparseMatrix<double> rows;   // A, size m x n (column-major)
  Eigen::VectorXd lower, upper;       // l <= u row-wise

  Eigen::Index num_vars() const { return hessian_diag.size(); }
  Eigen::Index num_rows() const { return rows.rows(); }
  void check() const;  // throws QpError on malformed problems
};

enum class SolveStatus { optimal, max_iter, primal_infeasible };

struct QpSolution {
  Eigen::VectorXd primal;  // z
  Eigen::VectorXd dual;    // y, one per row
  SolveStatus status = SolveStatus::max_iter;
  double primal_residual = 0;
  double dual_residual = 0;
  double objective = 0;
  int iterations = 0;
};

struct QpSettings {
  double eps_abs = 1e-6;
  double eps_rel = 1e-6;
  int max_iter = 20000;
  double rho = 0.1;            // constraint step
  double sigma = 1e-6;         // primal regularization
  double alpha = 1.6;          // over-relaxation
  int adaptive_rho_interval = 50;
  int check_interval = 10;
  double eq_rho_scale = 1e3;   // stiffer step on equality rows (KKT backend)
  // Keep iterating toward refine_factor * eps once the nominal
  // tolerance is met (bounded by refine_stall extra checkpoints), so
  // reported optima sit well inside the tolerance.
  double refine_factor = 0.02;
  int refine_stall = 500;
  // Ruiz equilibration passes over [[H, A'],[A, 0]] (0 disables).
  int scaling_iters = 10;
  // When positive, rows detected active get their step scaled by this
  // factor at every adaptation checkpoint (helps long active tubes).
  double active_rho_boost = 0.0;
  enum class Backend { automatic, kkt, dense_normal } backend = Backend::automatic;
};

struct WarmStart {
  Eigen::VectorXd primal;
  Eigen::VectorXd dual;
};

/// Persistent solver: symbolic/numeric factorizations are built once
/// and reused across update_bounds/solve cycles.
class QpSolver {
 public:
  QpSolver(QpProblem problem, QpSettings settings = {});
  ~QpSolver();
  QpSolver(QpSolver&&) noexcept;
  QpSolver& operator=(QpSolver&&) noexcept;

  const QpProblem& problem() const;
  void update_bounds(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper);

  QpSolution solve();
  QpSolution solve(const WarmStart& warm);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// One-shot interface.
QpSolution solve(const QpProblem& problem, const QpSettings& settings = {},
                 const std::optional<WarmStart>& warm = std::nullopt);

struct KktReport {
  double stationarity = 0;     // ||H z + q + A' y||_inf
  double feasibility = 0;      // max bound violation of A z
  double complementarity = 0;  // max |y_i| * slack_i mismatch
  bool ok(double tol = 1e-5) const {
    return stationarity <= tol && feasibility <= tol && complementarity <= tol;
  }
};

/// Independent recomputation of the optimality conditions.
KktReport kkt_check(const QpProblem& problem, const QpSolution& solution);

/// Text dump (triplet rows) for external cross-checking.
std::string dump_problem(const QpProblem& problem);

}  // namespace gridmpc::qp
