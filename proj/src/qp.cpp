#include "gridmpc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <vector>

#include "gridmpc/kernels.hpp"

namespace gridmpc::qp {

namespace {

// Row-wise storage of A as maximal runs of consecutive columns. The
// constraint rows this project produces are mostly dense prefixes, so
// matvec and transposed matvec reduce to long contiguous dot/axpy
// kernels.
struct RowRuns {
  struct Run {
    int row;
    int col;
    int len;
    std::size_t offset;  // into vals
  };
  int rows = 0, cols = 0;
  std::vector<Run> runs;
  std::vector<std::size_t> row_begin;  // rows+1 entries into runs
  std::vector<double> vals;

  void build(const Eigen::SparseMatrix<double>& a) {
    rows = static_cast<int>(a.rows());
    cols = static_cast<int>(a.cols());
    Eigen::SparseMatrix<double, Eigen::RowMajor> csr(a);
    csr.makeCompressed();
    runs.clear();
    vals.clear();
    row_begin.assign(static_cast<std::size_t>(rows) + 1, 0);
    const int* outer = csr.outerIndexPtr();
    const int* inner = csr.innerIndexPtr();
    const double* v = csr.valuePtr();
    for (int r = 0; r < rows; ++r) {
      row_begin[static_cast<std::size_t>(r)] = runs.size();
      int idx = outer[r];
      const int end = outer[r + 1];
      while (idx < end) {
        const int start_col = inner[idx];
        int len = 1;
        while (idx + len < end && inner[idx + len] == start_col + len) ++len;
        runs.push_back({r, start_col, len, vals.size()});
        vals.insert(vals.end(), v + idx, v + idx + len);
        idx += len;
      }
    }
    row_begin[static_cast<std::size_t>(rows)] = runs.size();
  }

  // out = A x
  void matvec(const double* x, double* out) const {
    const auto& k = kernels::ops();
    for (int r = 0; r < rows; ++r) {
      double acc = 0;
      for (std::size_t ri = row_begin[static_cast<std::size_t>(r)];
           ri < row_begin[static_cast<std::size_t>(r) + 1]; ++ri) {
        const Run& run = runs[ri];
        acc += k.dot(vals.data() + run.offset, x + run.col,
                     static_cast<std::size_t>(run.len));
      }
      out[r] = acc;
    }
  }

  // out = A' y (out zeroed here)
  void tmatvec(const double* y, double* out) const {
    const auto& k = kernels::ops();
    std::fill(out, out + cols, 0.0);
    for (const Run& run : runs) {
      const double coef = y[run.row];
      if (coef != 0.0)
        k.axpy(out + run.col, coef, vals.data() + run.offset,
               static_cast<std::size_t>(run.len));
    }
  }
};

double vec_inf(const Eigen::VectorXd& v) {
  return v.size() == 0
             ? 0.0
             : kernels::ops().inf_norm(v.data(), static_cast<std::size_t>(v.size()));
}

}  // namespace

void QpProblem::check() const {
  const Eigen::Index n = num_vars();
  if (linear_cost.size() != n) throw QpError("linear cost size mismatch");
  if (rows.cols() != n && num_rows() > 0) throw QpError("row matrix width mismatch");
  if (lower.size() != num_rows() || upper.size() != num_rows())
    throw QpError("bound size mismatch");
  for (Eigen::Index i = 0; i < n; ++i)
    if (hessian_diag[i] < 0) throw QpError("Hessian diagonal must be non-negative");
  for (Eigen::Index r = 0; r < num_rows(); ++r)
    if (!(lower[r] <= upper[r])) throw QpError("row " + std::to_string(r) + ": lower > upper");
}

struct QpSolver::Impl {
  QpProblem orig;    // as given (bounds tracked through update_bounds)
  QpProblem prob;    // Ruiz-equilibrated working copy
  QpSettings st;
  RowRuns runs;
  double rho_base = 0.0;
  Eigen::VectorXd rho, rho_inv;
  std::vector<char> eq_row, boosted;
  bool use_dense = false;

  // Scaling: x = var_scale .* x_hat, y = (row_scale .* y_hat) / cost_scale,
  // hat bounds = row_scale^-1... rows of the scaled problem are
  // diag(1/row_scale_inv)... row_scale holds E with A_hat = E A D.
  Eigen::VectorXd var_scale, row_scale;  // D diagonal (n), E diagonal (m)
  double cost_scale = 1.0;               // c

  // KKT backend
  Eigen::SparseMatrix<double> kkt;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  bool pattern_ready = false;

  // Dense normal-equations backend
  Eigen::MatrixXd dense_a;
  Eigen::LLT<Eigen::MatrixXd> llt;

  Impl(QpProblem p, QpSettings s) : orig(std::move(p)), st(s) {
    orig.check();
    const Eigen::Index n = orig.num_vars();
    const Eigen::Index m = orig.num_rows();
    switch (st.backend) {
      case QpSettings::Backend::kkt: use_dense = false; break;
      case QpSettings::Backend::dense_normal: use_dense = true; break;
      case QpSettings::Backend::automatic:
        use_dense = n <= 2048 && m <= 8192 && n * m <= (1 << 23);
        break;
    }
    equilibrate();
    runs.build(prob.rows);
    rho_base = st.rho;
    eq_row.assign(static_cast<std::size_t>(m), 0);
    boosted.assign(static_cast<std::size_t>(m), 0);
    for (Eigen::Index r = 0; r < m; ++r)
      eq_row[static_cast<std::size_t>(r)] =
          std::isfinite(prob.lower[r]) && std::isfinite(prob.upper[r]) &&
          prob.lower[r] == prob.upper[r];
    rebuild_rho();
    if (use_dense) dense_a = Eigen::MatrixXd(prob.rows);
    factorize();
  }

  // Ruiz equilibration of [[H, A'],[A, 0]] plus cost normalization.
  void equilibrate() {
    const Eigen::Index n = orig.num_vars();
    const Eigen::Index m = orig.num_rows();
    var_scale = Eigen::VectorXd::Ones(n);
    row_scale = Eigen::VectorXd::Ones(m);
    cost_scale = 1.0;

    Eigen::VectorXd h = orig.hessian_diag;
    Eigen::VectorXd q = orig.linear_cost;
    Eigen::SparseMatrix<double> a = orig.rows;

    for (int pass = 0; pass < st.scaling_iters; ++pass) {
      // Column norms over the stacked matrix: |H_jj| and column j of A.
      Eigen::VectorXd col_norm = h.cwiseAbs();
      Eigen::VectorXd row_norm = Eigen::VectorXd::Zero(m);
      for (int c = 0; c < a.outerSize(); ++c)
        for (Eigen::SparseMatrix<double>::InnerIterator it(a, c); it; ++it) {
          col_norm[c] = std::max(col_norm[c], std::fabs(it.value()));
          row_norm[it.row()] = std::max(row_norm[it.row()], std::fabs(it.value()));
        }
      Eigen::VectorXd dc(n), dr(m);
      for (Eigen::Index j = 0; j < n; ++j)
        dc[j] = col_norm[j] > 1e-12 ? 1.0 / std::sqrt(col_norm[j]) : 1.0;
      for (Eigen::Index r = 0; r < m; ++r)
        dr[r] = row_norm[r] > 1e-12 ? 1.0 / std::sqrt(row_norm[r]) : 1.0;

      h.array() *= dc.array().square();
      q.array() *= dc.array();
      a = dr.asDiagonal() * a * dc.asDiagonal();
      var_scale.array() *= dc.array();
      row_scale.array() *= dr.array();

      // Cost scaling toward unit gradient magnitude.
      double mean_h = 0;
      for (Eigen::Index j = 0; j < n; ++j) mean_h += std::fabs(h[j]);
      mean_h = n > 0 ? mean_h / static_cast<double>(n) : 0.0;
      const double denom = std::max(mean_h, vec_inf(q));
      if (denom > 1e-12) {
        const double gamma = 1.0 / denom;
        h *= gamma;
        q *= gamma;
        cost_scale *= gamma;
      }
    }

    prob = orig;
    prob.hessian_diag = h;
    prob.linear_cost = q;
    prob.rows = a;
    prob.rows.makeCompressed();
    // Scaled bounds: rows were multiplied by E on the left.
    for (Eigen::Index r = 0; r < m; ++r) {
      prob.lower[r] = orig.lower[r] * row_scale[r];
      prob.upper[r] = orig.upper[r] * row_scale[r];
    }
  }

  void set_bounds(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
    orig.lower = lower;
    orig.upper = upper;
    for (Eigen::Index r = 0; r < orig.num_rows(); ++r) {
      prob.lower[r] = lower[r] * row_scale[r];
      prob.upper[r] = upper[r] * row_scale[r];
    }
  }

  void rebuild_rho() {
    const Eigen::Index m = prob.num_rows();
    rho.resize(m);
    for (Eigen::Index r = 0; r < m; ++r) {
      double v = rho_base;
      if (eq_row[static_cast<std::size_t>(r)] && !use_dense) v *= st.eq_rho_scale;
      if (boosted[static_cast<std::size_t>(r)]) v *= st.active_rho_boost;
      rho[r] = v;
    }
    rho_inv = rho.cwiseInverse();
  }

  void rescale_rho(double factor) {
    rho_base *= factor;
    rebuild_rho();
    factorize();
  }

  void factorize() {
    const Eigen::Index n = prob.num_vars();
    const Eigen::Index m = prob.num_rows();
    if (use_dense) {
      Eigen::MatrixXd p = (dense_a.transpose() * rho.asDiagonal() * dense_a);
      p.diagonal() += prob.hessian_diag;
      p.diagonal().array() += st.sigma;
      llt.compute(p);
      if (llt.info() != Eigen::Success) throw QpError("normal-equation factorization failed");
      return;
    }
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(n + m + prob.rows.nonZeros()));
    for (Eigen::Index i = 0; i < n; ++i)
      trip.emplace_back(i, i, prob.hessian_diag[i] + st.sigma);
    for (int c = 0; c < prob.rows.outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator it(prob.rows, c); it; ++it)
        trip.emplace_back(static_cast<Eigen::Index>(n + it.row()), it.col(), it.value());
    for (Eigen::Index r = 0; r < m; ++r)
      trip.emplace_back(n + r, n + r, -rho_inv[r]);
    kkt.resize(n + m, n + m);
    kkt.setFromTriplets(trip.begin(), trip.end());
    if (!pattern_ready) {
      ldlt.analyzePattern(kkt.selfadjointView<Eigen::Lower>());
      pattern_ready = true;
    }
    ldlt.factorize(kkt.selfadjointView<Eigen::Lower>());
    if (ldlt.info() != Eigen::Success) throw QpError("KKT factorization failed");
  }

  // One ADMM linear step on the scaled problem.
  void linear_step(const Eigen::VectorXd& x, const Eigen::VectorXd& s,
                   const Eigen::VectorXd& y, Eigen::VectorXd& xt, Eigen::VectorXd& zt) const {
    const Eigen::Index n = prob.num_vars();
    const Eigen::Index m = prob.num_rows();
    if (use_dense) {
      Eigen::VectorXd rhs = st.sigma * x - prob.linear_cost;
      if (m > 0) {
        Eigen::VectorXd w = (rho.array() * s.array() - y.array()).matrix();
        Eigen::VectorXd atw(n);
        runs.tmatvec(w.data(), atw.data());
        rhs += atw;
      }
      xt = llt.solve(rhs);
      zt.resize(m);
      if (m > 0) runs.matvec(xt.data(), zt.data());
      return;
    }
    Eigen::VectorXd rhs(n + m);
    rhs.head(n) = st.sigma * x - prob.linear_cost;
    rhs.tail(m) = s - (rho_inv.array() * y.array()).matrix();
    Eigen::VectorXd sol = ldlt.solve(rhs);
    xt = sol.head(n);
    zt = s + (rho_inv.array() * (sol.tail(m).array() - y.array())).matrix();
  }

  QpSolution run(const WarmStart* warm) {
    const auto& k = kernels::ops();
    const Eigen::Index n = prob.num_vars();
    const Eigen::Index m = prob.num_rows();

    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd s(m), ax(m);
    if (warm != nullptr) {
      if (warm->primal.size() != n || warm->dual.size() != m)
        throw QpError("warm start size mismatch");
      x = warm->primal.cwiseQuotient(var_scale);
      y = cost_scale * warm->dual.cwiseQuotient(row_scale);
    }
    if (m > 0) {
      runs.matvec(x.data(), ax.data());
      k.clamp(s.data(), ax.data(), prob.lower.data(), prob.upper.data(),
              static_cast<std::size_t>(m));
    }

    Eigen::VectorXd xt(n), zt(m), w(m);
    Eigen::VectorXd y_prev = y;
    int infeas_hits = 0;
    QpSolution out;

    // Unscaled residuals and the scale factors for the relative test.
    auto residuals = [&](double& r_prim, double& r_dual, double& prim_scale,
                         double& dual_scale) {
      if (m > 0) runs.matvec(x.data(), ax.data());
      const auto einv = row_scale.cwiseInverse();
      double ax_norm = 0, s_norm = 0;
      r_prim = 0;
      for (Eigen::Index r = 0; r < m; ++r) {
        const double axr = ax[r] * einv[r];
        const double sr = s[r] * einv[r];
        ax_norm = std::max(ax_norm, std::fabs(axr));
        s_norm = std::max(s_norm, std::fabs(sr));
        r_prim = std::max(r_prim, std::fabs(axr - sr));
      }
      prim_scale = std::max(ax_norm, s_norm);

      Eigen::VectorXd hx = prob.hessian_diag.cwiseProduct(x);
      Eigen::VectorXd aty = Eigen::VectorXd::Zero(n);
      if (m > 0) runs.tmatvec(y.data(), aty.data());
      const double inv_c = 1.0 / cost_scale;
      double hx_n = 0, aty_n = 0, q_n = 0;
      r_dual = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double dj = inv_c / var_scale[j];
        const double hxj = hx[j] * dj;
        const double atyj = aty[j] * dj;
        const double qj = prob.linear_cost[j] * dj;
        hx_n = std::max(hx_n, std::fabs(hxj));
        aty_n = std::max(aty_n, std::fabs(atyj));
        q_n = std::max(q_n, std::fabs(qj));
        r_dual = std::max(r_dual, std::fabs(hxj + atyj + qj));
      }
      dual_scale = std::max({hx_n, aty_n, q_n});
    };

    const double eps_abs = st.eps_abs, eps_rel = st.eps_rel;
    const double tighten = std::clamp(st.refine_factor, 1e-6, 1.0);
    int iter = 0;
    int loose_met_iter = -1;
    double r_prim = 0, r_dual = 0, prim_scale = 0, dual_scale = 0;

    auto loose_ok = [&] {
      return r_prim <= eps_abs + eps_rel * prim_scale &&
             r_dual <= eps_abs + eps_rel * dual_scale;
    };
    auto tight_ok = [&] {
      return r_prim <= tighten * (eps_abs + eps_rel * prim_scale) &&
             r_dual <= tighten * (eps_abs + eps_rel * dual_scale);
    };

    residuals(r_prim, r_dual, prim_scale, dual_scale);
    bool converged = tight_ok();
    if (loose_ok()) loose_met_iter = 0;

    while (!converged && iter < st.max_iter) {
      ++iter;
      linear_step(x, s, y, xt, zt);
      k.add_scaled(x.data(), st.alpha, xt.data(), 1.0 - st.alpha, x.data(),
                   static_cast<std::size_t>(n));
      if (m > 0) {
        k.relax_shift(w.data(), st.alpha, zt.data(), s.data(), y.data(), rho_inv.data(),
                      static_cast<std::size_t>(m));
        k.project_dual(s.data(), y.data(), w.data(), prob.lower.data(), prob.upper.data(),
                       rho.data(), static_cast<std::size_t>(m));
      }

      const bool checkpoint = iter % st.check_interval == 0 || iter == st.max_iter;
      if (!checkpoint) continue;

      residuals(r_prim, r_dual, prim_scale, dual_scale);
      if (loose_ok() && loose_met_iter < 0) loose_met_iter = iter;
      converged = tight_ok() ||
                  (loose_met_iter >= 0 && iter - loose_met_iter >= st.refine_stall);
      if (converged) break;

      // Primal infeasibility certificate from the dual drift.
      if (m > 0) {
        Eigen::VectorXd dy = y - y_prev;
        y_prev = y;
        const double dy_norm = vec_inf(dy);
        if (dy_norm > 1e-14) {
          dy /= dy_norm;
          Eigen::VectorXd atdy(n);
          runs.tmatvec(dy.data(), atdy.data());
          const double eps_inf = 1e-6;
          if (vec_inf(atdy) <= eps_inf) {
            double support = 0;
            bool valid = true;
            for (Eigen::Index r = 0; r < m && valid; ++r) {
              const double plus = std::max(dy[r], 0.0);
              const double minus = std::min(dy[r], 0.0);
              if (plus > 1e-12) {
                if (!std::isfinite(prob.upper[r])) valid = false;
                else support += prob.upper[r] * plus;
              }
              if (minus < -1e-12) {
                if (!std::isfinite(prob.lower[r])) valid = false;
                else support += prob.lower[r] * minus;
              }
            }
            if (valid && support <= -eps_inf) ++infeas_hits;
            else infeas_hits = 0;
            if (infeas_hits >= 2) {
              out.status = SolveStatus::primal_infeasible;
              out.primal = var_scale.cwiseProduct(x);
              out.dual = dy;
              out.primal_residual = r_prim;
              out.dual_residual = r_dual;
              out.iterations = iter;
              return out;
            }
          } else {
            infeas_hits = 0;
          }
        } else {
          infeas_hits = 0;
        }
      }

      if (m > 0 && st.adaptive_rho_interval > 0 && iter % st.adaptive_rho_interval == 0) {
        bool refactor = false;
        if (st.active_rho_boost > 0) {
          int flips = 0;
          for (Eigen::Index r = 0; r < m; ++r) {
            const bool contact =
                (std::isfinite(prob.lower[r]) && s[r] - prob.lower[r] < 1e-8) ||
                (std::isfinite(prob.upper[r]) && prob.upper[r] - s[r] < 1e-8) ||
                std::fabs(y[r]) > 1e-9;
            if (contact != static_cast<bool>(boosted[static_cast<std::size_t>(r)])) {
              boosted[static_cast<std::size_t>(r)] = contact;
              ++flips;
            }
          }
          if (flips > std::max<Eigen::Index>(4, m / 100)) refactor = true;
        }
        const double pr = r_prim / std::max(prim_scale, 1e-12);
        const double dr = r_dual / std::max(dual_scale, 1e-12);
        const double factor = std::sqrt(pr / std::max(dr, 1e-12));
        double scale_by = 1.0;
        if (std::isfinite(factor) && (factor > 5.0 || factor < 0.2)) {
          const double clipped = std::clamp(factor, 1e-3, 1e3);
          if (rho_base * clipped > 1e-6 && rho_base * clipped < 1e6) scale_by = clipped;
        }
        if (scale_by != 1.0 || refactor) {
          rho_base *= scale_by;
          rebuild_rho();
          factorize();
        }
      }
    }

    out.primal = var_scale.cwiseProduct(x);
    out.dual = row_scale.cwiseProduct(y) / cost_scale;
    // Optimality is judged against the nominal tolerances; refinement
    // beyond them is best-effort.
    out.status = loose_ok() ? SolveStatus::optimal : SolveStatus::max_iter;
    out.primal_residual = r_prim;
    out.dual_residual = r_dual;
    out.iterations = iter;
    out.objective = 0.5 * out.primal.dot(orig.hessian_diag.asDiagonal() * out.primal) +
                    orig.linear_cost.dot(out.primal);
    return out;
  }
};

QpSolver::QpSolver(QpProblem problem, QpSettings settings)
    : impl_(std::make_unique<Impl>(std::move(problem), settings)) {}
QpSolver::~QpSolver() = default;
QpSolver::QpSolver(QpSolver&&) noexcept = default;
QpSolver& QpSolver::operator=(QpSolver&&) noexcept = default;

const QpProblem& QpSolver::problem() const { return impl_->orig; }

void QpSolver::update_bounds(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
  if (lower.size() != impl_->orig.num_rows() || upper.size() != impl_->orig.num_rows())
    throw QpError("bound update size mismatch");
  impl_->set_bounds(lower, upper);
}

QpSolution QpSolver::solve() { return impl_->run(nullptr); }
QpSolution QpSolver::solve(const WarmStart& warm) { return impl_->run(&warm); }

QpSolution solve(const QpProblem& problem, const QpSettings& settings,
                 const std::optional<WarmStart>& warm) {
  QpSolver solver(problem, settings);
  return warm ? solver.solve(*warm) : solver.solve();
}

KktReport kkt_check(const QpProblem& problem, const QpSolution& solution) {
  KktReport rep;
  const Eigen::VectorXd grad = problem.hessian_diag.asDiagonal() * solution.primal +
                               problem.linear_cost +
                               problem.rows.transpose() * solution.dual;
  rep.stationarity = grad.size() ? grad.lpNorm<Eigen::Infinity>() : 0.0;
  if (problem.num_rows() > 0) {
    const Eigen::VectorXd az = problem.rows * solution.primal;
    for (Eigen::Index r = 0; r < problem.num_rows(); ++r) {
      const double low_viol = problem.lower[r] - az[r];
      const double up_viol = az[r] - problem.upper[r];
      rep.feasibility = std::max({rep.feasibility, low_viol, up_viol});
      // y_r > 0 pairs with the upper bound, y_r < 0 with the lower; a
      // multiplier pushing on an infinite bound is itself a violation.
      const double y = solution.dual[r];
      if (y > 0) {
        rep.complementarity =
            std::max(rep.complementarity, std::isfinite(problem.upper[r])
                                              ? y * std::fabs(problem.upper[r] - az[r])
                                              : y);
      } else if (y < 0) {
        rep.complementarity =
            std::max(rep.complementarity, std::isfinite(problem.lower[r])
                                              ? -y * std::fabs(az[r] - problem.lower[r])
                                              : -y);
      }
    }
    rep.feasibility = std::max(rep.feasibility, 0.0);
  }
  return rep;
}

std::string dump_problem(const QpProblem& problem) {
  std::ostringstream os;
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  os << "qp " << problem.num_vars() << " " << problem.num_rows() << "\n";
  os << "h";
  for (Eigen::Index i = 0; i < problem.num_vars(); ++i) os << " " << num(problem.hessian_diag[i]);
  os << "\nq";
  for (Eigen::Index i = 0; i < problem.num_vars(); ++i) os << " " << num(problem.linear_cost[i]);
  os << "\n";
  for (int c = 0; c < problem.rows.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator it(problem.rows, c); it; ++it)
      os << "a " << it.row() << " " << it.col() << " " << num(it.value()) << "\n";
  for (Eigen::Index r = 0; r < problem.num_rows(); ++r)
    os << "b " << r << " " << num(problem.lower[r]) << " " << num(problem.upper[r]) << "\n";
  return os.str();
}

}  // namespace gridmpc::qp
