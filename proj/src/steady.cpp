#include "gridmpc/steady.hpp"

#include <cmath>
#include <numbers>

namespace gridmpc {

namespace {
constexpr double kHalfPi = std::numbers::pi / 2.0;
}

std::pair<double, Eigen::VectorXd> sync_frequency(const NetworkCase& cse,
                                                  const Eigen::VectorXd& injection) {
  const double w = injection.sum() / cse.damping().sum();
  Eigen::VectorXd imbalance = injection - w * cse.damping();
  return {w, std::move(imbalance)};
}

SyncCheck sync_condition(const NetworkCase& cse, const Eigen::VectorXd& imbalance) {
  const double scale = imbalance.norm();
  if (std::fabs(imbalance.sum()) > 1e-9 * std::max(scale, 1.0))
    throw SteadyStateError("imbalance is not orthogonal to the all-ones vector");

  const int n = cse.bus_count();
  // Pseudo-inverse action by deflation: (L + (1/n) 11^T) z = p has the
  // same solution as L^+ p on the zero-mean subspace, up to a constant
  // shift that the edge differences ignore.
  Eigen::MatrixXd lap = laplacian(cse);
  lap.array() += 1.0 / n;
  Eigen::VectorXd z = lap.ldlt().solve(imbalance);
  z.array() -= z.mean();

  SyncCheck out;
  for (int k = 0; k < cse.line_count(); ++k) {
    auto [i, j] = cse.line_ends(k);
    out.value = std::max(out.value, std::fabs(z[i] - z[j]));
  }
  out.holds = out.value < 1.0;
  return out;
}

Eigen::VectorXd equilibrium_angles(const NetworkCase& cse, const Eigen::VectorXd& imbalance) {
  const int n = cse.bus_count();
  const int m = cse.line_count();
  const Eigen::MatrixXd d = incidence_matrix(cse);
  const Eigen::VectorXd& b = cse.susceptance();

  // Solve D^T Y_b sin(D theta) = imbalance with theta_n pinned to zero.
  // Damped Newton; the Jacobian D^T Y_b diag(cos(D theta)) D is reduced
  // by dropping the pinned coordinate.
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(n);
  auto residual = [&](const Eigen::VectorXd& th) -> Eigen::VectorXd {
    const Eigen::VectorXd lam = d * th;
    return d.transpose() * (b.array() * lam.array().sin()).matrix() - imbalance;
  };

  Eigen::VectorXd res = residual(theta);
  double res_norm = res.lpNorm<Eigen::Infinity>();
  constexpr double kTol = 1e-10;
  constexpr int kMaxIter = 100;
  int iter = 0;
  while (res_norm > kTol) {
    if (++iter > kMaxIter)
      throw SteadyStateError(
          "equilibrium Newton did not converge; the case may violate the "
          "synchronization condition");
    const Eigen::VectorXd lam = d * theta;
    Eigen::MatrixXd jac =
        d.transpose() * (b.array() * lam.array().cos()).matrix().asDiagonal() * d;
    Eigen::MatrixXd jr = jac.topLeftCorner(n - 1, n - 1);
    Eigen::VectorXd rr = res.head(n - 1);
    Eigen::VectorXd step = jr.partialPivLu().solve(rr);
    double damp = 1.0;
    for (;;) {
      Eigen::VectorXd trial = theta;
      trial.head(n - 1) -= damp * step;
      Eigen::VectorXd trial_res = residual(trial);
      const double trial_norm = trial_res.lpNorm<Eigen::Infinity>();
      if (trial_norm < res_norm || damp < 1e-8) {
        theta = std::move(trial);
        res = std::move(trial_res);
        res_norm = trial_norm;
        break;
      }
      damp *= 0.5;
    }
  }

  Eigen::VectorXd angles = d * theta;
  for (int k = 0; k < m; ++k)
    if (!(std::fabs(angles[k]) < kHalfPi))
      throw SteadyStateError("equilibrium angle on line " +
                             std::to_string(cse.lines()[static_cast<std::size_t>(k)].id) +
                             " leaves the |angle| < pi/2 box");
  return angles;
}

double line_potential(double angle, double eq_angle) {
  return std::cos(eq_angle) - std::cos(angle) - angle * std::sin(eq_angle) +
         eq_angle * std::sin(eq_angle);
}

double energy(const NetworkCase& cse, const Equilibrium& eq, const Eigen::VectorXd& angles,
              const Eigen::VectorXd& freqs_gen) {
  const auto& gens = cse.generators();
  double kinetic = 0;
  for (std::size_t g = 0; g < gens.size(); ++g) {
    const double dw = freqs_gen[static_cast<Eigen::Index>(g)] - eq.sync_freq;
    kinetic += cse.inertia()[gens[g]] * dw * dw;
  }
  double potential = 0;
  for (int k = 0; k < cse.line_count(); ++k)
    potential += cse.susceptance()[k] * line_potential(angles[k], eq.angles[k]);
  return 0.5 * kinetic + potential;
}

double max_safe_energy(const NetworkCase& cse, const Equilibrium& eq) {
  // The potential is a per-line sum and every line term is minimized
  // (value 0) at the equilibrium angle, so the boundary minimum pins a
  // single line at +-pi/2 and leaves the rest at their equilibria.
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < cse.line_count(); ++k) {
    const double b = cse.susceptance()[k];
    best = std::min(best, b * line_potential(kHalfPi, eq.angles[k]));
    best = std::min(best, b * line_potential(-kHalfPi, eq.angles[k]));
  }
  return best;
}

Equilibrium compute_equilibrium(const NetworkCase& cse, const Eigen::VectorXd& injection) {
  Equilibrium eq;
  auto [w, imbalance] = sync_frequency(cse, injection);
  eq.sync_freq = w;
  eq.imbalance = std::move(imbalance);
  const SyncCheck chk = sync_condition(cse, eq.imbalance);
  eq.condition_value = chk.value;
  if (!chk.holds)
    throw SteadyStateError("synchronization condition fails (value " +
                           std::to_string(chk.value) + " >= 1)");
  eq.angles = equilibrium_angles(cse, eq.imbalance);
  eq.max_safe_energy = max_safe_energy(cse, eq);
  return eq;
}

Equilibrium compute_equilibrium(const NetworkCase& cse) {
  return compute_equilibrium(cse, cse.injection());
}

bool in_energy_region(const NetworkCase& cse, const Equilibrium& eq, double level,
                      const Eigen::VectorXd& angles, const Eigen::VectorXd& freqs_gen) {
  for (int k = 0; k < angles.size(); ++k)
    if (std::fabs(angles[k]) > kHalfPi) return false;
  return energy(cse, eq, angles, freqs_gen) <= level;
}

}  // namespace gridmpc
