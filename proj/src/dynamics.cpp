#include "gridmpc/dynamics.hpp"

#include <cmath>

namespace gridmpc {

void algebraic_frequencies(const NetworkCase& cse, const Eigen::VectorXd& angles,
                           const Eigen::VectorXd& u, const Eigen::VectorXd& p,
                           Eigen::VectorXd& freqs) {
  const Eigen::MatrixXd d = incidence_matrix(cse);
  const Eigen::VectorXd flow =
      d.transpose() * (cse.susceptance().array() * angles.array().sin()).matrix();
  for (int i : cse.loads()) freqs[i] = (-flow[i] + p[i] + u[i]) / cse.damping()[i];
}

NonlinearStepper::NonlinearStepper(const NetworkCase& cse)
    : cse_(&cse), incidence_(incidence_sparse(cse)) {
  flow_map_ = incidence_.transpose() *
              Eigen::SparseMatrix<double>(cse.susceptance().asDiagonal());
}

void NonlinearStepper::eval(const Eigen::VectorXd& angles, const Eigen::VectorXd& freqs_gen,
                            const Eigen::VectorXd& u, const Eigen::VectorXd& p,
                            Eigen::VectorXd& d_angles, Eigen::VectorXd& d_freqs_gen,
                            Eigen::VectorXd& freqs_full) const {
  const NetworkCase& cse = *cse_;
  const Eigen::VectorXd flow = flow_map_ * angles.array().sin().matrix();
  const auto& gens = cse.generators();
  for (std::size_t g = 0; g < gens.size(); ++g)
    freqs_full[gens[g]] = freqs_gen[static_cast<Eigen::Index>(g)];
  for (int i : cse.loads())
    freqs_full[i] = (-flow[i] + p[i] + u[i]) / cse.damping()[i];
  d_angles.noalias() = incidence_ * freqs_full;
  d_freqs_gen.resize(static_cast<Eigen::Index>(gens.size()));
  for (std::size_t g = 0; g < gens.size(); ++g) {
    const int i = gens[g];
    d_freqs_gen[static_cast<Eigen::Index>(g)] =
        (-cse.damping()[i] * freqs_full[i] - flow[i] + p[i] + u[i]) / cse.inertia()[i];
  }
}

SystemState NonlinearStepper::step(const SystemState& state, const Eigen::VectorXd& u,
                                   const Eigen::VectorXd& p, double h) const {
  const NetworkCase& cse = *cse_;
  const auto& gens = cse.generators();
  const Eigen::Index ng = static_cast<Eigen::Index>(gens.size());
  Eigen::VectorXd wg(ng);
  for (Eigen::Index g = 0; g < ng; ++g)
    wg[g] = state.freqs[gens[static_cast<std::size_t>(g)]];

  Eigen::VectorXd k1a, k1w, k2a, k2w, k3a, k3w, k4a, k4w;
  Eigen::VectorXd full = state.freqs;
  eval(state.angles, wg, u, p, k1a, k1w, full);
  eval(state.angles + 0.5 * h * k1a, wg + 0.5 * h * k1w, u, p, k2a, k2w, full);
  eval(state.angles + 0.5 * h * k2a, wg + 0.5 * h * k2w, u, p, k3a, k3w, full);
  eval(state.angles + h * k3a, wg + h * k3w, u, p, k4a, k4w, full);

  SystemState next;
  next.angles = state.angles + (h / 6.0) * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
  const Eigen::VectorXd wg_next = wg + (h / 6.0) * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);

  next.freqs.resize(cse.bus_count());
  for (Eigen::Index g = 0; g < ng; ++g)
    next.freqs[gens[static_cast<std::size_t>(g)]] = wg_next[g];
  const Eigen::VectorXd flow = flow_map_ * next.angles.array().sin().matrix();
  for (int i : cse.loads())
    next.freqs[i] = (-flow[i] + p[i] + u[i]) / cse.damping()[i];

  if (!next.angles.allFinite() || !next.freqs.allFinite())
    throw DynamicsError("nonlinear step produced a non-finite state");
  return next;
}

SystemState step_nonlinear(const NetworkCase& cse, const SystemState& state,
                           const Eigen::VectorXd& u, const Eigen::VectorXd& p, double h) {
  return NonlinearStepper(cse).step(state, u, p, h);
}

bool angles_consistent(const NetworkCase& cse, const Eigen::VectorXd& angles) {
  const Eigen::MatrixXd d = incidence_matrix(cse);
  const Eigen::VectorXd theta = d.colPivHouseholderQr().solve(angles);
  return (d * theta - angles).lpNorm<Eigen::Infinity>() <= 1e-9;
}

LinearModel::LinearModel(const NetworkCase& cse)
    : cse_(&cse), incidence_(incidence_sparse(cse)) {
  flow_map_ = incidence_.transpose() *
              Eigen::SparseMatrix<double>(cse.susceptance().asDiagonal());
}

void LinearModel::close_algebraic(const Eigen::VectorXd& angles, const Eigen::VectorXd& u,
                                  const Eigen::VectorXd& p, Eigen::VectorXd& freqs) const {
  const Eigen::VectorXd flow = flow_map_ * angles;
  for (int i : cse_->loads())
    freqs[i] = (-flow[i] + p[i] + u[i]) / cse_->damping()[i];
}

void LinearModel::rollout(const Eigen::VectorXd& angles0, const Eigen::VectorXd& freqs0,
                          const Eigen::MatrixXd& U, const Eigen::MatrixXd& P,
                          Eigen::MatrixXd& angles, Eigen::MatrixXd& freqs) const {
  const NetworkCase& cse = *cse_;
  const int n_steps = cse.config().horizon_steps;
  const double T = cse.config().period;

  angles.resize(cse.line_count(), n_steps + 1);
  freqs.resize(cse.bus_count(), n_steps + 1);

  Eigen::VectorXd lam = angles0;
  Eigen::VectorXd w = freqs0;
  Eigen::VectorXd flow(cse.bus_count());
  for (int k = 0; k <= n_steps; ++k) {
    const int col = std::min(k, n_steps - 1);  // ZOH extension for the closure at N
    flow.noalias() = flow_map_ * lam;
    for (int i : cse.loads())
      w[i] = (-flow[i] + P(i, col) + U(i, col)) / cse.damping()[i];
    angles.col(k) = lam;
    freqs.col(k) = w;
    if (k == n_steps) break;
    lam += T * (incidence_ * w);
    for (int i : cse.generators())
      w[i] += T * (-cse.damping()[i] * w[i] - flow[i] + P(i, k) + U(i, k)) /
              cse.inertia()[i];
  }
}

DiscreteTrajectory predict_linear(const NetworkCase& cse, const Eigen::VectorXd& angles0,
                                  const Eigen::VectorXd& freqs0, const Eigen::MatrixXd& U,
                                  const Eigen::MatrixXd& P) {
  LinearModel model(cse);
  DiscreteTrajectory traj;
  traj.inputs = U;
  traj.injections = P;
  model.rollout(angles0.array().sin().matrix(), freqs0, U, P, traj.angles, traj.freqs);
  return traj;
}

}  // namespace gridmpc
