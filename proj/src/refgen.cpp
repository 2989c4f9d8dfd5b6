#include "gridmpc/refgen.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace gridmpc {

double saturate(double a, bool soft, double lo, double hi) {
  if (soft) return a;
  if (a <= lo) return lo;
  if (a >= hi) return hi;
  return a;
}

double reference_input(const NetworkCase& cse, int bus, double freq_ref, double v) {
  const BusControl& p = cse.config().at(bus);
  double raw = 0;
  if (freq_ref > p.thr_max) {
    raw = std::min(0.0, p.gain_up * (p.omega_max - freq_ref) / (freq_ref - p.thr_max) - v);
  } else if (freq_ref < p.thr_min) {
    raw = std::max(0.0, p.gain_down * (p.omega_min - freq_ref) / (p.thr_min - freq_ref) - v);
  }
  return saturate(raw, p.soft_input, p.input_min, p.input_max);
}

namespace {

// Simultaneous solution of the algebraic frequency row and the safety
// law at one step of a zero-inertia constrained bus. `drive` is the
// input-free part of the row (line inflow plus forecast injection).
void coupled_zero_inertia(const BusControl& p, double damping, double drive, double& freq,
                          double& input) {
  const double interior = drive / damping;
  if (interior >= p.omega_min && interior <= p.omega_max) {
    // Ties at the boundary resolve here; the law contributes nothing.
    freq = interior;
    input = 0;
    return;
  }
  if (interior > p.omega_max) {
    input = saturate(damping * p.omega_max - drive, p.soft_input, p.input_min, p.input_max);
  } else {
    input = saturate(damping * p.omega_min - drive, p.soft_input, p.input_min, p.input_max);
  }
  freq = (drive + input) / damping;
}

}  // namespace

ReferenceTrajectory generate_reference(const NetworkCase& cse, const LinearModel& model,
                                       const Eigen::VectorXd& angles,
                                       const Eigen::VectorXd& freqs,
                                       const Eigen::MatrixXd& inj_forecast) {
  const ControlConfig& cfg = cse.config();
  const int n = cse.bus_count();
  const int n_steps = cfg.horizon_steps;
  const double T = cfg.period;

  ReferenceTrajectory ref;
  ref.angles.resize(cse.line_count(), n_steps + 1);
  ref.freqs.resize(n, n_steps + 1);
  ref.inputs = Eigen::MatrixXd::Zero(n, n_steps);

  std::vector<char> constrained(static_cast<std::size_t>(n), 0);
  for (int b : cfg.freq_constrained) constrained[static_cast<std::size_t>(b)] = 1;

  Eigen::VectorXd lam = angles.array().sin().matrix();
  Eigen::VectorXd w = freqs;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd flow(n);

  for (int k = 0; k <= n_steps; ++k) {
    const int col = std::min(k, n_steps - 1);
    flow.noalias() = model.flow_map() * lam;
    u.setZero();
    // Zero-inertia buses: frequency follows the algebraic row; for
    // constrained ones the input couples back into it.
    for (int i : cse.loads()) {
      const double drive = -flow[i] + inj_forecast(i, col);
      if (constrained[static_cast<std::size_t>(i)]) {
        coupled_zero_inertia(cfg.at(i), cse.damping()[i], drive, w[i], u[i]);
      } else {
        w[i] = drive / cse.damping()[i];
      }
    }
    // Generator buses: the law reads the current reference frequency.
    for (int i : cse.generators()) {
      if (!constrained[static_cast<std::size_t>(i)]) continue;
      const double v = -flow[i] + inj_forecast(i, col) - cse.damping()[i] * w[i];
      u[i] = reference_input(cse, i, w[i], v);
    }
    ref.freqs.col(k) = w;
    ref.angles.col(k) = lam;
    if (k == n_steps) break;
    ref.inputs.col(k) = u;
    lam += T * (model.incidence() * w);
    for (int i : cse.generators())
      w[i] += T * (-cse.damping()[i] * w[i] - flow[i] + inj_forecast(i, k) + u[i]) /
              cse.inertia()[i];
  }

  // Qualification: buses that start safe with soft input limits must
  // stay within their hard bounds along the whole rollout.
  ref.feasible = true;
  for (int b : cfg.freq_constrained) {
    const BusControl& p = cfg.at(b);
    const bool hard_rows = freqs[b] >= p.omega_min && freqs[b] <= p.omega_max && p.soft_input;
    if (!hard_rows) continue;
    for (int k = 1; k <= n_steps; ++k) {
      if (ref.freqs(b, k) < p.omega_min - 1e-12 || ref.freqs(b, k) > p.omega_max + 1e-12) {
        ref.feasible = false;
        std::ostringstream os;
        os << "reference frequency of bus " << cse.buses()[static_cast<std::size_t>(b)].id
           << " leaves [" << p.omega_min << ", " << p.omega_max << "] at step " << k
           << " (value " << ref.freqs(b, k) << "); a smaller period T may be needed";
        ref.violation = os.str();
        break;
      }
    }
    if (!ref.feasible) break;
  }

  // Period estimate from the observed per-step frequency drift of the
  // constrained generator buses.
  double drift = 0;
  for (int b : cfg.freq_constrained)
    for (int k = 0; k < n_steps; ++k)
      drift = std::max(drift, std::fabs(ref.freqs(b, k + 1) - ref.freqs(b, k)));
  const double c_est = drift / T;
  double bound = std::numeric_limits<double>::infinity();
  for (int b : cfg.freq_constrained) {
    if (cse.inertia()[b] <= 0) continue;
    const BusControl& p = cfg.at(b);
    const double up = cse.inertia()[b] * (p.omega_max - p.thr_max) /
                      (p.gain_up + cse.inertia()[b] * c_est);
    const double dn = cse.inertia()[b] * (p.thr_min - p.omega_min) /
                      (p.gain_down + cse.inertia()[b] * c_est);
    bound = std::min({bound, up, dn});
  }
  ref.max_step_bound = bound;
  return ref;
}

}  // namespace gridmpc
