#include "gridmpc/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>

namespace gridmpc::mpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Slots {
  std::vector<int> ctrl;          // controlled buses, slot order
  std::vector<int> cons;          // frequency-constrained buses, wslot order
  std::vector<int> wslot_of_slot; // -1 when the slot is unconstrained
  std::vector<char> is_load;      // per bus: zero inertia
};

Slots make_slots(const NetworkCase& cse) {
  Slots s;
  s.ctrl = cse.config().controlled;
  s.cons = cse.config().freq_constrained;
  s.wslot_of_slot.assign(s.ctrl.size(), -1);
  for (std::size_t w = 0; w < s.cons.size(); ++w) {
    for (std::size_t c = 0; c < s.ctrl.size(); ++c)
      if (s.ctrl[c] == s.cons[w]) s.wslot_of_slot[c] = static_cast<int>(w);
  }
  s.is_load.assign(static_cast<std::size_t>(cse.bus_count()), 0);
  for (int i : cse.loads()) s.is_load[static_cast<std::size_t>(i)] = 1;
  return s;
}

enum class RowKind : unsigned char {
  init_angle,  // a = line
  init_freq,   // a = bus
  dyn_angle,   // a = line, b = k
  dyn_gen,     // a = bus, b = k
  dyn_alg,     // a = bus, b = k (k up to N)
  mag_up,      // a = slot, b = k
  mag_lo,
  beta_pos,
  freq_up,     // a = wslot, b = k (1..N)
  freq_lo,
  gamma_pos,
  phi_w,       // a = slot, b = k (0..N-1)
  phi_u,
};

struct RowInfo {
  RowKind kind;
  int a = 0;
  int b = 0;
  double scale = 1.0;
};

bool interval_contains_zero(const BusControl& p) {
  return p.soft_input || (p.input_min <= 0 && 0 <= p.input_max);
}

// Shared bound filler: both formulations expose the same row kinds;
// `cval` supplies the constant part of frequency expressions (zero for
// the stacked form, the zero-input rollout for the condensed one).
template <typename ConstPart>
void fill_row_bounds(const NetworkCase& cse, const Slots& slots,
                     const std::vector<RowInfo>& rows, const BranchPlan& plan,
                     const std::vector<char>& soft, ConstPart&& cval,
                     const Eigen::VectorXd& angles, const Eigen::VectorXd& freqs,
                     const Eigen::MatrixXd& inj, Eigen::VectorXd& lower,
                     Eigen::VectorXd& upper) {
  const double T = cse.config().period;
  const int n_steps = cse.config().horizon_steps;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const RowInfo& info = rows[r];
    double lo = -kInf, hi = kInf;
    switch (info.kind) {
      case RowKind::init_angle:
        lo = hi = std::sin(angles[info.a]);
        break;
      case RowKind::init_freq:
        lo = hi = freqs[info.a];
        break;
      case RowKind::dyn_angle:
        lo = hi = 0.0;
        break;
      case RowKind::dyn_gen:
        lo = hi = T * inj(info.a, info.b);
        break;
      case RowKind::dyn_alg:
        lo = hi = inj(info.a, std::min(info.b, n_steps - 1));
        break;
      case RowKind::mag_up:
        hi = cse.config().at(slots.ctrl[static_cast<std::size_t>(info.a)]).input_max;
        break;
      case RowKind::mag_lo:
        lo = cse.config().at(slots.ctrl[static_cast<std::size_t>(info.a)]).input_min;
        break;
      case RowKind::beta_pos:
        lo = 0.0;
        break;
      case RowKind::freq_up: {
        const int bus = slots.cons[static_cast<std::size_t>(info.a)];
        const BusControl& p = cse.config().at(bus);
        const double bound =
            soft[static_cast<std::size_t>(info.a)] ? p.omega_max - p.margin : p.omega_max;
        hi = (bound - cval(bus, info.b)) / info.scale;
        break;
      }
      case RowKind::freq_lo: {
        const int bus = slots.cons[static_cast<std::size_t>(info.a)];
        const BusControl& p = cse.config().at(bus);
        const double bound =
            soft[static_cast<std::size_t>(info.a)] ? p.omega_min + p.margin : p.omega_min;
        lo = (bound - cval(bus, info.b)) / info.scale;
        break;
      }
      case RowKind::gamma_pos:
        lo = 0.0;
        if (!soft[static_cast<std::size_t>(info.a)]) hi = 0.0;
        break;
      case RowKind::phi_w: {
        const int bus = slots.ctrl[static_cast<std::size_t>(info.a)];
        const BusControl& p = cse.config().at(bus);
        switch (plan.at(info.a, info.b)) {
          case Branch::upper:
            lo = (p.thr_max - cval(bus, info.b)) / info.scale;
            break;
          case Branch::lower:
            hi = (p.thr_min - cval(bus, info.b)) / info.scale;
            break;
          case Branch::inactive:
            break;
        }
        break;
      }
      case RowKind::phi_u: {
        const BusControl& p = cse.config().at(slots.ctrl[static_cast<std::size_t>(info.a)]);
        switch (plan.at(info.a, info.b)) {
          case Branch::upper:
            hi = 0.0;
            break;
          case Branch::lower:
            lo = 0.0;
            break;
          case Branch::inactive:
            lo = hi = 0.0;
            break;
        }
        if (!p.soft_input) {
          lo = std::max(lo, p.input_min);
          hi = std::min(hi, p.input_max);
        }
        break;
      }
    }
    lower[static_cast<Eigen::Index>(r)] = lo;
    upper[static_cast<Eigen::Index>(r)] = hi;
  }
}

// ---------------------------------------------------------------------------
// Stacked formulation
// ---------------------------------------------------------------------------

struct StackedTemplate {
  QcvxLayout layout;
  Slots slots;
  std::vector<RowInfo> rows;
  qp::QpProblem tmpl;  // bounds hold equality-pattern placeholders

  void build(const NetworkCase& cse);
};

QcvxLayout make_layout(const NetworkCase& cse) {
  QcvxLayout lay;
  lay.lines = cse.line_count();
  lay.buses = cse.bus_count();
  lay.num_ctrl = static_cast<int>(cse.config().controlled.size());
  lay.num_constrained = static_cast<int>(cse.config().freq_constrained.size());
  lay.steps = cse.config().horizon_steps;
  lay.base.resize(static_cast<std::size_t>(lay.steps) + 1);
  int off = 0;
  for (int k = 0; k <= lay.steps; ++k) {
    lay.base[static_cast<std::size_t>(k)] = off;
    off += lay.lines + lay.buses;
    if (k < lay.steps) off += 2 * lay.num_ctrl;
    if (k >= 1) off += lay.num_constrained;
  }
  lay.num_vars = off;
  return lay;
}

void StackedTemplate::build(const NetworkCase& cse) {
  layout = make_layout(cse);
  slots = make_slots(cse);
  const int n_steps = layout.steps;
  const double T = cse.config().period;
  const Eigen::SparseMatrix<double> d = incidence_sparse(cse);
  const Eigen::SparseMatrix<double> flow_map =
      d.transpose() * Eigen::SparseMatrix<double>(cse.susceptance().asDiagonal());
  const Eigen::SparseMatrix<double, Eigen::RowMajor> d_rows(d);

  std::vector<int> slot_of_bus(static_cast<std::size_t>(cse.bus_count()), -1);
  for (std::size_t c = 0; c < slots.ctrl.size(); ++c)
    slot_of_bus[static_cast<std::size_t>(slots.ctrl[c])] = static_cast<int>(c);

  std::vector<Eigen::Triplet<double>> trip;
  rows.clear();
  int row = 0;
  auto add = [&](RowKind kind, int a, int b) {
    rows.push_back({kind, a, b, 1.0});
    return row++;
  };

  // Initial conditions: angle seed and generator frequencies.
  for (int l = 0; l < layout.lines; ++l) {
    trip.emplace_back(add(RowKind::init_angle, l, 0), layout.angle_at(0, l), 1.0);
  }
  for (int i : cse.generators()) {
    trip.emplace_back(add(RowKind::init_freq, i, 0), layout.freq_at(0, i), 1.0);
  }

  // Angle update rows.
  for (int k = 0; k < n_steps; ++k)
    for (int l = 0; l < layout.lines; ++l) {
      const int r = add(RowKind::dyn_angle, l, k);
      trip.emplace_back(r, layout.angle_at(k + 1, l), 1.0);
      trip.emplace_back(r, layout.angle_at(k, l), -1.0);
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(d_rows, l); it;
           ++it)
        trip.emplace_back(r, layout.freq_at(k, static_cast<int>(it.col())), -T * it.value());
    }

  // Generator rows, scaled by T: M w(k+1) + (T E - M) w(k) + T [flows] - T u = T p.
  Eigen::SparseMatrix<double, Eigen::RowMajor> flow_rows(flow_map);
  for (int k = 0; k < n_steps; ++k)
    for (int i : cse.generators()) {
      const int r = add(RowKind::dyn_gen, i, k);
      trip.emplace_back(r, layout.freq_at(k + 1, i), cse.inertia()[i]);
      trip.emplace_back(r, layout.freq_at(k, i), T * cse.damping()[i] - cse.inertia()[i]);
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(flow_rows, i); it;
           ++it)
        trip.emplace_back(r, layout.angle_at(k, static_cast<int>(it.col())), T * it.value());
      if (slot_of_bus[static_cast<std::size_t>(i)] >= 0)
        trip.emplace_back(r, layout.input_at(k, slot_of_bus[static_cast<std::size_t>(i)]),
                          -T);
    }

  // Algebraic rows at every step; the step-N row reuses the last input
  // column (zero-order-hold closure, matching the prediction rollout).
  for (int k = 0; k <= n_steps; ++k)
    for (int i : cse.loads()) {
      const int r = add(RowKind::dyn_alg, i, k);
      trip.emplace_back(r, layout.freq_at(k, i), cse.damping()[i]);
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(flow_rows, i); it;
           ++it)
        trip.emplace_back(r, layout.angle_at(k, static_cast<int>(it.col())), it.value());
      if (slot_of_bus[static_cast<std::size_t>(i)] >= 0)
        trip.emplace_back(
            r, layout.input_at(std::min(k, n_steps - 1), slot_of_bus[static_cast<std::size_t>(i)]),
            -1.0);
    }

  // Soft input-magnitude rows (finite bounds with slack); hard bounds
  // fold into the phi_u rows instead.
  for (std::size_t c = 0; c < slots.ctrl.size(); ++c) {
    const BusControl& p = cse.config().at(slots.ctrl[c]);
    if (!p.soft_input) continue;
    for (int k = 0; k < n_steps; ++k) {
      if (std::isfinite(p.input_max)) {
        const int r = add(RowKind::mag_up, static_cast<int>(c), k);
        trip.emplace_back(r, layout.input_at(k, static_cast<int>(c)), 1.0);
        trip.emplace_back(r, layout.input_slack_at(k, static_cast<int>(c)), -1.0);
      }
      if (std::isfinite(p.input_min)) {
        const int r = add(RowKind::mag_lo, static_cast<int>(c), k);
        trip.emplace_back(r, layout.input_at(k, static_cast<int>(c)), 1.0);
        trip.emplace_back(r, layout.input_slack_at(k, static_cast<int>(c)), 1.0);
      }
    }
  }
  for (std::size_t c = 0; c < slots.ctrl.size(); ++c)
    for (int k = 0; k < n_steps; ++k) {
      const int r = add(RowKind::beta_pos, static_cast<int>(c), k);
      trip.emplace_back(r, layout.input_slack_at(k, static_cast<int>(c)), 1.0);
    }

  // Frequency bound rows with slack columns, steps 1..N.
  for (std::size_t w = 0; w < slots.cons.size(); ++w) {
    const int bus = slots.cons[w];
    for (int k = 1; k <= n_steps; ++k) {
      int r = add(RowKind::freq_up, static_cast<int>(w), k);
      trip.emplace_back(r, layout.freq_at(k, bus), 1.0);
      trip.emplace_back(r, layout.freq_slack_at(k, static_cast<int>(w)), -1.0);
      r = add(RowKind::freq_lo, static_cast<int>(w), k);
      trip.emplace_back(r, layout.freq_at(k, bus), 1.0);
      trip.emplace_back(r, layout.freq_slack_at(k, static_cast<int>(w)), 1.0);
      r = add(RowKind::gamma_pos, static_cast<int>(w), k);
      trip.emplace_back(r, layout.freq_slack_at(k, static_cast<int>(w)), 1.0);
    }
  }

  // Branch rows.
  for (std::size_t c = 0; c < slots.ctrl.size(); ++c) {
    const int bus = slots.ctrl[c];
    for (int k = 0; k < n_steps; ++k) {
      int r = add(RowKind::phi_w, static_cast<int>(c), k);
      trip.emplace_back(r, layout.freq_at(k, bus), 1.0);
      r = add(RowKind::phi_u, static_cast<int>(c), k);
      trip.emplace_back(r, layout.input_at(k, static_cast<int>(c)), 1.0);
    }
  }

  tmpl.hessian_diag = Eigen::VectorXd::Zero(layout.num_vars);
  for (std::size_t c = 0; c < slots.ctrl.size(); ++c) {
    const BusControl& p = cse.config().at(slots.ctrl[c]);
    for (int k = 0; k < n_steps; ++k) {
      tmpl.hessian_diag[layout.input_at(k, static_cast<int>(c))] = 2.0 * p.effort_weight;
      tmpl.hessian_diag[layout.input_slack_at(k, static_cast<int>(c))] = 2.0 * p.slack_weight;
    }
  }
  for (std::size_t w = 0; w < slots.cons.size(); ++w) {
    const BusControl& p = cse.config().at(slots.cons[w]);
    for (int k = 1; k <= n_steps; ++k)
      tmpl.hessian_diag[layout.freq_slack_at(k, static_cast<int>(w))] = 2.0 * p.freq_weight;
  }
  tmpl.linear_cost = Eigen::VectorXd::Zero(layout.num_vars);
  tmpl.rows.resize(row, layout.num_vars);
  tmpl.rows.setFromTriplets(trip.begin(), trip.end());
  tmpl.rows.makeCompressed();

  // Placeholder bounds: equalities on the structural rows so the
  // solver's per-row stiffness classification is stable, generic
  // inequalities elsewhere.
  tmpl.lower.resize(row);
  tmpl.upper.resize(row);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    switch (rows[r].kind) {
      case RowKind::init_angle:
      case RowKind::init_freq:
      case RowKind::dyn_angle:
      case RowKind::dyn_gen:
      case RowKind::dyn_alg:
        tmpl.lower[static_cast<Eigen::Index>(r)] = 0.0;
        tmpl.upper[static_cast<Eigen::Index>(r)] = 0.0;
        break;
      default:
        tmpl.lower[static_cast<Eigen::Index>(r)] = -1.0;
        tmpl.upper[static_cast<Eigen::Index>(r)] = 1.0;
        break;
    }
  }
}

}  // namespace

bool freq_bounds_soft(double freq0, bool soft_input, double omega_min, double omega_max) {
  return !(freq0 >= omega_min && freq0 <= omega_max && soft_input);
}

BranchPlan classify_branches(const NetworkCase& cse, const Eigen::MatrixXd& ref_freqs) {
  const auto& ctrl = cse.config().controlled;
  BranchPlan plan;
  plan.num_ctrl = static_cast<int>(ctrl.size());
  plan.steps = cse.config().horizon_steps;
  plan.cells.resize(static_cast<std::size_t>(plan.num_ctrl * plan.steps));
  for (int k = 0; k < plan.steps; ++k)
    for (int c = 0; c < plan.num_ctrl; ++c) {
      const BusControl& p = cse.config().at(ctrl[static_cast<std::size_t>(c)]);
      const double w = ref_freqs(ctrl[static_cast<std::size_t>(c)], k);
      Branch br = Branch::inactive;
      if (w >= p.thr_max) br = Branch::upper;
      else if (w <= p.thr_min) br = Branch::lower;
      plan.cells[static_cast<std::size_t>(k * plan.num_ctrl + c)] = br;
    }
  return plan;
}

ConvexifiedProblem build_qcvx(const NetworkCase& cse, const Eigen::VectorXd& angles,
                              const Eigen::VectorXd& freqs,
                              const Eigen::MatrixXd& inj_forecast,
                              const ReferenceTrajectory& ref) {
  if (!ref.feasible)
    throw ControlError("reference trajectory not feasible: " + ref.violation);

  StackedTemplate st;
  st.build(cse);

  ConvexifiedProblem out;
  out.layout = st.layout;
  out.branch_plan = classify_branches(cse, ref.freqs);
  out.soft_bounds.resize(st.slots.cons.size());
  for (std::size_t w = 0; w < st.slots.cons.size(); ++w) {
    const int bus = st.slots.cons[w];
    const BusControl& p = cse.config().at(bus);
    out.soft_bounds[w] =
        freq_bounds_soft(freqs[bus], p.soft_input, p.omega_min, p.omega_max) ? 1 : 0;
  }

  out.qp = st.tmpl;
  fill_row_bounds(
      cse, st.slots, st.rows, out.branch_plan, out.soft_bounds,
      [](int, int) { return 0.0; }, angles, freqs, inj_forecast, out.qp.lower,
      out.qp.upper);
  return out;
}

Eigen::VectorXd pack_reference(const NetworkCase& cse, const ConvexifiedProblem& prob,
                               const ReferenceTrajectory& ref) {
  const QcvxLayout& lay = prob.layout;
  Eigen::VectorXd z = Eigen::VectorXd::Zero(lay.num_vars);
  for (int k = 0; k <= lay.steps; ++k) {
    for (int l = 0; l < lay.lines; ++l) z[lay.angle_at(k, l)] = ref.angles(l, k);
    for (int i = 0; i < lay.buses; ++i) z[lay.freq_at(k, i)] = ref.freqs(i, k);
  }
  const auto& ctrl = cse.config().controlled;
  for (std::size_t c = 0; c < ctrl.size(); ++c) {
    const BusControl& p = cse.config().at(ctrl[c]);
    for (int k = 0; k < lay.steps; ++k) {
      const double u = ref.inputs(ctrl[c], k);
      z[lay.input_at(k, static_cast<int>(c))] = u;
      double beta = 0;
      if (p.soft_input) {
        if (std::isfinite(p.input_max)) beta = std::max(beta, u - p.input_max);
        if (std::isfinite(p.input_min)) beta = std::max(beta, p.input_min - u);
      }
      z[lay.input_slack_at(k, static_cast<int>(c))] = beta;
    }
  }
  const auto& cons = cse.config().freq_constrained;
  for (std::size_t w = 0; w < cons.size(); ++w) {
    const BusControl& p = cse.config().at(cons[w]);
    for (int k = 1; k <= lay.steps; ++k) {
      double gamma = 0;
      if (prob.soft_bounds[w]) {
        const double f = ref.freqs(cons[w], k);
        gamma = std::max({0.0, f - p.omega_max + p.margin, p.omega_min + p.margin - f});
      }
      z[lay.freq_slack_at(k, static_cast<int>(w))] = gamma;
    }
  }
  return z;
}

double point_violation(const qp::QpProblem& problem, const Eigen::VectorXd& z) {
  if (problem.num_rows() == 0) return 0.0;
  const Eigen::VectorXd az = problem.rows * z;
  double worst = 0;
  for (Eigen::Index r = 0; r < problem.num_rows(); ++r) {
    worst = std::max(worst, problem.lower[r] - az[r]);
    worst = std::max(worst, az[r] - problem.upper[r]);
  }
  return std::max(worst, 0.0);
}

bool stability_signs_hold(const NetworkCase& cse, const Eigen::MatrixXd& freqs,
                          const Eigen::MatrixXd& inputs, double tol) {
  const int n_steps = static_cast<int>(inputs.cols());
  for (int bus : cse.config().controlled) {
    const BusControl& p = cse.config().at(bus);
    for (int k = 0; k < n_steps; ++k) {
      const double w = freqs(bus, k);
      const double u = inputs(bus, k);
      if (w > p.thr_min && w < p.thr_max) {
        if (std::fabs(u) > tol) return false;
      } else if (w * u > tol) {
        return false;
      }
    }
  }
  return true;
}

bool branch_plan_holds(const NetworkCase& cse, const BranchPlan& plan,
                       const Eigen::MatrixXd& freqs, const Eigen::MatrixXd& inputs,
                       double tol) {
  const auto& ctrl = cse.config().controlled;
  for (std::size_t c = 0; c < ctrl.size(); ++c) {
    const BusControl& p = cse.config().at(ctrl[c]);
    for (int k = 0; k < plan.steps; ++k) {
      const double w = freqs(ctrl[c], k);
      const double u = inputs(ctrl[c], k);
      switch (plan.at(static_cast<int>(c), k)) {
        case Branch::upper:
          if (w < p.thr_max - tol || u > tol) return false;
          break;
        case Branch::lower:
          if (w > p.thr_min + tol || u < -tol) return false;
          break;
        case Branch::inactive:
          if (std::fabs(u) > tol) return false;
          break;
      }
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Controller
// ---------------------------------------------------------------------------

namespace {

// Condensed formulation: states eliminated through the impulse
// responses of the prediction model; variables are inputs then
// frequency slacks. The constraint matrix is constant per case.
struct CondensedTemplate {
  Slots slots;
  std::vector<RowInfo> rows;
  qp::QpProblem tmpl;
  int num_ctrl = 0, num_cons = 0, steps = 0;

  int input_at(int k, int slot) const { return k * num_ctrl + slot; }
  int fslack_at(int k, int wslot) const {
    return num_ctrl * steps + (k - 1) * num_cons + wslot;
  }

  void build(const NetworkCase& cse, const LinearModel& model);
};

void CondensedTemplate::build(const NetworkCase& cse, const LinearModel& model) {
  slots = make_slots(cse);
  num_ctrl = static_cast<int>(slots.ctrl.size());
  num_cons = static_cast<int>(slots.cons.size());
  steps = cse.config().horizon_steps;
  const int n = cse.bus_count();

  // Impulse responses of the controlled-bus frequencies: one rollout
  // per input channel from the origin.
  std::vector<Eigen::MatrixXd> markov(static_cast<std::size_t>(steps) + 1,
                                      Eigen::MatrixXd::Zero(num_ctrl, num_ctrl));
  Eigen::MatrixXd angles_ws, freqs_ws;
  for (int c = 0; c < num_ctrl; ++c) {
    Eigen::MatrixXd impulse = Eigen::MatrixXd::Zero(n, steps);
    impulse(slots.ctrl[static_cast<std::size_t>(c)], 0) = 1.0;
    model.rollout(Eigen::VectorXd::Zero(cse.line_count()), Eigen::VectorXd::Zero(n),
                  impulse, Eigen::MatrixXd::Zero(n, steps), angles_ws, freqs_ws);
    for (int j = 0; j <= steps; ++j)
      for (int o = 0; o < num_ctrl; ++o)
        markov[static_cast<std::size_t>(j)](o, c) =
            freqs_ws(slots.ctrl[static_cast<std::size_t>(o)], j);
  }

  const int num_vars = num_ctrl * steps + num_cons * steps;
  std::vector<Eigen::Triplet<double>> trip;
  rows.clear();
  int row = 0;

  // Coefficients of the frequency expression of output slot `o` at step
  // k on all inputs; returns the max |coef| for row normalization.
  auto emit_freq_expr = [&](int r, int o, int k, double inv_scale) {
    const int bus = slots.ctrl[static_cast<std::size_t>(o)];
    const int last_l = std::min(k - 1, steps - 1) + (slots.is_load[static_cast<std::size_t>(bus)] ? 1 : 0);
    for (int l = 0; l <= std::min(last_l, steps - 1); ++l) {
      const Eigen::MatrixXd& th = markov[static_cast<std::size_t>(k - l)];
      for (int c = 0; c < num_ctrl; ++c) {
        const double v = th(o, c);
        if (v != 0.0) trip.emplace_back(r, input_at(l, c), v * inv_scale);
      }
    }
    // Zero-order-hold closure at the horizon end adds the feedthrough
    // of the last input column (already baked in when N == 1).
    if (k == steps && slots.is_load[static_cast<std::size_t>(bus)] && steps >= 2) {
      const Eigen::MatrixXd& th0 = markov[0];
      for (int c = 0; c < num_ctrl; ++c) {
        const double v = th0(o, c);
        if (v != 0.0) trip.emplace_back(r, input_at(steps - 1, c), v * inv_scale);
      }
    }
  };
  auto freq_expr_scale = [&](int o, int k) {
    const int bus = slots.ctrl[static_cast<std::size_t>(o)];
    double s = 0;
    const int last_l = std::min(k - 1, steps - 1) + (slots.is_load[static_cast<std::size_t>(bus)] ? 1 : 0);
    for (int l = 0; l <= std::min(last_l, steps - 1); ++l)
      s = std::max(s, markov[static_cast<std::size_t>(k - l)].row(o).cwiseAbs().maxCoeff());
    if (k == steps && slots.is_load[static_cast<std::size_t>(bus)] && steps >= 2)
      s = std::max(s, markov[0].row(o).cwiseAbs().maxCoeff());
    return s;
  };

  // Frequency bound rows (slack included in the normalization scale).
  for (int w = 0; w < num_cons; ++w) {
    int o = -1;
    for (int c = 0; c < num_ctrl; ++c)
      if (slots.wslot_of_slot[static_cast<std::size_t>(c)] == w) o = c;
    for (int k = 1; k <= steps; ++k) {
      const double scale = std::max(1.0, freq_expr_scale(o, k));
      int r = row++;
      rows.push_back({RowKind::freq_up, w, k, scale});
      emit_freq_expr(r, o, k, 1.0 / scale);
      trip.emplace_back(r, fslack_at(k, w), -1.0 / scale);
      r = row++;
      rows.push_back({RowKind::freq_lo, w, k, scale});
      emit_freq_expr(r, o, k, 1.0 / scale);
      trip.emplace_back(r, fslack_at(k, w), 1.0 / scale);
      r = row++;
      rows.push_back({RowKind::gamma_pos, w, k, 1.0});
      trip.emplace_back(r, fslack_at(k, w), 1.0);
    }
  }

  // Branch rows: frequency side (step 0 exists only for zero-inertia
  // buses, whose frequency has input feedthrough) and input side.
  for (int c = 0; c < num_ctrl; ++c) {
    const int bus = slots.ctrl[static_cast<std::size_t>(c)];
    for (int k = 0; k < steps; ++k) {
      if (k > 0 || slots.is_load[static_cast<std::size_t>(bus)]) {
        const double scale = std::max(freq_expr_scale(c, k), 1e-300);
        const int r = row++;
        rows.push_back({RowKind::phi_w, c, k, scale});
        emit_freq_expr(r, c, k, 1.0 / scale);
      }
      const int r = row++;
      rows.push_back({RowKind::phi_u, c, k, 1.0});
      trip.emplace_back(r, input_at(k, c), 1.0);
    }
  }

  tmpl.hessian_diag = Eigen::VectorXd::Zero(num_vars);
  for (int c = 0; c < num_ctrl; ++c) {
    const BusControl& p = cse.config().at(slots.ctrl[static_cast<std::size_t>(c)]);
    for (int k = 0; k < steps; ++k)
      tmpl.hessian_diag[input_at(k, c)] = 2.0 * p.effort_weight;
  }
  for (int w = 0; w < num_cons; ++w) {
    const BusControl& p = cse.config().at(slots.cons[static_cast<std::size_t>(w)]);
    for (int k = 1; k <= steps; ++k)
      tmpl.hessian_diag[fslack_at(k, w)] = 2.0 * p.freq_weight;
  }
  tmpl.linear_cost = Eigen::VectorXd::Zero(num_vars);
  tmpl.rows.resize(row, num_vars);
  tmpl.rows.setFromTriplets(trip.begin(), trip.end());
  tmpl.rows.makeCompressed();
  tmpl.lower = Eigen::VectorXd::Constant(row, -1.0);
  tmpl.upper = Eigen::VectorXd::Constant(row, 1.0);
}

// Active-set tracker for the condensed problem (all Hessian diagonals
// strictly positive). Maintains the active rows and a Cholesky factor
// of their Schur complement A_act H^-1 A_act'; consecutive control
// steps reuse both, so a step costs one backsolve plus a feasibility
// sweep, and active constraints hold to machine precision. Falls back
// to the operator-splitting solver when the set will not settle.
class ActiveSetTracker {
 public:
  void init(const qp::QpProblem& tmpl) {
    const Eigen::Index n = tmpl.num_vars();
    const Eigen::Index m = tmpl.num_rows();
    hinv_sqrt_ = tmpl.hessian_diag.cwiseInverse().cwiseSqrt();
    q_ = tmpl.linear_cost;
    qs_ = hinv_sqrt_.cwiseProduct(q_);
    ah_ = Eigen::MatrixXd(tmpl.rows) * hinv_sqrt_.asDiagonal();
    side_.assign(static_cast<std::size_t>(m), 0);
    pos_of_.assign(static_cast<std::size_t>(m), -1);
    act_.clear();
    bh_.resize(0, n);
    lfac_.resize(0, 0);
  }

  // Returns true when the KKT point verified; x and the full dual are
  // filled either way (best effort on failure).
  bool solve(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper, Eigen::VectorXd& x,
             Eigen::VectorXd& y_full) {
    const Eigen::Index m = ah_.rows();
    reconcile_pins(lower, upper);

    Eigen::VectorXd y_act, ax;
    for (int round = 0; round < 60; ++round) {
      if (!solve_kkt(lower, upper, y_act, x, ax)) {
        rebuild(ridge_ * 10);
        if (!solve_kkt(lower, upper, y_act, x, ax)) break;
      }

      // Wrong-signed multipliers leave the set; violated rows join.
      std::vector<int> removals;
      for (int p = 0; p < static_cast<int>(act_.size()); ++p) {
        if (side_[static_cast<std::size_t>(act_[static_cast<std::size_t>(p)])] == 2) continue;
        const double y = y_act[p];
        const int s = side_[static_cast<std::size_t>(act_[static_cast<std::size_t>(p)])];
        if ((s == 1 && y < -1e-9) || (s == -1 && y > 1e-9)) removals.push_back(p);
      }
      std::vector<std::pair<int, int>> adds;
      for (Eigen::Index r = 0; r < m; ++r) {
        if (pos_of_[static_cast<std::size_t>(r)] >= 0) continue;
        const double tol_up = 1e-9 * (1.0 + std::fabs(upper[r]));
        const double tol_lo = 1e-9 * (1.0 + std::fabs(lower[r]));
        if (std::isfinite(upper[r]) && ax[r] > upper[r] + tol_up)
          adds.push_back({static_cast<int>(r), 1});
        else if (std::isfinite(lower[r]) && ax[r] < lower[r] - tol_lo)
          adds.push_back({static_cast<int>(r), -1});
      }
      if (removals.empty() && adds.empty()) {
        y_full = Eigen::VectorXd::Zero(m);
        for (int p = 0; p < static_cast<int>(act_.size()); ++p)
          y_full[act_[static_cast<std::size_t>(p)]] = y_act[p];
        return true;
      }
      if (std::getenv("GRIDMPC_TRACE") != nullptr)
        std::fprintf(stderr, "[tracker] round=%d na=%zu removals=%zu adds=%zu\n", round,
                     act_.size(), removals.size(), adds.size());
      for (auto it = removals.rbegin(); it != removals.rend(); ++it) remove_at(*it);
      for (auto [r, s] : adds) add_row(r, s);
    }
    y_full = Eigen::VectorXd::Zero(m);
    if (y_act.size() == static_cast<Eigen::Index>(act_.size()))
      for (int p = 0; p < static_cast<int>(act_.size()); ++p)
        y_full[act_[static_cast<std::size_t>(p)]] = y_act[p];
    return false;
  }

  // Re-derive the set from a solver iterate (used after fallbacks).
  void seed_from(const Eigen::VectorXd& z, const Eigen::VectorXd& y,
                 const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
    const Eigen::Index m = ah_.rows();
    std::fill(side_.begin(), side_.end(), 0);
    std::fill(pos_of_.begin(), pos_of_.end(), -1);
    act_.clear();
    const Eigen::VectorXd az = (ah_ * hinv_sqrt_.cwiseInverse().cwiseProduct(z));
    std::vector<std::pair<int, int>> sel;
    for (Eigen::Index r = 0; r < m; ++r) {
      const bool pin = std::isfinite(lower[r]) && std::isfinite(upper[r]) &&
                       lower[r] == upper[r];
      if (pin) {
        sel.push_back({static_cast<int>(r), 2});
        continue;
      }
      if (y[r] > 1e-8 || (std::isfinite(upper[r]) &&
                          upper[r] - az[r] < 1e-7 * (1.0 + std::fabs(upper[r]))))
        sel.push_back({static_cast<int>(r), 1});
      else if (y[r] < -1e-8 || (std::isfinite(lower[r]) &&
                                az[r] - lower[r] < 1e-7 * (1.0 + std::fabs(lower[r]))))
        sel.push_back({static_cast<int>(r), -1});
    }
    bh_.resize(0, ah_.cols());
    lfac_.resize(0, 0);
    for (auto [r, s] : sel) {
      act_.push_back(r);
      pos_of_[static_cast<std::size_t>(r)] = static_cast<int>(act_.size()) - 1;
      side_[static_cast<std::size_t>(r)] = static_cast<int8_t>(s);
    }
    rebuild(ridge_);
  }

 private:
  void reconcile_pins(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
    const Eigen::Index m = ah_.rows();
    // Drop members whose bound went away or whose pin status flipped.
    for (int p = static_cast<int>(act_.size()) - 1; p >= 0; --p) {
      const int r = act_[static_cast<std::size_t>(p)];
      const bool pin = std::isfinite(lower[r]) && std::isfinite(upper[r]) &&
                       lower[r] == upper[r];
      const int s = side_[static_cast<std::size_t>(r)];
      bool drop = false;
      if (pin && s != 2) drop = true;
      if (!pin && s == 2) drop = true;
      if (s == 1 && !std::isfinite(upper[r])) drop = true;
      if (s == -1 && !std::isfinite(lower[r])) drop = true;
      if (drop) remove_at(p);
    }
    for (Eigen::Index r = 0; r < m; ++r) {
      const bool pin = std::isfinite(lower[r]) && std::isfinite(upper[r]) &&
                       lower[r] == upper[r];
      if (pin && pos_of_[static_cast<std::size_t>(r)] < 0) add_row(static_cast<int>(r), 2);
    }
  }

  bool solve_kkt(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                 Eigen::VectorXd& y_act, Eigen::VectorXd& x, Eigen::VectorXd& ax) {
    const int na = static_cast<int>(act_.size());
    Eigen::VectorXd rhs(na);
    for (int p = 0; p < na; ++p) {
      const int r = act_[static_cast<std::size_t>(p)];
      const double b = side_[static_cast<std::size_t>(r)] == -1 ? lower[r] : upper[r];
      rhs[p] = -(b + bh_.row(p).dot(qs_));
    }
    if (na > 0) {
      const auto lview = lfac_.topLeftCorner(na, na);
      y_act = lview.triangularView<Eigen::Lower>().solve(rhs);
      lview.triangularView<Eigen::Lower>().transpose().solveInPlace(y_act);
      if (!y_act.allFinite()) return false;
    } else {
      y_act.resize(0);
    }
    Eigen::VectorXd ts = qs_;
    if (na > 0) ts.noalias() += bh_.topRows(na).transpose() * y_act;
    x = -hinv_sqrt_.cwiseProduct(ts);
    ax.noalias() = -(ah_ * ts);
    return true;
  }

  void add_row(int r, int side) {
    const int na = static_cast<int>(act_.size());
    if (bh_.rows() <= na) {
      const Eigen::Index grow = std::max<Eigen::Index>(64, bh_.rows() / 2);
      bh_.conservativeResize(na + grow, ah_.cols());
      lfac_.conservativeResize(na + grow, na + grow);
    }
    bh_.row(na) = ah_.row(r);
    const Eigen::VectorXd c = bh_.topRows(na) * ah_.row(r).transpose();
    const double d = ah_.row(r).squaredNorm();
    if (base_diag_ <= 0) base_diag_ = std::max(d, 1e-12);
    Eigen::VectorXd w(na);
    if (na > 0)
      w = lfac_.topLeftCorner(na, na).triangularView<Eigen::Lower>().solve(c);
    const double rem = d + ridge_ * base_diag_ - w.squaredNorm();
    const double floor_val = 1e-12 * base_diag_;
    if (rem <= floor_val) return;  // numerically dependent; implied row
    if (na > 0) lfac_.row(na).head(na) = w.transpose();
    lfac_(na, na) = std::sqrt(rem);
    act_.push_back(r);
    pos_of_[static_cast<std::size_t>(r)] = na;
    side_[static_cast<std::size_t>(r)] = static_cast<int8_t>(side);
  }

  void remove_at(int pos) {
    const int na = static_cast<int>(act_.size());
    const int r = act_[static_cast<std::size_t>(pos)];
    side_[static_cast<std::size_t>(r)] = 0;
    pos_of_[static_cast<std::size_t>(r)] = -1;
    const int tail = na - pos - 1;
    if (tail > 0) {
      bh_.middleRows(pos, tail) = bh_.middleRows(pos + 1, tail).eval();
      // Cholesky row deletion: rank-1 update of the trailing block.
      Eigen::VectorXd v = lfac_.col(pos).segment(pos + 1, tail);
      Eigen::MatrixXd t = lfac_.block(pos + 1, pos + 1, tail, tail);
      for (int k = 0; k < tail; ++k) {
        const double a = t(k, k), b = v[k];
        const double rr = std::hypot(a, b);
        const double cth = a / rr, sth = b / rr;
        t(k, k) = rr;
        for (int i = k + 1; i < tail; ++i) {
          const double ti = t(i, k);
          t(i, k) = cth * ti + sth * v[i];
          v[i] = cth * v[i] - sth * ti;
        }
      }
      lfac_.block(pos, pos, tail, tail) = t;
      if (pos > 0)
        lfac_.block(pos, 0, tail, pos) = lfac_.block(pos + 1, 0, tail, pos).eval();
    }
    act_.erase(act_.begin() + pos);
    for (int p = pos; p < static_cast<int>(act_.size()); ++p)
      pos_of_[static_cast<std::size_t>(act_[static_cast<std::size_t>(p)])] = p;
  }

  void rebuild(double ridge) {
    ridge_ = std::max(ridge, 1e-12);
    const int na = static_cast<int>(act_.size());
    if (bh_.rows() < na) bh_.conservativeResize(na, ah_.cols());
    for (int p = 0; p < na; ++p) bh_.row(p) = ah_.row(act_[static_cast<std::size_t>(p)]);
    Eigen::MatrixXd s = bh_.topRows(na) * bh_.topRows(na).transpose();
    double diag_scale = 1e-12;
    for (int p = 0; p < na; ++p) diag_scale = std::max(diag_scale, s(p, p));
    base_diag_ = diag_scale;
    s.diagonal().array() += ridge_ * diag_scale;
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    int tries = 0;
    while (llt.info() != Eigen::Success && tries++ < 6) {
      ridge_ *= 100;
      Eigen::MatrixXd s2 = s;
      s2.diagonal().array() += ridge_ * diag_scale;
      llt.compute(s2);
    }
    if (lfac_.rows() < na) lfac_.resize(na, na);
    lfac_.topLeftCorner(na, na) = llt.matrixL();
  }

  Eigen::MatrixXd ah_;        // rows scaled by sqrt(H^-1) column-wise
  Eigen::VectorXd hinv_sqrt_, q_, qs_;
  Eigen::MatrixXd bh_;        // active rows of ah_ (capacity-managed)
  Eigen::MatrixXd lfac_;      // Cholesky factor of the active Schur complement
  std::vector<int> act_;
  std::vector<int8_t> side_;  // 0 free, +1 upper, -1 lower, 2 pinned equality
  std::vector<int> pos_of_;
  double ridge_ = 1e-12;
  double base_diag_ = 0;
};

}  // namespace

struct CentralizedController::Impl {
  NetworkCase cse;
  ControllerOptions opt;
  LinearModel model;
  bool condensed = false;

  StackedTemplate stacked;
  CondensedTemplate cond;
  const std::vector<RowInfo>* rows = nullptr;
  const Slots* slots = nullptr;
  std::unique_ptr<qp::QpSolver> solver;
  Eigen::VectorXd lower, upper;

  // Warm-start shift maps: value at index i comes from `from[i]`
  // (-1 selects zero).
  std::vector<int> var_from, row_from;
  Eigen::VectorXd warm_z, warm_y;
  bool have_warm = false;

  Eigen::MatrixXd roll_angles, roll_freqs;  // zero-input rollout workspace
  Eigen::MatrixXd zero_inputs;
  ControllerStats stats;

  ActiveSetTracker tracker;

  Impl(const NetworkCase& c, ControllerOptions o) : cse(c), opt(std::move(o)), model(cse) {
    bool needs_slack_rows = false;
    for (int bus : cse.config().controlled) {
      const BusControl& p = cse.config().at(bus);
      if (p.soft_input && (std::isfinite(p.input_min) || std::isfinite(p.input_max)))
        needs_slack_rows = true;
    }
    condensed = opt.condensed && !needs_slack_rows;
    if (condensed) {
      cond.build(cse, model);
      rows = &cond.rows;
      slots = &cond.slots;
      qp::QpSettings fallback = opt.solver;
      if (fallback.active_rho_boost <= 0) fallback.active_rho_boost = 100.0;
      solver = std::make_unique<qp::QpSolver>(cond.tmpl, fallback);
      tracker.init(cond.tmpl);
      lower = cond.tmpl.lower;
      upper = cond.tmpl.upper;
      build_condensed_shift();
    } else {
      stacked.build(cse);
      rows = &stacked.rows;
      slots = &stacked.slots;
      solver = std::make_unique<qp::QpSolver>(stacked.tmpl, opt.solver);
      lower = stacked.tmpl.lower;
      upper = stacked.tmpl.upper;
      build_stacked_shift();
    }
    zero_inputs = Eigen::MatrixXd::Zero(cse.bus_count(), cse.config().horizon_steps);
  }

  void build_condensed_shift() {
    const int nu = cond.num_ctrl, nw = cond.num_cons, n_steps = cond.steps;
    var_from.assign(static_cast<std::size_t>(cond.tmpl.num_vars()), -1);
    for (int k = 0; k < n_steps - 1; ++k)
      for (int c = 0; c < nu; ++c)
        var_from[static_cast<std::size_t>(cond.input_at(k, c))] = cond.input_at(k + 1, c);
    for (int k = 1; k < n_steps; ++k)
      for (int w = 0; w < nw; ++w)
        var_from[static_cast<std::size_t>(cond.fslack_at(k, w))] = cond.fslack_at(k + 1, w);
    row_from.assign(rows->size(), -1);
    shift_rows_by_kind();
  }

  void build_stacked_shift() {
    const QcvxLayout& lay = stacked.layout;
    var_from.assign(static_cast<std::size_t>(lay.num_vars), -1);
    for (int k = 0; k <= lay.steps; ++k) {
      const int src = std::min(k + 1, lay.steps);
      for (int l = 0; l < lay.lines; ++l)
        var_from[static_cast<std::size_t>(lay.angle_at(k, l))] = lay.angle_at(src, l);
      for (int i = 0; i < lay.buses; ++i)
        var_from[static_cast<std::size_t>(lay.freq_at(k, i))] = lay.freq_at(src, i);
    }
    for (int k = 0; k < lay.steps - 1; ++k)
      for (int c = 0; c < lay.num_ctrl; ++c) {
        var_from[static_cast<std::size_t>(lay.input_at(k, c))] = lay.input_at(k + 1, c);
        var_from[static_cast<std::size_t>(lay.input_slack_at(k, c))] =
            lay.input_slack_at(k + 1, c);
      }
    for (int k = 1; k < lay.steps; ++k)
      for (int w = 0; w < lay.num_constrained; ++w)
        var_from[static_cast<std::size_t>(lay.freq_slack_at(k, w))] =
            lay.freq_slack_at(k + 1, w);
    row_from.assign(rows->size(), -1);
    shift_rows_by_kind();
  }

  // Duals shift along their own (kind, entity) family in k.
  void shift_rows_by_kind() {
    std::map<std::tuple<int, int, int>, int> index;
    for (std::size_t r = 0; r < rows->size(); ++r) {
      const RowInfo& info = (*rows)[r];
      index[{static_cast<int>(info.kind), info.a, info.b}] = static_cast<int>(r);
    }
    for (std::size_t r = 0; r < rows->size(); ++r) {
      const RowInfo& info = (*rows)[r];
      auto it = index.find({static_cast<int>(info.kind), info.a, info.b + 1});
      if (it != index.end()) row_from[r] = it->second;
    }
  }

  Eigen::VectorXd shift(const Eigen::VectorXd& v, const std::vector<int>& from) const {
    Eigen::VectorXd out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const int src = from[static_cast<std::size_t>(i)];
      out[i] = src >= 0 ? v[src] : 0.0;
    }
    return out;
  }

  [[noreturn]] void fail_solver(const qp::QpSolution& sol) {
    if (opt.dump_on_failure) {
      std::ofstream dump("qcvx_failure.dump");
      dump << qp::dump_problem(solver->problem());
    }
    std::ostringstream os;
    os << "convexified solve failed (status "
       << (sol.status == qp::SolveStatus::primal_infeasible ? "primal_infeasible"
                                                            : "max_iter")
       << ", residuals " << sol.primal_residual << "/" << sol.dual_residual << ")";
    throw ControlError(os.str());
  }

  Eigen::VectorXd step(const Eigen::VectorXd& angles, const Eigen::VectorXd& freqs,
                       const Eigen::MatrixXd& inj_forecast) {
    ++stats.steps;
    const int n_steps = cse.config().horizon_steps;

    ReferenceTrajectory ref = generate_reference(cse, model, angles, freqs, inj_forecast);
    if (!ref.feasible)
      throw ControlError("reference trajectory infeasible: " + ref.violation);
    const BranchPlan plan = classify_branches(cse, ref.freqs);

    std::vector<char> soft(slots->cons.size());
    for (std::size_t w = 0; w < slots->cons.size(); ++w) {
      const int bus = slots->cons[w];
      const BusControl& p = cse.config().at(bus);
      soft[w] = freq_bounds_soft(freqs[bus], p.soft_input, p.omega_min, p.omega_max) ? 1 : 0;
    }

    // Zero-input rollout: the condensed constant part, and the witness
    // for the zero-input shortcut.
    const Eigen::VectorXd seed = angles.array().sin().matrix();
    model.rollout(seed, freqs, zero_inputs, inj_forecast, roll_angles, roll_freqs);

    if (zero_input_feasible(plan, soft)) {
      ++stats.shortcut_steps;
      warm_z = Eigen::VectorXd::Zero(solver->problem().num_vars());
      warm_y = Eigen::VectorXd::Zero(solver->problem().num_rows());
      have_warm = true;
      return Eigen::VectorXd::Zero(cse.bus_count());
    }

    auto cval = [&](int bus, int k) { return condensed ? roll_freqs(bus, k) : 0.0; };
    fill_row_bounds(cse, *slots, *rows, plan, soft, cval, angles, freqs, inj_forecast,
                    lower, upper);
    ++stats.solves;

    Eigen::VectorXd zsol;
    bool tracked = false;
    if (condensed) {
      Eigen::VectorXd x, yfull;
      tracked = tracker.solve(lower, upper, x, yfull);
      if (tracked) {
        zsol = std::move(x);
      } else {
        // The set would not settle; let the splitting solver move the
        // iterate, then re-derive the set from it.
        solver->update_bounds(lower, upper);
        qp::QpSolution sol = solver->solve(qp::WarmStart{x, yfull});
        stats.iterations += sol.iterations;
        if (sol.status != qp::SolveStatus::optimal) fail_solver(sol);
        tracker.seed_from(sol.primal, sol.dual, lower, upper);
        Eigen::VectorXd x2, y2;
        zsol = tracker.solve(lower, upper, x2, y2) ? std::move(x2) : std::move(sol.primal);
      }
    } else {
      solver->update_bounds(lower, upper);
      qp::QpSolution sol =
          have_warm ? solver->solve(qp::WarmStart{warm_z, warm_y}) : solver->solve();
      stats.iterations += sol.iterations;
      if (sol.status != qp::SolveStatus::optimal) fail_solver(sol);
      warm_z = shift(sol.primal, var_from);
      warm_y = shift(sol.dual, row_from);
      have_warm = true;
      zsol = std::move(sol.primal);
    }

    Eigen::VectorXd u = Eigen::VectorXd::Zero(cse.bus_count());
    for (std::size_t c = 0; c < slots->ctrl.size(); ++c) {
      const int bus = slots->ctrl[c];
      const BusControl& p = cse.config().at(bus);
      double v = condensed ? zsol[cond.input_at(0, static_cast<int>(c))]
                           : zsol[stacked.layout.input_at(0, static_cast<int>(c))];
      // The first input must satisfy the sign condition exactly, not
      // just to solver tolerance: pin or clip it onto its branch.
      switch (plan.at(static_cast<int>(c), 0)) {
        case Branch::inactive:
          v = 0.0;
          break;
        case Branch::upper:
          v = std::min(v, 0.0);
          break;
        case Branch::lower:
          v = std::max(v, 0.0);
          break;
      }
      // Zero-inertia buses: the applied input feeds through to the
      // frequency the sign condition is judged against; project onto
      // the admissible input set of the post-input frequency.
      if (slots->is_load[static_cast<std::size_t>(bus)] && v != 0.0) {
        const double drive = cse.damping()[bus] * roll_freqs(bus, 0);
        if (v < 0.0) {
          const double floor_neg = cse.damping()[bus] * p.thr_max - drive;
          v = floor_neg <= 0.0 ? std::max(v, floor_neg) : 0.0;
        } else {
          const double ceil_pos = cse.damping()[bus] * p.thr_min - drive;
          v = ceil_pos >= 0.0 ? std::min(v, ceil_pos) : 0.0;
        }
      }
      if (!p.soft_input) v = std::clamp(v, p.input_min, p.input_max);
      u[bus] = v;
    }
    return u;
  }

  // True when the zero-input rollout satisfies every frequency-side
  // row with zero slacks; zero is then the exact optimum.
  bool zero_input_feasible(const BranchPlan& plan, const std::vector<char>& soft) const {
    for (const RowInfo& info : *rows) {
      switch (info.kind) {
        case RowKind::freq_up: {
          const int bus = slots->cons[static_cast<std::size_t>(info.a)];
          const BusControl& p = cse.config().at(bus);
          const double bound =
              soft[static_cast<std::size_t>(info.a)] ? p.omega_max - p.margin : p.omega_max;
          if (roll_freqs(bus, info.b) > bound) return false;
          break;
        }
        case RowKind::freq_lo: {
          const int bus = slots->cons[static_cast<std::size_t>(info.a)];
          const BusControl& p = cse.config().at(bus);
          const double bound =
              soft[static_cast<std::size_t>(info.a)] ? p.omega_min + p.margin : p.omega_min;
          if (roll_freqs(bus, info.b) < bound) return false;
          break;
        }
        case RowKind::phi_w: {
          const int bus = slots->ctrl[static_cast<std::size_t>(info.a)];
          const BusControl& p = cse.config().at(bus);
          const Branch br = plan.at(info.a, info.b);
          if (br == Branch::upper && roll_freqs(bus, info.b) < p.thr_max) return false;
          if (br == Branch::lower && roll_freqs(bus, info.b) > p.thr_min) return false;
          break;
        }
        default:
          break;
      }
    }
    return true;
  }
};

CentralizedController::CentralizedController(const NetworkCase& cse, ControllerOptions opt)
    : impl_(std::make_unique<Impl>(cse, std::move(opt))) {}
CentralizedController::~CentralizedController() = default;
CentralizedController::CentralizedController(CentralizedController&&) noexcept = default;

Eigen::VectorXd CentralizedController::step(const Eigen::VectorXd& angles,
                                            const Eigen::VectorXd& freqs,
                                            const Eigen::MatrixXd& inj_forecast) {
  return impl_->step(angles, freqs, inj_forecast);
}

const NetworkCase& CentralizedController::network() const { return impl_->cse; }
const ControllerStats& CentralizedController::stats() const { return impl_->stats; }

Eigen::VectorXd centralized_control(const NetworkCase& cse, const Eigen::VectorXd& angles,
                                    const Eigen::VectorXd& freqs,
                                    const Eigen::MatrixXd& inj_forecast,
                                    ControllerOptions opt) {
  CentralizedController ctl(cse, std::move(opt));
  return ctl.step(angles, freqs, inj_forecast);
}

}  // namespace gridmpc::mpc
