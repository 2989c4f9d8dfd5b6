#pragma once

// Convexified receding-horizon controller. A reference trajectory
// fixes, per controlled bus and step, which side of the stability sign
// condition is active; the resulting problem is a convex QP. Two
// equivalent formulations are provided:
//
//  * the stacked form with explicit state variables and dynamics
//    equality rows (build_qcvx), used by tests and as a fallback;
//  * a condensed form with states eliminated through the prediction
//    model, used by the controller hot path. Its constraint matrix is
//    constant per case, so the solver factorization is reused across
//    every control step and only bounds move.

#include <Eigen/Dense>

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridmpc/dynamics.hpp"
#include "gridmpc/netcase.hpp"
#include "gridmpc/qp.hpp"
#include "gridmpc/refgen.hpp"

namespace gridmpc::mpc {

struct ControlError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Branch : unsigned char { upper, lower, inactive };

/// Per (controlled slot, step) branch choice derived from the
/// reference frequencies; slots follow the controlled-set order.
struct BranchPlan {
  int num_ctrl = 0;
  int steps = 0;
  std::vector<Branch> cells;  // cells[k * num_ctrl + slot]
  Branch at(int slot, int k) const {
    return cells[static_cast<std::size_t>(k * num_ctrl + slot)];
  }
};

/// Whether the frequency bounds of a constrained bus enter as
/// slack-penalized rows: they do unless the bus starts inside its safe
/// interval with soft input limits (then the bounds are hard).
bool freq_bounds_soft(double freq0, bool soft_input, double omega_min, double omega_max);

/// Branch per (slot, step): upper when the reference frequency is at or
/// above the upper threshold, lower at or below the lower one, inactive
/// in between (inputs pinned to zero there).
BranchPlan classify_branches(const NetworkCase& cse, const Eigen::MatrixXd& ref_freqs);

/// Flat variable layout of the stacked problem: per step, angle block,
/// frequency block, then input and input-slack blocks (steps 0..N-1)
/// and the frequency-slack block (steps 1..N).
struct QcvxLayout {
  int lines = 0, buses = 0, num_ctrl = 0, num_constrained = 0, steps = 0;
  std::vector<int> base;  // offset of each step block
  int num_vars = 0;

  int angle_at(int k, int line) const { return base[static_cast<std::size_t>(k)] + line; }
  int freq_at(int k, int bus) const {
    return base[static_cast<std::size_t>(k)] + lines + bus;
  }
  int input_at(int k, int slot) const {
    return base[static_cast<std::size_t>(k)] + lines + buses + slot;
  }
  int input_slack_at(int k, int slot) const {
    return base[static_cast<std::size_t>(k)] + lines + buses + num_ctrl + slot;
  }
  int freq_slack_at(int k, int wslot) const {
    return base[static_cast<std::size_t>(k)] + lines + buses +
           (k < steps ? 2 * num_ctrl : 0) + wslot;
  }
};

struct ConvexifiedProblem {
  qp::QpProblem qp;
  QcvxLayout layout;
  BranchPlan branch_plan;
  std::vector<char> soft_bounds;  // per constrained slot
};

/// Stacked convex problem for the measured state, forecast and
/// reference. Throws ControlError when the reference is not feasible.
ConvexifiedProblem build_qcvx(const NetworkCase& cse, const Eigen::VectorXd& angles,
                              const Eigen::VectorXd& freqs,
                              const Eigen::MatrixXd& inj_forecast,
                              const ReferenceTrajectory& ref);

/// Stacks the reference with its minimal slack choices into the layout
/// of `prob`; the result should satisfy every constraint.
Eigen::VectorXd pack_reference(const NetworkCase& cse, const ConvexifiedProblem& prob,
                               const ReferenceTrajectory& ref);

/// Largest constraint violation of a candidate point (0 when feasible).
double point_violation(const qp::QpProblem& problem, const Eigen::VectorXd& z);

/// Sign-condition set membership: over controlled buses and steps
/// 0..N-1, inputs vanish inside the threshold band and oppose the
/// frequency sign outside it.
bool stability_signs_hold(const NetworkCase& cse, const Eigen::MatrixXd& freqs,
                          const Eigen::MatrixXd& inputs, double tol = 1e-9);

/// Branch-row membership for a given plan (the convex inner
/// approximation of the sign-condition set).
bool branch_plan_holds(const NetworkCase& cse, const BranchPlan& plan,
                       const Eigen::MatrixXd& freqs, const Eigen::MatrixXd& inputs,
                       double tol = 1e-9);

struct ControllerOptions {
  bool condensed = true;       // use the condensed hot path when the case allows it
  qp::QpSettings solver;       // tolerances per the QP defaults
  bool dump_on_failure = true; // write the problem next to the cwd on solver failure
};

struct ControllerStats {
  long steps = 0;
  long shortcut_steps = 0;  // zero input proven optimal without the solver
  long solves = 0;
  long iterations = 0;
};

/// Receding-horizon controller bound to one case. Persistent across
/// control steps: factorizations, warm starts and the prediction model
/// are reused. Not thread-safe; use one instance per concurrent loop.
class CentralizedController {
 public:
  explicit CentralizedController(const NetworkCase& cse, ControllerOptions opt = {});
  ~CentralizedController();
  CentralizedController(CentralizedController&&) noexcept;

  /// One control step from the measured state (raw angle differences
  /// and frequencies) and the injection forecast (n x N). Returns the
  /// applied input embedded in R^n (zeros off the controlled set).
  Eigen::VectorXd step(const Eigen::VectorXd& angles, const Eigen::VectorXd& freqs,
                       const Eigen::MatrixXd& inj_forecast);

  const NetworkCase& network() const;
  const ControllerStats& stats() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// One-shot wrapper around CentralizedController::step.
Eigen::VectorXd centralized_control(const NetworkCase& cse, const Eigen::VectorXd& angles,
                                    const Eigen::VectorXd& freqs,
                                    const Eigen::MatrixXd& inj_forecast,
                                    ControllerOptions opt = {});

}  // namespace gridmpc::mpc
