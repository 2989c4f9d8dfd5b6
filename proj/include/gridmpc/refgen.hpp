#pragma once

// Reference trajectory generation: the discretized per-bus safety law
// rolled through the linear prediction model. The result anchors the
// branch plan of the convexified problem and certifies its
// feasibility.

#include <Eigen/Dense>

#include <string>

#include "gridmpc/dynamics.hpp"
#include "gridmpc/netcase.hpp"

namespace gridmpc {

struct ReferenceTrajectory {
  Eigen::MatrixXd angles;  // m x (N+1)
  Eigen::MatrixXd freqs;   // n x (N+1)
  Eigen::MatrixXd inputs;  // n x N, zero outside the frequency-constrained set
  bool feasible = false;
  std::string violation;   // first violated constraint when infeasible
  double max_step_bound = 0;  // period estimate below which the rollout qualifies
};

/// Saturation with a soft/hard switch: identity when soft, clamp to
/// [lo, hi] when hard.
double saturate(double a, bool soft, double lo, double hi);

/// Raw safety input for a frequency-constrained bus before saturation:
/// pushes down above the upper threshold, up below the lower one, zero
/// inside the band. `v` collects line inflow, forecast injection and
/// the damping term at the current reference state.
double reference_input(const NetworkCase& cse, int bus, double freq_ref, double v);

/// Rolls the safety law forward from the measured state (angles are
/// raw; the prediction seed is their sine). For zero-inertia
/// constrained buses the input/frequency coupling is resolved by a
/// three-case decision tree (interior solution wins ties). Afterward
/// the rollout is validated against the hard frequency bounds; when a
/// bound fails, `feasible` is false and `violation` names it.
ReferenceTrajectory generate_reference(const NetworkCase& cse, const LinearModel& model,
                                       const Eigen::VectorXd& angles,
                                       const Eigen::VectorXd& freqs,
                                       const Eigen::MatrixXd& inj_forecast);

}  // namespace gridmpc
