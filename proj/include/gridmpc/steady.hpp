#pragma once

// Open-loop steady state analysis: synchronous frequency, the
// synchronization condition, the equilibrium angle differences, the
// kinetic-plus-potential energy function and the largest safe energy
// level. All functions are pure.

#include <Eigen/Dense>

#include <stdexcept>

#include "gridmpc/netcase.hpp"

namespace gridmpc {

struct SteadyStateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SyncCheck {
  bool holds = false;   // condition value < 1
  double value = 0;     // max angle spread of the linearized steady state
};

struct Equilibrium {
  double sync_freq = 0;             // Hz offset shared by all buses at steady state
  Eigen::VectorXd angles;           // per-line angle differences, |.| < pi/2
  Eigen::VectorXd imbalance;        // injections after the damping share is removed
  double condition_value = 0;       // see SyncCheck
  double max_safe_energy = 0;       // smallest boundary energy of the angle box
};

/// Synchronous frequency sum(p)/sum(E) and the zero-mean imbalance
/// p - sync_freq * E.
std::pair<double, Eigen::VectorXd> sync_frequency(const NetworkCase& cse,
                                                  const Eigen::VectorXd& injection);

/// Max over lines of |z_i - z_j| with L z = imbalance (pseudo-inverse
/// action via the deflated solve). Throws if the imbalance is not
/// orthogonal to the all-ones vector within 1e-9 * ||imbalance||.
SyncCheck sync_condition(const NetworkCase& cse, const Eigen::VectorXd& imbalance);

/// Equilibrium angle differences: solves D^T Y_b sin(D theta) =
/// imbalance by damped Newton from theta = 0 (last bus pinned).
/// Residual at return <= 1e-10; every |angle| < pi/2.
Eigen::VectorXd equilibrium_angles(const NetworkCase& cse, const Eigen::VectorXd& imbalance);

/// Full equilibrium bundle for the base injections (or a caller-chosen
/// injection vector).
Equilibrium compute_equilibrium(const NetworkCase& cse, const Eigen::VectorXd& injection);
Equilibrium compute_equilibrium(const NetworkCase& cse);

/// Line potential term: a(x, x0) = cos x0 - cos x - x sin x0 + x0 sin x0.
double line_potential(double angle, double eq_angle);

/// Energy of a state: 0.5 * sum_g M (w - w_inf)^2 + sum_k b_k a(angle_k, eq_k).
/// freqs_gen is ordered like cse.generators().
double energy(const NetworkCase& cse, const Equilibrium& eq, const Eigen::VectorXd& angles,
              const Eigen::VectorXd& freqs_gen);

/// min over the boundary of the angle box of the potential energy;
/// closed form from per-line separability.
double max_safe_energy(const NetworkCase& cse, const Equilibrium& eq);

/// Membership in the sublevel set {|angles| <= pi/2, energy <= level}.
bool in_energy_region(const NetworkCase& cse, const Equilibrium& eq, double level,
                      const Eigen::VectorXd& angles, const Eigen::VectorXd& freqs_gen);

}  // namespace gridmpc
