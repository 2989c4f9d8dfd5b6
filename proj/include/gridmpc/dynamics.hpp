#pragma once

// Nonlinear swing dynamics with zero-inertia buses (semi-explicit
// index-1 DAE, integrated with RK4 on the reduced ODE) and the linear
// discrete prediction model used inside the optimizer.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <stdexcept>

#include "gridmpc/netcase.hpp"

namespace gridmpc {

struct DynamicsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Instantaneous network state: per-line angle differences (rad) and
/// per-bus frequency offsets (Hz). Angle differences always lie in the
/// column space of the incidence matrix.
struct SystemState {
  Eigen::VectorXd angles;  // size m
  Eigen::VectorXd freqs;   // size n
};

/// Stacked discrete trajectories of the prediction model. Columns are
/// steps: states have N+1 columns, inputs and injections N.
struct DiscreteTrajectory {
  Eigen::MatrixXd angles;       // m x (N+1)
  Eigen::MatrixXd freqs;        // n x (N+1)
  Eigen::MatrixXd inputs;       // n x N, rows outside the controlled set are zero
  Eigen::MatrixXd input_slack;  // |I_u| x N, >= 0
  Eigen::MatrixXd freq_slack;   // |I_w| x N, >= 0 (steps 1..N)
  Eigen::MatrixXd injections;   // n x N
};

/// Frequencies of zero-inertia buses implied by the algebraic rows:
/// w_i = (-[D^T Y_b]_i sin(angles) + p_i + u_i) / E_i for every load
/// bus; entries for generator buses are left untouched in `freqs`.
void algebraic_frequencies(const NetworkCase& cse, const Eigen::VectorXd& angles,
                           const Eigen::VectorXd& u, const Eigen::VectorXd& p,
                           Eigen::VectorXd& freqs);

/// One explicit RK4 step of size h on the reduced ODE; inputs and
/// injections are held constant over the step. Zero-inertia
/// frequencies are recomputed at every stage. Throws DynamicsError on
/// non-finite states.
SystemState step_nonlinear(const NetworkCase& cse, const SystemState& state,
                           const Eigen::VectorXd& u, const Eigen::VectorXd& p, double h);

/// Same integrator with the network matrices assembled once; use this
/// in simulation loops.
class NonlinearStepper {
 public:
  explicit NonlinearStepper(const NetworkCase& cse);
  SystemState step(const SystemState& state, const Eigen::VectorXd& u,
                   const Eigen::VectorXd& p, double h) const;

 private:
  void eval(const Eigen::VectorXd& angles, const Eigen::VectorXd& freqs_gen,
            const Eigen::VectorXd& u, const Eigen::VectorXd& p, Eigen::VectorXd& d_angles,
            Eigen::VectorXd& d_freqs_gen, Eigen::VectorXd& freqs_full) const;

  const NetworkCase* cse_;
  Eigen::SparseMatrix<double> incidence_;
  Eigen::SparseMatrix<double> flow_map_;
};

/// Verifies angles lie in range(D) within 1e-9 (least-squares residual).
bool angles_consistent(const NetworkCase& cse, const Eigen::VectorXd& angles);

/// Discrete linear prediction model with pre-assembled matrices; reused
/// across control steps and by the reference generator.
class LinearModel {
 public:
  LinearModel(const NetworkCase& cse);

  const NetworkCase& network() const { return *cse_; }
  const Eigen::SparseMatrix<double>& incidence() const { return incidence_; }
  /// n x m matrix D^T Y_b mapping angle differences to bus flow sums.
  const Eigen::SparseMatrix<double>& flow_map() const { return flow_map_; }

  /// Forward rollout: angles0 is the (already sined) initial prediction
  /// state; freqs0 provides generator initial frequencies (zero-inertia
  /// entries are recomputed from the algebraic rows, including at step
  /// 0). U must have zero rows off the controlled set. Injections and
  /// inputs for the algebraic closure at step N reuse column N-1.
  void rollout(const Eigen::VectorXd& angles0, const Eigen::VectorXd& freqs0,
               const Eigen::MatrixXd& U, const Eigen::MatrixXd& P, Eigen::MatrixXd& angles,
               Eigen::MatrixXd& freqs) const;

  /// Algebraic closure at a single step.
  void close_algebraic(const Eigen::VectorXd& angles, const Eigen::VectorXd& u,
                       const Eigen::VectorXd& p, Eigen::VectorXd& freqs) const;

 private:
  const NetworkCase* cse_;
  Eigen::SparseMatrix<double> incidence_;  // m x n
  Eigen::SparseMatrix<double> flow_map_;   // n x m
};

/// Spec-facing linear prediction: seeds the angle state with
/// sin(angles0) and rolls the model forward.
DiscreteTrajectory predict_linear(const NetworkCase& cse, const Eigen::VectorXd& angles0,
                                  const Eigen::VectorXd& freqs0, const Eigen::MatrixXd& U,
                                  const Eigen::MatrixXd& P);

}  // namespace gridmpc
