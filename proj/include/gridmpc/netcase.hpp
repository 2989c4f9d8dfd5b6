#pragma once

// Network case model: graph topology, physical parameters and the
// controller configuration, loaded from the structured text format
// described in the README.  A loaded case is immutable and safe to
// share across threads.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <filesystem>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridmpc {

/// Raised on malformed files or violated case invariants.  The message
/// names the first offending entity.
struct CaseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Bus {
  int id = 0;           // external id as written in the file
  double inertia = 0;   // M_i >= 0, per-unit s^2
  double damping = 0;   // E_i > 0, per-unit s
  double injection = 0; // base power injection p_i(0), per-unit
};

struct Line {
  int id = 0;
  int from = 0;  // positive end of the oriented edge
  int to = 0;
  double susceptance = 0;  // > 0, per-unit
};

/// Per-bus controller parameters.  Frequencies are Hz offsets from
/// nominal.  Threshold values exist for every controlled bus; safe
/// bounds, the slack weight and the margin only for frequency-
/// constrained buses.
struct BusControl {
  double thr_min = 0, thr_max = 0;     // thr_min < 0 < thr_max
  double effort_weight = 0;            // c > 0
  double slack_weight = 0;             // d >= 0 (input-magnitude slack)
  bool soft_input = true;              // xi: soft (true) vs hard (false) magnitude limits
  double input_min = -std::numeric_limits<double>::infinity();
  double input_max = std::numeric_limits<double>::infinity();
  double gain_up = 0, gain_down = 0;   // reference-law gains, > 0
  // Only meaningful when the bus is frequency constrained:
  double omega_min = 0, omega_max = 0; // safe bounds, omega_min < omega_max
  double freq_weight = 0;              // e > 0 (frequency slack)
  double margin = 0;                   // 0 < margin < omega_max - omega_min
};

struct ControlConfig {
  std::vector<int> controlled;         // bus indexes (0-based, internal)
  std::vector<int> freq_constrained;   // subset of controlled
  std::vector<BusControl> params;      // aligned with `controlled`
  int horizon_steps = 0;               // N >= 1
  double period = 0;                   // T > 0, seconds

  bool is_controlled(int bus) const;
  bool is_freq_constrained(int bus) const;
  /// Parameters of a controlled bus (internal index); throws if not controlled.
  const BusControl& at(int bus) const;
};

class NetworkCase {
 public:
  NetworkCase(std::vector<Bus> buses, std::vector<Line> lines, ControlConfig config);

  int bus_count() const { return static_cast<int>(buses_.size()); }
  int line_count() const { return static_cast<int>(lines_.size()); }
  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Line>& lines() const { return lines_; }
  const ControlConfig& config() const { return config_; }

  /// Internal 0-based index of an external bus id; throws CaseError.
  int index_of(int external_id) const;

  /// Line endpoints as internal indexes: (positive end, negative end).
  std::pair<int, int> line_ends(int line) const;

  // Parameter vectors over internal bus order.
  const Eigen::VectorXd& inertia() const { return inertia_; }
  const Eigen::VectorXd& damping() const { return damping_; }
  const Eigen::VectorXd& injection() const { return injection_; }
  const Eigen::VectorXd& susceptance() const { return susceptance_; }  // per line

  /// Buses with strictly positive inertia (internal indexes).
  const std::vector<int>& generators() const { return generators_; }
  /// Zero-inertia buses.
  const std::vector<int>& loads() const { return loads_; }

  /// Case with a different horizon, everything else identical.
  NetworkCase with_horizon(int steps, double period) const;

 private:
  void validate() const;

  std::vector<Bus> buses_;
  std::vector<Line> lines_;
  ControlConfig config_;
  std::vector<int> generators_, loads_;
  Eigen::VectorXd inertia_, damping_, injection_, susceptance_;
  std::vector<int> id_to_index_sorted_ids_;
  std::vector<int> id_to_index_values_;
};

NetworkCase load_case(const std::filesystem::path& path);
NetworkCase parse_case(const std::string& text, const std::string& origin = "<string>");
std::string serialize_case(const NetworkCase& cse);
void save_case(const NetworkCase& cse, const std::filesystem::path& path);

/// Signed m x n incidence matrix: row k has +1 at the positive end of
/// line k and -1 at the negative end.
Eigen::MatrixXd incidence_matrix(const NetworkCase& cse);
Eigen::SparseMatrix<double> incidence_sparse(const NetworkCase& cse);

/// Graph Laplacian D^T Y_b D (n x n, symmetric PSD, rank n-1).
Eigen::MatrixXd laplacian(const NetworkCase& cse);

}  // namespace gridmpc
