#pragma once

// Closed-loop scenario runner: measure, forecast, solve, apply,
// integrate; trace and summary emission.

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gridmpc/netcase.hpp"
#include "gridmpc/partition.hpp"
#include "gridmpc/steady.hpp"

namespace gridmpc {

struct ScenarioError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ControllerKind { none, centralized, distributed, reference_baseline };
enum class ForecastModel { exact, linear_growth };

/// Per-bus sinusoidal load factor: p(t) = (1 + a sin(pi t / P)) p0 while
/// t < cutoff, p0 afterwards. a = 0 keeps the injection constant.
struct Disturbance {
  double amplitude = 0;
  double half_period = 20;
  double cutoff = 20;
};

struct Scenario {
  std::filesystem::path case_path;
  std::optional<std::filesystem::path> partition_path;
  ControllerKind controller = ControllerKind::none;
  double duration = 0;
  double enable_time = 0;
  ForecastModel forecast = ForecastModel::exact;
  long seed = 0;
  std::vector<Disturbance> disturbances;  // per bus, sized on load
};

Scenario load_scenario(const std::filesystem::path& path);
Scenario parse_scenario(const std::string& text, const std::filesystem::path& base_dir,
                        const std::string& origin = "<string>");

/// True injections at time t for every bus.
Eigen::VectorXd injections_at(const NetworkCase& cse, const Scenario& scn, double t);

/// Forecast matrix (n x N) seen by the controller at time t: the exact
/// model samples the true signal; the growth model scales it by
/// (1 + k T), matching the true value in the first column.
Eigen::MatrixXd forecast(const NetworkCase& cse, const Scenario& scn, ForecastModel model,
                         double t);

struct RunLog {
  double period = 0;
  std::vector<double> times;   // control instants plus the terminal snapshot
  Eigen::MatrixXd angles;      // m x samples
  Eigen::MatrixXd freqs;       // n x samples (zero-inertia entries under the applied input)
  Eigen::MatrixXd inputs;      // n x samples (the terminal column repeats the last input)
  Eigen::MatrixXd injections;  // n x samples
  Eigen::VectorXd energy;      // V along the run
};

struct BusSummary {
  int bus_id = 0;
  double abs_input_integral = 0;  // integral of |u_i|
  double freq_min = 0, freq_max = 0;
  double first_entry = -1;  // first logged time inside the safe interval
  long violations = 0;      // logged points outside it
  long exits_after_entry = 0;
};

struct RunSummary {
  double input_total_integral = 0;       // integral of sum_i u_i
  double injection_shift_integral = 0;   // integral of sum_i (p_i - p_i(0))
  double weighted_cost = 0;              // sum_i c_i * integral of u_i^2
  double final_residual = 0;             // ||freqs(end) - sync_freq||_inf
  std::vector<BusSummary> constrained;   // per frequency-constrained bus
};

RunLog run(const Scenario& scn);
RunSummary summarize(const NetworkCase& cse, const RunLog& log);

void write_trace_csv(const RunLog& log, const std::filesystem::path& path);
RunLog read_trace_csv(const NetworkCase& cse, const std::filesystem::path& path);
std::string format_summary(const NetworkCase& cse, const RunSummary& summary);

/// Comparison table over several runs of the same case (identical time
/// grids): effort integrals, violation counts, first-entry times and
/// final residuals, plus the pairwise effort ordering.
std::string report(const NetworkCase& cse, const std::vector<std::string>& names,
                   const std::vector<RunLog>& logs);

}  // namespace gridmpc
