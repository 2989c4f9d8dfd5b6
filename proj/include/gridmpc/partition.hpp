#pragma once

// Region partitions for distributed control: induced subgraphs whose
// boundary line flows are frozen as constant injections over the
// horizon. Every controlled bus belongs to exactly one region.

#include <Eigen/Dense>

#include <filesystem>
#include <memory>
#include <vector>

#include "gridmpc/mpc.hpp"
#include "gridmpc/netcase.hpp"

namespace gridmpc {

struct PartitionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Region {
  std::vector<int> buses;           // internal bus indexes, ascending
  std::vector<int> lines;           // induced lines (both ends inside)
  std::vector<int> boundary_lines;  // exactly one end inside
};

struct RegionPartition {
  std::vector<Region> regions;
};

/// Partition file: one `region <bus ids...>` line per region.
RegionPartition load_partition(const NetworkCase& cse, const std::filesystem::path& path);
RegionPartition parse_partition(const NetworkCase& cse, const std::string& text,
                                const std::string& origin = "<string>");

struct PartitionReport {
  bool valid = false;
  std::vector<std::string> violations;
};

/// Checks the partition against the case: every controlled bus covered
/// exactly once, each region connected with at least one generator
/// (pure algebraic regions are rejected). Regions may overlap on
/// uncontrolled buses and need not cover the graph.
PartitionReport validate_partition(const NetworkCase& cse, const RegionPartition& part);

/// Sub-case induced by one region: regional buses, induced lines and
/// the regional slices of the control sets. Per-bus parameters and the
/// horizon are inherited; bus ids keep their external values.
NetworkCase regional_case(const NetworkCase& cse, const Region& region);

/// Boundary-flow addend of Eq-style frozen forecasts: for every bus of
/// the region, the signed sum of current flows on its boundary lines,
/// held constant over the horizon. Flows are b sin(angle) evaluated at
/// the measured plant state.
Eigen::VectorXd boundary_flow_forecast(const NetworkCase& cse, const Region& region,
                                       const Eigen::VectorXd& angles);

/// Distributed receding-horizon law: the centralized pipeline runs
/// independently per region on the regional sub-case with the boundary
/// addend folded into the forecast; first steps are assembled into one
/// input vector. A failed region aborts the step.
class DistributedController {
 public:
  DistributedController(const NetworkCase& cse, RegionPartition part,
                        mpc::ControllerOptions opt = {});
  ~DistributedController();
  DistributedController(DistributedController&&) noexcept;

  Eigen::VectorXd step(const Eigen::VectorXd& angles, const Eigen::VectorXd& freqs,
                       const Eigen::MatrixXd& inj_forecast);

  const RegionPartition& partition() const;
  /// Aggregated solver statistics over all regions.
  mpc::ControllerStats stats() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// One-shot wrapper.
Eigen::VectorXd distributed_control(const NetworkCase& cse, const RegionPartition& part,
                                    const Eigen::VectorXd& angles,
                                    const Eigen::VectorXd& freqs,
                                    const Eigen::MatrixXd& inj_forecast,
                                    mpc::ControllerOptions opt = {});

}  // namespace gridmpc
