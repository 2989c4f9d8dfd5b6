#include "gridmpc/partition.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace gridmpc {

namespace {

Region make_region(const NetworkCase& cse, std::vector<int> buses) {
  std::sort(buses.begin(), buses.end());
  buses.erase(std::unique(buses.begin(), buses.end()), buses.end());
  Region reg;
  reg.buses = std::move(buses);
  std::set<int> inside(reg.buses.begin(), reg.buses.end());
  for (int k = 0; k < cse.line_count(); ++k) {
    auto [a, b] = cse.line_ends(k);
    const bool ia = inside.count(a) > 0, ib = inside.count(b) > 0;
    if (ia && ib) reg.lines.push_back(k);
    else if (ia || ib) reg.boundary_lines.push_back(k);
  }
  return reg;
}

}  // namespace

RegionPartition parse_partition(const NetworkCase& cse, const std::string& text,
                                const std::string& origin) {
  RegionPartition part;
  std::istringstream is(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    std::istringstream ls(raw);
    std::string head;
    if (!(ls >> head)) continue;
    if (head != "region")
      throw PartitionError(origin + ":" + std::to_string(line_no) +
                           ": expected 'region <bus ids...>'");
    std::vector<int> buses;
    int id = 0;
    while (ls >> id) buses.push_back(cse.index_of(id));
    if (buses.empty())
      throw PartitionError(origin + ":" + std::to_string(line_no) + ": empty region");
    part.regions.push_back(make_region(cse, std::move(buses)));
  }
  if (part.regions.empty()) throw PartitionError(origin + ": no regions");
  return part;
}

RegionPartition load_partition(const NetworkCase& cse, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PartitionError("cannot open partition file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_partition(cse, ss.str(), path.string());
}

PartitionReport validate_partition(const NetworkCase& cse, const RegionPartition& part) {
  PartitionReport rep;
  auto bus_id = [&](int i) { return cse.buses()[static_cast<std::size_t>(i)].id; };

  std::vector<int> owner(static_cast<std::size_t>(cse.bus_count()), -1);
  for (std::size_t r = 0; r < part.regions.size(); ++r) {
    for (int b : part.regions[r].buses) {
      if (!cse.config().is_controlled(b)) continue;
      if (owner[static_cast<std::size_t>(b)] >= 0)
        rep.violations.push_back("controlled bus " + std::to_string(bus_id(b)) +
                                 " belongs to regions " +
                                 std::to_string(owner[static_cast<std::size_t>(b)] + 1) +
                                 " and " + std::to_string(r + 1));
      owner[static_cast<std::size_t>(b)] = static_cast<int>(r);
    }
  }
  for (int b : cse.config().controlled)
    if (owner[static_cast<std::size_t>(b)] < 0)
      rep.violations.push_back("controlled bus " + std::to_string(bus_id(b)) +
                               " is not covered by any region");

  for (std::size_t r = 0; r < part.regions.size(); ++r) {
    const Region& reg = part.regions[r];
    const bool has_gen = std::any_of(reg.buses.begin(), reg.buses.end(),
                                     [&](int b) { return cse.inertia()[b] > 0; });
    if (!has_gen)
      rep.violations.push_back("region " + std::to_string(r + 1) +
                               " has no bus with positive inertia");
    // Connectivity of the induced subgraph.
    if (reg.buses.size() > 1) {
      std::set<int> inside(reg.buses.begin(), reg.buses.end());
      std::vector<int> stack{reg.buses.front()};
      std::set<int> seen{reg.buses.front()};
      while (!stack.empty()) {
        const int v = stack.back();
        stack.pop_back();
        for (int k : reg.lines) {
          auto [a, b] = cse.line_ends(k);
          const int other = a == v ? b : (b == v ? a : -1);
          if (other >= 0 && !seen.count(other)) {
            seen.insert(other);
            stack.push_back(other);
          }
        }
      }
      if (seen.size() != reg.buses.size())
        rep.violations.push_back("region " + std::to_string(r + 1) +
                                 " induces a disconnected subgraph");
    }
  }
  rep.valid = rep.violations.empty();
  return rep;
}

NetworkCase regional_case(const NetworkCase& cse, const Region& region) {
  std::vector<Bus> buses;
  std::vector<int> pos_of(static_cast<std::size_t>(cse.bus_count()), -1);
  for (std::size_t k = 0; k < region.buses.size(); ++k) {
    const int b = region.buses[k];
    pos_of[static_cast<std::size_t>(b)] = static_cast<int>(k);
    buses.push_back(cse.buses()[static_cast<std::size_t>(b)]);
  }
  std::vector<Line> lines;
  for (int k : region.lines) lines.push_back(cse.lines()[static_cast<std::size_t>(k)]);

  ControlConfig cfg;
  cfg.horizon_steps = cse.config().horizon_steps;
  cfg.period = cse.config().period;
  for (std::size_t j = 0; j < cse.config().controlled.size(); ++j) {
    const int b = cse.config().controlled[j];
    if (pos_of[static_cast<std::size_t>(b)] < 0) continue;
    cfg.controlled.push_back(pos_of[static_cast<std::size_t>(b)]);
    cfg.params.push_back(cse.config().params[j]);
  }
  for (int b : cse.config().freq_constrained)
    if (pos_of[static_cast<std::size_t>(b)] >= 0)
      cfg.freq_constrained.push_back(pos_of[static_cast<std::size_t>(b)]);

  try {
    return NetworkCase(std::move(buses), std::move(lines), std::move(cfg));
  } catch (const CaseError& e) {
    throw PartitionError(std::string("regional sub-case is not a valid network: ") +
                         e.what());
  }
}

Eigen::VectorXd boundary_flow_forecast(const NetworkCase& cse, const Region& region,
                                       const Eigen::VectorXd& angles) {
  Eigen::VectorXd addend = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(region.buses.size()));
  std::vector<int> pos_of(static_cast<std::size_t>(cse.bus_count()), -1);
  for (std::size_t k = 0; k < region.buses.size(); ++k)
    pos_of[static_cast<std::size_t>(region.buses[k])] = static_cast<int>(k);
  for (int k : region.boundary_lines) {
    auto [from, to] = cse.line_ends(k);
    const double flow = cse.susceptance()[k] * std::sin(angles[k]);
    if (pos_of[static_cast<std::size_t>(to)] >= 0)
      addend[pos_of[static_cast<std::size_t>(to)]] += flow;  // into the negative end
    if (pos_of[static_cast<std::size_t>(from)] >= 0)
      addend[pos_of[static_cast<std::size_t>(from)]] -= flow;  // out of the positive end
  }
  return addend;
}

struct DistributedController::Impl {
  NetworkCase cse;
  RegionPartition part;
  struct RegionRuntime {
    Region region;
    NetworkCase sub;
    std::vector<int> line_of;  // regional line -> global line
    std::unique_ptr<mpc::CentralizedController> ctl;
  };
  std::vector<RegionRuntime> runtimes;

  Impl(const NetworkCase& c, RegionPartition p, const mpc::ControllerOptions& opt)
      : cse(c), part(std::move(p)) {
    const PartitionReport rep = validate_partition(cse, part);
    if (!rep.valid) {
      std::string msg = "invalid partition:";
      for (const std::string& v : rep.violations) msg += "\n  " + v;
      throw PartitionError(msg);
    }
    for (const Region& region : part.regions) {
      RegionRuntime rt{region, regional_case(cse, region), {}, nullptr};
      rt.line_of = region.lines;
      rt.ctl = std::make_unique<mpc::CentralizedController>(rt.sub, opt);
      runtimes.push_back(std::move(rt));
    }
  }

  Eigen::VectorXd step(const Eigen::VectorXd& angles, const Eigen::VectorXd& freqs,
                       const Eigen::MatrixXd& inj_forecast) {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(cse.bus_count());
    for (std::size_t r = 0; r < runtimes.size(); ++r) {
      RegionRuntime& rt = runtimes[r];
      const Eigen::Index nb = static_cast<Eigen::Index>(rt.region.buses.size());
      Eigen::VectorXd reg_angles(static_cast<Eigen::Index>(rt.line_of.size()));
      for (std::size_t k = 0; k < rt.line_of.size(); ++k)
        reg_angles[static_cast<Eigen::Index>(k)] = angles[rt.line_of[k]];
      Eigen::VectorXd reg_freqs(nb);
      for (Eigen::Index b = 0; b < nb; ++b)
        reg_freqs[b] = freqs[rt.region.buses[static_cast<std::size_t>(b)]];

      const Eigen::VectorXd addend = boundary_flow_forecast(cse, rt.region, angles);
      Eigen::MatrixXd reg_fcst(nb, inj_forecast.cols());
      for (Eigen::Index b = 0; b < nb; ++b)
        reg_fcst.row(b) =
            inj_forecast.row(rt.region.buses[static_cast<std::size_t>(b)]).array() +
            addend[b];

      Eigen::VectorXd reg_u;
      try {
        reg_u = rt.ctl->step(reg_angles, reg_freqs, reg_fcst);
      } catch (const std::exception& e) {
        throw mpc::ControlError("region " + std::to_string(r + 1) + ": " + e.what());
      }
      for (int b : rt.sub.config().controlled) {
        const int global_bus = rt.region.buses[static_cast<std::size_t>(b)];
        u[global_bus] = reg_u[b];
      }
    }
    return u;
  }
};

DistributedController::DistributedController(const NetworkCase& cse, RegionPartition part,
                                             mpc::ControllerOptions opt)
    : impl_(std::make_unique<Impl>(cse, std::move(part), opt)) {}
DistributedController::~DistributedController() = default;
DistributedController::DistributedController(DistributedController&&) noexcept = default;

Eigen::VectorXd DistributedController::step(const Eigen::VectorXd& angles,
                                            const Eigen::VectorXd& freqs,
                                            const Eigen::MatrixXd& inj_forecast) {
  return impl_->step(angles, freqs, inj_forecast);
}

const RegionPartition& DistributedController::partition() const { return impl_->part; }

mpc::ControllerStats DistributedController::stats() const {
  mpc::ControllerStats total;
  for (const auto& rt : impl_->runtimes) {
    const auto& s = rt.ctl->stats();
    total.steps += s.steps;
    total.shortcut_steps += s.shortcut_steps;
    total.solves += s.solves;
    total.iterations += s.iterations;
  }
  return total;
}

Eigen::VectorXd distributed_control(const NetworkCase& cse, const RegionPartition& part,
                                    const Eigen::VectorXd& angles,
                                    const Eigen::VectorXd& freqs,
                                    const Eigen::MatrixXd& inj_forecast,
                                    mpc::ControllerOptions opt) {
  DistributedController ctl(cse, part, std::move(opt));
  return ctl.step(angles, freqs, inj_forecast);
}

}  // namespace gridmpc
