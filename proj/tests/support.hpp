#pragma once

// Shared helpers for the unit and acceptance suites: canned cases,
// random case/state generators and independent oracles.

#include <Eigen/Dense>

#include <filesystem>
#include <random>
#include <string>

#include "gridmpc/netcase.hpp"
#include "gridmpc/steady.hpp"

namespace testsup {

std::filesystem::path cases_dir();

/// Two buses, one line (b=1), M=(1,0), E=(1,1), p=(0.5,-0.5); bus 1
/// controlled and frequency constrained.
gridmpc::NetworkCase two_bus_case();

/// Two generator buses on one line; both controlled and constrained.
gridmpc::NetworkCase two_gen_case();

/// Random connected case: n buses (>=2), tree plus extra edges, at
/// least one generator, small balanced injections, every bus id 1..n.
/// Controlled/constrained sets are sampled; zero-inertia controlled
/// buses are allowed.
gridmpc::NetworkCase random_case(std::mt19937_64& rng, int max_buses = 10,
                                 int horizon_steps = 10, double period = 1e-3);

/// Random state inside the energy region Phi(level_frac * max_safe_energy)
/// with all constrained frequencies inside their safe bounds.
void random_state_in_region(std::mt19937_64& rng, const gridmpc::NetworkCase& cse,
                            const gridmpc::Equilibrium& eq, double level_frac,
                            Eigen::VectorXd& angles, Eigen::VectorXd& freqs);

/// Brute-force connectivity oracle (breadth-first search).
bool bfs_connected(int n, const std::vector<std::pair<int, int>>& edges);

}  // namespace testsup
