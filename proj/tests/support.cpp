#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>

#include "gridmpc/dynamics.hpp"

namespace testsup {

using namespace gridmpc;

std::filesystem::path cases_dir() { return GRIDMPC_CASES_DIR; }

namespace {

BusControl default_control(bool constrained) {
  BusControl p;
  p.thr_min = -0.1;
  p.thr_max = 0.1;
  p.effort_weight = constrained ? 2.0 : 1.0;
  p.slack_weight = 0.0;
  p.soft_input = true;
  p.gain_up = 1.0;
  p.gain_down = 1.0;
  if (constrained) {
    p.omega_min = -0.2;
    p.omega_max = 0.2;
    p.freq_weight = 500.0;
    p.margin = 0.05;
  }
  return p;
}

}  // namespace

NetworkCase two_bus_case() {
  std::vector<Bus> buses{{1, 1.0, 1.0, 0.5}, {2, 0.0, 1.0, -0.5}};
  std::vector<Line> lines{{1, 1, 2, 1.0}};
  ControlConfig cfg;
  cfg.controlled = {0};
  cfg.freq_constrained = {0};
  cfg.params = {default_control(true)};
  cfg.horizon_steps = 10;
  cfg.period = 1e-3;
  return NetworkCase(std::move(buses), std::move(lines), std::move(cfg));
}

NetworkCase two_gen_case() {
  std::vector<Bus> buses{{1, 0.2, 1.0, 0.3}, {2, 0.25, 1.0, -0.3}};
  std::vector<Line> lines{{1, 1, 2, 2.0}};
  ControlConfig cfg;
  cfg.controlled = {0, 1};
  cfg.freq_constrained = {0, 1};
  cfg.params = {default_control(true), default_control(true)};
  cfg.horizon_steps = 150;
  cfg.period = 1e-3;
  return NetworkCase(std::move(buses), std::move(lines), std::move(cfg));
}

NetworkCase random_case(std::mt19937_64& rng, int max_buses, int horizon_steps,
                        double period) {
  std::uniform_int_distribution<int> nbus(2, max_buses);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = nbus(rng);

  std::vector<Bus> buses;
  bool has_gen = false;
  for (int i = 1; i <= n; ++i) {
    Bus b;
    b.id = i;
    const bool gen = unit(rng) < 0.5;
    b.inertia = gen ? 0.1 + 0.4 * unit(rng) : 0.0;
    has_gen = has_gen || gen;
    b.damping = 0.5 + unit(rng);
    b.injection = 0.0;
    buses.push_back(b);
  }
  if (!has_gen) buses[0].inertia = 0.2;

  // Balanced small injections so the synchronization condition holds.
  double total = 0;
  for (int i = 0; i < n - 1; ++i) {
    buses[static_cast<std::size_t>(i)].injection = 0.4 * (unit(rng) - 0.5);
    total += buses[static_cast<std::size_t>(i)].injection;
  }
  buses[static_cast<std::size_t>(n - 1)].injection = -total;

  // Random spanning tree plus a few chords.
  std::vector<Line> lines;
  std::set<std::pair<int, int>> used;
  int next_id = 1;
  for (int i = 2; i <= n; ++i) {
    std::uniform_int_distribution<int> pick(1, i - 1);
    const int j = pick(rng);
    lines.push_back({next_id++, j, i, 2.0 + 3.0 * unit(rng)});
    used.insert({std::min(i, j), std::max(i, j)});
  }
  const int extra = static_cast<int>(unit(rng) * n / 2);
  for (int e = 0; e < extra; ++e) {
    std::uniform_int_distribution<int> pick(1, n);
    int a = pick(rng), b = pick(rng);
    if (a == b) continue;
    auto key = std::minmax(a, b);
    if (used.count({key.first, key.second})) continue;
    used.insert({key.first, key.second});
    lines.push_back({next_id++, a, b, 2.0 + 3.0 * unit(rng)});
  }

  ControlConfig cfg;
  cfg.horizon_steps = horizon_steps;
  cfg.period = period;
  for (int i = 0; i < n; ++i) {
    if (unit(rng) < 0.5) cfg.controlled.push_back(i);
  }
  if (cfg.controlled.empty()) cfg.controlled.push_back(0);
  for (int b : cfg.controlled) {
    const bool constrain = unit(rng) < 0.6;
    if (constrain) cfg.freq_constrained.push_back(b);
    cfg.params.push_back(default_control(constrain));
  }
  return NetworkCase(std::move(buses), std::move(lines), std::move(cfg));
}

void random_state_in_region(std::mt19937_64& rng, const NetworkCase& cse,
                            const Equilibrium& eq, double level_frac,
                            Eigen::VectorXd& angles, Eigen::VectorXd& freqs) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const Eigen::MatrixXd d = incidence_matrix(cse);
  const double level = level_frac * eq.max_safe_energy;
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Eigen::VectorXd theta(cse.bus_count());
    for (int i = 0; i < cse.bus_count(); ++i) theta[i] = 0.15 * unit(rng);
    angles = eq.angles + d * theta;
    freqs = Eigen::VectorXd::Constant(cse.bus_count(), eq.sync_freq);
    for (int i : cse.generators()) freqs[i] += 0.05 * unit(rng);

    Eigen::VectorXd wg(static_cast<Eigen::Index>(cse.generators().size()));
    for (std::size_t g = 0; g < cse.generators().size(); ++g)
      wg[static_cast<Eigen::Index>(g)] = freqs[cse.generators()[g]];
    if (!in_energy_region(cse, eq, level, angles, wg)) continue;

    // Zero-inertia frequencies come from the algebraic rows.
    algebraic_frequencies(cse, angles, Eigen::VectorXd::Zero(cse.bus_count()),
                          cse.injection(), freqs);
    bool safe = true;
    for (int b : cse.config().freq_constrained) {
      const BusControl& p = cse.config().at(b);
      if (freqs[b] < p.omega_min || freqs[b] > p.omega_max) safe = false;
    }
    if (safe) return;
  }
  throw std::runtime_error("could not sample a state inside the region");
}

bool bfs_connected(int n, const std::vector<std::pair<int, int>>& edges) {
  if (n == 0) return false;
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (auto [a, b] : edges) {
    adj[static_cast<std::size_t>(a)].push_back(b);
    adj[static_cast<std::size_t>(b)].push_back(a);
  }
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::deque<int> q{0};
  seen[0] = 1;
  int count = 1;
  while (!q.empty()) {
    const int v = q.front();
    q.pop_front();
    for (int w : adj[static_cast<std::size_t>(v)])
      if (!seen[static_cast<std::size_t>(w)]) {
        seen[static_cast<std::size_t>(w)] = 1;
        ++count;
        q.push_back(w);
      }
  }
  return count == n;
}

}  // namespace testsup
