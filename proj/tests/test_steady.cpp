#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "gridmpc/steady.hpp"
#include "support.hpp"

using namespace gridmpc;
using testsup::two_bus_case;

namespace {
constexpr double kPi = std::numbers::pi;
}

TEST_CASE("sync frequency and imbalance") {
  const NetworkCase cse = two_bus_case();

  auto [w0, p0] = sync_frequency(cse, Eigen::Vector2d(0, 0));
  CHECK(w0 == 0.0);
  CHECK(p0.norm() == 0.0);

  auto [w1, p1] = sync_frequency(cse, Eigen::Vector2d(1, -1));
  CHECK(w1 == 0.0);
  CHECK(p1 == Eigen::Vector2d(1, -1));

  // E = (1, 2) via a modified case.
  std::vector<Bus> buses{{1, 1.0, 1.0, 2.0}, {2, 0.0, 2.0, 1.0}};
  std::vector<Line> lines{{1, 1, 2, 1.0}};
  ControlConfig cfg = cse.config();
  const NetworkCase mod(buses, lines, cfg);
  auto [w2, p2] = sync_frequency(mod, Eigen::Vector2d(2, 1));
  CHECK(w2 == doctest::Approx(1.0));
  CHECK(p2[0] == doctest::Approx(1.0));
  CHECK(p2[1] == doctest::Approx(-1.0));
}

TEST_CASE("sync condition") {
  const NetworkCase cse = two_bus_case();
  auto chk = sync_condition(cse, Eigen::Vector2d(0.5, -0.5));
  CHECK(chk.value == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(chk.holds);

  auto fail = sync_condition(cse, Eigen::Vector2d(1.5, -1.5));
  CHECK(fail.value == doctest::Approx(1.5).epsilon(1e-12));
  CHECK_FALSE(fail.holds);

  auto zero = sync_condition(cse, Eigen::Vector2d(0, 0));
  CHECK(zero.value == 0.0);
  CHECK(zero.holds);

  CHECK_THROWS_AS(sync_condition(cse, Eigen::Vector2d(1.0, 0.0)), SteadyStateError);
}

TEST_CASE("sync condition value is invariant under bus relabeling") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const NetworkCase cse = testsup::random_case(rng, 12);
    auto [w, imb] = sync_frequency(cse, cse.injection());
    const double value = sync_condition(cse, imb).value;

    // Shuffle bus order and hand out fresh ids; internal indexes are
    // storage positions, so everything is remapped through `perm`.
    const int n = cse.bus_count();
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> new_id_of_old(static_cast<std::size_t>(n));
    std::vector<Bus> buses;
    for (int k = 0; k < n; ++k) {
      Bus nb = cse.buses()[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])];
      nb.id = k + 1;
      new_id_of_old[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = k + 1;
      buses.push_back(nb);
    }
    std::vector<Line> lines;
    for (const Line& e : cse.lines())
      lines.push_back({e.id, new_id_of_old[static_cast<std::size_t>(cse.index_of(e.from))],
                       new_id_of_old[static_cast<std::size_t>(cse.index_of(e.to))],
                       e.susceptance});
    ControlConfig cfg = cse.config();
    std::vector<int> pos_of_old(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) pos_of_old[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = k;
    for (int& b : cfg.controlled) b = pos_of_old[static_cast<std::size_t>(b)];
    for (int& b : cfg.freq_constrained) b = pos_of_old[static_cast<std::size_t>(b)];
    const NetworkCase relabeled(buses, lines, cfg);

    Eigen::VectorXd inj(n);
    for (int k = 0; k < n; ++k) inj[k] = cse.injection()[perm[static_cast<std::size_t>(k)]];
    auto [w2, imb2] = sync_frequency(relabeled, inj);
    CHECK(w2 == doctest::Approx(w).epsilon(1e-12));
    CHECK(sync_condition(relabeled, imb2).value == doctest::Approx(value).epsilon(1e-9));
  }
}

TEST_CASE("equilibrium angles") {
  const NetworkCase cse = two_bus_case();
  CHECK(equilibrium_angles(cse, Eigen::Vector2d(0, 0)).norm() == 0.0);

  const Eigen::VectorXd lam = equilibrium_angles(cse, Eigen::Vector2d(0.5, -0.5));
  CHECK(lam[0] == doctest::Approx(std::asin(0.5)).epsilon(1e-12));
  CHECK(lam[0] == doctest::Approx(kPi / 6).epsilon(1e-12));
}

TEST_CASE("39-bus equilibrium residual") {
  const NetworkCase cse = load_case(testsup::cases_dir() / "ieee39.case");
  auto [w, imb] = sync_frequency(cse, cse.injection());
  CHECK(sync_condition(cse, imb).holds);
  const Eigen::VectorXd lam = equilibrium_angles(cse, imb);
  const Eigen::MatrixXd d = incidence_matrix(cse);
  const Eigen::VectorXd res =
      d.transpose() * (cse.susceptance().array() * lam.array().sin()).matrix() - imb;
  CHECK(res.lpNorm<Eigen::Infinity>() <= 1e-10);
  CHECK(lam.lpNorm<Eigen::Infinity>() < kPi / 2);
}

TEST_CASE("line potential and energy") {
  CHECK(line_potential(kPi / 2, kPi / 6) == doctest::Approx(0.3424266281861398).epsilon(1e-12));
  CHECK(line_potential(-kPi / 2, kPi / 6) == doctest::Approx(1.9132229549810364).epsilon(1e-12));
  CHECK(line_potential(kPi / 2, 0.0) == doctest::Approx(1.0).epsilon(1e-15));

  const NetworkCase cse = two_bus_case();
  const Equilibrium eq = compute_equilibrium(cse);
  CHECK(eq.sync_freq == 0.0);
  CHECK(eq.angles[0] == doctest::Approx(kPi / 6).epsilon(1e-12));

  Eigen::VectorXd wg(1);
  wg[0] = eq.sync_freq;
  CHECK(energy(cse, eq, eq.angles, wg) == doctest::Approx(0.0).epsilon(1e-15));
  wg[0] = eq.sync_freq + 1.0;
  CHECK(energy(cse, eq, eq.angles, wg) == doctest::Approx(0.5).epsilon(1e-12));

  Eigen::VectorXd lam(1);
  lam[0] = kPi / 2;
  wg[0] = eq.sync_freq;
  CHECK(energy(cse, eq, lam, wg) == doctest::Approx(0.3424266281861398).epsilon(1e-12));
}

TEST_CASE("max safe energy") {
  const NetworkCase cse = two_bus_case();
  const Equilibrium eq = compute_equilibrium(cse);
  CHECK(eq.max_safe_energy == doctest::Approx(0.3424266281861398).epsilon(1e-12));

  // Shifted so the equilibrium sits at zero angle.
  const Equilibrium eq0 = compute_equilibrium(cse, Eigen::Vector2d(0, 0));
  CHECK(max_safe_energy(cse, eq0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("separable formula matches a boundary grid search on two-edge cases") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    // Path 1-2-3 (two edges) with random susceptances and injections.
    std::vector<Bus> buses{{1, 1.0, 1.0, 0.0}, {2, 0.0, 1.0, 0.0}, {3, 0.0, 1.0, 0.0}};
    std::vector<Line> lines{{1, 1, 2, 1.0 + unit(rng)}, {2, 2, 3, 1.0 + unit(rng)}};
    ControlConfig cfg;
    cfg.controlled = {0};
    cfg.params.resize(1);
    cfg.params[0].thr_min = -0.1;
    cfg.params[0].thr_max = 0.1;
    cfg.params[0].effort_weight = 1;
    cfg.params[0].gain_up = 1;
    cfg.params[0].gain_down = 1;
    cfg.horizon_steps = 1;
    cfg.period = 1.0;
    const NetworkCase cse(buses, lines, cfg);

    Eigen::VectorXd inj(3);
    inj << 0.4 * unit(rng), 0.2 * (unit(rng) - 0.5), 0.0;
    inj[2] = -inj[0] - inj[1];
    const Equilibrium eq = compute_equilibrium(cse, inj);

    // Oracle: minimize the potential over the boundary of the angle box
    // on a 1e-3 grid (one edge pinned at +-pi/2, the other free).
    double oracle = std::numeric_limits<double>::infinity();
    const double step = 1e-3;
    for (int pinned = 0; pinned < 2; ++pinned)
      for (double sign : {-1.0, 1.0})
        for (double free_val = -kPi / 2; free_val <= kPi / 2 + 1e-12; free_val += step) {
          Eigen::VectorXd lam(2);
          lam[pinned] = sign * kPi / 2;
          lam[1 - pinned] = free_val;
          Eigen::VectorXd wg(1);
          wg[0] = eq.sync_freq;
          oracle = std::min(oracle, energy(cse, eq, lam, wg));
        }
    CHECK(std::fabs(eq.max_safe_energy - oracle) <= 1e-6);
  }
}

TEST_CASE("energy vanishes only at the equilibrium") {
  const NetworkCase cse = two_bus_case();
  const Equilibrium eq = compute_equilibrium(cse);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> box(-kPi / 2, kPi / 2);
  std::uniform_real_distribution<double> fr(-1.0, 1.0);
  for (int s = 0; s < 10000; ++s) {
    Eigen::VectorXd lam(1), wg(1);
    lam[0] = box(rng);
    wg[0] = eq.sync_freq + fr(rng);
    const double v = energy(cse, eq, lam, wg);
    const bool near_eq =
        std::fabs(lam[0] - eq.angles[0]) < 1e-8 && std::fabs(wg[0] - eq.sync_freq) < 1e-8;
    if (!near_eq) CHECK(v > 0.0);
  }
}

TEST_CASE("energy region membership") {
  const NetworkCase cse = two_bus_case();
  const Equilibrium eq = compute_equilibrium(cse);
  Eigen::VectorXd wg(1);
  wg[0] = eq.sync_freq;
  CHECK(in_energy_region(cse, eq, 1e-6, eq.angles, wg));

  Eigen::VectorXd lam(1);
  lam[0] = 2.0;  // outside the angle box regardless of energy
  CHECK_FALSE(in_energy_region(cse, eq, 1e9, lam, wg));

  wg[0] = eq.sync_freq + 1.0;  // energy 0.5 > 0.3
  CHECK_FALSE(in_energy_region(cse, eq, 0.3, eq.angles, wg));
}
