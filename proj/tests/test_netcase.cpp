#include <doctest.h>

#include <random>
#include <set>
#include <sstream>

#include "gridmpc/netcase.hpp"
#include "support.hpp"

using namespace gridmpc;

namespace {

const char* kTwoBusText = R"(# smallest connected case
[buses]
1  1.0  1.0   0.5
2  0.0  1.0  -0.5
[lines]
1  1  2  1.0
[control]
controlled = 1
freq_constrained = 1
bus 1 thr_lo=-0.1 thr_hi=0.1 c=2 xi=1 gamma_up=1 gamma_dn=1 w_lo=-0.2 w_hi=0.2 e=500 delta=0.05
[horizon]
N = 10
T = 0.001
)";

}  // namespace

TEST_CASE("two-bus case parses") {
  const NetworkCase cse = parse_case(kTwoBusText);
  CHECK(cse.bus_count() == 2);
  CHECK(cse.line_count() == 1);
  CHECK(cse.generators() == std::vector<int>{0});
  CHECK(cse.loads() == std::vector<int>{1});
  CHECK(cse.config().horizon_steps == 10);
  CHECK(cse.config().period == 0.001);
}

TEST_CASE("zero damping is rejected") {
  std::string text = kTwoBusText;
  const auto pos = text.find("2  0.0  1.0");
  text.replace(pos, std::string("2  0.0  1.0").size(), "2  0.0  0.0");
  CHECK_THROWS_WITH_AS(parse_case(text), doctest::Contains("damping must be positive"),
                       CaseError);
}

TEST_CASE("shipped 39-bus case") {
  const NetworkCase cse = load_case(testsup::cases_dir() / "ieee39.case");
  CHECK(cse.bus_count() == 39);
  CHECK(cse.line_count() == 46);
  CHECK(cse.generators().size() == 10);
}

TEST_CASE("incidence matrix") {
  const NetworkCase two = parse_case(kTwoBusText);
  const Eigen::MatrixXd d2 = incidence_matrix(two);
  CHECK(d2.rows() == 1);
  CHECK(d2(0, 0) == 1.0);
  CHECK(d2(0, 1) == -1.0);

  // Triangle with b = (1, 2, 3): expected rows and Laplacian diagonal
  // formed by hand from D' Y_b D.
  std::vector<Bus> buses{{1, 1.0, 1.0, 0.0}, {2, 0.0, 1.0, 0.0}, {3, 0.0, 1.0, 0.0}};
  std::vector<Line> lines{{1, 1, 2, 1.0}, {2, 2, 3, 2.0}, {3, 1, 3, 3.0}};
  ControlConfig cfg;
  cfg.controlled = {0};
  cfg.freq_constrained = {};
  cfg.params.resize(1);
  cfg.params[0].thr_min = -0.1;
  cfg.params[0].thr_max = 0.1;
  cfg.params[0].effort_weight = 1;
  cfg.params[0].gain_up = 1;
  cfg.params[0].gain_down = 1;
  cfg.horizon_steps = 5;
  cfg.period = 1e-3;
  const NetworkCase tri(buses, lines, cfg);
  const Eigen::MatrixXd d = incidence_matrix(tri);
  CHECK(d.row(0) == Eigen::RowVector3d(1, -1, 0));
  CHECK(d.row(1) == Eigen::RowVector3d(0, 1, -1));
  CHECK(d.row(2) == Eigen::RowVector3d(1, 0, -1));
  CHECK((d * Eigen::Vector3d::Ones()).norm() == 0.0);

  const Eigen::MatrixXd lap = laplacian(tri);
  CHECK(lap(0, 0) == doctest::Approx(4.0));
  CHECK(lap(1, 1) == doctest::Approx(3.0));
  CHECK(lap(2, 2) == doctest::Approx(5.0));
  CHECK((lap - lap.transpose()).norm() == 0.0);
}

TEST_CASE("laplacian identities on the 39-bus case") {
  const NetworkCase cse = load_case(testsup::cases_dir() / "ieee39.case");
  const Eigen::MatrixXd d = incidence_matrix(cse);
  const Eigen::MatrixXd lap = laplacian(cse);
  CHECK((lap * Eigen::VectorXd::Ones(39)).lpNorm<Eigen::Infinity>() < 1e-12);
  // Element-wise reconstruction.
  const Eigen::MatrixXd rebuilt = d.transpose() * cse.susceptance().asDiagonal() * d;
  CHECK((lap - rebuilt).lpNorm<Eigen::Infinity>() == 0.0);
  // Row sums of D vanish.
  CHECK((d * Eigen::VectorXd::Ones(39)).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("connectivity matches a BFS oracle on random graphs") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> nbus(2, 20);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int checked = 0;
  for (int trial = 0; trial < 300 && checked < 150; ++trial) {
    const int n = nbus(rng);
    std::vector<std::pair<int, int>> edges;
    std::set<std::pair<int, int>> used;
    const double density = 1.2 / n + unit(rng) * 0.2;
    for (int a = 0; a < n; ++a)
      for (int b = a + 1; b < n; ++b)
        if (unit(rng) < density) {
          edges.push_back({a, b});
          used.insert({a, b});
        }
    if (edges.empty()) continue;
    ++checked;

    std::vector<Bus> buses;
    for (int i = 1; i <= n; ++i) buses.push_back({i, i == 1 ? 1.0 : 0.0, 1.0, 0.0});
    std::vector<Line> lines;
    int id = 1;
    for (auto [a, b] : edges) lines.push_back({id++, a + 1, b + 1, 1.0});
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

    const bool oracle = testsup::bfs_connected(n, edges);
    if (oracle) {
      CHECK_NOTHROW(NetworkCase(buses, lines, cfg));
    } else {
      CHECK_THROWS_WITH_AS(NetworkCase(buses, lines, cfg),
                           doctest::Contains("not connected"), CaseError);
    }
  }
  CHECK(checked >= 100);
}

TEST_CASE("serialize round-trip") {
  for (const char* name : {"ieee39.case", "ieee9.case", "twogen.case"}) {
    const NetworkCase cse = load_case(testsup::cases_dir() / name);
    const NetworkCase back = parse_case(serialize_case(cse));
    CHECK(back.bus_count() == cse.bus_count());
    CHECK(back.line_count() == cse.line_count());
    CHECK(back.inertia() == cse.inertia());
    CHECK(back.damping() == cse.damping());
    CHECK(back.injection() == cse.injection());
    CHECK(back.susceptance() == cse.susceptance());
    CHECK(back.config().controlled == cse.config().controlled);
    CHECK(back.config().freq_constrained == cse.config().freq_constrained);
    CHECK(back.config().horizon_steps == cse.config().horizon_steps);
    CHECK(back.config().period == cse.config().period);
    for (std::size_t j = 0; j < cse.config().params.size(); ++j) {
      CHECK(back.config().params[j].thr_min == cse.config().params[j].thr_min);
      CHECK(back.config().params[j].effort_weight == cse.config().params[j].effort_weight);
      CHECK(back.config().params[j].omega_max == cse.config().params[j].omega_max);
      CHECK(back.config().params[j].margin == cse.config().params[j].margin);
    }
    // Second round-trip is byte-identical.
    CHECK(serialize_case(back) == serialize_case(cse));
  }
}
