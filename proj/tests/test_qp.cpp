#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "gridmpc/qp.hpp"

using namespace gridmpc;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

qp::QpProblem make_problem(const Eigen::VectorXd& h, const Eigen::VectorXd& q,
                           const Eigen::MatrixXd& a, const Eigen::VectorXd& l,
                           const Eigen::VectorXd& u) {
  qp::QpProblem p;
  p.hessian_diag = h;
  p.linear_cost = q;
  p.rows = a.sparseView();
  p.rows.makeCompressed();
  p.lower = l;
  p.upper = u;
  return p;
}

// Projected gradient on box-constrained problems, run to convergence or
// an iteration cap; independent of the ADMM path.
Eigen::VectorXd projected_gradient_box(const Eigen::VectorXd& h, const Eigen::VectorXd& q,
                                       const Eigen::VectorXd& l, const Eigen::VectorXd& u,
                                       int max_iter = 1000000) {
  const Eigen::Index n = h.size();
  Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = std::min(std::max(0.0, l[i]), u[i]);
  const double lip = h.maxCoeff() + 1e-12;
  const double step = 1.0 / lip;
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd g = h.asDiagonal() * z + q;
    Eigen::VectorXd next = z - step * g;
    for (Eigen::Index i = 0; i < n; ++i) next[i] = std::min(std::max(next[i], l[i]), u[i]);
    if ((next - z).lpNorm<Eigen::Infinity>() < 1e-14) return next;
    z = next;
  }
  return z;
}

double objective(const qp::QpProblem& p, const Eigen::VectorXd& z) {
  return 0.5 * z.dot(p.hessian_diag.asDiagonal() * z) + p.linear_cost.dot(z);
}

}  // namespace

TEST_CASE("active bound") {
  // min u^2 s.t. u >= 1
  Eigen::VectorXd h(1), q(1), l(1), u(1);
  h << 2.0;
  q << 0.0;
  l << 1.0;
  u << kInf;
  Eigen::MatrixXd a(1, 1);
  a << 1.0;
  const auto sol = qp::solve(make_problem(h, q, a, l, u));
  REQUIRE(sol.status == qp::SolveStatus::optimal);
  CHECK(sol.primal[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("unconstrained minimum") {
  // H = diag(2,2), q = (-2,-4) -> z* = (1,2)
  Eigen::VectorXd h(2), q(2);
  h << 2.0, 2.0;
  q << -2.0, -4.0;
  qp::QpProblem p;
  p.hessian_diag = h;
  p.linear_cost = q;
  p.rows.resize(0, 2);
  p.lower.resize(0);
  p.upper.resize(0);
  const auto sol = qp::solve(p);
  REQUIRE(sol.status == qp::SolveStatus::optimal);
  CHECK(sol.primal[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(sol.primal[1] == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("contradictory rows are reported primal infeasible") {
  // u = 1 and u <= 0 simultaneously.
  Eigen::VectorXd h(1), q(1), l(2), u(2);
  h << 2.0;
  q << 0.0;
  l << 1.0, -kInf;
  u << 1.0, 0.0;
  Eigen::MatrixXd a(2, 1);
  a << 1.0, 1.0;
  const auto sol = qp::solve(make_problem(h, q, a, l, u));
  CHECK(sol.status == qp::SolveStatus::primal_infeasible);
}

TEST_CASE("kkt check on toy problems") {
  Eigen::VectorXd h(1), q(1), l(1), u(1);
  h << 2.0;
  q << 0.0;
  l << 1.0;
  u << kInf;
  Eigen::MatrixXd a(1, 1);
  a << 1.0;
  const auto prob = make_problem(h, q, a, l, u);
  const auto sol = qp::solve(prob);
  const auto rep = qp::kkt_check(prob, sol);
  CHECK(rep.ok(1e-5));
}

TEST_CASE("random box QPs match a projected-gradient oracle") {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> dim(1, 30);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (qp::QpSettings::Backend backend :
       {qp::QpSettings::Backend::dense_normal, qp::QpSettings::Backend::kkt}) {
    for (int trial = 0; trial < 40; ++trial) {
      const int n = dim(rng);
      Eigen::VectorXd h(n), q(n), l(n), u(n);
      for (int i = 0; i < n; ++i) {
        h[i] = 0.5 + 4.0 * unit(rng);
        q[i] = 4.0 * (unit(rng) - 0.5);
        const double a = 2.0 * (unit(rng) - 0.5);
        const double b = a + 2.0 * unit(rng);
        l[i] = unit(rng) < 0.15 ? -kInf : a;
        u[i] = unit(rng) < 0.15 ? kInf : b;
      }
      const Eigen::MatrixXd a_mat = Eigen::MatrixXd::Identity(n, n);
      const auto prob = make_problem(h, q, a_mat, l, u);
      qp::QpSettings st;
      st.backend = backend;
      const auto sol = qp::solve(prob, st);
      REQUIRE(sol.status == qp::SolveStatus::optimal);

      const Eigen::VectorXd oracle = projected_gradient_box(h, q, l, u);
      CHECK(std::fabs(objective(prob, sol.primal) - objective(prob, oracle)) <= 1e-6);
      CHECK(qp::kkt_check(prob, sol).ok(1e-5));
    }
  }
}

TEST_CASE("general rows pass the kkt check") {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 5 + static_cast<int>(10 * unit(rng));
    const int m = n + 3;
    Eigen::VectorXd h(n), q(n);
    for (int i = 0; i < n; ++i) {
      h[i] = 0.5 + unit(rng);
      q[i] = unit(rng) - 0.5;
    }
    Eigen::MatrixXd a(m, n);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < n; ++c) a(r, c) = unit(rng) < 0.4 ? unit(rng) - 0.5 : 0.0;
    Eigen::VectorXd l(m), u(m);
    for (int r = 0; r < m; ++r) {
      l[r] = -1.0 - unit(rng);
      u[r] = 1.0 + unit(rng);
    }
    const auto prob = make_problem(h, q, a, l, u);
    const auto sol = qp::solve(prob);
    REQUIRE(sol.status == qp::SolveStatus::optimal);
    CHECK(qp::kkt_check(prob, sol).ok(1e-5));
  }
}

TEST_CASE("warm start resolves in a fraction of cold iterations") {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = 20;
  Eigen::VectorXd h(n), q(n), l(n), u(n);
  for (int i = 0; i < n; ++i) {
    h[i] = 1.0 + unit(rng);
    q[i] = 2.0 * (unit(rng) - 0.5);
    l[i] = -0.3 * unit(rng);
    u[i] = 0.3 * unit(rng);
  }
  const auto prob = make_problem(h, q, Eigen::MatrixXd::Identity(n, n), l, u);
  qp::QpSolver solver(prob);
  const auto cold = solver.solve();
  REQUIRE(cold.status == qp::SolveStatus::optimal);
  REQUIRE(cold.iterations > 0);

  const auto warm = solver.solve(qp::WarmStart{cold.primal, cold.dual});
  CHECK(warm.status == qp::SolveStatus::optimal);
  CHECK(warm.iterations <= std::max(1, cold.iterations / 10));
}

TEST_CASE("solves are deterministic") {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = 12;
  Eigen::VectorXd h(n), q(n), l(n), u(n);
  for (int i = 0; i < n; ++i) {
    h[i] = 1.0 + unit(rng);
    q[i] = unit(rng) - 0.5;
    l[i] = -unit(rng);
    u[i] = unit(rng);
  }
  const auto prob = make_problem(h, q, Eigen::MatrixXd::Identity(n, n), l, u);
  const auto s1 = qp::solve(prob);
  const auto s2 = qp::solve(prob);
  CHECK(s1.primal == s2.primal);
  CHECK(s1.dual == s2.dual);
  CHECK(s1.iterations == s2.iterations);
}

TEST_CASE("scaling the objective leaves the argmin unchanged") {
  Eigen::VectorXd h(2), q(2), l(2), u(2);
  h << 2.0, 4.0;
  q << -1.0, 2.0;
  l << -0.2, -0.2;
  u << 0.4, 0.4;
  const auto base = make_problem(h, q, Eigen::MatrixXd::Identity(2, 2), l, u);
  const auto scaled = make_problem(7.5 * h, 7.5 * q, Eigen::MatrixXd::Identity(2, 2), l, u);
  const auto s1 = qp::solve(base);
  const auto s2 = qp::solve(scaled);
  REQUIRE(s1.status == qp::SolveStatus::optimal);
  REQUIRE(s2.status == qp::SolveStatus::optimal);
  CHECK((s1.primal - s2.primal).lpNorm<Eigen::Infinity>() <= 1e-6);
}

TEST_CASE("problem dump is parseable text") {
  Eigen::VectorXd h(1), q(1), l(1), u(1);
  h << 2.0;
  q << -1.0;
  l << 0.0;
  u << 2.0;
  Eigen::MatrixXd a(1, 1);
  a << 1.0;
  const std::string dump = qp::dump_problem(make_problem(h, q, a, l, u));
  CHECK(dump.find("qp 1 1") != std::string::npos);
  CHECK(dump.find("a 0 0 1") != std::string::npos);
  CHECK(dump.find("b 0 0 2") != std::string::npos);
}
