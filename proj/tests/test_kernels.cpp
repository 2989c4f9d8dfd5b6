#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "gridmpc/kernels.hpp"

using namespace gridmpc;

namespace {

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n, double lo = -2.0,
                               double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

}  // namespace

TEST_CASE("kernel scalar reference values") {
  std::vector<double> a{1, 2, 3, 4, 5};
  std::vector<double> b{2, -1, 0.5, 1, -2};
  CHECK(kernels::scalar::dot(a.data(), b.data(), 5) == doctest::Approx(1*2 - 2 + 1.5 + 4 - 10));
  CHECK(kernels::scalar::inf_norm(b.data(), 5) == 2.0);
  CHECK(kernels::scalar::inf_norm_diff(a.data(), b.data(), 5) == 7.0);

  std::vector<double> y{1, 1, 1, 1, 1};
  kernels::scalar::axpy(y.data(), 2.0, a.data(), 5);
  CHECK(y[4] == 11.0);
}

#ifdef GRIDMPC_HAVE_AVX2_BUILD
TEST_CASE("avx2 variants match the scalar reference") {
  if (!__builtin_cpu_supports("avx2") || !__builtin_cpu_supports("fma")) return;

  std::mt19937_64 rng(42);
  for (std::size_t n : {0UL, 1UL, 3UL, 4UL, 7UL, 8UL, 64UL, 129UL, 1000UL}) {
    auto a = random_vec(rng, n);
    auto b = random_vec(rng, n);
    auto lo = random_vec(rng, n, -3.0, -0.5);
    auto hi = random_vec(rng, n, 0.5, 3.0);
    auto rho = random_vec(rng, n, 0.1, 2.0);
    std::vector<double> rho_inv(n);
    for (std::size_t i = 0; i < n; ++i) rho_inv[i] = 1.0 / rho[i];

    // FMA-based reductions may differ from the reference in the last
    // bits; element-wise min/max ops must agree exactly.
    CHECK(kernels::avx2::dot(a.data(), b.data(), n) ==
          doctest::Approx(kernels::scalar::dot(a.data(), b.data(), n)).epsilon(1e-13));
    CHECK(kernels::avx2::inf_norm(a.data(), n) == kernels::scalar::inf_norm(a.data(), n));
    CHECK(kernels::avx2::inf_norm_diff(a.data(), b.data(), n) ==
          kernels::scalar::inf_norm_diff(a.data(), b.data(), n));

    std::vector<double> out_s(n), out_v(n);
    kernels::scalar::clamp(out_s.data(), a.data(), lo.data(), hi.data(), n);
    kernels::avx2::clamp(out_v.data(), a.data(), lo.data(), hi.data(), n);
    CHECK(out_s == out_v);

    auto ys = random_vec(rng, n);
    auto yv = ys;
    kernels::scalar::axpy(ys.data(), 1.7, a.data(), n);
    kernels::avx2::axpy(yv.data(), 1.7, a.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(ys[i] == doctest::Approx(yv[i]).epsilon(1e-15));

    kernels::scalar::add_scaled(out_s.data(), 1.6, a.data(), -0.6, b.data(), n);
    kernels::avx2::add_scaled(out_v.data(), 1.6, a.data(), -0.6, b.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(out_s[i] == doctest::Approx(out_v[i]).epsilon(1e-15));

    auto zt = random_vec(rng, n);
    auto z = random_vec(rng, n);
    auto yy = random_vec(rng, n);
    std::vector<double> ws(n), wv(n);
    kernels::scalar::relax_shift(ws.data(), 1.6, zt.data(), z.data(), yy.data(), rho_inv.data(), n);
    kernels::avx2::relax_shift(wv.data(), 1.6, zt.data(), z.data(), yy.data(), rho_inv.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(ws[i] == doctest::Approx(wv[i]).epsilon(1e-14));

    std::vector<double> zs(n), zv(n);
    auto ys2 = random_vec(rng, n);
    auto yv2 = ys2;
    kernels::scalar::project_dual(zs.data(), ys2.data(), ws.data(), lo.data(), hi.data(), rho.data(), n);
    kernels::avx2::project_dual(zv.data(), yv2.data(), ws.data(), lo.data(), hi.data(), rho.data(), n);
    CHECK(zs == zv);
    for (std::size_t i = 0; i < n; ++i) CHECK(ys2[i] == doctest::Approx(yv2[i]).epsilon(1e-14));

    auto q = random_vec(rng, n);
    kernels::scalar::diag_mul_add(out_s.data(), rho.data(), a.data(), q.data(), n);
    kernels::avx2::diag_mul_add(out_v.data(), rho.data(), a.data(), q.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(out_s[i] == doctest::Approx(out_v[i]).epsilon(1e-15));
  }
}
#endif

TEST_CASE("dispatch reports an isa") {
  const std::string isa = kernels::active_isa();
  CHECK((isa == "avx2" || isa == "scalar"));
  // The dispatched table must be callable.
  std::vector<double> a{1, 2, 3};
  CHECK(kernels::ops().inf_norm(a.data(), 3) == 3.0);
}
