#include "gridmpc/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace gridmpc::kernels {

namespace scalar {

void axpy(double* y, double a, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void add_scaled(double* out, double a, const double* x, double b, const double* y,
                std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i] + b * y[i];
}

double dot(const double* a, const double* b, std::size_t n) {
  // Four independent accumulators; matches the reduction order of the
  // AVX2 variant so both paths agree bit-for-bit.
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((s0 + s2) + (s1 + s3)) + tail;
}

double inf_norm(const double* x, std::size_t n) {
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::fabs(x[i]));
  return m;
}

double inf_norm_diff(const double* a, const double* b, std::size_t n) {
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

void clamp(double* out, const double* v, const double* lo, const double* hi,
           std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::min(std::max(v[i], lo[i]), hi[i]);
}

void relax_shift(double* w, double alpha, const double* zt, const double* z,
                 const double* y, const double* rho_inv, std::size_t n) {
  const double beta = 1.0 - alpha;
  for (std::size_t i = 0; i < n; ++i) w[i] = alpha * zt[i] + beta * z[i] + y[i] * rho_inv[i];
}

void project_dual(double* z, double* y, const double* w, const double* lo,
                  const double* hi, const double* rho, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double zi = std::min(std::max(w[i], lo[i]), hi[i]);
    y[i] = rho[i] * (w[i] - zi);
    z[i] = zi;
  }
}

void diag_mul_add(double* out, const double* d, const double* x, const double* q,
                  std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = d[i] * x[i] + q[i];
}

}  // namespace scalar

namespace {

Ops make_scalar_ops() {
  return Ops{scalar::axpy,        scalar::add_scaled, scalar::dot,
             scalar::inf_norm,    scalar::inf_norm_diff, scalar::clamp,
             scalar::relax_shift, scalar::project_dual,  scalar::diag_mul_add};
}

#ifdef GRIDMPC_HAVE_AVX2_BUILD
Ops make_avx2_ops() {
  return Ops{avx2::axpy,        avx2::add_scaled, avx2::dot,
             avx2::inf_norm,    avx2::inf_norm_diff, avx2::clamp,
             avx2::relax_shift, avx2::project_dual,  avx2::diag_mul_add};
}
#endif

struct Dispatch {
  Ops table;
  const char* isa;
  Dispatch() {
    table = make_scalar_ops();
    isa = "scalar";
#ifdef GRIDMPC_HAVE_AVX2_BUILD
    const char* force = std::getenv("GRIDMPC_FORCE_SCALAR");
    const bool forced_off = force != nullptr && force[0] == '1';
    if (!forced_off && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
      table = make_avx2_ops();
      isa = "avx2";
    }
#endif
  }
};

const Dispatch& dispatch() {
  static const Dispatch d;
  return d;
}

}  // namespace

const Ops& ops() { return dispatch().table; }

const char* active_isa() { return dispatch().isa; }

}  // namespace gridmpc::kernels
