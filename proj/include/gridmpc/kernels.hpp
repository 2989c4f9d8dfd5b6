#pragma once

// Vector arithmetic kernels used by the QP solver inner loop and the
// trajectory rollouts.  Every kernel has a portable scalar reference
// implementation and, on x86-64 with AVX2+FMA, a vectorized variant.
// The active variant is picked once at startup from CPUID; call sites
// go through the dispatch table below so scalar and SIMD paths stay
// interchangeable and equivalence-testable.

#include <cstddef>

namespace gridmpc::kernels {

struct Ops {
  // y += a*x
  void (*axpy)(double* y, double a, const double* x, std::size_t n);
  // out = a*x + b*y
  void (*add_scaled)(double* out, double a, const double* x, double b, const double* y,
                     std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*inf_norm)(const double* x, std::size_t n);
  double (*inf_norm_diff)(const double* a, const double* b, std::size_t n);
  // out = min(max(v, lo), hi), element-wise bounds
  void (*clamp)(double* out, const double* v, const double* lo, const double* hi,
                std::size_t n);
  // w = alpha*zt + (1-alpha)*z + y .* rho_inv   (ADMM relaxation shift)
  void (*relax_shift)(double* w, double alpha, const double* zt, const double* z,
                      const double* y, const double* rho_inv, std::size_t n);
  // z = clamp(w, lo, hi); y = rho .* (w - z)   (ADMM projection + dual step;
  // w already carries the scaled dual, so this is the full dual update)
  void (*project_dual)(double* z, double* y, const double* w, const double* lo,
                       const double* hi, const double* rho, std::size_t n);
  // out = d .* x + q  (diagonal Hessian apply)
  void (*diag_mul_add)(double* out, const double* d, const double* x, const double* q,
                       std::size_t n);
};

namespace scalar {
void axpy(double* y, double a, const double* x, std::size_t n);
void add_scaled(double* out, double a, const double* x, double b, const double* y,
                std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
double inf_norm(const double* x, std::size_t n);
double inf_norm_diff(const double* a, const double* b, std::size_t n);
void clamp(double* out, const double* v, const double* lo, const double* hi,
           std::size_t n);
void relax_shift(double* w, double alpha, const double* zt, const double* z,
                 const double* y, const double* rho_inv, std::size_t n);
void project_dual(double* z, double* y, const double* w, const double* lo,
                  const double* hi, const double* rho, std::size_t n);
void diag_mul_add(double* out, const double* d, const double* x, const double* q,
                  std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define GRIDMPC_HAVE_AVX2_BUILD 1
namespace avx2 {
void axpy(double* y, double a, const double* x, std::size_t n);
void add_scaled(double* out, double a, const double* x, double b, const double* y,
                std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
double inf_norm(const double* x, std::size_t n);
double inf_norm_diff(const double* a, const double* b, std::size_t n);
void clamp(double* out, const double* v, const double* lo, const double* hi,
           std::size_t n);
void relax_shift(double* w, double alpha, const double* zt, const double* z,
                 const double* y, const double* rho_inv, std::size_t n);
void project_dual(double* z, double* y, const double* w, const double* lo,
                  const double* hi, const double* rho, std::size_t n);
void diag_mul_add(double* out, const double* d, const double* x, const double* q,
                  std::size_t n);
}  // namespace avx2
#endif

/// Dispatch table selected at startup (AVX2 when the CPU supports it,
/// scalar otherwise; GRIDMPC_FORCE_SCALAR=1 in the environment forces
/// the reference path).
const Ops& ops();

/// Name of the active variant ("avx2" or "scalar").
const char* active_isa();

}  // namespace gridmpc::kernels
