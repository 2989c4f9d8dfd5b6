// AVX2+FMA variants.  Compiled with -mavx2 -mfma (see CMakeLists); only
// reached when CPUID reports both features.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "gridmpc/kernels.hpp"

namespace gridmpc::kernels::avx2 {

void axpy(double* y, double a, const double* x, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

void add_scaled(double* out, double a, const double* x, double b, const double* y,
                std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  const __m256d vb = _mm256_set1_pd(b);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d t = _mm256_mul_pd(vb, _mm256_loadu_pd(y + i));
    _mm256_storeu_pd(out + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), t));
  }
  for (; i < n; ++i) out[i] = std::fma(a, x[i], b * y[i]);
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  }
  // Lane k accumulated a[k], a[k+4], ...; reduce as (l0+l2)+(l1+l3) to
  // match the scalar reference reduction.
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  double s = (lanes[0] + lanes[2]) + (lanes[1] + lanes[3]);
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return s + tail;
}

double inf_norm(const double* x, std::size_t n) {
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  __m256d m = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    m = _mm256_max_pd(m, _mm256_andnot_pd(sign_mask, _mm256_loadu_pd(x + i)));
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, m);
  double r = std::max(std::max(lanes[0], lanes[1]), std::max(lanes[2], lanes[3]));
  for (; i < n; ++i) r = std::max(r, std::fabs(x[i]));
  return r;
}

double inf_norm_diff(const double* a, const double* b, std::size_t n) {
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  __m256d m = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    m = _mm256_max_pd(m, _mm256_andnot_pd(sign_mask, d));
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, m);
  double r = std::max(std::max(lanes[0], lanes[1]), std::max(lanes[2], lanes[3]));
  for (; i < n; ++i) r = std::max(r, std::fabs(a[i] - b[i]));
  return r;
}

void clamp(double* out, const double* v, const double* lo, const double* hi,
           std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d t = _mm256_max_pd(_mm256_loadu_pd(v + i), _mm256_loadu_pd(lo + i));
    t = _mm256_min_pd(t, _mm256_loadu_pd(hi + i));
    _mm256_storeu_pd(out + i, t);
  }
  for (; i < n; ++i) out[i] = std::min(std::max(v[i], lo[i]), hi[i]);
}

void relax_shift(double* w, double alpha, const double* zt, const double* z,
                 const double* y, const double* rho_inv, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  const __m256d vb = _mm256_set1_pd(1.0 - alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d t = _mm256_mul_pd(va, _mm256_loadu_pd(zt + i));
    t = _mm256_fmadd_pd(vb, _mm256_loadu_pd(z + i), t);
    t = _mm256_fmadd_pd(_mm256_loadu_pd(y + i), _mm256_loadu_pd(rho_inv + i), t);
    _mm256_storeu_pd(w + i, t);
  }
  const double beta = 1.0 - alpha;
  for (; i < n; ++i) w[i] = std::fma(y[i], rho_inv[i], std::fma(alpha, zt[i], beta * z[i]));
}

void project_dual(double* z, double* y, const double* w, const double* lo,
                  const double* hi, const double* rho, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vw = _mm256_loadu_pd(w + i);
    __m256d vz = _mm256_max_pd(vw, _mm256_loadu_pd(lo + i));
    vz = _mm256_min_pd(vz, _mm256_loadu_pd(hi + i));
    const __m256d diff = _mm256_sub_pd(vw, vz);
    const __m256d vy = _mm256_mul_pd(_mm256_loadu_pd(rho + i), diff);
    _mm256_storeu_pd(z + i, vz);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) {
    const double zi = std::min(std::max(w[i], lo[i]), hi[i]);
    y[i] = rho[i] * (w[i] - zi);
    z[i] = zi;
  }
}

void diag_mul_add(double* out, const double* d, const double* x, const double* q,
                  std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d t = _mm256_fmadd_pd(_mm256_loadu_pd(d + i), _mm256_loadu_pd(x + i),
                                      _mm256_loadu_pd(q + i));
    _mm256_storeu_pd(out + i, t);
  }
  for (; i < n; ++i) out[i] = std::fma(d[i], x[i], q[i]);
}

}  // namespace gridmpc::kernels::avx2

#endif  // x86-64
