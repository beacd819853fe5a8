// Compiled with -mavx2 -mfma. Keep this TU free of standard-library
// templates so no AVX2-encoded inline function can leak into scalar code
// through ODR merging.
#include "kernels_impl.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

namespace domprompt::kernels::avx2 {
namespace {

template <class T>
struct V;

template <>
struct V<float> {
  using reg = __m256;
  static constexpr std::size_t width = 8;
  static reg zero() { return _mm256_setzero_ps(); }
  static reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
  static reg set1(float x) { return _mm256_set1_ps(x); }
  static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
  static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
  static reg sub(reg a, reg b) { return _mm256_sub_ps(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_ps(a, b); }
  static reg max(reg a, reg b) { return _mm256_max_ps(a, b); }
  static float hsum(reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    __m128 s = _mm_add_ps(lo, hi);
    s = _mm_hadd_ps(s, s);
    s = _mm_hadd_ps(s, s);
    return _mm_cvtss_f32(s);
  }
  static float hmax(reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    __m128 m = _mm_max_ps(lo, hi);
    m = _mm_max_ps(m, _mm_shuffle_ps(m, m, _MM_SHUFFLE(1, 0, 3, 2)));
    m = _mm_max_ps(m, _mm_shuffle_ps(m, m, _MM_SHUFFLE(2, 3, 0, 1)));
    return _mm_cvtss_f32(m);
  }
};

template <>
struct V<double> {
  using reg = __m256d;
  static constexpr std::size_t width = 4;
  static reg zero() { return _mm256_setzero_pd(); }
  static reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
  static reg set1(double x) { return _mm256_set1_pd(x); }
  static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
  static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
  static reg sub(reg a, reg b) { return _mm256_sub_pd(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_pd(a, b); }
  static reg max(reg a, reg b) { return _mm256_max_pd(a, b); }
  static double hsum(reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
  }
  static double hmax(reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    __m128d m = _mm_max_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_max_sd(m, _mm_unpackhi_pd(m, m)));
  }
};

// Register-blocked micro-kernel: MR rows of C by two vector registers of
// columns, streaming over the shared dimension.
template <class T, int MR>
inline void gemm_block(std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                       std::size_t j, bool accumulate) {
  using v = V<T>;
  typename v::reg acc[MR][2];
  for (int r = 0; r < MR; ++r) {
    if (accumulate) {
      acc[r][0] = v::load(c + r * n + j);
      acc[r][1] = v::load(c + r * n + j + v::width);
    } else {
      acc[r][0] = v::zero();
      acc[r][1] = v::zero();
    }
  }
  for (std::size_t p = 0; p < k; ++p) {
    const typename v::reg b0 = v::load(b + p * n + j);
    const typename v::reg b1 = v::load(b + p * n + j + v::width);
    for (int r = 0; r < MR; ++r) {
      const typename v::reg av = v::set1(a[r * k + p]);
      acc[r][0] = v::fma(av, b0, acc[r][0]);
      acc[r][1] = v::fma(av, b1, acc[r][1]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    v::store(c + r * n + j, acc[r][0]);
    v::store(c + r * n + j + v::width, acc[r][1]);
  }
}

template <class T, int MR>
inline void gemm_rows(std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                      bool accumulate) {
  using v = V<T>;
  constexpr std::size_t nr = 2 * v::width;
  std::size_t j = 0;
  for (; j + nr <= n; j += nr) gemm_block<T, MR>(n, k, a, b, c, j, accumulate);
  for (; j + v::width <= n; j += v::width) {
    typename v::reg acc[MR];
    for (int r = 0; r < MR; ++r) acc[r] = accumulate ? v::load(c + r * n + j) : v::zero();
    for (std::size_t p = 0; p < k; ++p) {
      const typename v::reg bv = v::load(b + p * n + j);
      for (int r = 0; r < MR; ++r) acc[r] = v::fma(v::set1(a[r * k + p]), bv, acc[r]);
    }
    for (int r = 0; r < MR; ++r) v::store(c + r * n + j, acc[r]);
  }
  for (; j < n; ++j) {
    for (int r = 0; r < MR; ++r) {
      T s = accumulate ? c[r * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) s += a[r * k + p] * b[p * n + j];
      c[r * n + j] = s;
    }
  }
}

template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) gemm_rows<T, 4>(n, k, a + i * k, b, c + i * n, accumulate);
  for (; i < m; ++i) gemm_rows<T, 1>(n, k, a + i * k, b, c + i * n, accumulate);
}

template <class T>
void add(std::size_t n, const T* a, const T* b, T* out) {
  using v = V<T>;
  std::size_t i = 0;
  for (; i + v::width <= n; i += v::width) v::store(out + i, v::add(v::load(a + i), v::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

template <class T>
void sub(std::size_t n, const T* a, const T* b, T* out) {
  using v = V<T>;
  std::size_t i = 0;
  for (; i + v::width <= n; i += v::width) v::store(out + i, v::sub(v::load(a + i), v::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

template <class T>
void mul(std::size_t n, const T* a, const T* b, T* out) {
  using v = V<T>;
  std::size_t i = 0;
  for (; i + v::width <= n; i += v::width) v::store(out + i, v::mul(v::load(a + i), v::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  using v = V<T>;
  const typename v::reg av = v::set1(alpha);
  std::size_t i = 0;
  for (; i + v::width <= n; i += v::width) v::store(y + i, v::fma(av, v::load(x + i), v::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void scale(std::size_t n, T alpha, const T* x, T* out) {
  using v = V<T>;
  const typename v::reg av = v::set1(alpha);
  std::size_t i = 0;
  for (; i + v::width <= n; i += v::width) v::store(out + i, v::mul(av, v::load(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

template <class T>
T dot(std::size_t n, const T* a, const T* b) {
  using v = V<T>;
  typename v::reg acc = v::zero();
  std::size_t i = 0;
  for (; i + v::width <= n; i += v::width) acc = v::fma(v::load(a + i), v::load(b + i), acc);
  T s = v::hsum(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <class T>
T sum(std::size_t n, const T* x) {
  using v = V<T>;
  typename v::reg acc = v::zero();
  std::size_t i = 0;
  for (; i + v::width <= n; i += v::width) acc = v::add(acc, v::load(x + i));
  T s = v::hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

template <class T>
T max(std::size_t n, const T* x) {
  using v = V<T>;
  std::size_t i = 0;
  T best = x[0];
  if (n >= v::width) {
    typename v::reg m = v::load(x);
    for (i = v::width; i + v::width <= n; i += v::width) m = v::max(m, v::load(x + i));
    best = v::hmax(m);
  }
  for (; i < n; ++i) best = x[i] > best ? x[i] : best;
  return best;
}

template <class T>
KernelTable<T> make() {
  return {&gemm<T>, &add<T>, &sub<T>, &mul<T>, &axpy<T>, &scale<T>, &dot<T>, &sum<T>, &max<T>};
}

}  // namespace

bool compiled() { return true; }

const KernelTable<float>& table_f32() {
  static const KernelTable<float> t = make<float>();
  return t;
}

const KernelTable<double>& table_f64() {
  static const KernelTable<double> t = make<double>();
  return t;
}

}  // namespace domprompt::kernels::avx2

#else

namespace domprompt::kernels::avx2 {
bool compiled() { return false; }
const KernelTable<float>& table_f32() { return scalar::table_f32(); }
const KernelTable<double>& table_f64() { return scalar::table_f64(); }
}  // namespace domprompt::kernels::avx2

#endif
