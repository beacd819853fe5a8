#include <cmath>
#include <vector>

#include "doctest.h"
#include "domprompt/kernels.hpp"
#include "domprompt/rng.hpp"

using namespace domprompt;
using kernels::Isa;

namespace {

template <class T>
std::vector<T> random_vec(Rng& rng, std::size_t n) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1.0, 1.0));
  return v;
}

template <class T>
double tol() {
  return std::is_same_v<T, float> ? 1e-5 : 1e-13;
}

template <class T>
void check_close(const std::vector<T>& a, const std::vector<T>& b, double scale) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])) <= tol<T>() * scale);
  }
}

template <class T>
void gemm_equivalence() {
  if (kernels::detected_isa() != Isa::avx2) return;
  const auto& ref = kernels::table_for<T>(Isa::scalar);
  const auto& simd = kernels::table_for<T>(Isa::avx2);
  Rng rng(11);
  // Shapes straddle the 4-row and 2-register column blocks and their tails.
  for (std::size_t m : {1u, 3u, 4u, 5u, 9u, 17u}) {
    for (std::size_t n : {1u, 7u, 8u, 15u, 16u, 17u, 33u, 64u}) {
      for (std::size_t k : {1u, 2u, 13u, 64u}) {
        auto a = random_vec<T>(rng, m * k);
        auto b = random_vec<T>(rng, k * n);
        auto c0 = random_vec<T>(rng, m * n);
        auto c1 = c0;
        ref.gemm(m, n, k, a.data(), b.data(), c0.data(), true);
        simd.gemm(m, n, k, a.data(), b.data(), c1.data(), true);
        check_close(c0, c1, static_cast<double>(k));
        ref.gemm(m, n, k, a.data(), b.data(), c0.data(), false);
        simd.gemm(m, n, k, a.data(), b.data(), c1.data(), false);
        check_close(c0, c1, static_cast<double>(k));
      }
    }
  }
}

template <class T>
void vector_equivalence() {
  if (kernels::detected_isa() != Isa::avx2) return;
  const auto& ref = kernels::table_for<T>(Isa::scalar);
  const auto& simd = kernels::table_for<T>(Isa::avx2);
  Rng rng(5);
  for (std::size_t n : {1u, 3u, 4u, 7u, 8u, 9u, 31u, 100u, 257u}) {
    auto a = random_vec<T>(rng, n);
    auto b = random_vec<T>(rng, n);
    std::vector<T> o0(n), o1(n);
    ref.add(n, a.data(), b.data(), o0.data());
    simd.add(n, a.data(), b.data(), o1.data());
    CHECK(o0 == o1);
    ref.sub(n, a.data(), b.data(), o0.data());
    simd.sub(n, a.data(), b.data(), o1.data());
    CHECK(o0 == o1);
    ref.mul(n, a.data(), b.data(), o0.data());
    simd.mul(n, a.data(), b.data(), o1.data());
    CHECK(o0 == o1);
    ref.scale(n, T(0.3), a.data(), o0.data());
    simd.scale(n, T(0.3), a.data(), o1.data());
    CHECK(o0 == o1);
    auto y0 = b, y1 = b;
    ref.axpy(n, T(-1.5), a.data(), y0.data());
    simd.axpy(n, T(-1.5), a.data(), y1.data());
    check_close(y0, y1, 1.0);
    CHECK(std::abs(ref.dot(n, a.data(), b.data()) - simd.dot(n, a.data(), b.data())) <=
          tol<T>() * n);
    CHECK(std::abs(ref.sum(n, a.data()) - simd.sum(n, a.data())) <= tol<T>() * n);
    CHECK(ref.max(n, a.data()) == simd.max(n, a.data()));
  }
}

}  // namespace

TEST_CASE("gemm: scalar reference on a hand-computed product") {
  const auto& k = kernels::table_for<double>(Isa::scalar);
  const double a[] = {1, 0, 0, 0};
  const double b[] = {5, 6, 7, 8};
  double c[4];
  k.gemm(2, 2, 2, a, b, c, false);
  CHECK(c[0] == 5);
  CHECK(c[1] == 6);
  CHECK(c[2] == 0);
  CHECK(c[3] == 0);
}

TEST_CASE("avx2 gemm matches scalar reference") {
  gemm_equivalence<float>();
  gemm_equivalence<double>();
}

TEST_CASE("avx2 vector kernels match scalar reference") {
  vector_equivalence<float>();
  vector_equivalence<double>();
}

TEST_CASE("forcing an ISA switches the dispatch table") {
  const Isa before = kernels::active_isa();
  kernels::force_isa(Isa::scalar);
  CHECK(kernels::active_isa() == Isa::scalar);
  CHECK(&kernels::table<float>() == &kernels::table_for<float>(Isa::scalar));
  kernels::force_isa(before);
  CHECK(kernels::active_isa() == before);
}
