#pragma once

#include <cstddef>
#include <string_view>

// Data-parallel inner loops behind the tensor engine. Every kernel has a
// portable scalar reference and an AVX2/FMA variant; the variant is chosen
// once at startup from CPUID and can be forced for equivalence testing.

namespace domprompt::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

/// Best ISA supported by the running CPU and compiled into this build.
Isa detected_isa();

/// ISA currently used by `table<T>()`.
Isa active_isa();

/// Overrides the dispatch choice. Requesting an unsupported ISA falls back to
/// scalar. Not thread-safe; intended for tests and benchmarks.
void force_isa(Isa isa);

template <class T>
struct KernelTable {
  /// C[m x n] = A[m x k] * B[k x n] (row-major, contiguous). When
  /// `accumulate` is set, C += A * B.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
               bool accumulate);
  /// out = a + b
  void (*add)(std::size_t n, const T* a, const T* b, T* out);
  /// out = a - b
  void (*sub)(std::size_t n, const T* a, const T* b, T* out);
  /// out = a * b
  void (*mul)(std::size_t n, const T* a, const T* b, T* out);
  /// y += alpha * x
  void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
  /// out = alpha * x
  void (*scale)(std::size_t n, T alpha, const T* x, T* out);
  T (*dot)(std::size_t n, const T* a, const T* b);
  T (*sum)(std::size_t n, const T* x);
  T (*max)(std::size_t n, const T* x);
};

template <class T>
const KernelTable<T>& table();

template <class T>
const KernelTable<T>& table_for(Isa isa);

}  // namespace domprompt::kernels
