#pragma once

#include <string>

#include "domprompt/kernels.hpp"
#include "domprompt/ops.hpp"

namespace domprompt::detail {

inline void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

inline void require_same_precision(const Tensor& a, const Tensor& b, const char* op) {
  if (a.precision() != b.precision()) {
    throw DimensionError(std::string(op) + ": operands differ in precision");
  }
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <class T>
std::span<T> out_data(Tensor& t) {
  return t.mutable_data<T>();
}

/// Row-major transpose of an r x c block into c x r.
template <class T>
void transpose_into(const T* src, std::size_t r, std::size_t c, T* dst) {
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
  }
}

}  // namespace domprompt::detail
