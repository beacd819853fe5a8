#pragma once

#include "domprompt/kernels.hpp"

namespace domprompt::kernels {

namespace scalar {
const KernelTable<float>& table_f32();
const KernelTable<double>& table_f64();
}  // namespace scalar

namespace avx2 {
/// True when the AVX2 translation unit was compiled in.
bool compiled();
const KernelTable<float>& table_f32();
const KernelTable<double>& table_f64();
}  // namespace avx2

}  // namespace domprompt::kernels
