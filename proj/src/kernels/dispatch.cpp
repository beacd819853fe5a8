#include "kernels_impl.hpp"

namespace domprompt::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa& active() {
  static Isa isa = detected_isa();
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

Isa detected_isa() {
  static const Isa isa = (avx2::compiled() && cpu_has_avx2()) ? Isa::avx2 : Isa::scalar;
  return isa;
}

Isa active_isa() { return active(); }

void force_isa(Isa isa) {
  active() = (isa == Isa::avx2 && detected_isa() != Isa::avx2) ? Isa::scalar : isa;
}

template <>
const KernelTable<float>& table_for<float>(Isa isa) {
  return isa == Isa::avx2 ? avx2::table_f32() : scalar::table_f32();
}

template <>
const KernelTable<double>& table_for<double>(Isa isa) {
  return isa == Isa::avx2 ? avx2::table_f64() : scalar::table_f64();
}

template <>
const KernelTable<float>& table<float>() {
  return table_for<float>(active());
}

template <>
const KernelTable<double>& table<double>() {
  return table_for<double>(active());
}

}  // namespace domprompt::kernels
