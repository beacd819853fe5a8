#pragma once

#include <filesystem>
#include <iosfwd>

#include "domprompt/tensor.hpp"

// Tensor snapshot wire format (all integers little-endian):
//   u32 rank | u32 dims[rank] | u32 precision (0 = f32, 1 = f64) | raw values
// Values are IEEE-754 little-endian in the stated precision.

namespace domprompt {

void write_snapshot(std::ostream& out, const Tensor& t);
Tensor read_snapshot(std::istream& in);

void save_snapshot(const std::filesystem::path& path, const Tensor& t);
Tensor load_snapshot(const std::filesystem::path& path);

}  // namespace domprompt
