#include "domprompt/snapshot.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace domprompt {
namespace {

template <class T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw std::runtime_error("tensor snapshot: unexpected end of stream");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

constexpr std::uint32_t kMaxRank = 16;

}  // namespace

void write_snapshot(std::ostream& out, const Tensor& t) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.precision()));
  visit_precision(t.precision(), [&]<class T>() {
    if constexpr (std::endian::native == std::endian::little) {
      auto v = t.data<T>();
      out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
    } else {
      for (T v : t.data<T>()) put_le<T>(out, v);
    }
  });
  if (!out) throw std::runtime_error("tensor snapshot: write failed");
}

Tensor read_snapshot(std::istream& in) {
  const auto rank = get_le<std::uint32_t>(in);
  if (rank > kMaxRank) throw std::runtime_error("tensor snapshot: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = get_le<std::uint32_t>(in);
  const auto flag = get_le<std::uint32_t>(in);
  if (flag > 1) throw std::runtime_error("tensor snapshot: unknown precision flag " + std::to_string(flag));
  const std::size_t n = shape_numel(shape);
  if (flag == 0) {
    std::vector<float> v(n);
    for (auto& x : v) x = get_le<float>(in);
    return Tensor::from_buffer(std::move(shape), std::move(v));
  }
  std::vector<double> v(n);
  for (auto& x : v) x = get_le<double>(in);
  return Tensor::from_buffer(std::move(shape), std::move(v));
}

void save_snapshot(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_snapshot(out, t);
}

Tensor load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_snapshot(in);
}

}  // namespace domprompt
