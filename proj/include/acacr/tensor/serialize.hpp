#pragma once

// TNSR binary format:
//   "TNSR" | u8 version (1) | u8 dtype (0 = f32, 1 = f64) | u8 rank |
//   rank x u64 extents | elements
// All multi-byte fields little-endian.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "acacr/tensor/tensor.hpp"

namespace acacr {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <Real T>
constexpr DType dtype_of() {
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

inline constexpr std::array<char, 4> kTnsrMagic{'T', 'N', 'S', 'R'};
inline constexpr std::uint8_t kTnsrVersion = 1;

namespace detail {

template <class U>
void put_le(std::ostream& os, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  std::array<char, sizeof(U)> bytes;
  std::memcpy(bytes.data(), &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(bytes.data(), sizeof(U));
}

// Reader that tracks the absolute offset for error messages.
class ByteReader {
 public:
  explicit ByteReader(std::istream& is) : is_(is), offset_(0) {}

  std::uint64_t offset() const { return offset_; }

  void read(char* dst, std::size_t n, const char* what) {
    is_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw FormatError(std::string("TNSR: truncated ") + what + " at offset " +
                        std::to_string(offset_ + static_cast<std::uint64_t>(is_.gcount())));
    }
    offset_ += n;
  }

  template <class U>
  U get_le(const char* what) {
    std::array<char, sizeof(U)> bytes;
    read(bytes.data(), sizeof(U), what);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    U v;
    std::memcpy(&v, bytes.data(), sizeof(U));
    return v;
  }

 private:
  std::istream& is_;
  std::uint64_t offset_;
};

}  // namespace detail

template <Real T>
void write_tnsr(std::ostream& os, const Tensor<T>& t) {
  if (t.rank() > 255) throw FormatError("TNSR: rank above 255");
  os.write(kTnsrMagic.data(), 4);
  detail::put_le<std::uint8_t>(os, kTnsrVersion);
  detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<T>()));
  detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) detail::put_le<std::uint64_t>(os, e);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  } else {
    for (T v : t.values()) detail::put_le<T>(os, v);
  }
  if (!os) throw IoError("TNSR: write failed");
}

// Reads one tensor, converting from the stored dtype to T.
template <Real T>
Tensor<T> read_tnsr(std::istream& is) {
  detail::ByteReader r(is);
  std::array<char, 4> magic{};
  r.read(magic.data(), 4, "magic");
  if (magic != kTnsrMagic) throw FormatError("TNSR: bad magic bytes at offset 0");
  const auto version = r.get_le<std::uint8_t>("version");
  if (version != kTnsrVersion) {
    throw FormatError("TNSR: unsupported version " + std::to_string(version) + " at offset 4");
  }
  const auto dtype = r.get_le<std::uint8_t>("dtype");
  if (dtype > 1) throw FormatError("TNSR: unknown dtype " + std::to_string(dtype) + " at offset 5");
  const auto rank = r.get_le<std::uint8_t>("rank");
  Shape shape(rank);
  for (auto& e : shape) {
    const std::uint64_t at = r.offset();
    const auto v = r.get_le<std::uint64_t>("extent");
    if (v > (std::uint64_t{1} << 40)) throw FormatError("TNSR: implausible extent at offset " + std::to_string(at));
    e = static_cast<std::size_t>(v);
  }
  const std::size_t n = shape_size(shape);
  std::vector<T> data(n);
  if (static_cast<DType>(dtype) == DType::f32) {
    for (auto& v : data) v = static_cast<T>(r.get_le<float>("elements"));
  } else {
    for (auto& v : data) v = static_cast<T>(r.get_le<double>("elements"));
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

template <Real T>
void save_tnsr(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_tnsr(os, t);
}

template <Real T>
Tensor<T> load_tnsr(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return read_tnsr<T>(is);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace acacr
