#pragma once

// SYNT binary tensor files:
//   "SYNT" | u16 version (=1) | u8 dtype | u8 rank | rank x u32 extents | payload
// All integers and payload elements are little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "synthprobe/errors.hpp"
#include "synthprobe/tensor.hpp"

namespace synthprobe {

enum class Dtype : std::uint8_t { f32 = 0, u8 = 1, u16 = 2 };

inline constexpr std::array<char, 4> kSyntMagic = {'S', 'Y', 'N', 'T'};
inline constexpr std::uint16_t kSyntVersion = 1;

/// A decoded SYNT payload of any supported dtype.
struct SyntArray {
  Shape shape;
  std::variant<std::vector<float>, std::vector<std::uint8_t>, std::vector<std::uint16_t>> values;

  [[nodiscard]] Dtype dtype() const { return static_cast<Dtype>(values.index()); }

  /// Converts any dtype to a float tensor.
  [[nodiscard]] Tensor to_tensor() const {
    return std::visit(
        [&](const auto& v) {
          std::vector<float> out(v.begin(), v.end());
          return Tensor(shape, std::move(out));
        },
        values);
  }
};

namespace detail {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>;
  const auto bits = std::bit_cast<Bits>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <typename U>
U get_le(std::span<const std::uint8_t> in, std::size_t& pos) {
  using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>;
  if (pos + sizeof(U) > in.size()) throw DataError("SYNT: truncated payload");
  Bits bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<Bits>(static_cast<Bits>(in[pos + i]) << (8 * i));
  pos += sizeof(U);
  return std::bit_cast<U>(bits);
}

}  // namespace detail

template <typename U>
std::vector<std::uint8_t> encode_synt(const Shape& shape, std::span<const U> values) {
  static_assert(std::is_same_v<U, float> || std::is_same_v<U, std::uint8_t> || std::is_same_v<U, std::uint16_t>);
  if (shape_numel(shape) != values.size()) throw DimensionError("SYNT: shape " + shape_str(shape) + " vs payload size");
  if (shape.size() > 255) throw DimensionError("SYNT: rank above 255");
  constexpr Dtype dtype = std::is_same_v<U, float> ? Dtype::f32 : std::is_same_v<U, std::uint8_t> ? Dtype::u8 : Dtype::u16;
  std::vector<std::uint8_t> out(kSyntMagic.begin(), kSyntMagic.end());
  detail::put_le(out, kSyntVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(shape.size()));
  for (std::size_t e : shape) {
    if (e > 0xFFFFFFFFu) throw DimensionError("SYNT: extent exceeds u32");
    detail::put_le(out, static_cast<std::uint32_t>(e));
  }
  out.reserve(out.size() + values.size() * sizeof(U));
  for (U v : values) detail::put_le(out, v);
  return out;
}

inline std::vector<std::uint8_t> encode_synt(const Tensor& t) { return encode_synt<float>(t.shape(), t.data()); }

inline SyntArray decode_synt(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || !std::equal(kSyntMagic.begin(), kSyntMagic.end(), bytes.begin())) {
    throw DataError("SYNT: bad magic");
  }
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint16_t>(bytes, pos);
  if (version != kSyntVersion) throw DataError("SYNT: unsupported version " + std::to_string(version));
  const auto dtype = detail::get_le<std::uint8_t>(bytes, pos);
  const auto rank = detail::get_le<std::uint8_t>(bytes, pos);
  SyntArray arr;
  for (std::uint8_t i = 0; i < rank; ++i) arr.shape.push_back(detail::get_le<std::uint32_t>(bytes, pos));
  const std::size_t n = shape_numel(arr.shape);
  auto read_all = [&]<typename U>(std::vector<U> v) {
    if (bytes.size() - pos != n * sizeof(U)) throw DataError("SYNT: payload size does not match shape " + shape_str(arr.shape));
    v.resize(n);
    for (auto& x : v) x = detail::get_le<U>(bytes, pos);
    return v;
  };
  switch (static_cast<Dtype>(dtype)) {
    case Dtype::f32: arr.values = read_all(std::vector<float>{}); break;
    case Dtype::u8: arr.values = read_all(std::vector<std::uint8_t>{}); break;
    case Dtype::u16: arr.values = read_all(std::vector<std::uint16_t>{}); break;
    default: throw DataError("SYNT: unknown dtype " + std::to_string(dtype));
  }
  return arr;
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

inline SyntArray read_synt(const std::filesystem::path& path) {
  try {
    return decode_synt(read_bytes(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

template <typename U>
void write_synt(const std::filesystem::path& path, const Shape& shape, std::span<const U> values) {
  write_bytes(path, encode_synt<U>(shape, values));
}

inline void write_synt(const std::filesystem::path& path, const Tensor& t) { write_bytes(path, encode_synt(t)); }

}  // namespace synthprobe
