#pragma once

// IAST-TENSOR file format:
//   bytes 0-3   magic "IAST"
//   byte  4     version (1)
//   byte  5     dtype code (1=float32, 2=int32, 3=uint8)
//   byte  6     ndim (1-4)
//   byte  7     reserved (0)
//   8..8+8*ndim little-endian u64 dims
//   payload     row-major little-endian values, no padding

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <variant>
#include <vector>

#include "iast/error.hpp"
#include "iast/tensor.hpp"

namespace iast {

inline constexpr std::array<char, 4> kTensorMagic{'I', 'A', 'S', 'T'};
inline constexpr std::uint8_t kTensorVersion = 1;
inline constexpr std::size_t kMaxNdim = 4;

inline std::size_t tensor_header_size(std::size_t ndim) { return 8 + 8 * ndim; }

using AnyArray = std::variant<Array<float>, Array<std::int32_t>, Array<std::uint8_t>>;

namespace detail {

template <typename U>
void put_le(std::vector<char>& out, U v) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

template <typename T>
auto to_bits(T v) {
  if constexpr (sizeof(T) == 4)
    return std::bit_cast<std::uint32_t>(v);
  else
    return std::bit_cast<std::uint8_t>(v);
}

template <typename T>
T from_bits(const char* p) {
  if constexpr (sizeof(T) == 4)
    return std::bit_cast<T>(get_le<std::uint32_t>(p));
  else
    return std::bit_cast<T>(get_le<std::uint8_t>(p));
}

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

template <typename T>
Array<T> decode_payload(const Shape& shape, const char* p) {
  std::vector<T> data(shape_numel(shape));
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = from_bits<T>(p + i * sizeof(T));
  return Array<T>(shape, std::move(data));
}

}  // namespace detail

template <typename T>
std::vector<char> encode_array(const Array<T>& a) {
  if (a.ndim() < 1 || a.ndim() > kMaxNdim)
    throw ShapeError("IAST-TENSOR requires 1 <= ndim <= 4, got " + std::to_string(a.ndim()));
  std::vector<char> out;
  out.reserve(tensor_header_size(a.ndim()) + a.size() * sizeof(T));
  for (char c : kTensorMagic) out.push_back(c);
  out.push_back(static_cast<char>(kTensorVersion));
  out.push_back(static_cast<char>(dtype_of<T>::value));
  out.push_back(static_cast<char>(a.ndim()));
  out.push_back(0);
  for (auto d : a.shape()) detail::put_le<std::uint64_t>(out, d);
  for (auto v : a.values()) detail::put_le(out, detail::to_bits(v));
  return out;
}

inline AnyArray decode_array(const std::vector<char>& bytes, const std::string& origin = "<memory>") {
  if (bytes.size() < 8 || !std::equal(kTensorMagic.begin(), kTensorMagic.end(), bytes.begin()))
    throw BadMagic(origin + ": missing IAST magic");
  if (static_cast<std::uint8_t>(bytes[4]) != kTensorVersion)
    throw FormatError(origin + ": unsupported version " + std::to_string(static_cast<int>(bytes[4])));
  const auto code = static_cast<std::uint8_t>(bytes[5]);
  if (code < 1 || code > 3) throw UnknownDtype(origin + ": unknown dtype code " + std::to_string(code));
  const auto dtype = static_cast<DType>(code);
  const std::size_t ndim = static_cast<std::uint8_t>(bytes[6]);
  if (ndim < 1 || ndim > kMaxNdim) throw FormatError(origin + ": bad ndim " + std::to_string(ndim));
  const std::size_t header = tensor_header_size(ndim);
  if (bytes.size() < header) throw Truncated(origin + ": header truncated");
  Shape shape(ndim);
  for (std::size_t i = 0; i < ndim; ++i) shape[i] = detail::get_le<std::uint64_t>(bytes.data() + 8 + 8 * i);
  const std::size_t need = shape_numel(shape) * dtype_size(dtype);
  if (bytes.size() - header < need)
    throw Truncated(origin + ": payload has " + std::to_string(bytes.size() - header) + " bytes, expected " +
                    std::to_string(need));
  if (bytes.size() - header > need) throw FormatError(origin + ": trailing bytes after payload");
  const char* p = bytes.data() + header;
  switch (dtype) {
    case DType::Float32:
      return detail::decode_payload<float>(shape, p);
    case DType::Int32:
      return detail::decode_payload<std::int32_t>(shape, p);
    case DType::UInt8:
      return detail::decode_payload<std::uint8_t>(shape, p);
  }
  throw UnknownDtype(origin + ": unknown dtype");
}

template <typename T>
void save_array(const std::filesystem::path& path, const Array<T>& a) {
  const auto bytes = encode_array(a);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline AnyArray load_any_array(const std::filesystem::path& path) {
  return decode_array(detail::read_file(path), path.string());
}

/// Loads an array and requires its stored dtype to be `T`.
template <typename T>
Array<T> load_array(const std::filesystem::path& path) {
  auto any = load_any_array(path);
  if (auto* a = std::get_if<Array<T>>(&any)) return std::move(*a);
  throw FormatError(path.string() + ": stored dtype does not match the requested type");
}

}  // namespace iast
