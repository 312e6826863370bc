#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "macow/tensor.hpp"

namespace macow {

// MCWT layout: "MCWT" | u8 version=1 | u8 dtype | u8 ndim | ndim x u64 LE extents |
// raw little-endian row-major payload.
enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kU8 = 2 };

inline constexpr std::uint8_t kMcwtVersion = 1;

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::kF32; }
template <>
constexpr DType dtype_of<double>() { return DType::kF64; }
template <>
constexpr DType dtype_of<std::uint8_t>() { return DType::kU8; }

std::size_t dtype_size(DType dtype);

/// Untyped MCWT record.
struct McwtArray {
  DType dtype = DType::kF32;
  std::vector<std::uint64_t> extents;
  std::vector<std::uint8_t> payload;

  std::size_t element_count() const;
};

void write_mcwt(std::ostream& out, const McwtArray& array);
McwtArray read_mcwt(std::istream& in);

template <typename T>
McwtArray to_mcwt(const Tensor<T>& t);

/// Requires an exact dtype match and rank <= 4 (leading extents padded with 1).
template <typename T>
Tensor<T> from_mcwt(const McwtArray& array);

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t);

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path);

// Little-endian scalar helpers shared by the binary formats.
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f64(std::vector<std::uint8_t>& out, double v);

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::span<const std::uint8_t> take(std::size_t n);
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> encode_mcwt(const McwtArray& array);
McwtArray decode_mcwt(ByteReader& reader);

}  // namespace macow
