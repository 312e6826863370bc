#include "macow/mcwt.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

namespace macow {

static_assert(std::endian::native == std::endian::little, "MCWT payloads are written as host little-endian");

namespace {
constexpr char kMagic[4] = {'M', 'C', 'W', 'T'};
}

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kU8: return 1;
  }
  fail(ErrorCode::kValidation, "unknown dtype");
}

std::size_t McwtArray::element_count() const {
  std::size_t n = 1;
  for (auto e : extents) n *= static_cast<std::size_t>(e);
  return n;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::span<const std::uint8_t> ByteReader::take(std::size_t n) {
  require(n <= remaining(), ErrorCode::kIo, fmt::format("unexpected end of data at byte {}", pos_));
  auto s = bytes_.subspan(pos_, n);
  pos_ += n;
  return s;
}

std::uint8_t ByteReader::u8() { return take(1)[0]; }

std::uint32_t ByteReader::u32() {
  auto s = take(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(s[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  auto s = take(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(s[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::vector<std::uint8_t> encode_mcwt(const McwtArray& array) {
  require(array.extents.size() <= 255, ErrorCode::kValidation, "MCWT rank above 255");
  require(array.payload.size() == array.element_count() * dtype_size(array.dtype), ErrorCode::kValidation,
          "MCWT payload size does not match extents");
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.push_back(kMcwtVersion);
  out.push_back(static_cast<std::uint8_t>(array.dtype));
  out.push_back(static_cast<std::uint8_t>(array.extents.size()));
  for (auto e : array.extents) put_u64(out, e);
  out.insert(out.end(), array.payload.begin(), array.payload.end());
  return out;
}

McwtArray decode_mcwt(ByteReader& reader) {
  auto magic = reader.take(4);
  require(std::memcmp(magic.data(), kMagic, 4) == 0, ErrorCode::kIo, "bad MCWT magic");
  const auto version = reader.u8();
  require(version == kMcwtVersion, ErrorCode::kVersion, fmt::format("unsupported MCWT version {}", version));
  const auto dtype = reader.u8();
  require(dtype <= 2, ErrorCode::kIo, fmt::format("unknown MCWT dtype {}", dtype));
  McwtArray array;
  array.dtype = static_cast<DType>(dtype);
  const auto ndim = reader.u8();
  for (int i = 0; i < ndim; ++i) array.extents.push_back(reader.u64());
  auto payload = reader.take(array.element_count() * dtype_size(array.dtype));
  array.payload.assign(payload.begin(), payload.end());
  return array;
}

void write_mcwt(std::ostream& out, const McwtArray& array) {
  auto bytes = encode_mcwt(array);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "MCWT write failed");
}

McwtArray read_mcwt(std::istream& in) {
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteReader reader(bytes);
  auto array = decode_mcwt(reader);
  require(reader.remaining() == 0, ErrorCode::kIo, "trailing bytes after MCWT payload");
  return array;
}

template <typename T>
McwtArray to_mcwt(const Tensor<T>& t) {
  McwtArray array;
  array.dtype = dtype_of<T>();
  for (auto d : t.shape().dims) array.extents.push_back(d);
  array.payload.resize(t.size() * sizeof(T));
  if (!t.empty()) std::memcpy(array.payload.data(), t.data().data(), array.payload.size());
  return array;
}

template <typename T>
Tensor<T> from_mcwt(const McwtArray& array) {
  require(array.dtype == dtype_of<T>(), ErrorCode::kValidation, "MCWT dtype does not match requested tensor type");
  require(array.extents.size() <= 4, ErrorCode::kDimension, "MCWT rank above 4");
  std::array<std::size_t, 4> dims{1, 1, 1, 1};
  const std::size_t lead = 4 - array.extents.size();
  for (std::size_t i = 0; i < array.extents.size(); ++i) dims[lead + i] = static_cast<std::size_t>(array.extents[i]);
  Tensor<T> t(Shape{dims[0], dims[1], dims[2], dims[3]});
  if (!t.empty()) std::memcpy(t.data().data(), array.payload.data(), array.payload.size());
  return t;
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  write_mcwt(out, to_mcwt(t));
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  return from_mcwt<T>(read_mcwt(in));
}

#define MACOW_INSTANTIATE(T)                                           \
  template McwtArray to_mcwt(const Tensor<T>&);                        \
  template Tensor<T> from_mcwt(const McwtArray&);                      \
  template void save_tensor(const std::filesystem::path&, const Tensor<T>&); \
  template Tensor<T> load_tensor(const std::filesystem::path&);

MACOW_INSTANTIATE(float)
MACOW_INSTANTIATE(double)
MACOW_INSTANTIATE(std::uint8_t)

}  // namespace macow
