#include "macow/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <zlib.h>

namespace macow {

namespace {

constexpr char kMagic[4] = {'M', 'C', 'W', 'C'};

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u64(out, s.size());
  out.insert(out.end(), s.begin(), s.end());
}

void put_array(std::vector<std::uint8_t>& out, const McwtArray& a) {
  const auto bytes = encode_mcwt(a);
  out.insert(out.end(), bytes.begin(), bytes.end());
}

std::string get_string(ByteReader& r) {
  const std::uint64_t n = r.u64();
  require(n <= r.remaining(), ErrorCode::kIo, "checkpoint string runs past the end");
  auto bytes = r.take(static_cast<std::size_t>(n));
  return {bytes.begin(), bytes.end()};
}

std::uint64_t get_count(ByteReader& r) {
  const std::uint64_t n = r.u64();
  require(n <= r.remaining(), ErrorCode::kIo, "checkpoint record count exceeds the file size");
  return n;
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = crc32(crc, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  out.push_back(static_cast<std::uint8_t>(ckpt.precision));
  put_string(out, ckpt.config);
  put_u64(out, ckpt.step);
  put_u64(out, ckpt.parameters.size());
  for (const auto& p : ckpt.parameters) {
    put_string(out, p.name);
    put_array(out, p.value);
  }
  put_u64(out, ckpt.flags.size());
  for (const auto& [name, value] : ckpt.flags) {
    put_string(out, name);
    out.push_back(value ? 1 : 0);
  }
  const auto& o = ckpt.optimizer;
  put_f64(out, o.beta1);
  put_f64(out, o.beta2);
  put_f64(out, o.eps);
  put_u64(out, o.adam_steps);
  put_u64(out, o.skipped_steps);
  put_u64(out, o.moments.size());
  for (const auto& m : o.moments) {
    put_string(out, m.name);
    put_array(out, m.first);
    put_array(out, m.second);
  }
  put_u32(out, crc32_of(out));
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= 12, ErrorCode::kChecksum, "checkpoint is truncated");
  const auto body = bytes.first(bytes.size() - 4);
  ByteReader tail(bytes.last(4));
  const std::uint32_t stored = tail.u32();
  const std::uint32_t actual = crc32_of(body);
  require(stored == actual, ErrorCode::kChecksum,
          fmt::format("checkpoint CRC mismatch (stored {:08x}, computed {:08x}); file is truncated or corrupt", stored,
                      actual));
  ByteReader r(body);
  auto magic = r.take(4);
  require(std::equal(magic.begin(), magic.end(), std::begin(kMagic)), ErrorCode::kIo, "not a checkpoint file");
  const std::uint32_t version = r.u32();
  require(version == kCheckpointVersion, ErrorCode::kVersion,
          fmt::format("checkpoint version {} is not supported (expected {})", version, kCheckpointVersion));
  Checkpoint ckpt;
  const std::uint8_t precision = r.u8();
  require(precision <= 1, ErrorCode::kIo, "checkpoint precision byte is invalid");
  ckpt.precision = static_cast<Precision>(precision);
  ckpt.config = get_string(r);
  ckpt.step = r.u64();
  for (std::uint64_t i = 0, n = get_count(r); i < n; ++i) {
    CheckpointTensor t;
    t.name = get_string(r);
    t.value = decode_mcwt(r);
    ckpt.parameters.push_back(std::move(t));
  }
  for (std::uint64_t i = 0, n = get_count(r); i < n; ++i) {
    auto name = get_string(r);
    ckpt.flags.emplace_back(std::move(name), r.u8() != 0);
  }
  auto& o = ckpt.optimizer;
  o.beta1 = r.f64();
  o.beta2 = r.f64();
  o.eps = r.f64();
  o.adam_steps = r.u64();
  o.skipped_steps = r.u64();
  for (std::uint64_t i = 0, n = get_count(r); i < n; ++i) {
    CheckpointMoment m;
    m.name = get_string(r);
    m.first = decode_mcwt(r);
    m.second = decode_mcwt(r);
    o.moments.push_back(std::move(m));
  }
  require(r.remaining() == 0, ErrorCode::kIo, "checkpoint has trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  // Write to a sibling file first so an interrupted save never clobbers the
  // previous checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::kIo, fmt::format("cannot write checkpoint {}", tmp.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorCode::kIo, fmt::format("write to {} failed", tmp.string()));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorCode::kIo, fmt::format("cannot move checkpoint into place at {}: {}", path.string(), ec.message()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, fmt::format("cannot open checkpoint {}", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace macow
