#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vickd {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Named f32 tensor container. Layout, all little-endian:
//   magic "VICKD001" | version u32 | count u32 |
//   per tensor: name_len u32, name bytes, rank u32, dims u32..., f32 payload
struct NamedTensorEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

namespace detail {

constexpr char kCkptMagic[8] = {'V', 'I', 'C', 'K', 'D', '0', '0', '1'};
constexpr std::uint32_t kCkptVersion = 1;
constexpr std::uint64_t kMaxTensorElems = 1ull << 31;

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw CheckpointError("checkpoint truncated while reading u32");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

inline float read_f32_bits(std::uint32_t bits) {
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

inline void write_tensor_file(const std::string& path,
                              const std::vector<NamedTensorEntry>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open for write: " + path);
  os.write(detail::kCkptMagic, 8);
  detail::write_u32(os, detail::kCkptVersion);
  detail::write_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    detail::write_u32(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::write_u32(os, static_cast<std::uint32_t>(e.dims.size()));
    std::uint64_t n = 1;
    for (auto d : e.dims) {
      detail::write_u32(os, d);
      n *= d;
    }
    if (n != e.data.size())
      throw CheckpointError("tensor '" + e.name + "': dims do not match payload size");
    std::vector<unsigned char> buf(4 * e.data.size());
    for (std::size_t i = 0; i < e.data.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, &e.data[i], 4);
      buf[4 * i] = static_cast<unsigned char>(bits & 0xff);
      buf[4 * i + 1] = static_cast<unsigned char>((bits >> 8) & 0xff);
      buf[4 * i + 2] = static_cast<unsigned char>((bits >> 16) & 0xff);
      buf[4 * i + 3] = static_cast<unsigned char>((bits >> 24) & 0xff);
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!os) throw CheckpointError("write failed: " + path);
}

inline std::vector<NamedTensorEntry> read_tensor_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open: " + path);
  char magic[8];
  if (!is.read(magic, 8)) throw CheckpointError("checkpoint truncated: " + path);
  if (std::memcmp(magic, detail::kCkptMagic, 8) != 0)
    throw CheckpointError("bad magic in " + path + ": not a VICKD001 file");
  const std::uint32_t version = detail::read_u32(is);
  if (version != detail::kCkptVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = detail::read_u32(is);
  std::vector<NamedTensorEntry> entries;
  entries.reserve(count);
  for (std::uint32_t ti = 0; ti < count; ++ti) {
    NamedTensorEntry e;
    const std::uint32_t name_len = detail::read_u32(is);
    if (name_len > 4096) throw CheckpointError("implausible tensor name length");
    e.name.resize(name_len);
    if (!is.read(e.name.data(), name_len))
      throw CheckpointError("checkpoint truncated in tensor name");
    const std::uint32_t rank = detail::read_u32(is);
    if (rank > 8) throw CheckpointError("tensor '" + e.name + "': rank overflow");
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t extent = detail::read_u32(is);
      if (extent == 0) throw CheckpointError("tensor '" + e.name + "': zero dimension");
      e.dims.push_back(extent);
      n *= extent;
      if (n > detail::kMaxTensorElems)
        throw CheckpointError("tensor '" + e.name + "': dimension overflow");
    }
    e.data.resize(n);
    std::vector<unsigned char> buf(4 * n);
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw CheckpointError("checkpoint truncated in tensor payload of '" + e.name + "'");
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::uint32_t bits = static_cast<std::uint32_t>(buf[4 * i]) |
                                 (static_cast<std::uint32_t>(buf[4 * i + 1]) << 8) |
                                 (static_cast<std::uint32_t>(buf[4 * i + 2]) << 16) |
                                 (static_cast<std::uint32_t>(buf[4 * i + 3]) << 24);
      e.data[i] = detail::read_f32_bits(bits);
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace vickd
