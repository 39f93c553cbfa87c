#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vickd {

struct WavError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct WavData {
  std::vector<float> samples;  // in [-1, 1], int16 / 32768
  int sample_rate = 0;
};

namespace wav_detail {

inline std::uint32_t rd_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t rd_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void wr_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

inline void wr_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}

}  // namespace wav_detail

// Decode RIFF/WAVE, PCM 16-bit mono only. Chunks other than fmt/data are
// skipped (including odd-length padding per RIFF rules).
inline WavData decode_wav(const std::vector<unsigned char>& bytes) {
  using namespace wav_detail;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw WavError("malformed RIFF header");

  bool have_fmt = false;
  std::uint16_t format_tag = 0, channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  const unsigned char* data_ptr = nullptr;
  std::uint32_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    std::uint32_t chunk_len = rd_u32(hdr + 4);
    pos += 8;
    if (pos + chunk_len > bytes.size()) throw WavError("truncated chunk");
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (chunk_len < 16) throw WavError("fmt chunk too short");
      const unsigned char* f = bytes.data() + pos;
      format_tag = rd_u16(f);
      channels = rd_u16(f + 2);
      sample_rate = rd_u32(f + 4);
      bits = rd_u16(f + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data_ptr = bytes.data() + pos;
      data_len = chunk_len;
    }
    pos += chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }

  if (!have_fmt) throw WavError("missing fmt chunk");
  if (data_ptr == nullptr) throw WavError("missing data chunk");
  if (format_tag != 1) throw WavError("unsupported format tag " + std::to_string(format_tag) +
                                      " (PCM only)");
  if (channels != 1) throw WavError("unsupported channel count " + std::to_string(channels) +
                                    " (mono only)");
  if (bits != 16) throw WavError("unsupported bit depth " + std::to_string(bits) +
                                 " (16-bit only)");

  WavData out;
  out.sample_rate = static_cast<int>(sample_rate);
  const std::size_t n = data_len / 2;
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int16_t s =
        static_cast<std::int16_t>(rd_u16(data_ptr + 2 * i));
    out.samples[i] = static_cast<float>(s) / 32768.0f;
  }
  return out;
}

inline WavData read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw WavError("cannot open: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes);
  } catch (const WavError& e) {
    throw WavError(path + ": " + e.what());
  }
}

// Encode PCM 16-bit mono. Quantized by round(x * 32768) clamped to int16,
// the exact inverse of decode for values already on the 16-bit grid.
inline std::vector<unsigned char> encode_wav(const std::vector<float>& samples, int sample_rate) {
  using namespace wav_detail;
  std::vector<unsigned char> out;
  const std::uint32_t data_len = static_cast<std::uint32_t>(samples.size() * 2);
  out.reserve(44 + data_len);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  wr_u32(out, 36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E'});
  out.insert(out.end(), {'f', 'm', 't', ' '});
  wr_u32(out, 16);
  wr_u16(out, 1);  // PCM
  wr_u16(out, 1);  // mono
  wr_u32(out, static_cast<std::uint32_t>(sample_rate));
  wr_u32(out, static_cast<std::uint32_t>(sample_rate * 2));
  wr_u16(out, 2);   // block align
  wr_u16(out, 16);  // bits
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  wr_u32(out, data_len);
  for (float v : samples) {
    long q = std::lround(static_cast<double>(v) * 32768.0);
    if (q < -32768) q = -32768;
    if (q > 32767) q = 32767;
    wr_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return out;
}

inline void write_wav(const std::string& path, const std::vector<float>& samples,
                      int sample_rate) {
  auto bytes = encode_wav(samples, sample_rate);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw WavError("cannot open for write: " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw WavError("write failed: " + path);
}

}  // namespace vickd
