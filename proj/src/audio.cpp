#include "vqtts/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace vqtts {

namespace {

constexpr double kPcmScale = 32767.0;

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::vector<char>& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

std::int16_t to_pcm(double x) {
  if (!std::isfinite(x)) throw std::invalid_argument("write_wav: non-finite sample");
  return static_cast<std::int16_t>(std::lround(std::clamp(x, -1.0, 1.0) * kPcmScale));
}

}  // namespace

double quantize_pcm16(double x) { return static_cast<double>(to_pcm(x)) / kPcmScale; }

void write_wav(const std::filesystem::path& path, const Tensor& samples, unsigned sample_rate) {
  if (samples.rank() != 1) throw std::invalid_argument("write_wav: expected a 1-D signal");
  if (sample_rate == 0) throw std::invalid_argument("write_wav: sample rate must be positive");
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::vector<char> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, sample_rate);
  put_u32(out, sample_rate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (double x : samples.data()) put_u16(out, static_cast<std::uint16_t>(to_pcm(x)));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

Audio read_wav(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
    throw AudioFormatError(name + ": not a RIFF/WAVE file");
  }
  Audio audio;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* chunk = buf.data() + pos;
    const std::size_t size = get_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > buf.size()) throw AudioFormatError(name + ": truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw AudioFormatError(name + ": short fmt chunk");
      const std::uint16_t format = get_u16(buf.data() + body);
      const std::uint16_t channels = get_u16(buf.data() + body + 2);
      const std::uint16_t bits = get_u16(buf.data() + body + 14);
      if (format != 1 || channels != 1 || bits != 16) {
        throw AudioFormatError(name + ": only mono 16-bit PCM is supported (format " + std::to_string(format) +
                               ", " + std::to_string(channels) + " channels, " + std::to_string(bits) + " bits)");
      }
      audio.sample_rate = get_u32(buf.data() + body + 4);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw AudioFormatError(name + ": data chunk before fmt chunk");
      const std::size_t n = size / 2;
      audio.samples = Tensor(Shape{n});
      for (std::size_t i = 0; i < n; ++i) {
        const auto v = static_cast<std::int16_t>(get_u16(buf.data() + body + 2 * i));
        audio.samples[i] = static_cast<double>(v) / kPcmScale;
      }
      return audio;
    }
    pos = body + size + (size & 1);
  }
  throw AudioFormatError(name + ": no data chunk");
}

}  // namespace vqtts
