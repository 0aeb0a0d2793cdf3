#pragma once

#include <filesystem>
#include <stdexcept>

#include "vqtts/tensor.hpp"

namespace vqtts {

class AudioFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Audio {
  Tensor samples;  // 1-D, nominally in [-1, 1]
  unsigned sample_rate = 0;
};

// Mono 16-bit PCM. Samples are clipped to [-1, 1] and scaled by 32767.
void write_wav(const std::filesystem::path& path, const Tensor& samples, unsigned sample_rate);
// Reads mono 16-bit PCM written by write_wav or any other encoder; unknown
// chunks are skipped.
Audio read_wav(const std::filesystem::path& path);

// The value write_wav stores for x, mapped back to the float range.
double quantize_pcm16(double x);

}  // namespace vqtts
