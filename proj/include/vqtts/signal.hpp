#pragma once

#include <complex>
#include <vector>

#include "vqtts/autograd.hpp"

namespace vqtts {

using Complex = std::complex<double>;

// Radix-2 DFT, X[k] = sum_n x[n] exp(-2 pi i k n / N). Length must be a power of two.
std::vector<Complex> fft(std::vector<Complex> x);
// Inverse of fft, including the 1/N factor.
std::vector<Complex> ifft(std::vector<Complex> x);
bool is_power_of_two(std::size_t n);

// Periodic Hann window.
std::vector<double> hann_window(std::size_t length);

struct StftConfig {
  std::size_t fft_size = 512;
  std::size_t hop_size = 128;
  std::size_t win_length = 512;

  void validate() const;
  std::size_t frames(std::size_t signal_length) const;
  std::size_t bins() const { return fft_size / 2 + 1; }
};

inline constexpr double kLogMagnitudeFloor = 1e-7;

struct MultiResConfig {
  std::vector<StftConfig> resolutions;
  // Magnitudes are clamped to this value before the logarithm.
  double log_floor = kLogMagnitudeFloor;

  void validate() const;
  // (512,128,512), (1024,256,1024), (256,64,256)
  static MultiResConfig defaults();
};

// |STFT(x)| for a 1-D signal, shape [frames, bins]. Frames start at multiples
// of the hop; frames that would run past the end are dropped (no centering).
Var stft_magnitude(Var x, const StftConfig& cfg);
Tensor stft_magnitude(const Tensor& x, const StftConfig& cfg);

struct StftLoss {
  Var spectral_convergence;
  Var log_magnitude;
};

// Spectral convergence ||S| - |S^||_F / ||S||_F and mean absolute log-magnitude
// difference between reference x and estimate x_hat.
StftLoss stft_loss(Var x, Var x_hat, const StftConfig& cfg, double log_floor = kLogMagnitudeFloor);
// Mean over resolutions of (spectral convergence + log magnitude).
Var multi_res_stft_loss(Var x, Var x_hat, const MultiResConfig& cfg);

}  // namespace vqtts
