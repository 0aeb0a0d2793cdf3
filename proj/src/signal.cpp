#include "vqtts/signal.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace vqtts {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

namespace {

void fft_in_place(std::vector<Complex>& a, bool inverse) {
  const std::size_t n = a.size();
  if (!is_power_of_two(n)) {
    throw std::invalid_argument("fft length " + std::to_string(n) + " is not a power of two");
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = (inverse ? 2.0 : -2.0) * std::numbers::pi / static_cast<double>(len);
    const std::size_t half = len / 2;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        // Twiddles from the exact angle rather than a running product keep error at O(eps log n).
        const Complex w = std::polar(1.0, angle * static_cast<double>(k));
        const Complex u = a[i + k];
        const Complex v = a[i + k + half] * w;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

}  // namespace

std::vector<Complex> fft(std::vector<Complex> x) {
  fft_in_place(x, false);
  return x;
}

std::vector<Complex> ifft(std::vector<Complex> x) {
  fft_in_place(x, true);
  const double inv = 1.0 / static_cast<double>(x.size());
  for (Complex& v : x) v *= inv;
  return x;
}

std::vector<double> hann_window(std::size_t length) {
  std::vector<double> w(length);
  for (std::size_t n = 0; n < length; ++n) {
    w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                static_cast<double>(length));
  }
  return w;
}

void StftConfig::validate() const {
  if (!is_power_of_two(fft_size)) throw std::invalid_argument("stft fft_size must be a power of two");
  if (hop_size < 1) throw std::invalid_argument("stft hop_size must be >= 1");
  if (win_length < 1 || win_length > fft_size) {
    throw std::invalid_argument("stft win_length must lie in [1, fft_size]");
  }
}

std::size_t StftConfig::frames(std::size_t signal_length) const {
  if (signal_length < win_length) {
    throw ShapeError("signal of length " + std::to_string(signal_length) +
                     " is shorter than the STFT window " + std::to_string(win_length));
  }
  return 1 + (signal_length - win_length) / hop_size;
}

void MultiResConfig::validate() const {
  if (resolutions.empty()) throw std::invalid_argument("multi-resolution STFT needs at least one resolution");
  for (const StftConfig& c : resolutions) c.validate();
  if (!(log_floor > 0.0)) throw std::invalid_argument("log_floor must be positive");
}

MultiResConfig MultiResConfig::defaults() {
  MultiResConfig cfg;
  cfg.resolutions = {{512, 128, 512}, {1024, 256, 1024}, {256, 64, 256}};
  return cfg;
}

namespace {

struct Spectrum {
  Tensor magnitude;             // [frames, bins]
  std::vector<Complex> values;  // frames * bins, row-major
};

Spectrum analyse(const Tensor& x, const StftConfig& cfg, const std::vector<double>& window) {
  const std::size_t frames = cfg.frames(x.size());
  const std::size_t bins = cfg.bins();
  Spectrum s{Tensor(Shape{frames, bins}), std::vector<Complex>(frames * bins)};
  std::vector<Complex> buf(cfg.fft_size);
  for (std::size_t f = 0; f < frames; ++f) {
    std::fill(buf.begin(), buf.end(), Complex{});
    for (std::size_t n = 0; n < cfg.win_length; ++n) buf[n] = window[n] * x[f * cfg.hop_size + n];
    fft_in_place(buf, false);
    for (std::size_t k = 0; k < bins; ++k) {
      s.values[f * bins + k] = buf[k];
      s.magnitude[f * bins + k] = std::abs(buf[k]);
    }
  }
  return s;
}

}  // namespace

Tensor stft_magnitude(const Tensor& x, const StftConfig& cfg) {
  cfg.validate();
  if (x.rank() != 1) throw ShapeError("stft_magnitude expects a 1-D signal");
  return analyse(x, cfg, hann_window(cfg.win_length)).magnitude;
}

Var stft_magnitude(Var x, const StftConfig& cfg) {
  cfg.validate();
  if (x.value().rank() != 1) throw ShapeError("stft_magnitude expects a 1-D signal");
  std::vector<double> window = hann_window(cfg.win_length);
  Spectrum s = analyse(x.value(), cfg, window);
  Tensor mag = std::move(s.magnitude);
  return x.tape().record(
      "stft_magnitude", std::move(mag), {x},
      [cfg, window = std::move(window), values = std::move(s.values)](const BackwardContext& ctx) {
        Tensor* gx = ctx.input_grad(0);
        if (!gx) return;
        const Tensor& g = ctx.out_grad();
        const Tensor& mag = ctx.output();
        const std::size_t frames = mag.dim(0), bins = mag.dim(1);
        std::vector<Complex> buf(cfg.fft_size);
        // d|X_k|/dx_n = w_n Re(conj(X_k) e^{-2 pi i k n / N}) / |X_k|; summed over k this is
        // an unnormalized inverse DFT of g_k X_k / |X_k| restricted to the stored bins.
        for (std::size_t f = 0; f < frames; ++f) {
          std::fill(buf.begin(), buf.end(), Complex{});
          for (std::size_t k = 0; k < bins; ++k) {
            const double m = mag[f * bins + k];
            if (m > 0.0) buf[k] = g[f * bins + k] * values[f * bins + k] / m;
          }
          fft_in_place(buf, true);
          for (std::size_t n = 0; n < cfg.win_length; ++n) {
            (*gx)[f * cfg.hop_size + n] += window[n] * buf[n].real();
          }
        }
      });
}

StftLoss stft_loss(Var x, Var x_hat, const StftConfig& cfg, double log_floor) {
  if (x.shape() != x_hat.shape()) {
    throw ShapeError("stft_loss: signal shapes " + shape_str(x.shape()) + " and " +
                     shape_str(x_hat.shape()) + " differ");
  }
  Var ref = stft_magnitude(x, cfg);
  Var est = stft_magnitude(x_hat, cfg);
  Var ref_norm = sqrt(sum(square(ref)));
  if (ref_norm.value().item() == 0.0) {
    throw std::domain_error("stft_loss: reference magnitude spectrogram is all zeros");
  }
  Var sc = div(sqrt(sum(square(sub(ref, est)))), ref_norm);
  Var mag = mean(abs(sub(log_clamped(ref, log_floor), log_clamped(est, log_floor))));
  return {sc, mag};
}

Var multi_res_stft_loss(Var x, Var x_hat, const MultiResConfig& cfg) {
  cfg.validate();
  Var total;
  for (const StftConfig& res : cfg.resolutions) {
    StftLoss l = stft_loss(x, x_hat, res, cfg.log_floor);
    Var term = add(l.spectral_convergence, l.log_magnitude);
    total = total.valid() ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(cfg.resolutions.size()));
}

}  // namespace vqtts
