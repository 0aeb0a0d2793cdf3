#include "vqtts/corpus.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

#include "vqtts/signal.hpp"

namespace vqtts {

void SyntheticCorpusSpec::validate() const {
  if (alphabet.empty()) throw std::invalid_argument("corpus alphabet is empty");
  if (std::set<char>(alphabet.begin(), alphabet.end()).size() != alphabet.size()) {
    throw std::invalid_argument("corpus alphabet repeats a symbol");
  }
  if (frequencies.size() != alphabet.size()) {
    throw std::invalid_argument("corpus frequencies (" + std::to_string(frequencies.size()) +
                                ") must match the alphabet size (" + std::to_string(alphabet.size()) + ")");
  }
  if (!(sample_rate > 0.0)) throw std::invalid_argument("sample_rate must be positive");
  const double nyquist = sample_rate / 2.0;
  for (std::size_t i = 0; i < frequencies.size(); ++i) {
    const double f = frequencies[i];
    if (!(f > 0.0)) throw std::invalid_argument(std::string("frequency for symbol '") + alphabet[i] + "' must be positive");
    if (f >= nyquist) {
      throw std::invalid_argument(std::string("frequency for symbol '") + alphabet[i] + "' (" + std::to_string(f) +
                                  " Hz) is at or above the Nyquist limit " + std::to_string(nyquist) + " Hz");
    }
  }
  if (std::set<double>(frequencies.begin(), frequencies.end()).size() != frequencies.size()) {
    throw std::invalid_argument("corpus frequencies must be distinct");
  }
  if (segment_length < 2) throw std::invalid_argument("segment_length must be >= 2");
  if (2 * fade_length > segment_length) throw std::invalid_argument("fade_length exceeds half the segment_length");
  if (!(amplitude > 0.0 && amplitude <= 1.0)) throw std::invalid_argument("amplitude must be in (0, 1]");
  if (min_symbols < 1 || min_symbols > max_symbols) {
    throw std::invalid_argument("min_symbols must be >= 1 and <= max_symbols");
  }
}

std::size_t SyntheticCorpusSpec::symbol_index(char symbol) const {
  const auto pos = alphabet.find(symbol);
  if (pos == std::string::npos) throw std::invalid_argument(std::string("symbol '") + symbol + "' is not in the alphabet");
  return pos;
}

double SyntheticCorpusSpec::expected_bin(std::size_t symbol) const {
  return frequencies.at(symbol) * static_cast<double>(segment_length) / sample_rate;
}

Tensor render_segment(const SyntheticCorpusSpec& spec, std::size_t symbol) {
  const std::size_t n = spec.segment_length;
  const double omega = 2.0 * std::numbers::pi * spec.frequencies.at(symbol) / spec.sample_rate;
  Tensor seg(Shape{n});
  for (std::size_t t = 0; t < n; ++t) {
    double gain = 1.0;
    if (spec.fade_length > 0) {
      const std::size_t edge = std::min(t, n - 1 - t);
      if (edge < spec.fade_length) gain = static_cast<double>(edge) / static_cast<double>(spec.fade_length);
    }
    seg[t] = spec.amplitude * gain * std::sin(omega * static_cast<double>(t));
  }
  return seg;
}

Tensor render_text(const SyntheticCorpusSpec& spec, const std::string& text) {
  const std::size_t n = spec.segment_length;
  Tensor wave(Shape{text.size() * n});
  for (std::size_t i = 0; i < text.size(); ++i) {
    const Tensor seg = render_segment(spec, spec.symbol_index(text[i]));
    std::copy(seg.ptr(), seg.ptr() + n, wave.ptr() + i * n);
  }
  return wave;
}

SyntheticCorpus generate_corpus(const SyntheticCorpusSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> length(spec.min_symbols, spec.max_symbols);
  std::uniform_int_distribution<std::size_t> symbol(0, spec.alphabet.size() - 1);
  auto make = [&](const std::string& split, std::size_t count) {
    std::vector<Utterance> out;
    for (std::size_t u = 0; u < count; ++u) {
      Utterance utt;
      const std::string num = std::to_string(u);
      utt.id = split + "_" + std::string(num.size() < 3 ? 3 - num.size() : 0, '0') + num;
      const std::size_t len = length(rng);
      for (std::size_t i = 0; i < len; ++i) utt.text.push_back(spec.alphabet[symbol(rng)]);
      utt.wave = render_text(spec, utt.text);
      out.push_back(std::move(utt));
    }
    return out;
  };
  SyntheticCorpus corpus;
  corpus.train = make("train", spec.train_size);
  corpus.valid = make("valid", spec.valid_size);
  corpus.eval = make("eval", spec.eval_size);
  return corpus;
}

std::size_t dominant_bin(const double* samples, std::size_t n) {
  std::vector<Complex> x(samples, samples + n);
  const std::vector<Complex> spectrum = fft(std::move(x));
  std::size_t best = 1;
  for (std::size_t k = 2; k <= n / 2; ++k) {
    if (std::abs(spectrum[k]) > std::abs(spectrum[best])) best = k;
  }
  return best;
}

SegmentMatch match_segments(const SyntheticCorpusSpec& spec, const std::string& text, const Tensor& wave) {
  SegmentMatch m;
  const std::size_t n = spec.segment_length;
  for (std::size_t i = 0; i < text.size(); ++i) {
    ++m.total;
    if ((i + 1) * n > wave.size()) continue;
    const double expected = spec.expected_bin(spec.symbol_index(text[i]));
    const std::size_t bin = dominant_bin(wave.ptr() + i * n, n);
    if (std::fabs(static_cast<double>(bin) - expected) < 0.5) ++m.matched;
  }
  return m;
}

}  // namespace vqtts
