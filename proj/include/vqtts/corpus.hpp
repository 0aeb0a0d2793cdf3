#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vqtts/tensor.hpp"

namespace vqtts {

// Text-to-waveform oracle: every symbol renders as a fixed-length sinusoid
// segment with a linear fade at both edges.
struct SyntheticCorpusSpec {
  std::string alphabet = "abcdefgh";
  std::vector<double> frequencies{250, 375, 500, 750, 1000, 1250, 1500, 2000};
  double sample_rate = 16000;
  std::size_t segment_length = 1024;
  std::size_t fade_length = 64;
  double amplitude = 0.5;
  std::size_t min_symbols = 4;
  std::size_t max_symbols = 8;
  std::size_t train_size = 64;
  std::size_t valid_size = 8;
  std::size_t eval_size = 8;
  std::uint64_t seed = 1;

  void validate() const;
  // Index of `symbol` in the alphabet; throws for characters outside it.
  std::size_t symbol_index(char symbol) const;
  // FFT bin of the symbol's frequency for a segment-length transform.
  double expected_bin(std::size_t symbol) const;
};

struct Utterance {
  std::string id;
  std::string text;
  Tensor wave;
};

struct SyntheticCorpus {
  std::vector<Utterance> train, valid, eval;
};

Tensor render_segment(const SyntheticCorpusSpec& spec, std::size_t symbol);
Tensor render_text(const SyntheticCorpusSpec& spec, const std::string& text);
SyntheticCorpus generate_corpus(const SyntheticCorpusSpec& spec);

// Bin with the largest magnitude among 1..n/2 of an n-point FFT (n a power of two).
std::size_t dominant_bin(const double* samples, std::size_t n);

struct SegmentMatch {
  std::size_t matched = 0;
  std::size_t total = 0;
  double rate() const { return total ? static_cast<double>(matched) / static_cast<double>(total) : 0.0; }
};

// Compares each segment-length slice of `wave` with the frequency of the
// corresponding symbol in `text`. Missing slices count as mismatches.
SegmentMatch match_segments(const SyntheticCorpusSpec& spec, const std::string& text, const Tensor& wave);

}  // namespace vqtts
