#pragma once

#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "vqtts/lm.hpp"
#include "vqtts/tokenizer.hpp"
#include "vqtts/transformer.hpp"
#include "vqtts/vqvae.hpp"

namespace vqtts {

// Autoregressive next-token scorer. States are immutable and shared between
// hypotheses; advance returns a new state.
class Scorer {
 public:
  struct State {
    virtual ~State() = default;
    Tensor logprobs;  // [V], distribution of the next token
  };
  using StatePtr = std::shared_ptr<const State>;

  virtual ~Scorer() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual StatePtr initial_state() const = 0;
  virtual StatePtr advance(const State& state, int token) const = 0;
};

class NmtScorer : public Scorer {
 public:
  NmtScorer(const Transformer& model, std::span<const int> source);
  std::size_t vocab_size() const override { return model_.config().tgt_vocab; }
  StatePtr initial_state() const override { return initial_; }
  StatePtr advance(const State& state, int token) const override;

 private:
  struct NmtState : State {
    Transformer::DecoderState decoder;
  };
  const Transformer& model_;
  StatePtr initial_;
};

class LmScorer : public Scorer {
 public:
  explicit LmScorer(const LstmLm& model) : model_(model) {}
  std::size_t vocab_size() const override { return model_.config().vocab; }
  StatePtr initial_state() const override;
  StatePtr advance(const State& state, int token) const override;

 private:
  struct LmState : State {
    LstmLm::State lm;
  };
  const LstmLm& model_;
};

enum class LengthMode { None };

struct DecodeConfig {
  std::size_t beam_size = 3;
  double lm_weight = 0.0;
  std::size_t max_length = 200;  // counts the EOS token
  LengthMode length_mode = LengthMode::None;

  void validate() const;
};

// nmt + lm_weight * lm, elementwise. With lm_weight == 0 the LM is not read.
Tensor fused_score(const Tensor& nmt_logprobs, const Tensor* lm_logprobs, double lm_weight);

struct BeamResult {
  std::vector<int> tokens;  // includes the final EOS when finished
  double score = 0.0;       // nmt_score + lm_weight * lm_score
  double nmt_score = 0.0;
  double lm_score = 0.0;
  bool finished = false;    // false when max_length ran out before any EOS
};

// Beam search without length normalization. Each step expands every live
// hypothesis over all ids except `excluded`, keeps the best beam_size
// candidates (score descending, then token sequence ascending) and moves
// those ending in `eos` to the finished pool. Search ends when the pool holds
// beam_size hypotheses, nothing is live, or max_length is reached.
BeamResult beam_search(const Scorer& nmt, const Scorer* lm, const DecodeConfig& cfg, int eos,
                       const std::vector<int>& excluded = {});
// Uses the model's target sentinels: PAD and BOS are never emitted.
BeamResult beam_search(const Transformer& nmt, std::span<const int> source, const LstmLm* lm,
                       const DecodeConfig& cfg);

// Levenshtein distance (unit costs) over the reference length, in percent.
double token_error_rate(std::span<const int> hyp, std::span<const int> ref);
std::size_t edit_distance(std::span<const int> a, std::span<const int> b);

class EmptyOutputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Synthesis {
  Tensor waveform;
  std::vector<int> units;    // subword units without EOS
  std::vector<int> symbols;  // VQ centroid ids
  bool finished = false;
};

// beam search -> subword decode -> codebook lookup -> VQ decoder.
Synthesis synthesize(std::span<const int> source, const Transformer& nmt, const LstmLm* lm,
                     const SubwordModel& subwords, const VqVae& vqvae, const DecodeConfig& cfg);

}  // namespace vqtts
