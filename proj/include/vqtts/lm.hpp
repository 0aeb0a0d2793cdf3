#pragma once

#include <random>
#include <span>
#include <vector>

#include "vqtts/nn.hpp"
#include "vqtts/transformer.hpp"

namespace vqtts {

struct LmConfig {
  std::size_t vocab = 0;  // subword units plus PAD, BOS, EOS (last three ids)
  std::size_t hidden_units = 128;
  std::size_t num_layers = 1;
  long warmup_steps = 400;
  double noam_factor = 1.0;
  double grad_clip = 5.0;
  std::size_t batch_tokens = 1024;

  void validate() const;
  // 1,024 units per layer.
  static LmConfig paper(std::size_t vocab, std::size_t num_layers);
};

struct LstmWeights {
  Var w_x;   // [in, 4H], gate blocks ordered input, forget, candidate, output
  Var w_h;   // [H, 4H]
  Var bias;  // [4H]
};

struct LstmState {
  Var h;  // [1, H]
  Var c;  // [1, H]
};

// One LSTM cell update:
//   i, f, o = sigmoid(.), g = tanh(.) from x W_x + h W_h + b
//   c' = f * c + i * g,  h' = o * tanh(c')
LstmState lstm_step(const LstmWeights& w, Var x, const LstmState& state);

class LstmLm {
 public:
  LstmLm(LmConfig cfg, std::uint64_t seed);
  LstmLm(LstmLm&&) = default;
  LstmLm& operator=(LstmLm&&) = default;

  const LmConfig& config() const { return cfg_; }
  Sentinels sentinels() const { return Sentinels::for_vocab(cfg_.vocab); }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // Logits [T, V]; row t predicts the token after inputs[t].
  Var forward(const ParamBinding& bind, std::span<const int> inputs) const;

  // Log-probabilities [V] of the token following BOS + prefix.
  Tensor next_logprobs(std::span<const int> prefix) const;
  // Sum of -log p over tokens (scored after a leading BOS); PAD positions are skipped.
  double sequence_nll(std::span<const int> tokens) const;

  struct State {
    std::vector<Tensor> h, c;
    Tensor logprobs;  // distribution of the next token
  };
  // State after consuming BOS.
  State start() const;
  void advance(State& state, int token) const;

 private:
  struct Layer {
    Tensor *w_x, *w_h, *bias;
  };
  Tensor step_tensor(State& state, int token) const;

  LmConfig cfg_;
  ParameterSet params_;
  Tensor* embedding_ = nullptr;
  std::vector<Layer> layers_;
  Tensor* out_w_ = nullptr;
  Tensor* out_b_ = nullptr;
};

// exp of the mean per-token negative log-likelihood, EOS included, PAD excluded.
double perplexity(const LstmLm& lm, const std::vector<std::vector<int>>& corpus);

struct LmEpochMetrics {
  double mean_loss = 0.0;
  long steps = 0;
  std::size_t tokens = 0;
};

class LmTrainer {
 public:
  LmTrainer(LstmLm& model, std::uint64_t seed);
  // Sequences end with EOS; BOS is prepended internally.
  LmEpochMetrics train_epoch(const std::vector<std::vector<int>>& corpus);

  Adam& optimizer() { return opt_; }
  long step() const { return step_; }
  void set_step(long step) { step_ = step; }

 private:
  LstmLm& model_;
  Adam opt_;
  std::mt19937_64 rng_;
  long step_ = 0;
};

}  // namespace vqtts
