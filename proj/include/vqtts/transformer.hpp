#pragma once

#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "vqtts/nn.hpp"

namespace vqtts {

// Target ids reserve the last three slots of the vocabulary for PAD, BOS and
// EOS, matching SubwordModel. Source vocabularies use the same layout.
struct Sentinels {
  int pad, bos, eos;
  static Sentinels for_vocab(std::size_t vocab) {
    const int v = static_cast<int>(vocab);
    return {v - 3, v - 2, v - 1};
  }
};

struct TransformerConfig {
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
  std::size_t encoder_blocks = 2;
  std::size_t decoder_blocks = 2;
  std::size_t ff_units = 256;
  std::size_t attn_dim = 64;
  std::size_t heads = 4;
  double dropout = 0.1;
  double label_smoothing = 0.1;
  long warmup_steps = 8000;
  double noam_factor = 1.0;
  double grad_clip = 5.0;
  // Dynamic batching budget: target tokens per batch.
  std::size_t batch_tokens = 96 * 32;

  void validate() const;
  // 6/6 blocks, 2048 feed-forward units, 256-dim attention with 4 heads.
  static TransformerConfig paper(std::size_t src_vocab, std::size_t tgt_vocab);
};

// PE[p, 2i] = sin(p / 10000^(2i/dim)), PE[p, 2i+1] = cos(same).
Tensor positional_encoding(std::size_t length, std::size_t dim);

// Scaled dot-product attention over already projected q [Tq, d], k and v
// [Tk, d], split into `heads` column groups and concatenated back. `keep` is
// an optional [Tq, Tk] mask. Per-head attention weights are appended to
// `weights` when given.
Var multi_head_attention(Var q, Var k, Var v, std::size_t heads,
                         const std::vector<unsigned char>* keep = nullptr,
                         std::vector<Var>* weights = nullptr);

// Cross-entropy against the smoothed target distribution (1 - eps on the gold
// id, eps / (V - 1) on every other id), averaged over positions whose target
// is not pad_id. Pass pad_id = -1 to count every position.
Var label_smoothed_ce(Var logits, std::span<const int> targets, double eps, int pad_id);

// factor * d^-0.5 * min(step^-0.5, step * warmup^-1.5)
double noam_lr(long step, std::size_t model_dim, long warmup, double factor = 1.0);

class Transformer {
 public:
  Transformer(TransformerConfig cfg, std::uint64_t seed);
  Transformer(Transformer&&) = default;
  Transformer& operator=(Transformer&&) = default;

  const TransformerConfig& config() const { return cfg_; }
  Sentinels target_sentinels() const { return Sentinels::for_vocab(cfg_.tgt_vocab); }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // Encoder memory [S, d]. Dropout is active only when rng is given.
  Var encode(const ParamBinding& bind, std::span<const int> src, std::mt19937_64* rng = nullptr) const;
  // Logits [T, V] for decoder inputs (BOS followed by the shifted target).
  Var decode(const ParamBinding& bind, Var memory, std::span<const int> decoder_input,
             std::mt19937_64* rng = nullptr) const;
  // Teacher-forced logits [|tgt|, V]; row t sees src and tgt[< t].
  Var forward(const ParamBinding& bind, std::span<const int> src, std::span<const int> tgt,
              std::mt19937_64* rng = nullptr) const;
  Tensor logits(std::span<const int> src, std::span<const int> tgt) const;

  // Incremental decoding with cached keys and values.
  struct DecoderState {
    Tensor memory;
    std::vector<Tensor> self_k, self_v, cross_k, cross_v;
    std::size_t position = 0;
  };
  DecoderState start(std::span<const int> src) const;
  // Feeds one decoder input token; returns log-probabilities [V] for the next one.
  Tensor step(DecoderState& state, int token) const;

 private:
  struct Linear {
    Tensor* weight;  // [in, out]
    Tensor* bias;
  };
  struct Norm {
    Tensor* gain;
    Tensor* bias;
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct EncoderLayer {
    Norm ln1, ln2;
    Attention self;
    Linear ff1, ff2;
  };
  struct DecoderLayer {
    Norm ln1, ln2, ln3;
    Attention self, cross;
    Linear ff1, ff2;
  };

  Linear make_linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng);
  Norm make_norm(const std::string& name);
  Attention make_attention(const std::string& name, std::mt19937_64& rng);

  Var embed(const ParamBinding& bind, const Tensor& table, std::span<const int> ids,
            std::size_t offset, std::mt19937_64* rng) const;
  Var feed_forward(const ParamBinding& bind, const Linear& ff1, const Linear& ff2, Var x) const;

  TransformerConfig cfg_;
  ParameterSet params_;
  Tensor* src_embedding_ = nullptr;
  Tensor* tgt_embedding_ = nullptr;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  Norm encoder_norm_{}, decoder_norm_{};
  Linear output_{};
};

struct NmtPair {
  std::vector<int> source;  // ends with the source EOS
  std::vector<int> target;  // ends with the target EOS
};

struct EpochMetrics {
  double mean_loss = 0.0;
  double token_accuracy = 0.0;
  long steps = 0;
  std::size_t tokens = 0;
};

// Shuffles and groups pair indices so that each batch's summed target length
// stays within `budget` (a longer single pair forms its own batch).
std::vector<std::vector<std::size_t>> make_batches(const std::vector<NmtPair>& pairs,
                                                   std::size_t budget, std::mt19937_64& rng);

class NmtTrainer {
 public:
  NmtTrainer(Transformer& model, std::uint64_t seed);

  EpochMetrics train_epoch(const std::vector<NmtPair>& pairs);
  // Teacher-forced loss and accuracy with dropout disabled; no update.
  EpochMetrics evaluate(const std::vector<NmtPair>& pairs) const;

  Adam& optimizer() { return opt_; }
  long step() const { return step_; }
  void set_step(long step) { step_ = step; }
  double last_lr() const { return last_lr_; }

 private:
  Transformer& model_;
  Adam opt_;
  std::mt19937_64 rng_;
  long step_ = 0;
  double last_lr_ = 0.0;
};

}  // namespace vqtts
