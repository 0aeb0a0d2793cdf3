#include "vqtts/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace vqtts {

void TransformerConfig::validate() const {
  if (src_vocab < 4 || tgt_vocab < 4) throw std::invalid_argument("vocabularies need at least one symbol plus 3 sentinels");
  if (encoder_blocks < 1 || decoder_blocks < 1) throw std::invalid_argument("need at least one block per stack");
  if (heads < 1 || attn_dim % heads != 0) {
    throw std::invalid_argument("attn_dim " + std::to_string(attn_dim) + " is not divisible by heads " +
                                std::to_string(heads));
  }
  if (attn_dim % 2 != 0) throw std::invalid_argument("attn_dim must be even for positional encoding");
  if (ff_units < 1) throw std::invalid_argument("ff_units must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must lie in [0, 1)");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    throw std::invalid_argument("label_smoothing must lie in [0, 1)");
  }
  if (warmup_steps < 1) throw std::invalid_argument("warmup_steps must be >= 1");
  if (noam_factor <= 0.0) throw std::invalid_argument("noam_factor must be positive");
  if (grad_clip <= 0.0) throw std::invalid_argument("grad_clip must be positive");
  if (batch_tokens < 1) throw std::invalid_argument("batch_tokens must be >= 1");
}

TransformerConfig TransformerConfig::paper(std::size_t src_vocab, std::size_t tgt_vocab) {
  TransformerConfig cfg;
  cfg.src_vocab = src_vocab;
  cfg.tgt_vocab = tgt_vocab;
  cfg.encoder_blocks = 6;
  cfg.decoder_blocks = 6;
  cfg.ff_units = 2048;
  cfg.attn_dim = 256;
  cfg.heads = 4;
  return cfg;
}

Tensor positional_encoding(std::size_t length, std::size_t dim) {
  if (dim % 2 != 0) throw std::invalid_argument("positional_encoding: dim must be even");
  Tensor pe(Shape{length, dim});
  for (std::size_t p = 0; p < length; ++p) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double angle =
          static_cast<double>(p) / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(dim));
      pe.at(p, 2 * i) = std::sin(angle);
      pe.at(p, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

Var multi_head_attention(Var q, Var k, Var v, std::size_t heads, const std::vector<unsigned char>* keep,
                         std::vector<Var>* weights) {
  if (q.value().rank() != 2 || k.value().rank() != 2 || v.shape() != k.shape() || q.dim(1) != k.dim(1)) {
    throw ShapeError("multi_head_attention: incompatible q " + shape_str(q.shape()) + ", k " +
                     shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  const std::size_t d = q.dim(1);
  if (heads < 1 || d % heads != 0) throw ShapeError("multi_head_attention: dim not divisible by heads");
  const std::size_t dh = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? q : slice(q, 1, h * dh, (h + 1) * dh);
    Var kh = heads == 1 ? k : slice(k, 1, h * dh, (h + 1) * dh);
    Var vh = heads == 1 ? v : slice(v, 1, h * dh, (h + 1) * dh);
    Var scores = scale(matmul(qh, transpose(kh)), inv);
    Var a = keep ? softmax(scores, *keep) : softmax(scores);
    if (weights) weights->push_back(a);
    outs.push_back(matmul(a, vh));
  }
  return heads == 1 ? outs[0] : concat(outs, 1);
}

Var label_smoothed_ce(Var logits, std::span<const int> targets, double eps, int pad_id) {
  if (logits.value().rank() != 2 || logits.dim(0) != targets.size()) {
    throw ShapeError("label_smoothed_ce: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  if (eps < 0.0 || eps >= 1.0) throw std::invalid_argument("label smoothing must lie in [0, 1)");
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  if (vocab < 2) throw ShapeError("label_smoothed_ce needs at least two classes");
  Tensor q(Shape{rows, vocab});
  std::size_t counted = 0;
  const double off = eps / static_cast<double>(vocab - 1);
  for (std::size_t t = 0; t < rows; ++t) {
    if (targets[t] == pad_id) continue;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= vocab) {
      throw std::out_of_range("label_smoothed_ce: target " + std::to_string(targets[t]) + " out of range");
    }
    for (std::size_t j = 0; j < vocab; ++j) q.at(t, j) = off;
    q.at(t, static_cast<std::size_t>(targets[t])) = 1.0 - eps;
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("label_smoothed_ce: every position is padding");
  Var weighted = mul(log_softmax(logits), logits.tape().constant(std::move(q)));
  return scale(sum(weighted), -1.0 / static_cast<double>(counted));
}

double noam_lr(long step, std::size_t model_dim, long warmup, double factor) {
  if (step < 1) throw std::invalid_argument("noam_lr: step must be >= 1");
  if (warmup < 1 || model_dim < 1) throw std::invalid_argument("noam_lr: warmup and model_dim must be >= 1");
  const double s = static_cast<double>(step);
  return factor / std::sqrt(static_cast<double>(model_dim)) *
         std::min(1.0 / std::sqrt(s), s * std::pow(static_cast<double>(warmup), -1.5));
}

// ---- model ------------------------------------------------------------------

Transformer::Linear Transformer::make_linear(const std::string& name, std::size_t in, std::size_t out,
                                             std::mt19937_64& rng) {
  return Linear{&params_.add(name + ".weight", uniform_fan_in({in, out}, in, rng)),
                &params_.add(name + ".bias", Tensor(Shape{out}))};
}

Transformer::Norm Transformer::make_norm(const std::string& name) {
  const std::size_t d = cfg_.attn_dim;
  return Norm{&params_.add(name + ".gain", Tensor(Shape{d}, 1.0)), &params_.add(name + ".bias", Tensor(Shape{d}))};
}

Transformer::Attention Transformer::make_attention(const std::string& name, std::mt19937_64& rng) {
  const std::size_t d = cfg_.attn_dim;
  return Attention{make_linear(name + ".q", d, d, rng), make_linear(name + ".k", d, d, rng),
                   make_linear(name + ".v", d, d, rng), make_linear(name + ".o", d, d, rng)};
}

Transformer::Transformer(TransformerConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg_.attn_dim;
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  Tensor src(Shape{cfg_.src_vocab, d}), tgt(Shape{cfg_.tgt_vocab, d});
  for (double& v : src.data()) v = normal(rng);
  for (double& v : tgt.data()) v = normal(rng);
  src_embedding_ = &params_.add("src_embedding", std::move(src));
  tgt_embedding_ = &params_.add("tgt_embedding", std::move(tgt));
  for (std::size_t i = 0; i < cfg_.encoder_blocks; ++i) {
    const std::string p = "encoder" + std::to_string(i);
    EncoderLayer l;
    l.ln1 = make_norm(p + ".ln1");
    l.self = make_attention(p + ".self", rng);
    l.ln2 = make_norm(p + ".ln2");
    l.ff1 = make_linear(p + ".ff1", d, cfg_.ff_units, rng);
    l.ff2 = make_linear(p + ".ff2", cfg_.ff_units, d, rng);
    encoder_.push_back(l);
  }
  encoder_norm_ = make_norm("encoder.norm");
  for (std::size_t i = 0; i < cfg_.decoder_blocks; ++i) {
    const std::string p = "decoder" + std::to_string(i);
    DecoderLayer l;
    l.ln1 = make_norm(p + ".ln1");
    l.self = make_attention(p + ".self", rng);
    l.ln2 = make_norm(p + ".ln2");
    l.cross = make_attention(p + ".cross", rng);
    l.ln3 = make_norm(p + ".ln3");
    l.ff1 = make_linear(p + ".ff1", d, cfg_.ff_units, rng);
    l.ff2 = make_linear(p + ".ff2", cfg_.ff_units, d, rng);
    decoder_.push_back(l);
  }
  decoder_norm_ = make_norm("decoder.norm");
  output_ = make_linear("output", d, cfg_.tgt_vocab, rng);
}

namespace {

struct Binder {
  const ParamBinding& bind;

  Var linear(Var x, const Tensor& w, const Tensor& b) const { return add_bias(matmul(x, bind(w)), bind(b)); }
  Var norm(Var x, const Tensor& g, const Tensor& b) const {
    return add_bias(mul_gain(layer_norm(x), bind(g)), bind(b));
  }
};

Var maybe_dropout(Var x, double rate, std::mt19937_64* rng) {
  return rng && rate > 0.0 ? dropout(x, rate, *rng) : x;
}

}  // namespace

Var Transformer::embed(const ParamBinding& bind, const Tensor& table, std::span<const int> ids,
                       std::size_t offset, std::mt19937_64* rng) const {
  const std::size_t vocab = table.dim(0);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
    }
  }
  const std::size_t d = cfg_.attn_dim;
  Tensor pe = positional_encoding(offset + ids.size(), d);
  Tensor rows(Shape{ids.size(), d});
  std::copy(pe.ptr() + offset * d, pe.ptr() + (offset + ids.size()) * d, rows.ptr());
  Var x = add(scale(embedding(bind(table), ids), std::sqrt(static_cast<double>(d))), bind.tape->constant(rows));
  return maybe_dropout(x, cfg_.dropout, rng);
}

Var Transformer::feed_forward(const ParamBinding& bind, const Linear& ff1, const Linear& ff2, Var x) const {
  Binder b{bind};
  return b.linear(relu(b.linear(x, *ff1.weight, *ff1.bias)), *ff2.weight, *ff2.bias);
}

Var Transformer::encode(const ParamBinding& bind, std::span<const int> src, std::mt19937_64* rng) const {
  if (src.empty()) throw std::invalid_argument("encode: empty source sequence");
  Binder b{bind};
  Var x = embed(bind, *src_embedding_, src, 0, rng);
  for (const EncoderLayer& l : encoder_) {
    Var h = b.norm(x, *l.ln1.gain, *l.ln1.bias);
    Var q = b.linear(h, *l.self.q.weight, *l.self.q.bias);
    Var k = b.linear(h, *l.self.k.weight, *l.self.k.bias);
    Var v = b.linear(h, *l.self.v.weight, *l.self.v.bias);
    Var a = b.linear(multi_head_attention(q, k, v, cfg_.heads), *l.self.o.weight, *l.self.o.bias);
    x = add(x, maybe_dropout(a, cfg_.dropout, rng));
    Var f = feed_forward(bind, l.ff1, l.ff2, b.norm(x, *l.ln2.gain, *l.ln2.bias));
    x = add(x, maybe_dropout(f, cfg_.dropout, rng));
  }
  return b.norm(x, *encoder_norm_.gain, *encoder_norm_.bias);
}

Var Transformer::decode(const ParamBinding& bind, Var memory, std::span<const int> decoder_input,
                        std::mt19937_64* rng) const {
  if (decoder_input.empty()) throw std::invalid_argument("decode: empty decoder input");
  Binder b{bind};
  const std::size_t t = decoder_input.size();
  const auto mask = causal_mask(t, t);
  Var x = embed(bind, *tgt_embedding_, decoder_input, 0, rng);
  for (const DecoderLayer& l : decoder_) {
    Var h = b.norm(x, *l.ln1.gain, *l.ln1.bias);
    Var q = b.linear(h, *l.self.q.weight, *l.self.q.bias);
    Var k = b.linear(h, *l.self.k.weight, *l.self.k.bias);
    Var v = b.linear(h, *l.self.v.weight, *l.self.v.bias);
    Var a = b.linear(multi_head_attention(q, k, v, cfg_.heads, &mask), *l.self.o.weight, *l.self.o.bias);
    x = add(x, maybe_dropout(a, cfg_.dropout, rng));

    h = b.norm(x, *l.ln2.gain, *l.ln2.bias);
    q = b.linear(h, *l.cross.q.weight, *l.cross.q.bias);
    k = b.linear(memory, *l.cross.k.weight, *l.cross.k.bias);
    v = b.linear(memory, *l.cross.v.weight, *l.cross.v.bias);
    a = b.linear(multi_head_attention(q, k, v, cfg_.heads), *l.cross.o.weight, *l.cross.o.bias);
    x = add(x, maybe_dropout(a, cfg_.dropout, rng));

    Var f = feed_forward(bind, l.ff1, l.ff2, b.norm(x, *l.ln3.gain, *l.ln3.bias));
    x = add(x, maybe_dropout(f, cfg_.dropout, rng));
  }
  Var y = b.norm(x, *decoder_norm_.gain, *decoder_norm_.bias);
  return b.linear(y, *output_.weight, *output_.bias);
}

Var Transformer::forward(const ParamBinding& bind, std::span<const int> src, std::span<const int> tgt,
                         std::mt19937_64* rng) const {
  if (tgt.empty()) throw std::invalid_argument("forward: empty target sequence");
  std::vector<int> input{target_sentinels().bos};
  input.insert(input.end(), tgt.begin(), tgt.end() - 1);
  Var memory = encode(bind, src, rng);
  return decode(bind, memory, input, rng);
}

Tensor Transformer::logits(std::span<const int> src, std::span<const int> tgt) const {
  Tape tape(false);
  return forward(ParamBinding{&tape, false}, src, tgt).value();
}

Transformer::DecoderState Transformer::start(std::span<const int> src) const {
  Tape tape(false);
  ParamBinding bind{&tape, false};
  Binder b{bind};
  DecoderState state;
  Var memory = encode(bind, src);
  state.memory = memory.value();
  const std::size_t d = cfg_.attn_dim;
  for (const DecoderLayer& l : decoder_) {
    state.cross_k.push_back(b.linear(memory, *l.cross.k.weight, *l.cross.k.bias).value());
    state.cross_v.push_back(b.linear(memory, *l.cross.v.weight, *l.cross.v.bias).value());
    state.self_k.emplace_back(Shape{0, d});
    state.self_v.emplace_back(Shape{0, d});
  }
  return state;
}

namespace {

Tensor append_row(const Tensor& cache, const Tensor& row) {
  std::vector<double> data(cache.data().begin(), cache.data().end());
  data.insert(data.end(), row.data().begin(), row.data().end());
  return Tensor(Shape{cache.dim(0) + 1, row.size()}, std::move(data));
}

}  // namespace

Tensor Transformer::step(DecoderState& state, int token) const {
  Tape tape(false);
  ParamBinding bind{&tape, false};
  Binder b{bind};
  const int one[1] = {token};
  Var x = embed(bind, *tgt_embedding_, one, state.position, nullptr);
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    const DecoderLayer& l = decoder_[i];
    Var h = b.norm(x, *l.ln1.gain, *l.ln1.bias);
    Var q = b.linear(h, *l.self.q.weight, *l.self.q.bias);
    state.self_k[i] = append_row(state.self_k[i], b.linear(h, *l.self.k.weight, *l.self.k.bias).value());
    state.self_v[i] = append_row(state.self_v[i], b.linear(h, *l.self.v.weight, *l.self.v.bias).value());
    Var a = multi_head_attention(q, tape.constant(state.self_k[i]), tape.constant(state.self_v[i]), cfg_.heads);
    x = add(x, b.linear(a, *l.self.o.weight, *l.self.o.bias));

    h = b.norm(x, *l.ln2.gain, *l.ln2.bias);
    q = b.linear(h, *l.cross.q.weight, *l.cross.q.bias);
    a = multi_head_attention(q, tape.constant(state.cross_k[i]), tape.constant(state.cross_v[i]), cfg_.heads);
    x = add(x, b.linear(a, *l.cross.o.weight, *l.cross.o.bias));

    x = add(x, feed_forward(bind, l.ff1, l.ff2, b.norm(x, *l.ln3.gain, *l.ln3.bias)));
  }
  Var y = b.norm(x, *decoder_norm_.gain, *decoder_norm_.bias);
  Var lp = log_softmax(b.linear(y, *output_.weight, *output_.bias));
  ++state.position;
  return lp.value().reshaped(Shape{cfg_.tgt_vocab});
}

// ---- training ---------------------------------------------------------------

std::vector<std::vector<std::size_t>> make_batches(const std::vector<NmtPair>& pairs, std::size_t budget,
                                                   std::mt19937_64& rng) {
  std::vector<std::size_t> lengths;
  for (const NmtPair& p : pairs) lengths.push_back(p.target.size());
  return batch_by_length(lengths, budget, rng);
}

namespace {

std::size_t count_correct(const Tensor& logits, std::span<const int> targets, int pad) {
  std::size_t correct = 0;
  const std::size_t vocab = logits.dim(1);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] == pad) continue;
    const double* row = logits.ptr() + t * vocab;
    const auto best = static_cast<int>(std::max_element(row, row + vocab) - row);
    correct += best == targets[t];
  }
  return correct;
}

}  // namespace

NmtTrainer::NmtTrainer(Transformer& model, std::uint64_t seed) : model_(model), rng_(seed) {}

EpochMetrics NmtTrainer::train_epoch(const std::vector<NmtPair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("train_epoch: empty dataset");
  const TransformerConfig& cfg = model_.config();
  const int pad = model_.target_sentinels().pad;
  EpochMetrics m;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (const auto& batch : make_batches(pairs, cfg.batch_tokens, rng_)) {
    Tape tape;
    ParamBinding bind{&tape, true};
    std::vector<Var> logits;
    std::vector<int> targets;
    try {
      for (std::size_t i : batch) {
        logits.push_back(model_.forward(bind, pairs[i].source, pairs[i].target, &rng_));
        targets.insert(targets.end(), pairs[i].target.begin(), pairs[i].target.end());
      }
      Var all = logits.size() == 1 ? logits[0] : concat(logits, 0);
      Var loss = label_smoothed_ce(all, targets, cfg.label_smoothing, pad);
      const double value = loss.value().item();
      if (!std::isfinite(value)) throw NumericError("non-finite loss");
      tape.backward(loss);
      std::size_t counted = 0;
      for (int t : targets) counted += t != pad;
      loss_sum += value * static_cast<double>(counted);
      m.tokens += counted;
      correct += count_correct(all.value(), targets, pad);
    } catch (const NumericError& e) {
      throw TrainingError("nmt step " + std::to_string(step_ + 1) + " aborted: " + e.what());
    }
    auto grads = collect_gradients(tape, model_.params());
    clip_grad_norm(grads, cfg.grad_clip);
    ++step_;
    last_lr_ = noam_lr(step_, cfg.attn_dim, cfg.warmup_steps, cfg.noam_factor);
    opt_.step(model_.params(), grads, last_lr_);
    ++m.steps;
  }
  m.mean_loss = loss_sum / static_cast<double>(m.tokens);
  m.token_accuracy = static_cast<double>(correct) / static_cast<double>(m.tokens);
  return m;
}

EpochMetrics NmtTrainer::evaluate(const std::vector<NmtPair>& pairs) const {
  if (pairs.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const TransformerConfig& cfg = model_.config();
  const int pad = model_.target_sentinels().pad;
  EpochMetrics m;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (const NmtPair& p : pairs) {
    Tape tape(false);
    Var logits = model_.forward(ParamBinding{&tape, false}, p.source, p.target);
    std::size_t counted = 0;
    for (int t : p.target) counted += t != pad;
    loss_sum += label_smoothed_ce(logits, p.target, cfg.label_smoothing, pad).value().item() *
                static_cast<double>(counted);
    m.tokens += counted;
    correct += count_correct(logits.value(), p.target, pad);
  }
  m.mean_loss = loss_sum / static_cast<double>(m.tokens);
  m.token_accuracy = static_cast<double>(correct) / static_cast<double>(m.tokens);
  return m;
}

}  // namespace vqtts
