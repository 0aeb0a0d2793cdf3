#include "vqtts/lm.hpp"

#include <cmath>
#include <string>

namespace vqtts {

void LmConfig::validate() const {
  if (vocab < 4) throw std::invalid_argument("lm vocab needs at least one unit plus 3 sentinels");
  if (hidden_units < 1) throw std::invalid_argument("hidden_units must be >= 1");
  if (num_layers < 1) throw std::invalid_argument("num_layers must be >= 1");
  if (warmup_steps < 1) throw std::invalid_argument("warmup_steps must be >= 1");
  if (noam_factor <= 0.0 || grad_clip <= 0.0) throw std::invalid_argument("noam_factor and grad_clip must be positive");
  if (batch_tokens < 1) throw std::invalid_argument("batch_tokens must be >= 1");
}

LmConfig LmConfig::paper(std::size_t vocab, std::size_t num_layers) {
  LmConfig cfg;
  cfg.vocab = vocab;
  cfg.hidden_units = 1024;
  cfg.num_layers = num_layers;
  return cfg;
}

LstmState lstm_step(const LstmWeights& w, Var x, const LstmState& state) {
  const std::size_t hidden = state.h.value().rank() == 2 ? state.h.dim(1) : 0;
  if (x.value().rank() != 2 || x.dim(0) != 1 || state.h.shape() != Shape{1, hidden} ||
      state.c.shape() != state.h.shape() || w.w_x.shape() != Shape{x.dim(1), 4 * hidden} ||
      w.w_h.shape() != Shape{hidden, 4 * hidden} || w.bias.shape() != Shape{4 * hidden}) {
    throw ShapeError("lstm_step: x " + shape_str(x.shape()) + ", h " + shape_str(state.h.shape()) + ", W_x " +
                     shape_str(w.w_x.shape()) + ", W_h " + shape_str(w.w_h.shape()));
  }
  Var gates = add_bias(add(matmul(x, w.w_x), matmul(state.h, w.w_h)), w.bias);
  Var i = sigmoid(slice(gates, 1, 0, hidden));
  Var f = sigmoid(slice(gates, 1, hidden, 2 * hidden));
  Var g = tanh(slice(gates, 1, 2 * hidden, 3 * hidden));
  Var o = sigmoid(slice(gates, 1, 3 * hidden, 4 * hidden));
  Var c = add(mul(f, state.c), mul(i, g));
  return {mul(o, tanh(c)), c};
}

LstmLm::LstmLm(LmConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t h = cfg_.hidden_units;
  embedding_ = &params_.add("embedding", uniform_fan_in({cfg_.vocab, h}, h, rng));
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    const std::string p = "lstm" + std::to_string(l);
    Layer layer;
    layer.w_x = &params_.add(p + ".w_x", uniform_fan_in({h, 4 * h}, h, rng));
    layer.w_h = &params_.add(p + ".w_h", uniform_fan_in({h, 4 * h}, h, rng));
    Tensor bias(Shape{4 * h});
    // Forget-gate bias starts at 1.
    for (std::size_t j = h; j < 2 * h; ++j) bias[j] = 1.0;
    layer.bias = &params_.add(p + ".bias", std::move(bias));
    layers_.push_back(layer);
  }
  out_w_ = &params_.add("output.weight", uniform_fan_in({h, cfg_.vocab}, h, rng));
  out_b_ = &params_.add("output.bias", Tensor(Shape{cfg_.vocab}));
}

Var LstmLm::forward(const ParamBinding& bind, std::span<const int> inputs) const {
  if (inputs.empty()) throw std::invalid_argument("lm forward: empty input");
  for (int id : inputs) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab) {
      throw std::out_of_range("lm token " + std::to_string(id) + " outside vocabulary");
    }
  }
  const std::size_t h = cfg_.hidden_units;
  Var x = embedding(bind(*embedding_), inputs);
  for (const Layer& layer : layers_) {
    LstmWeights w{bind(*layer.w_x), bind(*layer.w_h), bind(*layer.bias)};
    LstmState s{bind.tape->constant(Tensor(Shape{1, h})), bind.tape->constant(Tensor(Shape{1, h}))};
    std::vector<Var> outs;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      s = lstm_step(w, slice(x, 0, t, t + 1), s);
      outs.push_back(s.h);
    }
    x = outs.size() == 1 ? outs[0] : concat(outs, 0);
  }
  return add_bias(matmul(x, bind(*out_w_)), bind(*out_b_));
}

Tensor LstmLm::next_logprobs(std::span<const int> prefix) const {
  std::vector<int> inputs{sentinels().bos};
  inputs.insert(inputs.end(), prefix.begin(), prefix.end());
  Tape tape(false);
  Var lp = log_softmax(forward(ParamBinding{&tape, false}, inputs));
  const Tensor& all = lp.value();
  const std::size_t v = cfg_.vocab;
  return Tensor(Shape{v}, std::vector<double>(all.ptr() + (inputs.size() - 1) * v, all.ptr() + inputs.size() * v));
}

double LstmLm::sequence_nll(std::span<const int> tokens) const {
  if (tokens.empty()) return 0.0;
  std::vector<int> inputs{sentinels().bos};
  inputs.insert(inputs.end(), tokens.begin(), tokens.end() - 1);
  Tape tape(false);
  const Tensor lp = log_softmax(forward(ParamBinding{&tape, false}, inputs)).value();
  double nll = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] == sentinels().pad) continue;
    nll -= lp.at(t, static_cast<std::size_t>(tokens[t]));
  }
  return nll;
}

Tensor LstmLm::step_tensor(State& state, int token) const {
  if (token < 0 || static_cast<std::size_t>(token) >= cfg_.vocab) {
    throw std::out_of_range("lm token " + std::to_string(token) + " outside vocabulary");
  }
  Tape tape(false);
  ParamBinding bind{&tape, false};
  const int one[1] = {token};
  Var x = embedding(bind(*embedding_), one);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    LstmWeights w{bind(*layers_[l].w_x), bind(*layers_[l].w_h), bind(*layers_[l].bias)};
    LstmState s = lstm_step(w, x, {tape.constant(state.h[l]), tape.constant(state.c[l])});
    state.h[l] = s.h.value();
    state.c[l] = s.c.value();
    x = s.h;
  }
  Var lp = log_softmax(add_bias(matmul(x, bind(*out_w_)), bind(*out_b_)));
  return lp.value().reshaped(Shape{cfg_.vocab});
}

LstmLm::State LstmLm::start() const {
  State s;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    s.h.emplace_back(Shape{1, cfg_.hidden_units});
    s.c.emplace_back(Shape{1, cfg_.hidden_units});
  }
  s.logprobs = step_tensor(s, sentinels().bos);
  return s;
}

void LstmLm::advance(State& state, int token) const { state.logprobs = step_tensor(state, token); }

double perplexity(const LstmLm& lm, const std::vector<std::vector<int>>& corpus) {
  double nll = 0.0;
  std::size_t tokens = 0;
  const int pad = lm.sentinels().pad;
  for (const auto& seq : corpus) {
    nll += lm.sequence_nll(seq);
    for (int t : seq) tokens += t != pad;
  }
  if (tokens == 0) throw std::invalid_argument("perplexity: empty corpus");
  return std::exp(nll / static_cast<double>(tokens));
}

LmTrainer::LmTrainer(LstmLm& model, std::uint64_t seed) : model_(model), rng_(seed) {}

LmEpochMetrics LmTrainer::train_epoch(const std::vector<std::vector<int>>& corpus) {
  std::vector<const std::vector<int>*> usable;
  std::vector<std::size_t> lengths;
  for (const auto& seq : corpus) {
    if (seq.empty()) continue;
    usable.push_back(&seq);
    lengths.push_back(seq.size());
  }
  if (usable.empty()) throw std::invalid_argument("lm train_epoch: empty corpus");
  const LmConfig& cfg = model_.config();
  const Sentinels s = model_.sentinels();
  LmEpochMetrics m;
  double loss_sum = 0.0;
  for (const auto& batch : batch_by_length(lengths, cfg.batch_tokens, rng_)) {
    Tape tape;
    ParamBinding bind{&tape, true};
    std::vector<Var> logits;
    std::vector<int> targets;
    for (std::size_t i : batch) {
      const auto& seq = *usable[i];
      std::vector<int> inputs{s.bos};
      inputs.insert(inputs.end(), seq.begin(), seq.end() - 1);
      logits.push_back(model_.forward(bind, inputs));
      targets.insert(targets.end(), seq.begin(), seq.end());
    }
    std::size_t counted = 0;
    for (int t : targets) counted += t != s.pad;
    if (counted == 0) continue;
    try {
      Var all = logits.size() == 1 ? logits[0] : concat(logits, 0);
      Var loss = label_smoothed_ce(all, targets, 0.0, s.pad);
      tape.backward(loss);
      loss_sum += loss.value().item() * static_cast<double>(counted);
    } catch (const NumericError& e) {
      throw TrainingError("lm step " + std::to_string(step_ + 1) + " aborted: " + e.what());
    }
    m.tokens += counted;
    auto grads = collect_gradients(tape, model_.params());
    clip_grad_norm(grads, cfg.grad_clip);
    ++step_;
    opt_.step(model_.params(), grads, noam_lr(step_, cfg.hidden_units, cfg.warmup_steps, cfg.noam_factor));
    ++m.steps;
  }
  m.mean_loss = m.tokens ? loss_sum / static_cast<double>(m.tokens) : 0.0;
  return m;
}

}  // namespace vqtts
