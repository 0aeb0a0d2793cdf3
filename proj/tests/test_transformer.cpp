#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "vqtts/transformer.hpp"

using namespace vqtts;
using vqtts::testing::random_tensor;

namespace {

TransformerConfig tiny_config(std::size_t src_vocab = 10, std::size_t tgt_vocab = 12) {
  TransformerConfig cfg;
  cfg.src_vocab = src_vocab;
  cfg.tgt_vocab = tgt_vocab;
  cfg.encoder_blocks = 2;
  cfg.decoder_blocks = 2;
  cfg.attn_dim = 16;
  cfg.heads = 2;
  cfg.ff_units = 24;
  cfg.dropout = 0.0;
  return cfg;
}

std::vector<int> random_ids(std::mt19937_64& rng, std::size_t len, int vocab_without_sentinels, int eos) {
  std::uniform_int_distribution<int> sym(0, vocab_without_sentinels - 1);
  std::vector<int> ids;
  for (std::size_t i = 0; i < len; ++i) ids.push_back(sym(rng));
  ids.push_back(eos);
  return ids;
}

// Single-head attention written as explicit loops.
Tensor attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v, bool causal) {
  const std::size_t tq = q.dim(0), tk = k.dim(0), d = q.dim(1);
  Tensor out(Shape{tq, d});
  for (std::size_t i = 0; i < tq; ++i) {
    std::vector<double> s(tk);
    double peak = -INFINITY;
    for (std::size_t j = 0; j < tk; ++j) {
      if (causal && j > i) continue;
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q.at(i, c) * k.at(j, c);
      s[j] = dot / std::sqrt(static_cast<double>(d));
      peak = std::max(peak, s[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < tk; ++j) {
      s[j] = (causal && j > i) ? 0.0 : std::exp(s[j] - peak);
      z += s[j];
    }
    for (std::size_t j = 0; j < tk; ++j) {
      for (std::size_t c = 0; c < d; ++c) out.at(i, c) += s[j] / z * v.at(j, c);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("positional encoding") {
  Tensor pe = positional_encoding(50, 8);
  for (std::size_t c = 0; c < 8; ++c) CHECK(pe.at(0, c) == (c % 2 == 0 ? 0.0 : 1.0));
  for (double v : pe.data()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  CHECK(pe.at(1, 0) == doctest::Approx(0.8414709848).epsilon(1e-9));
  CHECK(pe.at(3, 5) == std::cos(3.0 / std::pow(10000.0, 4.0 / 8.0)));
  CHECK_THROWS_AS(positional_encoding(4, 7), std::invalid_argument);
}

TEST_CASE("multi-head attention") {
  std::mt19937_64 rng(31);
  SUBCASE("single position returns its value row") {
    Tape tape(false);
    Tensor v = random_tensor({1, 8}, rng);
    Var out = multi_head_attention(tape.constant(random_tensor({1, 8}, rng)), tape.constant(random_tensor({1, 8}, rng)),
                                   tape.constant(v), 2);
    for (std::size_t c = 0; c < 8; ++c) CHECK(out.value()[c] == doctest::Approx(v[c]).epsilon(1e-15));
  }
  SUBCASE("causal weights and loop oracle") {
    for (std::size_t heads : {1u, 2u, 4u}) {
      Tensor q = random_tensor({6, 8}, rng), k = random_tensor({6, 8}, rng), v = random_tensor({6, 8}, rng);
      Tape tape(false);
      std::vector<Var> weights;
      const auto mask = causal_mask(6, 6);
      Var out = multi_head_attention(tape.constant(q), tape.constant(k), tape.constant(v), heads, &mask, &weights);
      REQUIRE(weights.size() == heads);
      for (const Var& w : weights) {
        for (std::size_t i = 0; i < 6; ++i) {
          double row = 0.0;
          for (std::size_t j = 0; j < 6; ++j) {
            const double a = w.value().at(i, j);
            CHECK(a >= 0.0);
            if (j > i) CHECK(a == 0.0);
            row += a;
          }
          CHECK(std::fabs(row - 1.0) < 1e-9);
        }
      }
      const std::size_t dh = 8 / heads;
      for (std::size_t h = 0; h < heads; ++h) {
        auto cols = [&](const Tensor& t) {
          Tensor s(Shape{6, dh});
          for (std::size_t i = 0; i < 6; ++i) {
            for (std::size_t c = 0; c < dh; ++c) s.at(i, c) = t.at(i, h * dh + c);
          }
          return s;
        };
        Tensor expect = attention_oracle(cols(q), cols(k), cols(v), true);
        for (std::size_t i = 0; i < 6; ++i) {
          for (std::size_t c = 0; c < dh; ++c) CHECK(std::fabs(out.value().at(i, h * dh + c) - expect.at(i, c)) < 1e-9);
        }
      }
    }
  }
  SUBCASE("fully masked row is rejected") {
    Tape tape(false);
    Var x = tape.constant(random_tensor({2, 4}, rng));
    std::vector<unsigned char> keep{1, 0, 0, 0};
    CHECK_THROWS_AS(multi_head_attention(x, x, x, 1, &keep), ShapeError);
  }
}

TEST_CASE("label-smoothed cross-entropy") {
  std::mt19937_64 rng(32);
  Tensor logits = random_tensor({5, 7}, rng, -3.0, 3.0);
  std::vector<int> targets{0, 3, 6, 2, 2};
  Tape tape(false);
  Var lv = tape.constant(logits);

  double nll = 0.0;
  for (std::size_t t = 0; t < 5; ++t) {
    double z = 0.0;
    for (std::size_t j = 0; j < 7; ++j) z += std::exp(logits.at(t, j));
    nll -= logits.at(t, static_cast<std::size_t>(targets[t])) - std::log(z);
  }
  CHECK(std::fabs(label_smoothed_ce(lv, targets, 0.0, -1).value().item() - nll / 5.0) < 1e-12);

  Var uniform = tape.constant(Tensor(Shape{5, 7}, 0.3));
  for (double eps : {0.0, 0.1, 0.5}) {
    CHECK(std::fabs(label_smoothed_ce(uniform, targets, eps, -1).value().item() - std::log(7.0)) < 1e-12);
  }

  std::vector<int> padded{0, 3, 5, 5, 5};
  std::vector<int> first_two{0, 3};
  CHECK(label_smoothed_ce(lv, padded, 0.1, 5).value().item() ==
        doctest::Approx(label_smoothed_ce(slice(lv, 0, 0, 2), first_two, 0.1, -1).value().item()).epsilon(1e-12));
  std::vector<int> all_pad(5, 5);
  CHECK_THROWS_AS(label_smoothed_ce(lv, all_pad, 0.1, 5), std::invalid_argument);
  CHECK_THROWS_AS(label_smoothed_ce(lv, targets, 1.0, -1), std::invalid_argument);
  CHECK(TransformerConfig{}.label_smoothing == 0.1);
}

TEST_CASE("Noam schedule") {
  CHECK(noam_lr(8000, 256, 8000) == doctest::Approx(1.0 / std::sqrt(256.0 * 8000.0)).epsilon(1e-12));
  CHECK(noam_lr(8000, 256, 8000) == doctest::Approx(6.99e-4).epsilon(1e-3));
  double prev = 0.0;
  for (long s = 1; s <= 8000; ++s) {
    const double lr = noam_lr(s, 256, 8000);
    CHECK(lr > prev);
    prev = lr;
  }
  for (long s = 8001; s <= 20000; s += 7) {
    const double lr = noam_lr(s, 256, 8000);
    CHECK(lr < prev);
    prev = lr;
  }
  CHECK_THROWS_AS(noam_lr(0, 256, 8000), std::invalid_argument);
  CHECK(TransformerConfig{}.grad_clip == 5.0);
}

TEST_CASE("config validation and paper preset") {
  TransformerConfig p = TransformerConfig::paper(40, 259);
  CHECK(p.encoder_blocks == 6);
  CHECK(p.decoder_blocks == 6);
  CHECK(p.ff_units == 2048);
  CHECK(p.attn_dim == 256);
  CHECK(p.heads == 4);
  CHECK(p.dropout == 0.1);
  CHECK(p.warmup_steps == 8000);
  p.validate();
  p.heads = 3;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("teacher-forced forward is causal and deterministic") {
  std::mt19937_64 rng(33);
  Transformer model(tiny_config(), 1);
  const Sentinels tgt = model.target_sentinels();
  std::vector<int> src = random_ids(rng, 6, 7, 9);
  std::vector<int> y = random_ids(rng, 7, 9, tgt.eos);
  Tensor base = model.logits(src, y);
  CHECK(base.shape() == Shape{8, 12});
  CHECK(model.logits(src, y) == base);

  for (std::size_t t = 0; t + 1 < y.size(); ++t) {
    std::vector<int> perturbed = y;
    perturbed[t] = (perturbed[t] + 1) % 9;
    Tensor other = model.logits(src, perturbed);
    for (std::size_t r = 0; r <= t; ++r) {
      for (std::size_t c = 0; c < 12; ++c) CHECK(other.at(r, c) == base.at(r, c));
    }
    bool later_changed = false;
    for (std::size_t c = 0; c < 12; ++c) later_changed |= other.at(t + 1, c) != base.at(t + 1, c);
    CHECK(later_changed);
  }
  CHECK_THROWS_AS(model.logits(std::vector<int>{}, y), std::invalid_argument);
  CHECK_THROWS_AS(model.logits(src, std::vector<int>{12, 11}), std::out_of_range);
}

TEST_CASE("incremental decoding matches the full forward") {
  std::mt19937_64 rng(34);
  Transformer model(tiny_config(), 2);
  std::vector<int> src = random_ids(rng, 5, 7, 9);
  std::vector<int> y = random_ids(rng, 6, 9, model.target_sentinels().eos);
  Tensor full = model.logits(src, y);
  Transformer::DecoderState state = model.start(src);
  int prev = model.target_sentinels().bos;
  for (std::size_t t = 0; t < y.size(); ++t) {
    Tensor lp = model.step(state, prev);
    double z = 0.0, peak = -INFINITY;
    for (std::size_t c = 0; c < 12; ++c) peak = std::max(peak, full.at(t, c));
    for (std::size_t c = 0; c < 12; ++c) z += std::exp(full.at(t, c) - peak);
    for (std::size_t c = 0; c < 12; ++c) {
      CHECK(std::fabs(lp[c] - (full.at(t, c) - peak - std::log(z))) < 1e-10);
    }
    prev = y[t];
  }
}

TEST_CASE("full model gradient matches finite differences") {
  std::mt19937_64 rng(35);
  TransformerConfig cfg = tiny_config(6, 7);
  cfg.attn_dim = 4;
  cfg.ff_units = 6;
  Transformer model(cfg, 3);
  std::vector<int> src = random_ids(rng, 3, 3, 5);
  std::vector<int> y = random_ids(rng, 3, 4, 6);

  auto loss_value = [&]() {
    Tape tape(false);
    return label_smoothed_ce(model.forward(ParamBinding{&tape, false}, src, y), y, 0.1, 4).value().item();
  };
  Tape tape;
  Var loss = label_smoothed_ce(model.forward(ParamBinding{&tape, true}, src, y), y, 0.1, 4);
  tape.backward(loss);
  auto analytic = collect_gradients(tape, model.params());

  double diff = 0.0, scale = 0.0;
  const double eps = 1e-5;
  for (std::size_t p = 0; p < model.params().size(); ++p) {
    Tensor& w = model.params()[p].value;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + eps;
      const double up = loss_value();
      w[i] = orig - eps;
      const double down = loss_value();
      w[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      diff = std::max(diff, std::fabs(numeric - analytic[p][i]));
      scale = std::max(scale, std::fabs(numeric));
    }
  }
  CHECK(diff / scale < 1e-5);
}

TEST_CASE("dynamic batching respects the token budget") {
  std::mt19937_64 rng(36);
  std::vector<NmtPair> pairs;
  for (std::size_t i = 0; i < 40; ++i) pairs.push_back({{1, 9}, std::vector<int>(3 + i % 5, 1)});
  pairs.push_back({{1, 9}, std::vector<int>(50, 1)});
  auto batches = make_batches(pairs, 20, rng);
  std::vector<int> seen(pairs.size(), 0);
  for (const auto& b : batches) {
    std::size_t tokens = 0;
    for (std::size_t i : b) {
      tokens += pairs[i].target.size();
      ++seen[i];
    }
    CHECK((tokens <= 20 || b.size() == 1));
  }
  for (int s : seen) CHECK(s == 1);
}

TEST_CASE("memorizes a 16-pair toy dataset") {
  std::mt19937_64 rng(37);
  TransformerConfig cfg = tiny_config(12, 15);
  cfg.attn_dim = 32;
  cfg.ff_units = 64;
  cfg.heads = 4;
  cfg.dropout = 0.1;
  cfg.warmup_steps = 100;
  cfg.noam_factor = 0.1;
  cfg.batch_tokens = 32;
  Transformer model(cfg, 4);
  std::vector<NmtPair> pairs;
  std::uniform_int_distribution<std::size_t> len(3, 7);
  for (int i = 0; i < 16; ++i) pairs.push_back({random_ids(rng, len(rng), 9, 11), random_ids(rng, len(rng), 12, 14)});

  NmtTrainer trainer(model, 5);
  const double initial = trainer.evaluate(pairs).mean_loss;
  CHECK(std::fabs(initial - std::log(15.0)) < 1.0);
  EpochMetrics first = trainer.train_epoch(pairs);
  CHECK(trainer.evaluate(pairs).mean_loss < initial);
  CHECK(first.steps >= 2);
  for (int epoch = 1; epoch < 500; ++epoch) trainer.train_epoch(pairs);
  EpochMetrics final_eval = trainer.evaluate(pairs);
  MESSAGE("teacher-forced accuracy " << final_eval.token_accuracy);
  CHECK(final_eval.token_accuracy > 0.95);
}
