#include <cmath>
#include <functional>
#include <limits>

#include "doctest.h"
#include "vqtts/decoder.hpp"

using namespace vqtts;

namespace {

// Next-token distribution is a fixed pseudo-random function of the prefix.
class ToyScorer : public Scorer {
 public:
  ToyScorer(std::size_t vocab, std::uint64_t seed, double peak = 3.0) : vocab_(vocab), seed_(seed), peak_(peak) {}
  std::size_t vocab_size() const override { return vocab_; }
  StatePtr initial_state() const override { return make({}); }
  StatePtr advance(const State& state, int token) const override {
    auto prefix = static_cast<const ToyState&>(state).prefix;
    prefix.push_back(token);
    return make(prefix);
  }

 private:
  struct ToyState : State {
    std::vector<int> prefix;
  };
  StatePtr make(std::vector<int> prefix) const {
    std::uint64_t h = seed_;
    for (int t : prefix) h = h * 1000003u + static_cast<std::uint64_t>(t) + 1;
    std::mt19937_64 rng(h);
    std::uniform_real_distribution<double> u(-peak_, peak_);
    auto s = std::make_shared<ToyState>();
    s->prefix = std::move(prefix);
    std::vector<double> logits(vocab_);
    double z = 0.0;
    for (double& v : logits) {
      v = u(rng);
      z += std::exp(v);
    }
    s->logprobs = Tensor(Shape{vocab_});
    for (std::size_t i = 0; i < vocab_; ++i) s->logprobs[i] = logits[i] - std::log(z);
    return s;
  }
  std::size_t vocab_;
  std::uint64_t seed_;
  double peak_;
};

class UniformScorer : public Scorer {
 public:
  explicit UniformScorer(std::size_t vocab) : vocab_(vocab) {}
  std::size_t vocab_size() const override { return vocab_; }
  StatePtr initial_state() const override {
    auto s = std::make_shared<State>();
    s->logprobs = Tensor(Shape{vocab_}, -std::log(static_cast<double>(vocab_)));
    return s;
  }
  StatePtr advance(const State& state, int) const override { return std::make_shared<State>(state); }

 private:
  std::size_t vocab_;
};

double sequence_score(const Scorer& s, const std::vector<int>& tokens) {
  Scorer::StatePtr st = s.initial_state();
  double total = 0.0;
  for (int t : tokens) {
    total += st->logprobs[t];
    st = s.advance(*st, t);
  }
  return total;
}

// Best EOS-terminated sequence of at most max_len tokens, by enumeration.
std::pair<std::vector<int>, double> exhaustive(const Scorer& s, int eos, std::size_t max_len) {
  std::vector<int> best;
  double best_score = -std::numeric_limits<double>::infinity();
  std::function<void(std::vector<int>&)> walk = [&](std::vector<int>& prefix) {
    if (prefix.size() + 1 > max_len) return;
    std::vector<int> done = prefix;
    done.push_back(eos);
    const double sc = sequence_score(s, done);
    if (sc > best_score || (sc == best_score && done < best)) {
      best_score = sc;
      best = done;
    }
    for (int t = 0; t < static_cast<int>(s.vocab_size()); ++t) {
      if (t == eos) continue;
      prefix.push_back(t);
      walk(prefix);
      prefix.pop_back();
    }
  };
  std::vector<int> empty;
  walk(empty);
  return {best, best_score};
}

}  // namespace

TEST_CASE("beam search matches exhaustive enumeration") {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    ToyScorer toy(4, seed);
    DecodeConfig cfg;
    cfg.beam_size = 1024;
    cfg.max_length = 5;
    BeamResult r = beam_search(toy, nullptr, cfg, 3);
    auto [tokens, score] = exhaustive(toy, 3, 5);
    CHECK(r.finished);
    CHECK(r.tokens == tokens);
    CHECK(std::fabs(r.score - score) < 1e-12);
  }
}

TEST_CASE("beam size one is greedy decoding") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    ToyScorer toy(6, seed);
    DecodeConfig cfg;
    cfg.beam_size = 1;
    cfg.max_length = 12;
    BeamResult r = beam_search(toy, nullptr, cfg, 5);
    std::vector<int> greedy;
    Scorer::StatePtr st = toy.initial_state();
    for (std::size_t t = 0; t < cfg.max_length; ++t) {
      const Tensor& lp = st->logprobs;
      const int best = static_cast<int>(std::max_element(lp.ptr(), lp.ptr() + lp.size()) - lp.ptr());
      greedy.push_back(best);
      if (best == 5) break;
      st = toy.advance(*st, best);
    }
    CHECK(r.tokens == greedy);
    CHECK(r.finished == (greedy.back() == 5));
  }
}

TEST_CASE("scores are recomputable and fusion with zero weight is inert") {
  ToyScorer nmt(7, 3);
  ToyScorer lm(7, 99);
  DecodeConfig cfg;
  cfg.beam_size = 4;
  cfg.max_length = 10;
  BeamResult plain = beam_search(nmt, nullptr, cfg, 6, {0});
  BeamResult with_lm = beam_search(nmt, &lm, cfg, 6, {0});
  CHECK(plain.tokens == with_lm.tokens);
  CHECK(plain.score == with_lm.score);
  CHECK(std::fabs(plain.score - sequence_score(nmt, plain.tokens)) < 1e-12);
  for (int t : plain.tokens) CHECK(t != 0);

  cfg.lm_weight = 0.3;
  BeamResult fused = beam_search(nmt, &lm, cfg, 6, {0});
  CHECK(std::fabs(fused.nmt_score - sequence_score(nmt, fused.tokens)) < 1e-12);
  CHECK(std::fabs(fused.lm_score - sequence_score(lm, fused.tokens)) < 1e-12);
  CHECK(std::fabs(fused.score - (fused.nmt_score + 0.3 * fused.lm_score)) < 1e-12);
  CHECK_THROWS_AS(beam_search(nmt, nullptr, cfg, 6), std::invalid_argument);
}

TEST_CASE("uniform LM fusion does not change the search") {
  ToyScorer nmt(6, 5);
  UniformScorer lm(6);
  DecodeConfig cfg;
  cfg.beam_size = 3;
  cfg.max_length = 8;
  BeamResult plain = beam_search(nmt, nullptr, cfg, 5);
  cfg.lm_weight = 1.0;
  BeamResult fused = beam_search(nmt, &lm, cfg, 5);
  // A constant per-token shift only reorders hypotheses of different lengths.
  CHECK(fused.nmt_score <= plain.score + 1e-12);
  CHECK(std::fabs(fused.lm_score + std::log(6.0) * static_cast<double>(fused.tokens.size())) < 1e-12);
}

TEST_CASE("fused_score") {
  Tensor nmt = Tensor::vector({-0.5, -1.5, -2.0});
  Tensor lm = Tensor::vector({-1.0, -0.2, -3.0});
  CHECK(fused_score(nmt, &lm, 0.0) == nmt);
  CHECK(fused_score(nmt, nullptr, 0.0) == nmt);
  Tensor f = fused_score(nmt, &lm, 0.2);
  CHECK(f[1] == doctest::Approx(-1.5 - 0.04).epsilon(1e-15));
  Tensor uniform(Shape{3}, -std::log(3.0));
  Tensor shifted = fused_score(nmt, &uniform, 1.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::fabs(shifted[i] - (nmt[i] - std::log(3.0))) < 1e-15);
  CHECK(std::max_element(shifted.ptr(), shifted.ptr() + 3) - shifted.ptr() == 0);
  Tensor wrong(Shape{4});
  CHECK_THROWS_AS(fused_score(nmt, &wrong, 0.1), ShapeError);
  CHECK_THROWS_AS(fused_score(nmt, nullptr, 0.1), std::invalid_argument);
}

TEST_CASE("beam width and result quality on toy models") {
  // Beam search is not monotone in the beam width: a wider beam can displace
  // the prefix that a narrower beam would have completed. A beam wide enough
  // to keep every prefix is optimal, so it dominates every complete result of
  // a narrower beam.
  int violations = 0;
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    ToyScorer toy(4, seed, 2.0);
    DecodeConfig cfg;
    cfg.max_length = 5;
    cfg.beam_size = 1024;
    const double full = beam_search(toy, nullptr, cfg, 3).score;
    double prev = -std::numeric_limits<double>::infinity();
    for (std::size_t beam : {1u, 2u, 3u, 5u, 10u}) {
      cfg.beam_size = beam;
      const BeamResult r = beam_search(toy, nullptr, cfg, 3);
      // An unfinished fallback lacks the EOS term and is not comparable.
      if (!r.finished) continue;
      const double score = r.score;
      CHECK(score <= full + 1e-12);
      if (score < prev - 1e-12) ++violations;
      prev = std::max(prev, score);
    }
  }
  MESSAGE("instances where a wider beam scored lower: " << violations << " of 200");
}

TEST_CASE("max length fallback returns the best unfinished hypothesis") {
  ToyScorer toy(4, 7);
  DecodeConfig cfg;
  cfg.beam_size = 2;
  cfg.max_length = 3;
  // EOS id outside the vocabulary can never be produced.
  BeamResult r = beam_search(toy, nullptr, cfg, 99);
  CHECK_FALSE(r.finished);
  CHECK(r.tokens.size() == 3);
  CHECK(std::fabs(r.score - sequence_score(toy, r.tokens)) < 1e-12);
  cfg.beam_size = 0;
  CHECK_THROWS_AS(beam_search(toy, nullptr, cfg, 3), std::invalid_argument);
}

TEST_CASE("token error rate") {
  std::vector<int> ref{1, 3, 4};
  CHECK(token_error_rate(ref, ref) == 0.0);
  CHECK(token_error_rate(std::vector<int>{}, ref) == 100.0);
  CHECK(token_error_rate(std::vector<int>{1, 2, 4}, ref) == doctest::Approx(100.0 / 3.0).epsilon(1e-12));
  CHECK(token_error_rate(std::vector<int>{1, 3, 4, 4, 4}, ref) == doctest::Approx(200.0 / 3.0).epsilon(1e-12));
  CHECK_THROWS_AS(token_error_rate(ref, std::vector<int>{}), std::invalid_argument);

  std::mt19937_64 rng(51);
  std::uniform_int_distribution<int> sym(0, 3), len(0, 8);
  auto draw = [&] {
    std::vector<int> s(static_cast<std::size_t>(len(rng)));
    for (int& v : s) v = sym(rng);
    return s;
  };
  for (int i = 0; i < 300; ++i) {
    auto a = draw(), b = draw(), c = draw();
    CHECK(edit_distance(a, b) == edit_distance(b, a));
    CHECK(edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c));
    CHECK(edit_distance(a, a) == 0);
  }
}

TEST_CASE("synthesis length, range and determinism") {
  VqVaeConfig vcfg = VqVaeConfig::dsf128();
  vcfg.max_channels = 16;
  vcfg.decoder_channels = 16;
  VqVae vqvae(vcfg, 1);
  SubwordModel subwords(256, {});
  TransformerConfig tcfg;
  tcfg.src_vocab = 8;
  tcfg.tgt_vocab = subwords.vocab_size();
  tcfg.encoder_blocks = 1;
  tcfg.decoder_blocks = 1;
  tcfg.attn_dim = 16;
  tcfg.ff_units = 16;
  Transformer nmt(tcfg, 2);
  nmt.params().get("output.bias")[static_cast<std::size_t>(subwords.eos())] = -100.0;

  DecodeConfig cfg;
  cfg.beam_size = 1;
  cfg.max_length = 64;
  std::vector<int> src{1, 2, 3, 4, 7};
  Synthesis a = synthesize(src, nmt, nullptr, subwords, vqvae, cfg);
  CHECK_FALSE(a.finished);
  CHECK(a.symbols.size() == 64);
  CHECK(a.waveform.size() == 8192);
  for (double v : a.waveform.data()) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
  Synthesis b = synthesize(src, nmt, nullptr, subwords, vqvae, cfg);
  CHECK(a.waveform == b.waveform);

  nmt.params().get("output.bias")[static_cast<std::size_t>(subwords.eos())] = 100.0;
  CHECK_THROWS_AS(synthesize(src, nmt, nullptr, subwords, vqvae, cfg), EmptyOutputError);
  CHECK_THROWS_AS(synthesize(std::vector<int>{}, nmt, nullptr, subwords, vqvae, cfg), std::invalid_argument);
}
