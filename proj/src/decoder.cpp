#include "vqtts/decoder.hpp"

#include <algorithm>
#include <string>

namespace vqtts {

NmtScorer::NmtScorer(const Transformer& model, std::span<const int> source) : model_(model) {
  auto s = std::make_shared<NmtState>();
  s->decoder = model_.start(source);
  s->logprobs = model_.step(s->decoder, model_.target_sentinels().bos);
  initial_ = std::move(s);
}

Scorer::StatePtr NmtScorer::advance(const State& state, int token) const {
  auto next = std::make_shared<NmtState>(static_cast<const NmtState&>(state));
  next->logprobs = model_.step(next->decoder, token);
  return next;
}

Scorer::StatePtr LmScorer::initial_state() const {
  auto s = std::make_shared<LmState>();
  s->lm = model_.start();
  s->logprobs = s->lm.logprobs;
  return s;
}

Scorer::StatePtr LmScorer::advance(const State& state, int token) const {
  auto next = std::make_shared<LmState>(static_cast<const LmState&>(state));
  model_.advance(next->lm, token);
  next->logprobs = next->lm.logprobs;
  return next;
}

void DecodeConfig::validate() const {
  if (beam_size < 1) throw std::invalid_argument("beam_size must be >= 1");
  if (lm_weight < 0.0) throw std::invalid_argument("lm_weight must be >= 0");
  if (max_length < 1) throw std::invalid_argument("max_length must be >= 1");
}

Tensor fused_score(const Tensor& nmt_logprobs, const Tensor* lm_logprobs, double lm_weight) {
  if (lm_weight == 0.0) return nmt_logprobs;
  if (!lm_logprobs) throw std::invalid_argument("fused_score: lm_weight > 0 needs LM scores");
  if (lm_logprobs->size() != nmt_logprobs.size()) {
    throw ShapeError("fused_score: NMT vocab " + std::to_string(nmt_logprobs.size()) + " vs LM vocab " +
                     std::to_string(lm_logprobs->size()));
  }
  Tensor out = nmt_logprobs;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += lm_weight * (*lm_logprobs)[i];
  return out;
}

namespace {

struct Hypothesis {
  std::vector<int> tokens;
  double score = 0.0, nmt = 0.0, lm = 0.0;
  Scorer::StatePtr nmt_state, lm_state;
};

struct Candidate {
  std::size_t parent;
  int token;
  double score;
};

// Higher score first; equal scores fall back to the smaller token sequence.
bool better(double score_a, const std::vector<int>& prefix_a, int tail_a, double score_b,
            const std::vector<int>& prefix_b, int tail_b) {
  if (score_a != score_b) return score_a > score_b;
  const std::size_t n = prefix_a.size();  // equal lengths within one step
  for (std::size_t i = 0; i < n; ++i) {
    if (prefix_a[i] != prefix_b[i]) return prefix_a[i] < prefix_b[i];
  }
  return tail_a < tail_b;
}

bool better_final(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

}  // namespace

BeamResult beam_search(const Scorer& nmt, const Scorer* lm, const DecodeConfig& cfg, int eos,
                       const std::vector<int>& excluded) {
  cfg.validate();
  const bool fuse = cfg.lm_weight != 0.0;
  if (fuse && !lm) throw std::invalid_argument("beam_search: lm_weight > 0 but no language model");
  if (fuse && lm->vocab_size() != nmt.vocab_size()) throw ShapeError("beam_search: NMT and LM vocabularies differ");
  const std::size_t vocab = nmt.vocab_size();
  std::vector<unsigned char> allowed(vocab, 1);
  for (int id : excluded) {
    if (id >= 0 && static_cast<std::size_t>(id) < vocab) allowed[id] = 0;
  }

  std::vector<Hypothesis> live(1);
  live[0].nmt_state = nmt.initial_state();
  if (fuse) live[0].lm_state = lm->initial_state();
  std::vector<Hypothesis> finished;

  for (std::size_t length = 1; length <= cfg.max_length && !live.empty(); ++length) {
    std::vector<Candidate> cands;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const Tensor& n = live[h].nmt_state->logprobs;
      const Tensor* l = fuse ? &live[h].lm_state->logprobs : nullptr;
      for (std::size_t v = 0; v < vocab; ++v) {
        if (!allowed[v]) continue;
        const double inc = fuse ? n[v] + cfg.lm_weight * (*l)[v] : n[v];
        cands.push_back({h, static_cast<int>(v), live[h].score + inc});
      }
    }
    const std::size_t keep = std::min(cfg.beam_size, cands.size());
    auto order = [&](const Candidate& a, const Candidate& b) {
      return better(a.score, live[a.parent].tokens, a.token, b.score, live[b.parent].tokens, b.token);
    };
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), order);

    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = cands[i];
      const Hypothesis& parent = live[c.parent];
      Hypothesis h;
      h.tokens = parent.tokens;
      h.tokens.push_back(c.token);
      h.score = c.score;
      h.nmt = parent.nmt + parent.nmt_state->logprobs[c.token];
      if (fuse) h.lm = parent.lm + parent.lm_state->logprobs[c.token];
      if (c.token == eos) {
        finished.push_back(std::move(h));
        continue;
      }
      if (length < cfg.max_length) {
        h.nmt_state = nmt.advance(*parent.nmt_state, c.token);
        if (fuse) h.lm_state = lm->advance(*parent.lm_state, c.token);
      }
      next.push_back(std::move(h));
    }
    live = std::move(next);
    if (finished.size() >= cfg.beam_size) break;
    // Scores never increase, so once the best finished hypothesis is strictly
    // ahead of every live one the outcome is settled.
    if (!finished.empty() && !live.empty()) {
      const auto best_done = std::min_element(finished.begin(), finished.end(), better_final);
      double best_live = live[0].score;
      for (const Hypothesis& h : live) best_live = std::max(best_live, h.score);
      if (best_done->score > best_live) break;
    }
  }

  BeamResult r;
  const std::vector<Hypothesis>& pool = finished.empty() ? live : finished;
  if (pool.empty()) return r;
  const Hypothesis& best = *std::min_element(pool.begin(), pool.end(), better_final);
  r.tokens = best.tokens;
  r.score = best.score;
  r.nmt_score = best.nmt;
  r.lm_score = best.lm;
  r.finished = !finished.empty();
  return r;
}

BeamResult beam_search(const Transformer& nmt, std::span<const int> source, const LstmLm* lm,
                       const DecodeConfig& cfg) {
  NmtScorer scorer(nmt, source);
  const Sentinels s = nmt.target_sentinels();
  if (cfg.lm_weight != 0.0 && lm) {
    LmScorer lm_scorer(*lm);
    return beam_search(scorer, &lm_scorer, cfg, s.eos, {s.pad, s.bos});
  }
  return beam_search(scorer, nullptr, cfg, s.eos, {s.pad, s.bos});
}

std::size_t edit_distance(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double token_error_rate(std::span<const int> hyp, std::span<const int> ref) {
  if (ref.empty()) throw std::invalid_argument("token_error_rate: empty reference");
  return 100.0 * static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

Synthesis synthesize(std::span<const int> source, const Transformer& nmt, const LstmLm* lm,
                     const SubwordModel& subwords, const VqVae& vqvae, const DecodeConfig& cfg) {
  if (subwords.vocab_size() != nmt.config().tgt_vocab) {
    throw std::invalid_argument("synthesize: subword vocabulary (" + std::to_string(subwords.vocab_size()) +
                                ") does not match the NMT output layer (" + std::to_string(nmt.config().tgt_vocab) +
                                ")");
  }
  if (subwords.base_size() != vqvae.config().num_centroids) {
    throw std::invalid_argument("synthesize: subword base alphabet does not match the codebook size");
  }
  BeamResult beam = beam_search(nmt, source, lm, cfg);
  Synthesis out;
  out.finished = beam.finished;
  out.units = beam.tokens;
  if (!out.units.empty() && out.units.back() == subwords.eos()) out.units.pop_back();
  out.symbols = subwords.decode(out.units);
  if (out.symbols.empty()) throw EmptyOutputError("decoding produced no tokens");
  out.waveform = vqvae.decode(vqvae.lookup(out.symbols));
  return out;
}

}  // namespace vqtts
