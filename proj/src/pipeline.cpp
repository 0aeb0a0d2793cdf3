#include "vqtts/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "vqtts/audio.hpp"

namespace vqtts {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kModelSeedOffset = 101;
constexpr std::uint64_t kTrainerSeedOffset = 202;

std::ostream& progress(const StageOptions& opt) {
  static std::ostream null(nullptr);
  return opt.progress ? *opt.progress : null;
}

// Throws a StageError naming the stage that produces each missing input.
void require_inputs(const std::string& stage, const Workspace& ws) {
  for (const std::string& rel : stage_spec(stage).inputs) {
    if (fs::exists(ws.root() / rel)) continue;
    std::string producer = "an earlier stage";
    for (const StageSpec& s : stage_graph()) {
      for (const std::string& out : s.outputs) {
        if (out == rel) producer = s.name;
      }
    }
    throw StageError(stage + ": missing " + (ws.root() / rel).string() + "; run `" + producer + "` first");
  }
}

void require_file(const fs::path& path, const std::string& stage, const std::string& producer) {
  if (!fs::exists(path)) throw StageError(stage + ": missing " + path.string() + "; run `" + producer + "` first");
}

std::vector<Tensor> load_waves(const Workspace& ws, const std::vector<CorpusEntry>& entries) {
  std::vector<Tensor> waves;
  for (const CorpusEntry& e : entries) waves.push_back(read_wav(ws.wav(e.id)).samples);
  return waves;
}

std::vector<int> strip_eos(std::vector<int> units, int eos) {
  if (!units.empty() && units.back() == eos) units.pop_back();
  return units;
}

std::vector<NmtPair> make_pairs(const SyntheticCorpusSpec& spec, const std::vector<CorpusEntry>& entries,
                                const std::vector<std::vector<int>>& units, const std::string& split) {
  if (entries.size() != units.size()) {
    throw StageError("corpus/" + split + ".txt has " + std::to_string(entries.size()) + " utterances but units/" +
                     split + ".ids has " + std::to_string(units.size()) + "; rerun `tokenize` and `learn-subwords`");
  }
  std::vector<NmtPair> pairs;
  for (std::size_t i = 0; i < entries.size(); ++i) pairs.push_back({encode_text(spec, entries[i].text), units[i]});
  return pairs;
}

SubwordModel load_subwords(const StageOptions& opt, const Workspace& ws, const std::string& stage) {
  require_file(ws.subwords(), stage, "learn-subwords");
  SubwordModel sw = SubwordModel::load(ws.subwords());
  if (sw.base_size() != opt.config.vqvae.num_centroids) {
    throw StageError(stage + ": subwords.model base alphabet (" + std::to_string(sw.base_size()) +
                     ") does not match vqvae.num_centroids (" + std::to_string(opt.config.vqvae.num_centroids) +
                     "); rerun `learn-subwords`");
  }
  return sw;
}

VqVae load_vqvae(const StageOptions& opt, const Workspace& ws, const std::string& stage) {
  require_file(ws.vqvae(), stage, "train-vqvae");
  Checkpoint ckpt = load_checkpoint(ws.vqvae(), "vqvae");
  if (ckpt.meta.at("config") != to_json(opt.config.vqvae)) {
    throw StageError(stage + ": " + ws.vqvae().string() +
                     " was trained with a different vqvae config; rerun `train-vqvae`");
  }
  return vqvae_from_checkpoint(ckpt);
}

Transformer load_nmt(const Workspace& ws, const SubwordModel& sw, const std::string& stage) {
  require_file(ws.nmt(), stage, "train-nmt");
  Transformer nmt = nmt_from_checkpoint(load_checkpoint(ws.nmt(), "nmt"));
  if (nmt.config().tgt_vocab != sw.vocab_size()) {
    throw StageError(stage + ": nmt.ckpt output vocabulary (" + std::to_string(nmt.config().tgt_vocab) +
                     ") does not match subwords.model vocabulary (" + std::to_string(sw.vocab_size()) +
                     "); rerun `train-nmt`");
  }
  return nmt;
}

std::optional<LstmLm> load_lm(const Workspace& ws, const SubwordModel& sw, const std::string& stage) {
  require_file(ws.lm(), stage, "train-lm");
  LstmLm lm = lm_from_checkpoint(load_checkpoint(ws.lm(), "lm"));
  if (lm.config().vocab != sw.vocab_size()) {
    throw StageError(stage + ": lm.ckpt vocabulary (" + std::to_string(lm.config().vocab) +
                     ") does not match subwords.model vocabulary (" + std::to_string(sw.vocab_size()) +
                     "); rerun `train-lm`");
  }
  return lm;
}

std::string format_weight(double w) {
  std::ostringstream s;
  s << w;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

const std::vector<StageSpec>& stage_graph() {
  static const std::vector<StageSpec> graph{
      {"gen-corpus", {}, {"corpus/train.txt", "corpus/valid.txt", "corpus/eval.txt", "corpus/wav"}},
      {"train-vqvae", {"corpus/train.txt", "corpus/wav"}, {"vqvae.ckpt", "logs/train-vqvae.jsonl"}},
      {"tokenize",
       {"vqvae.ckpt", "corpus/train.txt", "corpus/valid.txt", "corpus/eval.txt", "corpus/wav"},
       {"tokens/train.ids", "tokens/valid.ids", "tokens/eval.ids", "logs/tokenize.jsonl"}},
      {"learn-subwords",
       {"tokens/train.ids", "tokens/valid.ids", "tokens/eval.ids"},
       {"subwords.model", "units/train.ids", "units/valid.ids", "units/eval.ids"}},
      {"train-nmt",
       {"corpus/train.txt", "corpus/valid.txt", "units/train.ids", "units/valid.ids", "subwords.model"},
       {"nmt.ckpt", "logs/train-nmt.jsonl"}},
      {"train-lm", {"units/train.ids", "units/valid.ids", "subwords.model"}, {"lm.ckpt", "logs/train-lm.jsonl"}},
      {"translate", {"nmt.ckpt", "subwords.model"}, {"translations"}},
      {"eval-ter",
       {"nmt.ckpt", "lm.ckpt", "subwords.model", "corpus/eval.txt", "units/eval.ids"},
       {"ter.tsv", "hyp"}},
      {"synth", {"nmt.ckpt", "subwords.model", "vqvae.ckpt", "corpus/train.txt"}, {"synth", "logs/synth.jsonl"}},
  };
  return graph;
}

const StageSpec& stage_spec(const std::string& name) {
  for (const StageSpec& s : stage_graph()) {
    if (s.name == name) return s;
  }
  throw std::invalid_argument("unknown stage " + name);
}

fs::path Workspace::hypotheses(std::size_t beam, double lm_weight) const {
  return root_ / "hyp" / ("beam" + std::to_string(beam) + "_lm" + format_weight(lm_weight) + ".txt");
}

void write_corpus_list(const fs::path& path, const std::vector<CorpusEntry>& entries) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const CorpusEntry& e : entries) out << e.id << ' ' << e.text << '\n';
}

std::vector<CorpusEntry> read_corpus_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<CorpusEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    CorpusEntry e;
    if (!(fields >> e.id >> e.text)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected \"id text\"");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<int> encode_text(const SyntheticCorpusSpec& spec, const std::string& text) {
  std::vector<int> ids;
  for (char c : text) ids.push_back(static_cast<int>(spec.symbol_index(c)));
  ids.push_back(Sentinels::for_vocab(spec.alphabet.size() + 3).eos);
  return ids;
}

MetricsLog::MetricsLog(const fs::path& path) {
  fs::create_directories(path.parent_path());
  out_.open(path, std::ios::app);
  if (!out_) throw std::runtime_error("cannot open metrics log " + path.string());
}

void MetricsLog::write(const json& record) {
  out_ << record.dump() << '\n';
  out_.flush();
}

Checkpoint vqvae_checkpoint(const VqVae& model, const VqTrainConfig& training, const VqVaeTrainer* trainer) {
  Checkpoint ckpt;
  ckpt.kind = "vqvae";
  ckpt.meta["config"] = to_json(model.config());
  ckpt.meta["training"] = to_json(training);
  ckpt.meta["trained_steps"] = model.trained_steps();
  ckpt.add_params("generator.", model.generator_params());
  ckpt.add_params("discriminator.", model.discriminator_params());
  if (trainer) {
    auto& t = const_cast<VqVaeTrainer&>(*trainer);
    ckpt.add_optimizer("optimizer.generator.", t.generator_optimizer(), model.generator_params());
    ckpt.add_optimizer("optimizer.discriminator.", t.discriminator_optimizer(), model.discriminator_params());
  }
  return ckpt;
}

VqVae vqvae_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "vqvae") throw CheckpointError("expected a vqvae checkpoint, got " + ckpt.kind);
  VqVaeConfig cfg;
  from_json(ckpt.meta.at("config"), cfg, "checkpoint config");
  VqVae model(cfg, 0);
  ckpt.load_params("generator.", model.generator_params());
  ckpt.load_params("discriminator.", model.discriminator_params());
  model.set_trained_steps(ckpt.meta.value("trained_steps", 0L));
  return model;
}

Checkpoint nmt_checkpoint(const Transformer& model, const NmtTrainer* trainer) {
  Checkpoint ckpt;
  ckpt.kind = "nmt";
  ckpt.meta["config"] = to_json(model.config());
  ckpt.meta["src_vocab"] = model.config().src_vocab;
  ckpt.meta["tgt_vocab"] = model.config().tgt_vocab;
  ckpt.add_params("model.", model.params());
  if (trainer) {
    auto& t = const_cast<NmtTrainer&>(*trainer);
    ckpt.meta["step"] = t.step();
    ckpt.add_optimizer("optimizer.", t.optimizer(), model.params());
  }
  return ckpt;
}

Transformer nmt_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "nmt") throw CheckpointError("expected an nmt checkpoint, got " + ckpt.kind);
  TransformerConfig cfg;
  from_json(ckpt.meta.at("config"), cfg, "checkpoint config");
  cfg.src_vocab = ckpt.meta.at("src_vocab").get<std::size_t>();
  cfg.tgt_vocab = ckpt.meta.at("tgt_vocab").get<std::size_t>();
  Transformer model(cfg, 0);
  ckpt.load_params("model.", model.params());
  return model;
}

Checkpoint lm_checkpoint(const LstmLm& model, const LmTrainer* trainer) {
  Checkpoint ckpt;
  ckpt.kind = "lm";
  ckpt.meta["config"] = to_json(model.config());
  ckpt.meta["vocab"] = model.config().vocab;
  ckpt.add_params("model.", model.params());
  if (trainer) {
    auto& t = const_cast<LmTrainer&>(*trainer);
    ckpt.meta["step"] = t.step();
    ckpt.add_optimizer("optimizer.", t.optimizer(), model.params());
  }
  return ckpt;
}

LstmLm lm_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "lm") throw CheckpointError("expected an lm checkpoint, got " + ckpt.kind);
  LmConfig cfg;
  from_json(ckpt.meta.at("config"), cfg, "checkpoint config");
  cfg.vocab = ckpt.meta.at("vocab").get<std::size_t>();
  LstmLm model(cfg, 0);
  ckpt.load_params("model.", model.params());
  return model;
}

std::string TerTable::format() const {
  std::ostringstream s;
  s << std::left << std::setw(8) << "beam";
  for (double w : lm_weights) s << std::setw(10) << ("lm=" + format_weight(w));
  s << '\n';
  for (std::size_t b = 0; b < beams.size(); ++b) {
    s << std::setw(8) << beams[b];
    for (std::size_t w = 0; w < lm_weights.size(); ++w) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(2) << ter[b][w];
      s << std::setw(10) << cell.str();
    }
    s << '\n';
  }
  return s.str();
}

void gen_corpus_stage(const StageOptions& opt) {
  const Workspace ws(opt.out);
  SyntheticCorpusSpec spec = opt.config.corpus;
  spec.seed = opt.config.seed;
  const SyntheticCorpus corpus = generate_corpus(spec);
  fs::create_directories(ws.wav_dir());
  const std::vector<Utterance>* splits[] = {&corpus.train, &corpus.valid, &corpus.eval};
  for (std::size_t s = 0; s < kSplits.size(); ++s) {
    std::vector<CorpusEntry> entries;
    for (const Utterance& u : *splits[s]) {
      write_wav(ws.wav(u.id), u.wave, static_cast<unsigned>(spec.sample_rate));
      entries.push_back({u.id, u.text});
    }
    write_corpus_list(ws.corpus_list(kSplits[s]), entries);
    progress(opt) << "gen-corpus: " << entries.size() << " " << kSplits[s] << " utterances\n";
  }
}

VqTrainSummary train_vqvae_stage(const StageOptions& opt) {
  const Workspace ws(opt.out);
  require_inputs("train-vqvae", ws);
  const PipelineConfig& cfg = opt.config;
  const std::vector<CorpusEntry> entries = read_corpus_list(ws.corpus_list("train"));
  const std::vector<Tensor> waves = load_waves(ws, entries);

  VqVae model(cfg.vqvae, cfg.seed + kModelSeedOffset);
  VqVaeTrainer trainer(model, cfg.vqvae_training);
  std::mt19937_64 rng(cfg.seed + kTrainerSeedOffset);
  fs::remove(ws.log("train-vqvae"));
  MetricsLog log(ws.log("train-vqvae"));
  const auto t0 = std::chrono::steady_clock::now();
  VqTrainSummary summary;
  const VqTrainConfig& tc = cfg.vqvae_training;
  for (long step = 1; step <= tc.iterations; ++step) {
    const LossReport r = trainer.train_step(sample_batch(waves, tc.batch_size, tc.batch_length, rng, tc.crop_alignment));
    if (step == 1) summary.first = r;
    summary.last = r;
    if (step == 1 || step % static_cast<long>(cfg.log_every) == 0 || step == tc.iterations) {
      log.write({{"step", r.step},
                 {"reconstruction", r.reconstruction},
                 {"codebook", r.codebook},
                 {"commitment", r.commitment},
                 {"waveform", r.waveform},
                 {"adversarial", r.adversarial},
                 {"feature_matching", r.feature_matching},
                 {"generator", r.generator},
                 {"discriminator", r.discriminator}});
      progress(opt) << "train-vqvae: step " << r.step << "/" << tc.iterations << " rec " << r.reconstruction
                    << " wave " << r.waveform << " cb " << r.codebook << " (" << std::fixed << std::setprecision(1)
                    << seconds_since(t0) << "s)" << std::defaultfloat << std::setprecision(6) << '\n';
    }
  }
  std::vector<int> used(cfg.vqvae.num_centroids, 0);
  for (const TokenSequence& t : model.tokenize_corpus(waves)) {
    for (int id : t.ids) used[static_cast<std::size_t>(id)] = 1;
  }
  for (int u : used) summary.active_centroids += static_cast<std::size_t>(u);
  progress(opt) << "train-vqvae: " << summary.active_centroids << " of " << cfg.vqvae.num_centroids
                << " centroids active on the training set\n";
  save_checkpoint(ws.vqvae(), vqvae_checkpoint(model, tc, &trainer));
  return summary;
}

void tokenize_stage(const StageOptions& opt) {
  const Workspace ws(opt.out);
  require_inputs("tokenize", ws);
  const VqVae model = load_vqvae(opt, ws, "tokenize");
  std::vector<std::size_t> histogram(model.config().num_centroids, 0);
  for (const std::string& split : kSplits) {
    const std::vector<CorpusEntry> entries = read_corpus_list(ws.corpus_list(split));
    std::vector<std::vector<int>> ids;
    for (const TokenSequence& t : model.tokenize_corpus(load_waves(ws, entries))) {
      if (split == "train") {
        for (int id : t.ids) ++histogram[static_cast<std::size_t>(id)];
      }
      ids.push_back(t.ids);
    }
    fs::create_directories(ws.tokens(split).parent_path());
    write_id_corpus(ws.tokens(split), ids);
  }
  std::size_t active = 0;
  for (std::size_t c : histogram) active += c > 0;
  fs::remove(ws.log("tokenize"));
  MetricsLog(ws.log("tokenize")).write({{"active_centroids", active}, {"train_histogram", histogram}});
  progress(opt) << "tokenize: " << active << " active centroids in the training set\n";
}

void learn_subwords_stage(const StageOptions& opt) {
  const Workspace ws(opt.out);
  require_inputs("learn-subwords", ws);
  const std::size_t base = opt.config.vqvae.num_centroids;
  const SubwordModel sw = learn_subwords(read_id_corpus(ws.tokens("train")), opt.config.subwords.vocab_size, base);
  sw.save(ws.subwords());
  std::size_t raw = 0, encoded = 0;
  for (const std::string& split : kSplits) {
    std::vector<std::vector<int>> units;
    for (const auto& seq : read_id_corpus(ws.tokens(split))) {
      units.push_back(sw.encode(seq));
      if (split == "train") {
        raw += seq.size();
        encoded += units.back().size() - 1;
      }
    }
    fs::create_directories(ws.units(split).parent_path());
    write_id_corpus(ws.units(split), units);
  }
  progress(opt) << "learn-subwords: " << sw.merges().size() << " merges, vocabulary " << sw.vocab_size()
                << ", training tokens " << raw << " -> " << encoded << " units\n";
}

EpochMetrics train_nmt_stage(const StageOptions& opt) {
  const Workspace ws(opt.out);
  require_inputs("train-nmt", ws);
  const PipelineConfig& cfg = opt.config;
  const SubwordModel sw = load_subwords(opt, ws, "train-nmt");
  const auto train = make_pairs(cfg.corpus, read_corpus_list(ws.corpus_list("train")),
                                read_id_corpus(ws.units("train")), "train");
  const auto valid = make_pairs(cfg.corpus, read_corpus_list(ws.corpus_list("valid")),
                                read_id_corpus(ws.units("valid")), "valid");
  TransformerConfig mc = cfg.nmt.model;
  mc.src_vocab = cfg.source_vocab();
  mc.tgt_vocab = sw.vocab_size();
  Transformer model(mc, cfg.seed + kModelSeedOffset + 1);
  NmtTrainer trainer(model, cfg.seed + kTrainerSeedOffset + 1);
  fs::remove(ws.log("train-nmt"));
  MetricsLog log(ws.log("train-nmt"));
  EpochMetrics last;
  for (std::size_t epoch = 1; epoch <= cfg.nmt.epochs; ++epoch) {
    last = trainer.train_epoch(train);
    json rec{{"epoch", epoch}, {"step", trainer.step()}, {"loss", last.mean_loss},
             {"accuracy", last.token_accuracy}, {"lr", trainer.last_lr()}};
    const bool report = epoch % cfg.log_every == 0 || epoch == cfg.nmt.epochs || epoch == 1;
    if (report && !valid.empty()) {
      const EpochMetrics v = trainer.evaluate(valid);
      rec["valid_loss"] = v.mean_loss;
      rec["valid_accuracy"] = v.token_accuracy;
    }
    log.write(rec);
    if (report) {
      progress(opt) << "train-nmt: epoch " << epoch << "/" << cfg.nmt.epochs << " loss " << last.mean_loss
                    << " acc " << last.token_accuracy << '\n';
    }
  }
  save_checkpoint(ws.nmt(), nmt_checkpoint(model, &trainer));
  return trainer.evaluate(train);
}

double train_lm_stage(const StageOptions& opt) {
  const Workspace ws(opt.out);
  require_inputs("train-lm", ws);
  const PipelineConfig& cfg = opt.config;
  const SubwordModel sw = load_subwords(opt, ws, "train-lm");
  const auto train = read_id_corpus(ws.units("train"));
  const auto valid = read_id_corpus(ws.units("valid"));
  LmConfig mc = cfg.lm.model;
  mc.vocab = sw.vocab_size();
  LstmLm model(mc, cfg.seed + kModelSeedOffset + 2);
  LmTrainer trainer(model, cfg.seed + kTrainerSeedOffset + 2);
  fs::remove(ws.log("train-lm"));
  MetricsLog log(ws.log("train-lm"));
  double valid_ppl = 0.0;
  for (std::size_t epoch = 1; epoch <= cfg.lm.epochs; ++epoch) {
    const LmEpochMetrics m = trainer.train_epoch(train);
    json rec{{"epoch", epoch}, {"step", trainer.step()}, {"loss", m.mean_loss}};
    const bool report = epoch % cfg.log_every == 0 || epoch == cfg.lm.epochs || epoch == 1;
    if (report) {
      rec["train_perplexity"] = perplexity(model, train);
      if (!valid.empty()) valid_ppl = perplexity(model, valid);
      rec["valid_perplexity"] = valid_ppl;
      progress(opt) << "train-lm: epoch " << epoch << "/" << cfg.lm.epochs << " train ppl "
                    << rec["train_perplexity"].get<double>() << " valid ppl " << valid_ppl << '\n';
    }
    log.write(rec);
  }
  save_checkpoint(ws.lm(), lm_checkpoint(model, &trainer));
  return valid_ppl;
}

std::vector<SynthRequest> split_requests(const StageOptions& opt, const std::string& split, std::size_t count) {
  const Workspace ws(opt.out);
  require_file(ws.corpus_list(split), "synth", "gen-corpus");
  std::vector<SynthRequest> out;
  for (const CorpusEntry& e : read_corpus_list(ws.corpus_list(split))) {
    if (out.size() == count) break;
    out.push_back({e.id, e.text});
  }
  return out;
}

std::vector<std::vector<int>> translate_stage(const StageOptions& opt, const std::vector<SynthRequest>& texts) {
  const Workspace ws(opt.out);
  require_inputs("translate", ws);
  const SubwordModel sw = load_subwords(opt, ws, "translate");
  const Transformer nmt = load_nmt(ws, sw, "translate");
  std::optional<LstmLm> lm;
  if (opt.config.decode.lm_weight > 0.0) lm = load_lm(ws, sw, "translate");
  std::vector<std::vector<int>> out;
  for (const SynthRequest& r : texts) {
    const BeamResult b = beam_search(nmt, encode_text(opt.config.corpus, r.text), lm ? &*lm : nullptr, opt.config.decode);
    out.push_back(strip_eos(b.tokens, sw.eos()));
    fs::create_directories(ws.translations(r.name).parent_path());
    write_id_corpus(ws.translations(r.name), {out.back()});
    progress(opt) << "translate: " << r.name << " (" << r.text << ") -> " << out.back().size() << " units"
                  << (b.finished ? "" : ", unfinished") << '\n';
  }
  return out;
}

TerTable eval_ter_stage(const StageOptions& opt, const std::string& split) {
  const Workspace ws(opt.out);
  const PipelineConfig& cfg = opt.config;
  bool need_lm = false;
  for (double w : cfg.eval.lm_weights) need_lm |= w > 0.0;
  for (const std::string& rel : stage_spec("eval-ter").inputs) {
    if (rel == "lm.ckpt" && !need_lm) continue;
    if (rel == "corpus/eval.txt" || rel == "units/eval.ids") continue;
    require_file(ws.root() / rel, "eval-ter", rel == "lm.ckpt" ? "train-lm" : rel == "nmt.ckpt" ? "train-nmt" : "learn-subwords");
  }
  require_file(ws.corpus_list(split), "eval-ter", "gen-corpus");
  require_file(ws.units(split), "eval-ter", "learn-subwords");
  const SubwordModel sw = load_subwords(opt, ws, "eval-ter");
  const Transformer nmt = load_nmt(ws, sw, "eval-ter");
  std::optional<LstmLm> lm;
  if (need_lm) lm = load_lm(ws, sw, "eval-ter");
  const auto entries = read_corpus_list(ws.corpus_list(split));
  const auto refs = read_id_corpus(ws.units(split));
  if (entries.size() != refs.size()) throw StageError("eval-ter: corpus and units disagree; rerun `learn-subwords`");

  TerTable table;
  table.beams = cfg.eval.beams;
  table.lm_weights = cfg.eval.lm_weights;
  fs::create_directories(ws.hypotheses(1, 0.0).parent_path());
  std::ofstream tsv(ws.ter_table());
  tsv << "beam\tlm_weight\tter\n";
  for (std::size_t beam : table.beams) {
    std::vector<double> row;
    for (double weight : table.lm_weights) {
      DecodeConfig dc = cfg.decode;
      dc.beam_size = beam;
      dc.lm_weight = weight;
      std::size_t edits = 0, ref_tokens = 0;
      std::ofstream hyp(ws.hypotheses(beam, weight));
      for (std::size_t i = 0; i < entries.size(); ++i) {
        const std::vector<int> ref = strip_eos(refs[i], sw.eos());
        const BeamResult b = beam_search(nmt, encode_text(cfg.corpus, entries[i].text), lm ? &*lm : nullptr, dc);
        const std::vector<int> h = strip_eos(b.tokens, sw.eos());
        const std::size_t e = edit_distance(h, ref);
        edits += e;
        ref_tokens += ref.size();
        hyp << entries[i].id << '\t' << std::fixed << std::setprecision(2) << token_error_rate(h, ref) << '\t';
        for (std::size_t t = 0; t < h.size(); ++t) hyp << (t ? " " : "") << h[t];
        hyp << '\n';
      }
      const double ter = 100.0 * static_cast<double>(edits) / static_cast<double>(ref_tokens);
      row.push_back(ter);
      tsv << beam << '\t' << format_weight(weight) << '\t' << std::fixed << std::setprecision(4) << ter << '\n';
    }
    table.ter.push_back(row);
  }
  progress(opt) << "eval-ter: TER (%) on " << split << " (" << entries.size() << " utterances)\n" << table.format();
  return table;
}

std::vector<SynthResult> synth_stage(const StageOptions& opt, const std::vector<SynthRequest>& requests) {
  const Workspace ws(opt.out);
  require_inputs("synth", ws);
  const PipelineConfig& cfg = opt.config;
  const SubwordModel sw = load_subwords(opt, ws, "synth");
  const Transformer nmt = load_nmt(ws, sw, "synth");
  const VqVae vqvae = load_vqvae(opt, ws, "synth");
  std::optional<LstmLm> lm;
  if (cfg.decode.lm_weight > 0.0) lm = load_lm(ws, sw, "synth");
  fs::remove(ws.log("synth"));
  MetricsLog log(ws.log("synth"));
  std::vector<SynthResult> results;
  for (const SynthRequest& r : requests) {
    SynthResult res{r.name, r.text, {}, {0, r.text.size()}, false, {}};
    Synthesis s;
    try {
      s = synthesize(encode_text(cfg.corpus, r.text), nmt, lm ? &*lm : nullptr, sw, vqvae, cfg.decode);
    } catch (const EmptyOutputError& e) {
      // One failed utterance should not abort the batch; it scores zero matches.
      res.error = e.what();
      fs::remove(ws.synth_wav(r.name));
      log.write({{"name", r.name}, {"text", r.text}, {"error", res.error}, {"segments_matched", 0},
                 {"segments", res.match.total}});
      progress(opt) << "synth: " << r.name << " (" << r.text << ") failed: " << res.error << '\n';
      results.push_back(std::move(res));
      continue;
    }
    fs::create_directories(ws.synth_wav(r.name).parent_path());
    write_wav(ws.synth_wav(r.name), s.waveform, static_cast<unsigned>(cfg.corpus.sample_rate));
    res.symbols = s.symbols;
    res.finished = s.finished;
    const Tensor stored = read_wav(ws.synth_wav(r.name)).samples;
    res.match = match_segments(cfg.corpus, r.text, stored);
    log.write({{"name", r.name},
               {"text", r.text},
               {"samples", stored.size()},
               {"finished", s.finished},
               {"segments_matched", res.match.matched},
               {"segments", res.match.total}});
    progress(opt) << "synth: " << r.name << " (" << r.text << ") " << stored.size() << " samples, "
                  << res.match.matched << "/" << res.match.total << " segments match\n";
    results.push_back(std::move(res));
  }
  return results;
}

}  // namespace vqtts
