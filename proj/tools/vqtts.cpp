#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "vqtts/pipeline.hpp"

using namespace vqtts;

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "work";
  std::optional<std::size_t> beam;
  std::optional<double> lm_weight;
  std::optional<std::size_t> vocab_size;
  std::optional<std::size_t> dsf;
  std::vector<std::string> texts;
  std::string split;
  std::size_t limit = 4;
  bool quiet = false;
};

StageOptions resolve(const Overrides& o) {
  StageOptions opt;
  opt.config = PipelineConfig::load(o.config_path);
  if (o.seed) opt.config.seed = *o.seed;
  if (o.dsf) opt.config.set_dsf(*o.dsf);
  if (o.vocab_size) opt.config.subwords.vocab_size = *o.vocab_size;
  // A single beam or weight also narrows the eval-ter sweep to that value.
  if (o.beam) {
    opt.config.decode.beam_size = *o.beam;
    opt.config.eval.beams = {*o.beam};
  }
  if (o.lm_weight) {
    opt.config.decode.lm_weight = *o.lm_weight;
    opt.config.eval.lm_weights = {*o.lm_weight};
  }
  opt.config.validate();
  opt.out = o.out;
  opt.progress = o.quiet ? nullptr : &std::cerr;
  return opt;
}

std::vector<SynthRequest> requests(const StageOptions& opt, const Overrides& o) {
  std::vector<SynthRequest> out;
  for (std::size_t i = 0; i < o.texts.size(); ++i) out.push_back({"text_" + std::to_string(i), o.texts[i]});
  if (!o.split.empty()) {
    for (SynthRequest& r : split_requests(opt, o.split, o.limit)) out.push_back(std::move(r));
  }
  if (out.empty()) throw CLI::ValidationError("--text or --split", "give at least one text to process");
  return out;
}

void run(const std::string& stage, const Overrides& o) {
  const StageOptions opt = resolve(o);
  if (stage == "gen-corpus") {
    gen_corpus_stage(opt);
  } else if (stage == "train-vqvae") {
    train_vqvae_stage(opt);
  } else if (stage == "tokenize") {
    tokenize_stage(opt);
  } else if (stage == "learn-subwords") {
    learn_subwords_stage(opt);
  } else if (stage == "train-nmt") {
    train_nmt_stage(opt);
  } else if (stage == "train-lm") {
    train_lm_stage(opt);
  } else if (stage == "translate") {
    const auto reqs = requests(opt, o);
    const auto units = translate_stage(opt, reqs);
    for (std::size_t i = 0; i < reqs.size(); ++i) {
      std::cout << reqs[i].name << '\t' << reqs[i].text << '\t';
      for (std::size_t t = 0; t < units[i].size(); ++t) std::cout << (t ? " " : "") << units[i][t];
      std::cout << '\n';
    }
  } else if (stage == "eval-ter") {
    std::cout << eval_ter_stage(opt).format();
  } else if (stage == "synth") {
    for (const SynthResult& r : synth_stage(opt, requests(opt, o))) {
      std::cout << r.name << '\t' << r.text << '\t' << r.match.matched << '/' << r.match.total;
      if (!r.error.empty()) std::cout << '\t' << r.error;
      std::cout << '\n';
    }
  } else if (stage == "all") {
    gen_corpus_stage(opt);
    train_vqvae_stage(opt);
    tokenize_stage(opt);
    learn_subwords_stage(opt);
    train_nmt_stage(opt);
    train_lm_stage(opt);
    std::cout << eval_ter_stage(opt).format();
    std::size_t matched = 0, total = 0;
    for (const SynthResult& r : synth_stage(opt, split_requests(opt, "train", o.limit))) {
      matched += r.match.matched;
      total += r.match.total;
    }
    std::cout << "synth: " << matched << '/' << total << " segments match their symbol frequency\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-to-speech through discrete VQ-VAE symbols and a Transformer translation model."};
  app.require_subcommand(1);
  app.fallthrough();
  Overrides o;
  app.add_option("--config", o.config_path, "Pipeline configuration (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Seed for corpus generation and model initialization");
  app.add_option("--out", o.out, "Work directory holding all stage artifacts")->capture_default_str();
  app.add_option("--beam", o.beam, "Beam size");
  app.add_option("--lm-weight", o.lm_weight, "Language model fusion weight");
  app.add_option("--vocab-size", o.vocab_size, "Subword vocabulary size");
  app.add_option("--dsf", o.dsf, "Downsampling factor preset (128 or 256)");
  app.add_flag("--quiet", o.quiet, "Suppress progress lines on stderr");

  const std::vector<std::pair<std::string, std::string>> stages{
      {"gen-corpus", "Generate the synthetic text/waveform corpus"},
      {"train-vqvae", "Train the VQ-VAE on the training waveforms"},
      {"tokenize", "Convert every waveform into VQ symbol ids"},
      {"learn-subwords", "Learn subword units over the symbol sequences"},
      {"train-nmt", "Train the text-to-unit Transformer"},
      {"train-lm", "Train the LSTM language model over subword units"},
      {"translate", "Decode texts into subword units"},
      {"eval-ter", "Print token error rates per beam size and LM weight"},
      {"synth", "Synthesize waveforms from texts"},
      {"all", "Run every stage in order"},
  };
  for (const auto& [name, help] : stages) {
    CLI::App* sub = app.add_subcommand(name, help);
    if (name == "translate" || name == "synth") {
      sub->add_option("--text", o.texts, "Input text over the corpus alphabet (repeatable)");
      sub->add_option("--split", o.split, "Take texts from a corpus split")->check(CLI::IsMember(kSplits));
    }
    if (name == "translate" || name == "synth" || name == "all") {
      sub->add_option("--limit", o.limit, "Number of utterances taken from --split")->capture_default_str();
    }
    sub->callback([&o, name = name] { run(name, o); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "vqtts: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
