#pragma once

#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "vqtts/checkpoint.hpp"
#include "vqtts/config.hpp"
#include "vqtts/corpus.hpp"
#include "vqtts/decoder.hpp"
#include "vqtts/tokenizer.hpp"

namespace vqtts {

// A stage cannot run: an input is missing or was produced by an incompatible
// upstream run.
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StageSpec {
  std::string name;
  std::vector<std::string> inputs;   // paths relative to the work directory
  std::vector<std::string> outputs;
};

// Stages in execution order. Every input of a stage is an output of an
// earlier one.
const std::vector<StageSpec>& stage_graph();
const StageSpec& stage_spec(const std::string& name);

// File layout of a work directory.
class Workspace {
 public:
  explicit Workspace(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path corpus_list(const std::string& split) const { return root_ / "corpus" / (split + ".txt"); }
  std::filesystem::path wav_dir() const { return root_ / "corpus" / "wav"; }
  std::filesystem::path wav(const std::string& id) const { return wav_dir() / (id + ".wav"); }
  std::filesystem::path vqvae() const { return root_ / "vqvae.ckpt"; }
  std::filesystem::path tokens(const std::string& split) const { return root_ / "tokens" / (split + ".ids"); }
  std::filesystem::path subwords() const { return root_ / "subwords.model"; }
  std::filesystem::path units(const std::string& split) const { return root_ / "units" / (split + ".ids"); }
  std::filesystem::path nmt() const { return root_ / "nmt.ckpt"; }
  std::filesystem::path lm() const { return root_ / "lm.ckpt"; }
  std::filesystem::path log(const std::string& stage) const { return root_ / "logs" / (stage + ".jsonl"); }
  std::filesystem::path ter_table() const { return root_ / "ter.tsv"; }
  std::filesystem::path hypotheses(std::size_t beam, double lm_weight) const;
  std::filesystem::path translations(const std::string& name) const { return root_ / "translations" / (name + ".ids"); }
  std::filesystem::path synth_wav(const std::string& name) const { return root_ / "synth" / (name + ".wav"); }

 private:
  std::filesystem::path root_;
};

inline const std::vector<std::string> kSplits{"train", "valid", "eval"};

struct CorpusEntry {
  std::string id;
  std::string text;
};

// One "id text" pair per line.
void write_corpus_list(const std::filesystem::path& path, const std::vector<CorpusEntry>& entries);
std::vector<CorpusEntry> read_corpus_list(const std::filesystem::path& path);

// Character ids followed by the source EOS; sentinels sit after the alphabet.
std::vector<int> encode_text(const SyntheticCorpusSpec& spec, const std::string& text);

// Line-delimited JSON records, one per call to write.
class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path);
  void write(const nlohmann::json& record);

 private:
  std::ofstream out_;
};

Checkpoint vqvae_checkpoint(const VqVae& model, const VqTrainConfig& training, const VqVaeTrainer* trainer);
VqVae vqvae_from_checkpoint(const Checkpoint& ckpt);
Checkpoint nmt_checkpoint(const Transformer& model, const NmtTrainer* trainer);
Transformer nmt_from_checkpoint(const Checkpoint& ckpt);
Checkpoint lm_checkpoint(const LstmLm& model, const LmTrainer* trainer);
LstmLm lm_from_checkpoint(const Checkpoint& ckpt);

struct StageOptions {
  PipelineConfig config;
  std::filesystem::path out = "work";
  std::ostream* progress = nullptr;  // human-readable progress lines
};

struct VqTrainSummary {
  LossReport first, last;
  std::size_t active_centroids = 0;
};

struct TerTable {
  std::vector<std::size_t> beams;
  std::vector<double> lm_weights;
  std::vector<std::vector<double>> ter;  // [beam][weight], percent
  std::string format() const;
};

struct SynthRequest {
  std::string name;
  std::string text;
};

struct SynthResult {
  std::string name;
  std::string text;
  std::vector<int> symbols;
  SegmentMatch match;
  bool finished = false;
  std::string error;  // set when decoding produced no units; no file is written
};

void gen_corpus_stage(const StageOptions& opt);
VqTrainSummary train_vqvae_stage(const StageOptions& opt);
void tokenize_stage(const StageOptions& opt);
void learn_subwords_stage(const StageOptions& opt);
EpochMetrics train_nmt_stage(const StageOptions& opt);
double train_lm_stage(const StageOptions& opt);  // final validation perplexity
std::vector<std::vector<int>> translate_stage(const StageOptions& opt, const std::vector<SynthRequest>& texts);
TerTable eval_ter_stage(const StageOptions& opt, const std::string& split = "eval");
std::vector<SynthResult> synth_stage(const StageOptions& opt, const std::vector<SynthRequest>& requests);

// Texts of the first `count` utterances of a split, named by utterance id.
std::vector<SynthRequest> split_requests(const StageOptions& opt, const std::string& split, std::size_t count);

}  // namespace vqtts
