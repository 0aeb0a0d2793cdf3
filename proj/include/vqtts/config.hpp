#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "vqtts/corpus.hpp"
#include "vqtts/decoder.hpp"
#include "vqtts/lm.hpp"
#include "vqtts/transformer.hpp"
#include "vqtts/vqvae.hpp"

namespace vqtts {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SubwordConfig {
  std::size_t vocab_size = 64;
};

// Model vocabulary sizes are not part of the file; they come from the
// alphabet and the learned subword model.
struct NmtStageConfig {
  TransformerConfig model;
  std::size_t epochs = 100;
};

struct LmStageConfig {
  LmConfig model;
  std::size_t epochs = 50;
};

struct EvalConfig {
  std::vector<std::size_t> beams{1, 3, 5, 10};
  std::vector<double> lm_weights{0.0, 0.1, 0.2, 0.3};
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  SyntheticCorpusSpec corpus;
  VqVaeConfig vqvae = VqVaeConfig::dsf128();
  VqTrainConfig vqvae_training;
  SubwordConfig subwords;
  NmtStageConfig nmt;
  LmStageConfig lm;
  DecodeConfig decode;
  EvalConfig eval;
  std::size_t log_every = 50;

  // Checks every section and the relations between them; messages name the
  // fields involved.
  void validate() const;

  // Applies the downsampling/upsampling presets for DSF 128 or 256.
  void set_dsf(std::size_t dsf);
  std::size_t source_vocab() const { return corpus.alphabet.size() + 3; }

  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are errors.
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const std::filesystem::path& path);
};

nlohmann::json to_json(const VqVaeConfig& c);
nlohmann::json to_json(const VqTrainConfig& c);
nlohmann::json to_json(const TransformerConfig& c);
nlohmann::json to_json(const LmConfig& c);
nlohmann::json to_json(const SyntheticCorpusSpec& c);
void from_json(const nlohmann::json& j, VqVaeConfig& c, const std::string& where);
void from_json(const nlohmann::json& j, VqTrainConfig& c, const std::string& where);
void from_json(const nlohmann::json& j, TransformerConfig& c, const std::string& where);
void from_json(const nlohmann::json& j, LmConfig& c, const std::string& where);
void from_json(const nlohmann::json& j, SyntheticCorpusSpec& c, const std::string& where);

}  // namespace vqtts
