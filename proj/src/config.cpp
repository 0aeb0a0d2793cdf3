#include "vqtts/config.hpp"

#include <fstream>
#include <numeric>
#include <set>

namespace vqtts {

using nlohmann::json;

namespace {

// Reads fields out of one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    const std::string path = where_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path + " must be true or false");
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(path + " must be a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path + " must be an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path + " must be a number");
    }
    try {
      out = v.get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path + " has the wrong type");
    }
  }

  const json* child(const char* key) {
    used_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError("unknown key " + where_ + "." + it.key());
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

std::size_t product(const std::vector<std::size_t>& v) {
  return std::accumulate(v.begin(), v.end(), std::size_t{1}, std::multiplies<>());
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s + "]";
}

// Runs a section's own validate() and prefixes its message with the section name.
template <class F>
void checked(const std::string& section, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

}  // namespace

json to_json(const VqVaeConfig& c) {
  return {{"num_centroids", c.num_centroids},
          {"code_dim", c.code_dim},
          {"downsampling_scales", c.downsampling_scales},
          {"upsampling_scales", c.upsampling_scales},
          {"encoder_channels", c.encoder_channels},
          {"decoder_channels", c.decoder_channels},
          {"min_channels", c.min_channels},
          {"max_channels", c.max_channels},
          {"residual_layers", c.residual_layers},
          {"num_discriminators", c.num_discriminators},
          {"discriminator_layers", c.discriminator_layers},
          {"discriminator_channels", c.discriminator_channels},
          {"leaky_slope", c.leaky_slope}};
}

void from_json(const json& j, VqVaeConfig& c, const std::string& where) {
  Section s(j, where);
  s.get("num_centroids", c.num_centroids);
  s.get("code_dim", c.code_dim);
  s.get("downsampling_scales", c.downsampling_scales);
  s.get("upsampling_scales", c.upsampling_scales);
  s.get("encoder_channels", c.encoder_channels);
  s.get("decoder_channels", c.decoder_channels);
  s.get("min_channels", c.min_channels);
  s.get("max_channels", c.max_channels);
  s.get("residual_layers", c.residual_layers);
  s.get("num_discriminators", c.num_discriminators);
  s.get("discriminator_layers", c.discriminator_layers);
  s.get("discriminator_channels", c.discriminator_channels);
  s.get("leaky_slope", c.leaky_slope);
  s.finish();
}

json to_json(const VqTrainConfig& c) {
  json res = json::array();
  for (const StftConfig& r : c.stft.resolutions) res.push_back({r.fft_size, r.hop_size, r.win_length});
  return {{"batch_size", c.batch_size},
          {"batch_length", c.batch_length},
          {"lr_generator", c.lr_generator},
          {"lr_discriminator", c.lr_discriminator},
          {"clip_generator", c.clip_generator},
          {"clip_discriminator", c.clip_discriminator},
          {"iterations", c.iterations},
          {"discriminator_start_step", c.discriminator_start_step},
          {"codebook_from_data", c.codebook_from_data},
          {"crop_alignment", c.crop_alignment},
          {"loss_weights",
           {{"lambda_cm", c.weights.lambda_cm},
            {"lambda_fm", c.weights.lambda_fm},
            {"lambda_adv", c.weights.lambda_adv},
            {"lambda_wave", c.weights.lambda_wave}}},
          {"stft", {{"resolutions", res}, {"log_floor", c.stft.log_floor}}}};
}

void from_json(const json& j, VqTrainConfig& c, const std::string& where) {
  Section s(j, where);
  s.get("batch_size", c.batch_size);
  s.get("batch_length", c.batch_length);
  s.get("lr_generator", c.lr_generator);
  s.get("lr_discriminator", c.lr_discriminator);
  s.get("clip_generator", c.clip_generator);
  s.get("clip_discriminator", c.clip_discriminator);
  s.get("iterations", c.iterations);
  s.get("discriminator_start_step", c.discriminator_start_step);
  s.get("codebook_from_data", c.codebook_from_data);
  s.get("crop_alignment", c.crop_alignment);
  if (const json* w = s.child("loss_weights")) {
    Section ws(*w, s.path("loss_weights"));
    ws.get("lambda_cm", c.weights.lambda_cm);
    ws.get("lambda_fm", c.weights.lambda_fm);
    ws.get("lambda_adv", c.weights.lambda_adv);
    ws.get("lambda_wave", c.weights.lambda_wave);
    ws.finish();
  }
  if (const json* st = s.child("stft")) {
    Section ss(*st, s.path("stft"));
    if (const json* res = ss.child("resolutions")) {
      if (!res->is_array()) throw ConfigError(ss.path("resolutions") + " must be a list of [fft, hop, win]");
      c.stft.resolutions.clear();
      for (const json& r : *res) {
        if (!r.is_array() || r.size() != 3 || !r[0].is_number_unsigned() || !r[1].is_number_unsigned() ||
            !r[2].is_number_unsigned()) {
          throw ConfigError(ss.path("resolutions") + " entries must be [fft_size, hop_size, win_length]");
        }
        c.stft.resolutions.push_back({r[0].get<std::size_t>(), r[1].get<std::size_t>(), r[2].get<std::size_t>()});
      }
    }
    ss.get("log_floor", c.stft.log_floor);
    ss.finish();
  }
  s.finish();
}

json to_json(const TransformerConfig& c) {
  return {{"encoder_blocks", c.encoder_blocks}, {"decoder_blocks", c.decoder_blocks},
          {"ff_units", c.ff_units},             {"attn_dim", c.attn_dim},
          {"heads", c.heads},                   {"dropout", c.dropout},
          {"label_smoothing", c.label_smoothing}, {"warmup_steps", c.warmup_steps},
          {"noam_factor", c.noam_factor},       {"grad_clip", c.grad_clip},
          {"batch_tokens", c.batch_tokens}};
}

void from_json(const json& j, TransformerConfig& c, const std::string& where) {
  Section s(j, where);
  s.get("encoder_blocks", c.encoder_blocks);
  s.get("decoder_blocks", c.decoder_blocks);
  s.get("ff_units", c.ff_units);
  s.get("attn_dim", c.attn_dim);
  s.get("heads", c.heads);
  s.get("dropout", c.dropout);
  s.get("label_smoothing", c.label_smoothing);
  s.get("warmup_steps", c.warmup_steps);
  s.get("noam_factor", c.noam_factor);
  s.get("grad_clip", c.grad_clip);
  s.get("batch_tokens", c.batch_tokens);
  s.finish();
}

json to_json(const LmConfig& c) {
  return {{"hidden_units", c.hidden_units}, {"num_layers", c.num_layers}, {"warmup_steps", c.warmup_steps},
          {"noam_factor", c.noam_factor},   {"grad_clip", c.grad_clip},   {"batch_tokens", c.batch_tokens}};
}

void from_json(const json& j, LmConfig& c, const std::string& where) {
  Section s(j, where);
  s.get("hidden_units", c.hidden_units);
  s.get("num_layers", c.num_layers);
  s.get("warmup_steps", c.warmup_steps);
  s.get("noam_factor", c.noam_factor);
  s.get("grad_clip", c.grad_clip);
  s.get("batch_tokens", c.batch_tokens);
  s.finish();
}

json to_json(const SyntheticCorpusSpec& c) {
  return {{"alphabet", c.alphabet},       {"frequencies", c.frequencies}, {"sample_rate", c.sample_rate},
          {"segment_length", c.segment_length}, {"fade_length", c.fade_length}, {"amplitude", c.amplitude},
          {"min_symbols", c.min_symbols}, {"max_symbols", c.max_symbols}, {"train_size", c.train_size},
          {"valid_size", c.valid_size},   {"eval_size", c.eval_size}};
}

void from_json(const json& j, SyntheticCorpusSpec& c, const std::string& where) {
  Section s(j, where);
  s.get("alphabet", c.alphabet);
  s.get("frequencies", c.frequencies);
  s.get("sample_rate", c.sample_rate);
  s.get("segment_length", c.segment_length);
  s.get("fade_length", c.fade_length);
  s.get("amplitude", c.amplitude);
  s.get("min_symbols", c.min_symbols);
  s.get("max_symbols", c.max_symbols);
  s.get("train_size", c.train_size);
  s.get("valid_size", c.valid_size);
  s.get("eval_size", c.eval_size);
  s.finish();
}

void PipelineConfig::set_dsf(std::size_t dsf) {
  const VqVaeConfig preset = dsf == 128 ? VqVaeConfig::dsf128()
                             : dsf == 256 ? VqVaeConfig::dsf256()
                                          : throw ConfigError("--dsf must be 128 or 256, got " + std::to_string(dsf));
  vqvae.downsampling_scales = preset.downsampling_scales;
  vqvae.upsampling_scales = preset.upsampling_scales;
}

void PipelineConfig::validate() const {
  checked("corpus", [&] { corpus.validate(); });
  const std::size_t down = product(vqvae.downsampling_scales);
  const std::size_t up = product(vqvae.upsampling_scales);
  if (down != up) {
    throw ConfigError("vqvae.downsampling_scales " + join(vqvae.downsampling_scales) + " (product " +
                      std::to_string(down) + ") and vqvae.upsampling_scales " + join(vqvae.upsampling_scales) +
                      " (product " + std::to_string(up) + ") must have the same product");
  }
  checked("vqvae", [&] { vqvae.validate(); });
  if (vqvae_training.batch_length % down != 0) {
    throw ConfigError("vqvae_training.batch_length (" + std::to_string(vqvae_training.batch_length) +
                      ") must be a multiple of the downsampling factor " + std::to_string(down) +
                      " given by vqvae.downsampling_scales");
  }
  for (const StftConfig& r : vqvae_training.stft.resolutions) {
    if (r.win_length > vqvae_training.batch_length) {
      throw ConfigError("vqvae_training.stft window " + std::to_string(r.win_length) +
                        " exceeds vqvae_training.batch_length (" + std::to_string(vqvae_training.batch_length) + ")");
    }
  }
  checked("vqvae_training", [&] { vqvae_training.validate(vqvae); });
  if (vqvae_training.iterations < 1) throw ConfigError("vqvae_training.iterations must be >= 1");
  if (subwords.vocab_size < 4) {
    throw ConfigError("subwords.vocab_size (" + std::to_string(subwords.vocab_size) +
                      ") must leave room for at least one unit besides the 3 sentinels");
  }
  TransformerConfig nmt_model = nmt.model;
  nmt_model.src_vocab = source_vocab();
  nmt_model.tgt_vocab = subwords.vocab_size;
  checked("nmt", [&] { nmt_model.validate(); });
  if (nmt.epochs < 1) throw ConfigError("nmt.epochs must be >= 1");
  LmConfig lm_model = lm.model;
  lm_model.vocab = subwords.vocab_size;
  checked("lm", [&] { lm_model.validate(); });
  if (lm.epochs < 1) throw ConfigError("lm.epochs must be >= 1");
  checked("decode", [&] { decode.validate(); });
  if (eval.beams.empty() || eval.lm_weights.empty()) throw ConfigError("eval.beams and eval.lm_weights must be non-empty");
  for (std::size_t b : eval.beams) {
    if (b < 1) throw ConfigError("eval.beams entries must be >= 1");
  }
  for (double w : eval.lm_weights) {
    if (w < 0.0) throw ConfigError("eval.lm_weights entries must be >= 0");
  }
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
}

json PipelineConfig::to_json() const {
  return {{"seed", seed},
          {"corpus", vqtts::to_json(corpus)},
          {"vqvae", vqtts::to_json(vqvae)},
          {"vqvae_training", vqtts::to_json(vqvae_training)},
          {"subwords", {{"vocab_size", subwords.vocab_size}}},
          {"nmt", [&] {
             json j = vqtts::to_json(nmt.model);
             j["epochs"] = nmt.epochs;
             return j;
           }()},
          {"lm", [&] {
             json j = vqtts::to_json(lm.model);
             j["epochs"] = lm.epochs;
             return j;
           }()},
          {"decode", {{"beam_size", decode.beam_size}, {"lm_weight", decode.lm_weight}, {"max_length", decode.max_length}}},
          {"eval", {{"beams", eval.beams}, {"lm_weights", eval.lm_weights}}},
          {"log_every", log_every}};
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  PipelineConfig c;
  Section s(j, "config");
  s.get("seed", c.seed);
  if (const json* v = s.child("corpus")) vqtts::from_json(*v, c.corpus, "corpus");
  if (const json* v = s.child("vqvae")) vqtts::from_json(*v, c.vqvae, "vqvae");
  if (const json* v = s.child("vqvae_training")) vqtts::from_json(*v, c.vqvae_training, "vqvae_training");
  if (const json* v = s.child("subwords")) {
    Section sw(*v, "subwords");
    sw.get("vocab_size", c.subwords.vocab_size);
    sw.finish();
  }
  // The epoch count sits next to the model fields in the file.
  auto split_epochs = [](json section, std::size_t& epochs, const std::string& where) {
    if (section.is_object() && section.contains("epochs")) {
      if (!section["epochs"].is_number_unsigned()) throw ConfigError(where + ".epochs must be a non-negative integer");
      epochs = section["epochs"].get<std::size_t>();
      section.erase("epochs");
    }
    return section;
  };
  if (const json* v = s.child("nmt")) vqtts::from_json(split_epochs(*v, c.nmt.epochs, "nmt"), c.nmt.model, "nmt");
  if (const json* v = s.child("lm")) vqtts::from_json(split_epochs(*v, c.lm.epochs, "lm"), c.lm.model, "lm");
  if (const json* v = s.child("decode")) {
    Section d(*v, "decode");
    d.get("beam_size", c.decode.beam_size);
    d.get("lm_weight", c.decode.lm_weight);
    d.get("max_length", c.decode.max_length);
    d.finish();
  }
  if (const json* v = s.child("eval")) {
    Section e(*v, "eval");
    e.get("beams", c.eval.beams);
    e.get("lm_weights", c.eval.lm_weights);
    e.finish();
  }
  s.get("log_every", c.log_every);
  s.finish();
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace vqtts
