#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "vqtts/audio.hpp"
#include "vqtts/pipeline.hpp"

using namespace vqtts;
namespace fs = std::filesystem;

namespace {

const fs::path kSourceDir = VQTTS_SOURCE_DIR;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "vqtts_test_pipeline" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Relative path -> contents for every regular file under root.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  if (!fs::exists(root)) return files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  }
  return files;
}

bool declared(const std::string& rel, const std::vector<std::string>& outputs) {
  for (const std::string& out : outputs) {
    if (rel == out || rel.rfind(out + "/", 0) == 0) return true;
  }
  return false;
}

// A pipeline small enough to run every stage in a few seconds.
PipelineConfig tiny_config() {
  PipelineConfig c;
  c.corpus.train_size = 4;
  c.corpus.valid_size = 2;
  c.corpus.eval_size = 2;
  c.corpus.min_symbols = 2;
  c.corpus.max_symbols = 3;
  c.vqvae.num_centroids = 16;
  c.vqvae.code_dim = 8;
  c.vqvae.encoder_channels = 4;
  c.vqvae.decoder_channels = 8;
  c.vqvae.max_channels = 16;
  c.vqvae.min_channels = 4;
  c.vqvae.residual_layers = 1;
  c.vqvae.discriminator_channels = 4;
  c.vqvae_training.iterations = 3;
  c.vqvae_training.batch_size = 2;
  c.vqvae_training.batch_length = 2048;
  c.vqvae_training.discriminator_start_step = 1;
  c.vqvae_training.codebook_from_data = true;
  c.vqvae_training.crop_alignment = 128;
  c.vqvae_training.weights.lambda_wave = 1.0;
  c.subwords.vocab_size = 32;
  c.nmt.model.encoder_blocks = 1;
  c.nmt.model.decoder_blocks = 1;
  c.nmt.model.attn_dim = 16;
  c.nmt.model.heads = 2;
  c.nmt.model.ff_units = 32;
  c.nmt.model.warmup_steps = 10;
  c.nmt.epochs = 2;
  c.lm.model.hidden_units = 16;
  c.lm.model.warmup_steps = 10;
  c.lm.epochs = 2;
  c.decode.max_length = 20;
  c.log_every = 1;
  c.validate();
  return c;
}

void run_stage(const std::string& name, const StageOptions& opt) {
  if (name == "gen-corpus") gen_corpus_stage(opt);
  if (name == "train-vqvae") train_vqvae_stage(opt);
  if (name == "tokenize") tokenize_stage(opt);
  if (name == "learn-subwords") learn_subwords_stage(opt);
  if (name == "train-nmt") train_nmt_stage(opt);
  if (name == "train-lm") train_lm_stage(opt);
  if (name == "translate") translate_stage(opt, {{"probe", "abc"}});
  if (name == "eval-ter") eval_ter_stage(opt);
  if (name == "synth") synth_stage(opt, split_requests(opt, "train", 2));
}

}  // namespace

TEST_CASE("stage graph is acyclic and every input comes from an earlier stage") {
  std::set<std::string> produced;
  std::set<std::string> names;
  for (const StageSpec& s : stage_graph()) {
    CHECK(names.insert(s.name).second);
    for (const std::string& in : s.inputs) {
      INFO(s.name << " reads " << in);
      CHECK(produced.count(in) == 1);
    }
    for (const std::string& out : s.outputs) {
      INFO(s.name << " writes " << out);
      CHECK(std::find(s.inputs.begin(), s.inputs.end(), out) == s.inputs.end());
      produced.insert(out);
    }
  }
  CHECK(names.size() == 9);
  CHECK_THROWS_AS(stage_spec("train-everything"), std::invalid_argument);
}

TEST_CASE("stages write only their declared outputs and are reproducible") {
  StageOptions a{tiny_config(), fresh_dir("run_a")};
  StageOptions b{tiny_config(), fresh_dir("run_b")};
  for (const StageSpec& s : stage_graph()) {
    const auto before = snapshot(a.out);
    run_stage(s.name, a);
    const auto after = snapshot(a.out);
    bool wrote = false;
    for (const auto& [rel, content] : after) {
      const auto it = before.find(rel);
      if (it != before.end() && it->second == content) continue;
      wrote = true;
      INFO(s.name << " wrote " << rel);
      CHECK(declared(rel, s.outputs));
    }
    CHECK(wrote);
    run_stage(s.name, b);
  }
  const auto files_a = snapshot(a.out);
  const auto files_b = snapshot(b.out);
  REQUIRE(files_a.size() == files_b.size());
  for (const auto& [rel, content] : files_a) {
    INFO(rel);
    REQUIRE(files_b.count(rel) == 1);
    CHECK(files_b.at(rel) == content);
  }

  // Rerunning a stage over its own outputs reproduces them.
  const std::string tokens = slurp(Workspace(a.out).tokens("train"));
  const std::string vq = slurp(Workspace(a.out).vqvae());
  train_vqvae_stage(a);
  tokenize_stage(a);
  CHECK(slurp(Workspace(a.out).vqvae()) == vq);
  CHECK(slurp(Workspace(a.out).tokens("train")) == tokens);

  // The TER table covers the whole beam x weight sweep.
  const TerTable table = eval_ter_stage(a);
  REQUIRE(table.ter.size() == 4);
  for (const auto& row : table.ter) {
    REQUIRE(row.size() == 4);
    for (double t : row) CHECK(t >= 0.0);
  }
  std::ifstream tsv(Workspace(a.out).ter_table());
  std::size_t lines = 0;
  for (std::string line; std::getline(tsv, line);) ++lines;
  CHECK(lines == 17);

  // An undertrained model may decode to nothing; such requests are logged, not written.
  const auto results = synth_stage(a, split_requests(a, "train", 2));
  REQUIRE(results.size() == 2);
  for (const SynthResult& r : results) {
    INFO(r.name);
    CHECK(r.match.total == r.text.size());
    if (r.error.empty()) CHECK(read_wav(Workspace(a.out).synth_wav(r.name)).sample_rate == 16000);
    if (!r.error.empty()) CHECK(!fs::exists(Workspace(a.out).synth_wav(r.name)));
  }
}

TEST_CASE("a different seed changes the corpus") {
  StageOptions a{tiny_config(), fresh_dir("seed_a")};
  StageOptions b{tiny_config(), fresh_dir("seed_b")};
  b.config.seed = 7;
  gen_corpus_stage(a);
  gen_corpus_stage(b);
  CHECK(slurp(Workspace(a.out).corpus_list("train")) != slurp(Workspace(b.out).corpus_list("train")));
}

TEST_CASE("missing or mismatched upstream artifacts name the stage to run") {
  StageOptions opt{tiny_config(), fresh_dir("missing")};
  CHECK_THROWS_WITH_AS(train_vqvae_stage(opt), doctest::Contains("run `gen-corpus` first"), StageError);
  gen_corpus_stage(opt);
  CHECK_THROWS_WITH_AS(tokenize_stage(opt), doctest::Contains("run `train-vqvae` first"), StageError);
  CHECK_THROWS_WITH_AS(learn_subwords_stage(opt), doctest::Contains("run `tokenize` first"), StageError);
  CHECK_THROWS_WITH_AS(train_nmt_stage(opt), doctest::Contains("run `learn-subwords` first"), StageError);
  CHECK_THROWS_WITH_AS(synth_stage(opt, {{"x", "ab"}}), doctest::Contains("run `"), StageError);
  CHECK_THROWS_WITH_AS(eval_ter_stage(opt), doctest::Contains("run `"), StageError);

  train_vqvae_stage(opt);
  StageOptions changed = opt;
  changed.config.vqvae.code_dim = 4;
  CHECK_THROWS_WITH_AS(tokenize_stage(changed), doctest::Contains("rerun `train-vqvae`"), StageError);

  tokenize_stage(opt);
  learn_subwords_stage(opt);
  changed = opt;
  changed.config.vqvae.num_centroids = 32;
  CHECK_THROWS_WITH_AS(train_nmt_stage(changed), doctest::Contains("num_centroids"), StageError);
}

TEST_CASE("checkpoints reproduce forward outputs bitwise") {
  const fs::path dir = fresh_dir("ckpt");
  const PipelineConfig cfg = tiny_config();
  const Tensor probe = render_text(cfg.corpus, "abh");

  SUBCASE("vqvae") {
    VqVae model(cfg.vqvae, 3);
    VqVaeTrainer trainer(model, cfg.vqvae_training);
    std::mt19937_64 rng(4);
    const std::vector<Tensor> waves{probe};
    for (int i = 0; i < 2; ++i) trainer.train_step(sample_batch(waves, 2, 2048, rng, 128));
    save_checkpoint(dir / "vq.ckpt", vqvae_checkpoint(model, cfg.vqvae_training, &trainer));
    const Checkpoint ckpt = load_checkpoint(dir / "vq.ckpt", "vqvae");
    const VqVae loaded = vqvae_from_checkpoint(ckpt);
    CHECK(loaded.trained_steps() == model.trained_steps());
    CHECK(loaded.reconstruct(probe) == model.reconstruct(probe));
    CHECK(loaded.tokenize(probe).ids == model.tokenize(probe).ids);

    VqVae fresh(cfg.vqvae, 99);
    VqVaeTrainer restored(fresh, cfg.vqvae_training);
    ckpt.load_optimizer("optimizer.generator.", restored.generator_optimizer(), fresh.generator_params());
    CHECK(restored.generator_optimizer().steps() == trainer.generator_optimizer().steps());
    CHECK(restored.generator_optimizer().second_moments()[0] ==
          trainer.generator_optimizer().second_moments()[0]);

    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "vq.ckpt", "nmt"), doctest::Contains("vqvae"), CheckpointError);
  }

  SUBCASE("nmt") {
    TransformerConfig mc = cfg.nmt.model;
    mc.src_vocab = cfg.source_vocab();
    mc.tgt_vocab = 20;
    Transformer model(mc, 5);
    const std::vector<NmtPair> pairs{{encode_text(cfg.corpus, "abc"), {1, 2, 3, 19}}};
    NmtTrainer trainer(model, 6);
    trainer.train_epoch(pairs);
    save_checkpoint(dir / "nmt.ckpt", nmt_checkpoint(model, &trainer));
    const Transformer loaded = nmt_from_checkpoint(load_checkpoint(dir / "nmt.ckpt", "nmt"));
    const std::vector<int> src = encode_text(cfg.corpus, "hgf"), tgt{18, 4, 5, 6};
    CHECK(loaded.logits(src, tgt) == model.logits(src, tgt));
  }

  SUBCASE("lm") {
    LmConfig mc = cfg.lm.model;
    mc.vocab = 20;
    LstmLm model(mc, 7);
    LmTrainer trainer(model, 8);
    trainer.train_epoch({{1, 2, 3, 19}, {4, 4, 19}});
    save_checkpoint(dir / "lm.ckpt", lm_checkpoint(model, &trainer));
    const LstmLm loaded = lm_from_checkpoint(load_checkpoint(dir / "lm.ckpt", "lm"));
    const std::vector<int> prefix{18, 1, 2};
    CHECK(loaded.next_logprobs(prefix) == model.next_logprobs(prefix));
  }
}

TEST_CASE("damaged checkpoints are rejected") {
  const fs::path dir = fresh_dir("damaged");
  const PipelineConfig cfg = tiny_config();
  const VqVae model(cfg.vqvae, 1);
  save_checkpoint(dir / "vq.ckpt", vqvae_checkpoint(model, cfg.vqvae_training, nullptr));
  const std::string bytes = slurp(dir / "vq.ckpt");

  std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 9);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "short.ckpt"), doctest::Contains("truncated"), CheckpointError);

  std::string bad_version = bytes;
  bad_version[8] = 9;
  std::ofstream(dir / "version.ckpt", std::ios::binary) << bad_version;
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "version.ckpt"), doctest::Contains("version 9"), CheckpointError);

  std::ofstream(dir / "text.ckpt") << "hello";
  CHECK_THROWS_AS(load_checkpoint(dir / "text.ckpt"), CheckpointError);

  VqVaeConfig wider = cfg.vqvae;
  wider.code_dim = 12;
  VqVae other(wider, 1);
  const Checkpoint ckpt = load_checkpoint(dir / "vq.ckpt", "vqvae");
  CHECK_THROWS_WITH_AS(ckpt.load_params("generator.", other.generator_params()), doctest::Contains("shape"),
                       CheckpointError);
}

TEST_CASE("demo VQ-VAE checkpoint stays under 10 MB") {
  const PipelineConfig cfg = PipelineConfig::load(kSourceDir / "configs" / "demo.json");
  VqVae model(cfg.vqvae, 1);
  VqVaeTrainer trainer(model, cfg.vqvae_training);
  const fs::path path = fresh_dir("size") / "demo.ckpt";
  save_checkpoint(path, vqvae_checkpoint(model, cfg.vqvae_training, &trainer));
  const std::size_t params = model.generator_params().scalar_count() + model.discriminator_params().scalar_count();
  MESSAGE("demo vqvae: " << params << " parameters, checkpoint " << fs::file_size(path) << " bytes");
  // Weights plus two optimizer moments at 8 bytes each, with room for names and metadata.
  CHECK(fs::file_size(path) < 3 * 8 * params + 64 * 1024);
  CHECK(fs::file_size(path) < 10'000'000);
}

TEST_CASE("committed configs load and validate") {
  const PipelineConfig demo = PipelineConfig::load(kSourceDir / "configs" / "demo.json");
  CHECK(demo.corpus.train_size == 64);
  CHECK(demo.vqvae.downsampling_factor() == 128);

  const PipelineConfig p = PipelineConfig::load(kSourceDir / "configs" / "paper.json");
  CHECK(p.corpus.sample_rate == 24000);
  CHECK(p.vqvae.num_centroids == 256);
  CHECK(p.vqvae.code_dim == 128);
  CHECK(p.vqvae.downsampling_scales == std::vector<std::size_t>{4, 4, 4, 2});
  CHECK(p.vqvae_training.batch_size == 16);
  CHECK(p.vqvae_training.batch_length == 8192);
  CHECK(p.vqvae_training.lr_generator == 1e-4);
  CHECK(p.vqvae_training.lr_discriminator == 5e-5);
  CHECK(p.vqvae_training.clip_generator == 10.0);
  CHECK(p.vqvae_training.clip_discriminator == 1.0);
  CHECK(p.vqvae_training.iterations == 5'000'000);
  CHECK(p.vqvae_training.weights.lambda_cm == 0.25);
  CHECK(p.vqvae_training.weights.lambda_fm == 25.0);
  CHECK(p.vqvae_training.weights.lambda_adv == 4.0);
  CHECK(p.nmt.model.encoder_blocks == 6);
  CHECK(p.nmt.model.decoder_blocks == 6);
  CHECK(p.nmt.model.ff_units == 2048);
  CHECK(p.nmt.model.attn_dim == 256);
  CHECK(p.nmt.model.heads == 4);
  CHECK(p.nmt.model.dropout == 0.1);
  CHECK(p.nmt.model.warmup_steps == 8000);
  CHECK(p.nmt.model.grad_clip == 5.0);
  CHECK(p.nmt.model.label_smoothing == 0.1);
  CHECK(p.nmt.epochs == 2000);
  CHECK(p.lm.model.hidden_units == 1024);
  CHECK(p.subwords.vocab_size == 256);
}

TEST_CASE("config JSON round-trips and rejects unknown keys") {
  const PipelineConfig c = tiny_config();
  const PipelineConfig back = PipelineConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());

  nlohmann::json j = c.to_json();
  j["vqvae"]["centroids"] = 3;
  CHECK_THROWS_WITH_AS(PipelineConfig::from_json(j), doctest::Contains("vqvae.centroids"), ConfigError);
  j = c.to_json();
  j["nmt"]["heads"] = "four";
  CHECK_THROWS_WITH_AS(PipelineConfig::from_json(j), doctest::Contains("nmt.heads"), ConfigError);
}

TEST_CASE("cross-field config errors name both fields") {
  const auto error_of = [](const PipelineConfig& c) {
    try {
      c.validate();
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  PipelineConfig c;
  c.vqvae.upsampling_scales = {8, 8, 4, 2};
  std::string msg = error_of(c);
  CHECK(msg.find("vqvae.downsampling_scales") != std::string::npos);
  CHECK(msg.find("vqvae.upsampling_scales") != std::string::npos);

  c = PipelineConfig{};
  c.vqvae_training.batch_length = 8000;
  msg = error_of(c);
  CHECK(msg.find("vqvae_training.batch_length") != std::string::npos);
  CHECK(msg.find("vqvae.downsampling_scales") != std::string::npos);

  c = PipelineConfig{};
  c.vqvae_training.batch_length = 512;
  msg = error_of(c);
  CHECK(msg.find("vqvae_training.stft") != std::string::npos);
  CHECK(msg.find("vqvae_training.batch_length") != std::string::npos);

  c = PipelineConfig{};
  CHECK_THROWS_AS(c.set_dsf(64), ConfigError);
  c.set_dsf(256);
  CHECK(c.vqvae.downsampling_factor() == 256);
  CHECK(error_of(c).empty());
}
