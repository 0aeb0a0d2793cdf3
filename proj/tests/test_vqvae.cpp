#include <cmath>
#include <numbers>

#include "doctest.h"
#include "gradcheck.hpp"
#include "vqtts/vqvae.hpp"

using namespace vqtts;
using vqtts::testing::random_tensor;

namespace {

VqVaeConfig small_config() {
  VqVaeConfig cfg;
  cfg.num_centroids = 16;
  cfg.code_dim = 8;
  cfg.downsampling_scales = {2, 2};
  cfg.upsampling_scales = {2, 2};
  cfg.encoder_channels = 4;
  cfg.decoder_channels = 8;
  cfg.min_channels = 2;
  cfg.max_channels = 8;
  cfg.residual_layers = 1;
  cfg.num_discriminators = 2;
  cfg.discriminator_layers = 3;
  cfg.discriminator_channels = 4;
  return cfg;
}

VqTrainConfig small_training() {
  VqTrainConfig t;
  t.batch_size = 2;
  t.batch_length = 256;
  t.stft = MultiResConfig{{{64, 16, 64}, {32, 8, 32}}};
  return t;
}

Tensor chirp(std::size_t length, double f0, double f1) {
  Tensor x(Shape{length});
  for (std::size_t n = 0; n < length; ++n) {
    const double t = static_cast<double>(n) / static_cast<double>(length);
    x[n] = 0.5 * std::sin(2.0 * std::numbers::pi * (f0 + 0.5 * (f1 - f0) * t) * static_cast<double>(n) / 64.0);
  }
  return x;
}

// Brute-force nearest neighbour using its own distance routine.
std::vector<int> nearest_oracle(const Tensor& z, const Tensor& cb) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < z.dim(0); ++i) {
    std::vector<double> dist(cb.dim(0));
    for (std::size_t j = 0; j < cb.dim(0); ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < z.dim(1); ++c) acc += std::pow(z.at(i, c) - cb.at(j, c), 2);
      dist[j] = std::sqrt(acc);
    }
    ids.push_back(static_cast<int>(std::min_element(dist.begin(), dist.end()) - dist.begin()));
  }
  return ids;
}

std::vector<DiscriminatorOutput> fixed_outputs(Tape& tape, double score, std::vector<Tensor> features) {
  std::vector<DiscriminatorOutput> outs;
  for (int k = 0; k < 2; ++k) {
    DiscriminatorOutput o;
    for (const Tensor& f : features) o.features.push_back(tape.leaf(f));
    o.score = tape.leaf(Tensor(Shape{1, 5}, score));
    outs.push_back(std::move(o));
  }
  return outs;
}

std::vector<double> grad_values(const Tape& tape, Var v) { return tape.grad(v).values(); }

}  // namespace

TEST_CASE("config validation and presets") {
  CHECK(VqVaeConfig::dsf128().downsampling_factor() == 128);
  CHECK(VqVaeConfig::dsf256().downsampling_factor() == 256);
  VqVaeConfig bad;
  bad.upsampling_scales = {8, 8, 4, 2};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_THROWS_AS((LossWeights{-1.0, 25.0, 4.0}.validate()), std::invalid_argument);

  LossWeights w;
  CHECK(w.lambda_cm == 0.25);
  CHECK(w.lambda_fm == 25.0);
  CHECK(w.lambda_adv == 4.0);
  VqTrainConfig t;
  CHECK(t.lr_generator == 1e-4);
  CHECK(t.lr_discriminator == 5e-5);
  CHECK(t.clip_generator == 10.0);
  CHECK(t.clip_discriminator == 1.0);
  CHECK(t.batch_length == 8192);
}

TEST_CASE("quantize picks the nearest centroid") {
  std::mt19937_64 rng(11);
  Tensor cb = random_tensor({256, 16}, rng);

  SUBCASE("exact centroid") {
    Tensor z(Shape{1, 16});
    for (std::size_t c = 0; c < 16; ++c) z[c] = cb.at(5, c);
    Quantized q = quantize(z, cb);
    CHECK(q.ids == std::vector<int>{5});
    for (std::size_t c = 0; c < 16; ++c) CHECK(q.z_vq[c] == cb.at(5, c));
  }
  SUBCASE("random batch against exhaustive scan") {
    Tensor z = random_tensor({200, 16}, rng);
    CHECK(quantize(z, cb).ids == nearest_oracle(z, cb));
  }
  SUBCASE("ties go to the lowest index") {
    Tensor small(Shape{8, 2}, 10.0);
    small.at(2, 0) = 1.0;
    small.at(2, 1) = 0.0;
    small.at(7, 0) = -1.0;
    small.at(7, 1) = 0.0;
    Tensor z(Shape{1, 2}, 0.0);
    CHECK(quantize(z, small).ids == std::vector<int>{2});
  }
  CHECK_THROWS_AS(quantize(Tensor(Shape{3, 4}), cb), ShapeError);
}

TEST_CASE("straight-through estimator") {
  std::mt19937_64 rng(12);
  Tape tape;
  Tensor cb_value = random_tensor({4, 3}, rng);
  Var z = tape.leaf(random_tensor({5, 3}, rng));
  Var cb = tape.leaf(cb_value);
  std::vector<int> ids{0, 3, 1, 1, 2};
  Var z_vq = embedding(cb, ids);
  Var st = straight_through(z, z_vq);
  CHECK(st.value() == z_vq.value());
  tape.backward(sum(st));
  for (double g : grad_values(tape, z)) CHECK(g == 1.0);
  for (double g : grad_values(tape, cb)) CHECK(g == 0.0);
}

TEST_CASE("codebook and commitment losses") {
  std::mt19937_64 rng(13);
  Tensor cb_value = random_tensor({6, 4}, rng);
  Tensor z_value = random_tensor({10, 4}, rng);
  Quantized q = quantize(z_value, cb_value);
  Tensor x = random_tensor({128}, rng);
  Tensor x_hat = random_tensor({128}, rng);
  const MultiResConfig stft{{{32, 8, 32}}};

  double oracle = 0.0;
  for (std::size_t n = 0; n < 10; ++n) {
    for (std::size_t c = 0; c < 4; ++c) {
      oracle += std::pow(z_value.at(n, c) - cb_value.at(static_cast<std::size_t>(q.ids[n]), c), 2);
    }
  }
  oracle /= 40.0;

  for (int which = 0; which < 2; ++which) {
    Tape tape;
    Var z = tape.leaf(z_value);
    Var cb = tape.leaf(cb_value);
    VqLosses l = vq_losses(tape.constant(x), tape.constant(x_hat), z, embedding(cb, q.ids), stft);
    CHECK(std::fabs(l.codebook.value().item() - oracle) < 1e-12);
    CHECK(std::fabs(l.codebook.value().item() - l.commitment.value().item()) < 1e-12);
    if (which == 0) {
      tape.backward(l.codebook);
      for (double g : grad_values(tape, z)) CHECK(g == 0.0);
      double norm = 0.0;
      for (double g : grad_values(tape, cb)) norm += std::fabs(g);
      CHECK(norm > 0.0);
    } else {
      tape.backward(l.commitment);
      for (double g : grad_values(tape, cb)) CHECK(g == 0.0);
      double norm = 0.0;
      for (double g : grad_values(tape, z)) norm += std::fabs(g);
      CHECK(norm > 0.0);
    }
  }

  Tape tape(false);
  Var exact = tape.constant(q.z_vq);
  VqLosses zero = vq_losses(tape.constant(x), tape.constant(x), exact, exact, stft);
  CHECK(zero.codebook.value().item() == 0.0);
  CHECK(zero.commitment.value().item() == 0.0);
  CHECK(zero.reconstruction.value().item() == 0.0);
}

TEST_CASE("encoder and decoder length contract") {
  SUBCASE("DSF256") {
    VqVae model(VqVaeConfig::dsf256(), 1);
    Tensor x = chirp(8192, 2.0, 6.0);
    Tensor z = model.encode(x);
    CHECK(z.shape() == Shape{32, 128});
    Tensor y = model.decode(model.quantize(z).z_vq);
    CHECK(y.size() == 8192);
    for (double v : y.data()) {
      CHECK(v > -1.0);
      CHECK(v < 1.0);
    }
  }
  SUBCASE("DSF128") {
    VqVae model(VqVaeConfig::dsf128(), 1);
    Tensor x = chirp(8192, 2.0, 6.0);
    Tensor z = model.encode(x);
    CHECK(z.shape() == Shape{64, 128});
    CHECK(model.encode(x) == z);
    Tensor y = model.decode(model.quantize(z).z_vq);
    CHECK(y.size() == 8192);
    CHECK(model.decode(model.quantize(z).z_vq) == y);
  }
  SUBCASE("padding and errors") {
    VqVae model(small_config(), 2);
    CHECK(model.encode(Tensor(Shape{13})).dim(0) == 4);
    CHECK(model.reconstruct(chirp(13, 1.0, 2.0)).size() == 13);
    CHECK_THROWS_AS(model.encode(Tensor(Shape{0})), ShapeError);
    CHECK_THROWS_AS(model.decode(Tensor(Shape{3, 5})), ShapeError);
  }
}

TEST_CASE("codebook initialization has distinct rows") {
  VqVae model(VqVaeConfig::dsf128(), 3);
  const Tensor& cb = model.codebook();
  CHECK(cb.shape() == Shape{256, 128});
  for (std::size_t i = 0; i < 256; ++i) {
    for (std::size_t j = i + 1; j < 256; ++j) {
      bool same = true;
      for (std::size_t c = 0; c < 128 && same; ++c) same = cb.at(i, c) == cb.at(j, c);
      CHECK_FALSE(same);
    }
  }
}

TEST_CASE("generator adversarial terms") {
  std::mt19937_64 rng(14);
  std::vector<Tensor> feats{random_tensor({2, 6}, rng), random_tensor({3, 4}, rng), random_tensor({1, 5}, rng)};
  std::vector<Tensor> fake_feats{random_tensor({2, 6}, rng), random_tensor({3, 4}, rng), random_tensor({1, 5}, rng)};
  const double lambda_fm = 25.0;

  SUBCASE("component-sum oracle") {
    Tape tape;
    auto real = fixed_outputs(tape, 0.8, feats);
    auto fake = fixed_outputs(tape, 0.3, fake_feats);
    AdversarialTerms t = adversarial_loss(real, fake, lambda_fm);
    double fm = 0.0;
    for (std::size_t l = 0; l < feats.size(); ++l) {
      double acc = 0.0;
      for (std::size_t i = 0; i < feats[l].size(); ++i) acc += std::fabs(feats[l][i] - fake_feats[l][i]);
      fm += acc / static_cast<double>(feats[l].size());
    }
    fm /= 3.0;
    const double gan = 0.7 * 0.7;
    CHECK(t.lsgan.value().item() == doctest::Approx(gan).epsilon(1e-12));
    CHECK(t.feature_matching.value().item() == doctest::Approx(fm).epsilon(1e-12));
    CHECK(t.total.value().item() == doctest::Approx(gan + lambda_fm * fm).epsilon(1e-12));

    tape.backward(t.total);
    for (const auto& o : real) {
      for (const Var& f : o.features) {
        for (double g : grad_values(tape, f)) CHECK(g == 0.0);
      }
    }
  }
  SUBCASE("perfect generator and fooled discriminators") {
    Tape tape;
    auto real = fixed_outputs(tape, 1.0, feats);
    auto fake = fixed_outputs(tape, 1.0, feats);
    AdversarialTerms t = adversarial_loss(real, fake, lambda_fm);
    CHECK(t.lsgan.value().item() == 0.0);
    CHECK(t.feature_matching.value().item() == 0.0);

    auto fooled = fixed_outputs(tape, 1.0, fake_feats);
    AdversarialTerms u = adversarial_loss(real, fooled, lambda_fm);
    CHECK(u.lsgan.value().item() == 0.0);
    CHECK(u.total.value().item() == lambda_fm * u.feature_matching.value().item());
  }
  Tape tape;
  CHECK_THROWS_AS(adversarial_loss(fixed_outputs(tape, 1.0, feats), {}, 1.0), std::invalid_argument);
}

TEST_CASE("discriminator loss") {
  std::mt19937_64 rng(15);
  std::vector<Tensor> feats{random_tensor({2, 6}, rng)};
  Tape tape;
  CHECK(discriminator_loss(fixed_outputs(tape, 1.0, feats), fixed_outputs(tape, 0.0, feats)).value().item() == 0.0);
  CHECK(discriminator_loss(fixed_outputs(tape, 0.0, feats), fixed_outputs(tape, 1.0, feats)).value().item() == 2.0);

  VqVae model(small_config(), 4);
  Tape t2;
  ParamBinding gen{&t2, true};
  ParamBinding disc{&t2, true};
  Tensor wave = chirp(256, 1.0, 3.0);
  Var x = t2.constant(wave);
  Var z = model.encode(gen, x);
  Var x_hat = model.decode(gen, straight_through(z, embedding(gen(model.codebook()), model.quantize(z.value()).ids)));
  Var loss = discriminator_loss(model.discriminate(disc, x), model.discriminate(disc, stop_gradient(x_hat)));
  t2.backward(loss);
  for (const Tensor& g : collect_gradients(t2, model.generator_params())) {
    for (double v : g.data()) CHECK(v == 0.0);
  }
  double dnorm = 0.0;
  for (const Tensor& g : collect_gradients(t2, model.discriminator_params())) {
    for (double v : g.data()) dnorm += std::fabs(v);
  }
  CHECK(dnorm > 0.0);
}

TEST_CASE("discriminator ensemble shapes") {
  VqVae model(small_config(), 5);
  Tape tape(false);
  ParamBinding bind{&tape, false};
  auto outs = model.discriminate(bind, tape.constant(chirp(256, 1.0, 2.0)));
  REQUIRE(outs.size() == 2);
  CHECK(outs[0].features.size() == 3);
  CHECK(outs[0].score.dim(0) == 1);
  CHECK(outs[1].score.dim(1) < outs[0].score.dim(1));
}

TEST_CASE("sample_batch crops and pads") {
  std::mt19937_64 rng(16);
  std::vector<Tensor> waves{chirp(20000, 1.0, 2.0), chirp(3000, 1.0, 2.0)};
  auto batch = sample_batch(waves, 16, 8192, rng);
  CHECK(batch.size() == 16);
  for (const Tensor& b : batch) CHECK(b.size() == 8192);
  std::vector<Tensor> short_only{chirp(100, 1.0, 2.0)};
  Tensor padded = sample_batch(short_only, 1, 128, rng)[0];
  CHECK(padded[99] == short_only[0][99]);
  CHECK(padded[127] == 0.0);
}

TEST_CASE("reconstruction overfit on a fixed batch") {
  VqVae model(small_config(), 6);
  VqTrainConfig cfg = small_training();
  cfg.weights.lambda_adv = 0.0;
  cfg.discriminator_start_step = 1'000'000;
  VqVaeTrainer trainer(model, cfg);
  std::vector<Tensor> batch{chirp(256, 1.0, 4.0), chirp(256, 3.0, 1.5)};

  std::vector<Tensor> disc_before;
  for (std::size_t i = 0; i < model.discriminator_params().size(); ++i) {
    disc_before.push_back(model.discriminator_params()[i].value);
  }
  const Tensor enc_before = model.generator_params()[0].value;

  std::vector<double> losses;
  for (int step = 0; step < 100; ++step) {
    LossReport r = trainer.train_step(batch);
    CHECK_FALSE(r.discriminator_updated);
    CHECK(r.reconstruction >= 0.0);
    CHECK(r.codebook >= 0.0);
    CHECK(r.commitment >= 0.0);
    losses.push_back(r.generator);
  }
  for (std::size_t i = 1; i < losses.size(); ++i) {
    INFO("step " << i << ": " << losses[i - 1] << " -> " << losses[i]);
    CHECK(losses[i] <= losses[i - 1]);
  }
  CHECK(losses.back() < losses.front());
  CHECK_FALSE(model.generator_params()[0].value == enc_before);
  for (std::size_t i = 0; i < disc_before.size(); ++i) {
    CHECK(model.discriminator_params()[i].value == disc_before[i]);
  }
  CHECK(model.trained_steps() == 100);
}

TEST_CASE("adversarial training step updates both networks") {
  VqVae model(small_config(), 7);
  VqVaeTrainer trainer(model, small_training());
  std::vector<Tensor> batch{chirp(256, 1.0, 4.0), chirp(256, 3.0, 1.5)};
  const Tensor d_before = model.discriminator_params()[0].value;
  LossReport r = trainer.train_step(batch);
  CHECK(r.discriminator_updated);
  CHECK(r.adversarial >= 0.0);
  CHECK(r.feature_matching >= 0.0);
  CHECK(r.discriminator >= 0.0);
  const LossWeights w;
  CHECK(r.generator == doctest::Approx(r.reconstruction + r.codebook + w.lambda_cm * r.commitment +
                                       w.lambda_adv * (r.adversarial + w.lambda_fm * r.feature_matching))
                           .epsilon(1e-9));
  CHECK_FALSE(model.discriminator_params()[0].value == d_before);
}

TEST_CASE("tokenize_corpus") {
  VqVae model(small_config(), 8);
  std::vector<Tensor> waves{chirp(256, 1.0, 3.0), chirp(130, 2.0, 5.0)};
  CHECK_THROWS_AS(model.tokenize_corpus(waves), std::logic_error);
  model.set_trained_steps(1);
  auto seqs = model.tokenize_corpus(waves);
  REQUIRE(seqs.size() == 2);
  CHECK(seqs[0].ids.size() == 64);
  CHECK(seqs[1].ids.size() == 33);
  CHECK(seqs[1].source_length == 130);
  for (std::size_t i = 0; i < waves.size(); ++i) {
    for (int id : seqs[i].ids) {
      CHECK(id >= 0);
      CHECK(id < 16);
    }
    Tensor via_ids = model.decode(model.lookup(seqs[i].ids));
    Tensor via_pipeline = model.decode(model.quantize(model.encode(waves[i])).z_vq);
    CHECK(via_ids == via_pipeline);
  }
  std::vector<int> bad{16};
  CHECK_THROWS_AS(model.lookup(bad), std::out_of_range);
}
