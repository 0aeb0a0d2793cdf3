#include "vqtts/vqvae.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace vqtts {

namespace {

std::size_t product(const std::vector<std::size_t>& v) {
  return std::accumulate(v.begin(), v.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t clamp_channels(std::size_t c, const VqVaeConfig& cfg) {
  return std::clamp(c, cfg.min_channels, cfg.max_channels);
}

}  // namespace

// ---- configuration --------------------------------------------------------

std::size_t VqVaeConfig::downsampling_factor() const { return product(downsampling_scales); }

void VqVaeConfig::validate() const {
  if (num_centroids < 1 || code_dim < 1) throw std::invalid_argument("codebook must be non-empty");
  if (downsampling_scales.empty() || upsampling_scales.empty()) {
    throw std::invalid_argument("vqvae scales must be non-empty");
  }
  for (std::size_t s : downsampling_scales) {
    if (s < 1) throw std::invalid_argument("downsampling scales must be >= 1");
  }
  for (std::size_t s : upsampling_scales) {
    if (s < 1) throw std::invalid_argument("upsampling scales must be >= 1");
  }
  if (product(downsampling_scales) != product(upsampling_scales)) {
    throw std::invalid_argument("product of downsampling_scales (" +
                                std::to_string(product(downsampling_scales)) +
                                ") differs from product of upsampling_scales (" +
                                std::to_string(product(upsampling_scales)) + ")");
  }
  if (min_channels < 1 || min_channels > max_channels) {
    throw std::invalid_argument("channel bounds must satisfy 1 <= min_channels <= max_channels");
  }
  if (num_discriminators < 1) throw std::invalid_argument("need at least one discriminator");
  if (discriminator_layers < 2) throw std::invalid_argument("discriminator needs at least two layers");
}

VqVaeConfig VqVaeConfig::dsf128() { return VqVaeConfig{}; }

VqVaeConfig VqVaeConfig::dsf256() {
  VqVaeConfig cfg;
  cfg.downsampling_scales = {4, 4, 4, 4};
  cfg.upsampling_scales = {8, 8, 2, 2};
  return cfg;
}

void LossWeights::validate() const {
  if (lambda_cm < 0.0 || lambda_fm < 0.0 || lambda_adv < 0.0 || lambda_wave < 0.0) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
}

void VqTrainConfig::validate(const VqVaeConfig& model) const {
  weights.validate();
  stft.validate();
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (crop_alignment < 1) throw std::invalid_argument("crop_alignment must be >= 1");
  if (batch_length % model.downsampling_factor() != 0) {
    throw std::invalid_argument("batch_length must be a multiple of the downsampling factor");
  }
  for (const StftConfig& r : stft.resolutions) {
    if (r.win_length > batch_length) {
      throw std::invalid_argument("batch_length is shorter than an STFT window");
    }
  }
}

// ---- quantizer and VQ losses ----------------------------------------------

Quantized quantize(const Tensor& z, const Tensor& codebook) {
  if (z.rank() != 2 || codebook.rank() != 2 || z.dim(1) != codebook.dim(1)) {
    throw ShapeError("quantize: latents " + shape_str(z.shape()) + " do not match codebook " +
                     shape_str(codebook.shape()));
  }
  const std::size_t n = z.dim(0), dim = z.dim(1), k = codebook.dim(0);
  Quantized q{std::vector<int>(n), Tensor(Shape{n, dim})};
  for (std::size_t i = 0; i < n; ++i) {
    const double* zi = z.ptr() + i * dim;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double* e = codebook.ptr() + j * dim;
      double d = 0.0;
      for (std::size_t c = 0; c < dim; ++c) d += (zi[c] - e[c]) * (zi[c] - e[c]);
      if (d < best) {
        best = d;
        best_j = j;
      }
    }
    q.ids[i] = static_cast<int>(best_j);
    std::copy_n(codebook.ptr() + best_j * dim, dim, q.z_vq.ptr() + i * dim);
  }
  return q;
}

Var straight_through(Var z, Var z_vq) {
  if (z.shape() != z_vq.shape()) throw ShapeError("straight_through: shape mismatch");
  return z.tape().record("straight_through", z_vq.value(), {z, z_vq}, [](const BackwardContext& ctx) {
    if (Tensor* gz = ctx.input_grad(0)) {
      const Tensor& g = ctx.out_grad();
      for (std::size_t i = 0; i < g.size(); ++i) (*gz)[i] += g[i];
    }
  });
}

VqLosses vq_losses(Var x, Var x_hat, Var z, Var z_vq, const MultiResConfig& stft) {
  if (z.shape() != z_vq.shape()) throw ShapeError("vq_losses: latent shapes differ");
  return VqLosses{
      multi_res_stft_loss(x, x_hat, stft),
      mean(square(sub(stop_gradient(z), z_vq))),
      mean(square(sub(stop_gradient(z_vq), z))),
  };
}

AdversarialTerms adversarial_loss(const std::vector<DiscriminatorOutput>& real,
                                  const std::vector<DiscriminatorOutput>& fake, double lambda_fm) {
  if (fake.empty() || real.size() != fake.size()) {
    throw std::invalid_argument("adversarial_loss needs matching, non-empty discriminator outputs");
  }
  Var lsgan, fm;
  for (std::size_t k = 0; k < fake.size(); ++k) {
    Var gan = mean(square(add_scalar(scale(fake[k].score, -1.0), 1.0)));
    if (real[k].features.size() != fake[k].features.size() || fake[k].features.empty()) {
      throw std::invalid_argument("adversarial_loss: feature layer counts differ");
    }
    Var layers;
    for (std::size_t l = 0; l < fake[k].features.size(); ++l) {
      Var d = mean(abs(sub(stop_gradient(real[k].features[l]), fake[k].features[l])));
      layers = layers.valid() ? add(layers, d) : d;
    }
    Var fm_k = scale(layers, 1.0 / static_cast<double>(fake[k].features.size()));
    lsgan = lsgan.valid() ? add(lsgan, gan) : gan;
    fm = fm.valid() ? add(fm, fm_k) : fm_k;
  }
  const double inv_k = 1.0 / static_cast<double>(fake.size());
  lsgan = scale(lsgan, inv_k);
  fm = scale(fm, inv_k);
  Var total = add(lsgan, scale(fm, lambda_fm));
  return {lsgan, fm, total};
}

Var discriminator_loss(const std::vector<DiscriminatorOutput>& real,
                       const std::vector<DiscriminatorOutput>& fake) {
  if (real.empty() || real.size() != fake.size()) {
    throw std::invalid_argument("discriminator_loss needs matching, non-empty discriminator outputs");
  }
  Var total;
  for (std::size_t k = 0; k < real.size(); ++k) {
    Var real_term = mean(square(add_scalar(scale(real[k].score, -1.0), 1.0)));
    Var fake_term = mean(square(fake[k].score));
    Var term = add(real_term, fake_term);
    total = total.valid() ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(real.size()));
}

// ---- model ------------------------------------------------------------------

VqVae::Conv VqVae::make_conv(ParameterSet& set, const std::string& name, std::size_t c_in,
                             std::size_t c_out, std::size_t kernel, std::size_t stride,
                             std::size_t pad, std::size_t dilation, bool transposed,
                             std::mt19937_64& rng) {
  Conv c;
  if (transposed) {
    c.weight = &set.add(name + ".weight", uniform_fan_in({c_in, c_out, kernel}, c_out * kernel, rng));
    c.bias = &set.add(name + ".bias", uniform_fan_in({c_out}, c_out * kernel, rng));
  } else {
    c.weight = &set.add(name + ".weight", uniform_fan_in({c_out, c_in, kernel}, c_in * kernel, rng));
    c.bias = &set.add(name + ".bias", uniform_fan_in({c_out}, c_in * kernel, rng));
  }
  c.stride = stride;
  c.pad = pad;
  c.dilation = dilation;
  c.transposed = transposed;
  return c;
}

Var VqVae::apply(const ParamBinding& bind, const Conv& c, Var x) const {
  Var w = bind(*c.weight);
  Var y = c.transposed ? conv_transpose1d(x, w, c.stride, c.pad)
                       : conv1d(x, w, c.stride, c.pad, c.dilation);
  return add_channel_bias(y, bind(*c.bias));
}

VqVae::VqVae(VqVaeConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);

  // Encoder: strided convolutions, one per downsampling scale. Kernel 2s+1
  // with padding s maps length T to exactly T/s.
  std::size_t ch = clamp_channels(cfg_.encoder_channels, cfg_);
  enc_layers_.push_back(make_conv(gen_, "encoder.in", 1, ch, 15, 1, 7, 1, false, rng));
  for (std::size_t i = 0; i < cfg_.downsampling_scales.size(); ++i) {
    const std::size_t s = cfg_.downsampling_scales[i];
    const std::size_t next = clamp_channels(ch * 2, cfg_);
    enc_layers_.push_back(make_conv(gen_, "encoder.down" + std::to_string(i), ch, next, 2 * s + 1, s,
                                    s, 1, false, rng));
    ch = next;
  }
  enc_out_ = make_conv(gen_, "encoder.out", ch, cfg_.code_dim, 3, 1, 1, 1, false, rng);

  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(cfg_.code_dim)));
  Tensor cb(Shape{cfg_.num_centroids, cfg_.code_dim});
  for (double& v : cb.data()) v = normal(rng);
  codebook_ = &gen_.add("codebook", std::move(cb));

  // Decoder: transposed convolutions with kernel 2s (padding s/2) map N to
  // N*s; each stage is followed by dilated residual layers.
  ch = clamp_channels(cfg_.decoder_channels, cfg_);
  dec_in_ = make_conv(gen_, "decoder.in", cfg_.code_dim, ch, 7, 1, 3, 1, false, rng);
  for (std::size_t i = 0; i < cfg_.upsampling_scales.size(); ++i) {
    const std::size_t s = cfg_.upsampling_scales[i];
    const std::size_t next = clamp_channels(ch / 2, cfg_);
    const std::string prefix = "decoder.up" + std::to_string(i);
    UpStage stage;
    if (s % 2 == 0) {
      stage.up = make_conv(gen_, prefix, ch, next, 2 * s, s, s / 2, 1, true, rng);
    } else {
      stage.up = make_conv(gen_, prefix, ch, next, s, s, 0, 1, true, rng);
    }
    std::size_t dilation = 1;
    for (std::size_t r = 0; r < cfg_.residual_layers; ++r) {
      const std::string rp = prefix + ".res" + std::to_string(r);
      Residual res;
      res.dilated = make_conv(gen_, rp + ".dilated", next, next, 3, 1, dilation, dilation, false, rng);
      res.pointwise = make_conv(gen_, rp + ".pointwise", next, next, 1, 1, 0, 1, false, rng);
      stage.residuals.push_back(res);
      dilation *= 3;
    }
    dec_stages_.push_back(std::move(stage));
    ch = next;
  }
  dec_out_ = make_conv(gen_, "decoder.out", ch, 1, 7, 1, 3, 1, false, rng);

  // Discriminators share one structure: a wide input layer, stride-4
  // downsampling layers, a final feature layer and a scoring layer.
  for (std::size_t k = 0; k < cfg_.num_discriminators; ++k) {
    const std::string prefix = "disc" + std::to_string(k);
    Disc d;
    std::size_t c = clamp_channels(cfg_.discriminator_channels, cfg_);
    d.layers.push_back(make_conv(disc_, prefix + ".layer0", 1, c, 15, 1, 7, 1, false, rng));
    for (std::size_t l = 1; l + 1 < cfg_.discriminator_layers; ++l) {
      const std::size_t next = clamp_channels(c * 2, cfg_);
      d.layers.push_back(make_conv(disc_, prefix + ".layer" + std::to_string(l), c, next, 9, 4, 4, 1,
                                   false, rng));
      c = next;
    }
    d.layers.push_back(make_conv(disc_, prefix + ".layer" + std::to_string(cfg_.discriminator_layers - 1),
                                 c, c, 5, 1, 2, 1, false, rng));
    d.output = make_conv(disc_, prefix + ".output", c, 1, 3, 1, 1, 1, false, rng);
    discs_.push_back(std::move(d));
  }
}

Var VqVae::encode(const ParamBinding& bind, Var x) const {
  const std::size_t len = x.size();
  if (len == 0) throw ShapeError("encode: empty waveform");
  if (len % dsf() != 0) {
    throw ShapeError("encode: length " + std::to_string(len) + " is not a multiple of " +
                     std::to_string(dsf()));
  }
  Var h = reshape(x, Shape{1, len});
  for (const Conv& c : enc_layers_) h = leaky_relu(apply(bind, c, h), cfg_.leaky_slope);
  return transpose(apply(bind, enc_out_, h));
}

Var VqVae::decode(const ParamBinding& bind, Var z_vq) const {
  if (z_vq.value().rank() != 2 || z_vq.dim(1) != cfg_.code_dim) {
    throw ShapeError("decode: expected [N, " + std::to_string(cfg_.code_dim) + "], got " +
                     shape_str(z_vq.shape()));
  }
  Var h = apply(bind, dec_in_, transpose(z_vq));
  for (const UpStage& stage : dec_stages_) {
    h = apply(bind, stage.up, leaky_relu(h, cfg_.leaky_slope));
    for (const Residual& r : stage.residuals) {
      Var inner = apply(bind, r.dilated, leaky_relu(h, cfg_.leaky_slope));
      h = add(h, apply(bind, r.pointwise, leaky_relu(inner, cfg_.leaky_slope)));
    }
  }
  Var y = tanh(apply(bind, dec_out_, leaky_relu(h, cfg_.leaky_slope)));
  return reshape(y, Shape{y.size()});
}

std::vector<DiscriminatorOutput> VqVae::discriminate(const ParamBinding& bind, Var x) const {
  std::vector<DiscriminatorOutput> outs;
  Var input = reshape(x, Shape{1, x.size()});
  for (std::size_t k = 0; k < discs_.size(); ++k) {
    if (k > 0) input = avg_pool1d(input, 2);
    DiscriminatorOutput out;
    Var h = input;
    for (const Conv& c : discs_[k].layers) {
      h = leaky_relu(apply(bind, c, h), cfg_.leaky_slope);
      out.features.push_back(h);
    }
    out.score = apply(bind, discs_[k].output, h);
    outs.push_back(std::move(out));
  }
  return outs;
}

namespace {

Tensor pad_to_multiple(const Tensor& wave, std::size_t multiple) {
  if (wave.rank() != 1) throw ShapeError("expected a 1-D waveform, got " + shape_str(wave.shape()));
  if (wave.size() == 0) throw ShapeError("empty waveform");
  const std::size_t padded = (wave.size() + multiple - 1) / multiple * multiple;
  std::vector<double> data(wave.data().begin(), wave.data().end());
  data.resize(padded, 0.0);
  return Tensor(Shape{padded}, std::move(data));
}

}  // namespace

Tensor VqVae::encode(const Tensor& wave) const {
  Tape tape(false);
  ParamBinding bind{&tape, false};
  return encode(bind, tape.constant(pad_to_multiple(wave, dsf()))).value();
}

Tensor VqVae::decode(const Tensor& z_vq) const {
  Tape tape(false);
  ParamBinding bind{&tape, false};
  return decode(bind, tape.constant(z_vq)).value();
}

Tensor VqVae::lookup(std::span<const int> ids) const {
  const std::size_t dim = cfg_.code_dim;
  Tensor out(Shape{ids.size(), dim});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= cfg_.num_centroids) {
      throw std::out_of_range("token id " + std::to_string(ids[i]) + " outside the codebook");
    }
    std::copy_n(codebook_->ptr() + ids[i] * dim, dim, out.ptr() + i * dim);
  }
  return out;
}

TokenSequence VqVae::tokenize(const Tensor& wave) const {
  if (trained_steps_ <= 0) throw std::logic_error("tokenize: VQ-VAE has not been trained");
  return TokenSequence{quantize(encode(wave)).ids, wave.size()};
}

std::vector<TokenSequence> VqVae::tokenize_corpus(const std::vector<Tensor>& waves) const {
  std::vector<TokenSequence> out;
  out.reserve(waves.size());
  for (const Tensor& w : waves) out.push_back(tokenize(w));
  return out;
}

Tensor VqVae::reconstruct(const Tensor& wave) const {
  Tensor full = decode(quantize(encode(wave)).z_vq);
  std::vector<double> data(full.data().begin(), full.data().begin() + wave.size());
  return Tensor(Shape{wave.size()}, std::move(data));
}

// ---- training ---------------------------------------------------------------

std::vector<Tensor> sample_batch(const std::vector<Tensor>& waves, std::size_t batch_size,
                                 std::size_t length, std::mt19937_64& rng, std::size_t alignment) {
  if (waves.empty()) throw std::invalid_argument("sample_batch: empty corpus");
  if (alignment < 1) throw std::invalid_argument("sample_batch: alignment must be >= 1");
  std::vector<Tensor> batch;
  for (std::size_t b = 0; b < batch_size; ++b) {
    const Tensor& w = waves[rng() % waves.size()];
    Tensor crop(Shape{length});
    if (w.size() <= length) {
      std::copy_n(w.ptr(), w.size(), crop.ptr());
    } else {
      const std::size_t start = rng() % ((w.size() - length) / alignment + 1) * alignment;
      std::copy_n(w.ptr() + start, length, crop.ptr());
    }
    batch.push_back(std::move(crop));
  }
  return batch;
}

VqVaeTrainer::VqVaeTrainer(VqVae& model, VqTrainConfig cfg) : model_(model), cfg_(std::move(cfg)) {
  cfg_.validate(model_.config());
}

void VqVaeTrainer::init_codebook(const std::vector<Tensor>& batch) {
  std::vector<Tensor> latents;
  std::size_t rows = 0;
  for (const Tensor& wave : batch) {
    latents.push_back(model_.encode(wave));
    rows += latents.back().dim(0);
  }
  Tensor& cb = model_.generator_params().get("codebook");
  const std::size_t k = cb.dim(0), dim = cb.dim(1);
  std::vector<const double*> pool;
  for (const Tensor& z : latents) {
    for (std::size_t i = 0; i < z.dim(0); ++i) pool.push_back(z.ptr() + i * dim);
  }
  double power = 0.0;
  for (const double* r : pool) {
    for (std::size_t j = 0; j < dim; ++j) power += r[j] * r[j];
  }
  // Jitter separates centroids drawn from identical latents.
  const double jitter = 1e-2 * std::sqrt(power / static_cast<double>(rows * dim));
  std::mt19937_64 rng(static_cast<std::uint64_t>(k * 7919 + dim));
  std::normal_distribution<double> noise(0.0, jitter);
  std::shuffle(pool.begin(), pool.end(), rng);
  for (std::size_t c = 0; c < k; ++c) {
    const double* src = pool[c % pool.size()];
    for (std::size_t j = 0; j < dim; ++j) cb.at(c, j) = src[j] + noise(rng);
  }
}

LossReport VqVaeTrainer::train_step(const std::vector<Tensor>& batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  if (cfg_.codebook_from_data && model_.trained_steps() == 0 && step_ == 0) init_codebook(batch);
  LossReport report;
  report.step = step_ + 1;
  const bool adversarial = step_ >= cfg_.discriminator_start_step;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const LossWeights& w = cfg_.weights;
  std::vector<Tensor> fakes;

  try {
    Tape tape;
    ParamBinding gen{&tape, true};
    ParamBinding frozen{&tape, false};
    Var total;
    for (const Tensor& wave : batch) {
      Var x = tape.constant(wave);
      Var z = model_.encode(gen, x);
      Quantized q = model_.quantize(z.value());
      Var z_vq = embedding(gen(model_.codebook()), q.ids);
      Var x_hat = model_.decode(gen, straight_through(z, z_vq));
      VqLosses l = vq_losses(x, x_hat, z, z_vq, cfg_.stft);
      Var item = add(add(l.reconstruction, l.codebook), scale(l.commitment, w.lambda_cm));
      report.reconstruction += l.reconstruction.value().item() * inv_b;
      report.codebook += l.codebook.value().item() * inv_b;
      report.commitment += l.commitment.value().item() * inv_b;
      if (w.lambda_wave > 0.0) {
        Var wave_l1 = mean(abs(sub(x, x_hat)));
        item = add(item, scale(wave_l1, w.lambda_wave));
        report.waveform += wave_l1.value().item() * inv_b;
      }
      if (adversarial && w.lambda_adv > 0.0) {
        auto real = model_.discriminate(frozen, x);
        auto fake = model_.discriminate(frozen, x_hat);
        AdversarialTerms adv = adversarial_loss(real, fake, w.lambda_fm);
        item = add(item, scale(adv.total, w.lambda_adv));
        report.adversarial += adv.lsgan.value().item() * inv_b;
        report.feature_matching += adv.feature_matching.value().item() * inv_b;
      }
      total = total.valid() ? add(total, item) : item;
      fakes.push_back(x_hat.value());
    }
    Var loss = scale(total, inv_b);
    report.generator = loss.value().item();
    tape.backward(loss);
    auto grads = collect_gradients(tape, model_.generator_params());
    clip_grad_norm(grads, cfg_.clip_generator);
    g_opt_.step(model_.generator_params(), grads, cfg_.lr_generator);

    if (adversarial) {
      Tape dtape;
      ParamBinding disc{&dtape, true};
      Var dtotal;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        auto real = model_.discriminate(disc, dtape.constant(batch[b]));
        auto fake = model_.discriminate(disc, dtape.constant(fakes[b]));
        Var d = discriminator_loss(real, fake);
        dtotal = dtotal.valid() ? add(dtotal, d) : d;
      }
      Var dloss = scale(dtotal, inv_b);
      report.discriminator = dloss.value().item();
      dtape.backward(dloss);
      auto dgrads = collect_gradients(dtape, model_.discriminator_params());
      clip_grad_norm(dgrads, cfg_.clip_discriminator);
      d_opt_.step(model_.discriminator_params(), dgrads, cfg_.lr_discriminator);
      report.discriminator_updated = true;
    }
  } catch (const NumericError& e) {
    throw TrainingError("vqvae step " + std::to_string(report.step) + " aborted: " + e.what() +
                        " (rec=" + std::to_string(report.reconstruction) +
                        ", cb=" + std::to_string(report.codebook) +
                        ", cm=" + std::to_string(report.commitment) + ")");
  }
  ++step_;
  model_.set_trained_steps(model_.trained_steps() + 1);
  return report;
}

}  // namespace vqtts
