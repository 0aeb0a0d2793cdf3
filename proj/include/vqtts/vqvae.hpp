#pragma once

#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "vqtts/nn.hpp"
#include "vqtts/signal.hpp"

namespace vqtts {

struct VqVaeConfig {
  std::size_t num_centroids = 256;
  std::size_t code_dim = 128;
  std::vector<std::size_t> downsampling_scales{4, 4, 4, 2};
  std::vector<std::size_t> upsampling_scales{8, 4, 2, 2};
  // Encoder widths double per downsampling stage; decoder widths halve per
  // upsampling stage. Both are clamped to [min_channels, max_channels].
  std::size_t encoder_channels = 16;
  std::size_t decoder_channels = 64;
  std::size_t min_channels = 8;
  std::size_t max_channels = 64;
  std::size_t residual_layers = 2;
  std::size_t num_discriminators = 3;
  std::size_t discriminator_layers = 4;
  std::size_t discriminator_channels = 8;
  double leaky_slope = 0.2;

  std::size_t downsampling_factor() const;
  void validate() const;

  static VqVaeConfig dsf128();
  static VqVaeConfig dsf256();
};

struct LossWeights {
  double lambda_cm = 0.25;
  double lambda_fm = 25.0;
  double lambda_adv = 4.0;
  // Auxiliary mean |x - x_hat| term; zero leaves the objective unchanged.
  double lambda_wave = 0.0;

  void validate() const;
};

struct TokenSequence {
  std::vector<int> ids;
  std::size_t source_length = 0;
};

struct Quantized {
  std::vector<int> ids;
  Tensor z_vq;  // [N, dim]
};

// Nearest centroid per row of z (Euclidean, lowest index wins ties).
Quantized quantize(const Tensor& z, const Tensor& codebook);

// Forward value z_vq; the whole upstream gradient goes to z and none to z_vq.
Var straight_through(Var z, Var z_vq);

struct VqLosses {
  Var reconstruction;
  Var codebook;
  Var commitment;
};

// Reconstruction is the multi-resolution STFT loss; codebook and commitment
// losses are mean squared distances with the stop-gradient on opposite sides.
VqLosses vq_losses(Var x, Var x_hat, Var z, Var z_vq, const MultiResConfig& stft);

struct DiscriminatorOutput {
  std::vector<Var> features;  // one per layer
  Var score;                  // [1, frames]
};

struct AdversarialTerms {
  Var lsgan;             // (1/K) sum_k mean (1 - D_k(G(x)))^2
  Var feature_matching;  // (1/K) sum_k L_fm^(k)
  Var total;             // (1/K) sum_k [(1 - D_k(G(x)))^2 + lambda_fm L_fm^(k)]
};

AdversarialTerms adversarial_loss(const std::vector<DiscriminatorOutput>& real,
                                  const std::vector<DiscriminatorOutput>& fake, double lambda_fm);
// (1/K) sum_k [mean (1 - D_k(x))^2 + mean D_k(G(x))^2]
Var discriminator_loss(const std::vector<DiscriminatorOutput>& real,
                       const std::vector<DiscriminatorOutput>& fake);

class VqVae {
 public:
  VqVae(VqVaeConfig cfg, std::uint64_t seed);
  VqVae(VqVae&&) = default;
  VqVae& operator=(VqVae&&) = default;

  const VqVaeConfig& config() const { return cfg_; }
  std::size_t dsf() const { return cfg_.downsampling_factor(); }

  ParameterSet& generator_params() { return gen_; }
  const ParameterSet& generator_params() const { return gen_; }
  ParameterSet& discriminator_params() { return disc_; }
  const ParameterSet& discriminator_params() const { return disc_; }
  const Tensor& codebook() const { return *codebook_; }

  // Graph-building forward passes. x is a 1-D waveform whose length is a
  // multiple of the downsampling factor.
  Var encode(const ParamBinding& bind, Var x) const;      // -> [N, dim]
  Var decode(const ParamBinding& bind, Var z_vq) const;   // -> [N * dsf]
  std::vector<DiscriminatorOutput> discriminate(const ParamBinding& bind, Var x) const;

  // Inference helpers (no gradient tracking). Input is zero-padded to a
  // multiple of the downsampling factor.
  Tensor encode(const Tensor& wave) const;
  Quantized quantize(const Tensor& z) const { return vqtts::quantize(z, *codebook_); }
  Tensor decode(const Tensor& z_vq) const;
  Tensor lookup(std::span<const int> ids) const;
  TokenSequence tokenize(const Tensor& wave) const;
  std::vector<TokenSequence> tokenize_corpus(const std::vector<Tensor>& waves) const;
  // decode(quantize(encode(x))) cropped to the input length.
  Tensor reconstruct(const Tensor& wave) const;

  long trained_steps() const { return trained_steps_; }
  void set_trained_steps(long steps) { trained_steps_ = steps; }

 private:
  struct Conv {
    Tensor* weight;
    Tensor* bias;
    std::size_t stride = 1, pad = 0, dilation = 1;
    bool transposed = false;
  };
  struct Residual {
    Conv dilated, pointwise;
  };
  struct UpStage {
    Conv up;
    std::vector<Residual> residuals;
  };
  struct Disc {
    std::vector<Conv> layers;
    Conv output;
  };

  Conv make_conv(ParameterSet& set, const std::string& name, std::size_t c_in, std::size_t c_out,
                 std::size_t kernel, std::size_t stride, std::size_t pad, std::size_t dilation,
                 bool transposed, std::mt19937_64& rng);
  Var apply(const ParamBinding& bind, const Conv& c, Var x) const;

  VqVaeConfig cfg_;
  ParameterSet gen_;
  ParameterSet disc_;
  std::vector<Conv> enc_layers_;
  Conv enc_out_{};
  Tensor* codebook_ = nullptr;
  Conv dec_in_{};
  std::vector<UpStage> dec_stages_;
  Conv dec_out_{};
  std::vector<Disc> discs_;
  long trained_steps_ = 0;
};

struct VqTrainConfig {
  std::size_t batch_size = 16;
  std::size_t batch_length = 8192;
  double lr_generator = 1e-4;
  double lr_discriminator = 5e-5;
  double clip_generator = 10.0;
  double clip_discriminator = 1.0;
  long iterations = 5'000'000;
  // Discriminator updates and the adversarial generator term start at this step.
  long discriminator_start_step = 0;
  // Before the first update of an untrained model, overwrite the codebook
  // with encoder outputs drawn from that batch.
  bool codebook_from_data = false;
  // Crop offsets are multiples of this many samples.
  std::size_t crop_alignment = 1;
  LossWeights weights;
  MultiResConfig stft = MultiResConfig::defaults();

  void validate(const VqVaeConfig& model) const;
};

struct LossReport {
  long step = 0;
  double reconstruction = 0.0;
  double codebook = 0.0;
  double commitment = 0.0;
  double adversarial = 0.0;       // LSGAN generator term
  double feature_matching = 0.0;
  double waveform = 0.0;
  double generator = 0.0;
  double discriminator = 0.0;
  bool discriminator_updated = false;
};

// Random fixed-length crops starting at multiples of `alignment`; shorter
// waveforms are right-padded with zeros.
std::vector<Tensor> sample_batch(const std::vector<Tensor>& waves, std::size_t batch_size,
                                 std::size_t length, std::mt19937_64& rng, std::size_t alignment = 1);

// Alternating updates: one generator step on L_G, then one discriminator step on L_D.
class VqVaeTrainer {
 public:
  VqVaeTrainer(VqVae& model, VqTrainConfig cfg);

  LossReport train_step(const std::vector<Tensor>& batch);
  void init_codebook(const std::vector<Tensor>& batch);

  const VqTrainConfig& config() const { return cfg_; }
  RAdam& generator_optimizer() { return g_opt_; }
  RAdam& discriminator_optimizer() { return d_opt_; }
  long step() const { return step_; }
  void set_step(long step) { step_ = step; }

 private:
  VqVae& model_;
  VqTrainConfig cfg_;
  RAdam g_opt_;
  RAdam d_opt_;
  long step_ = 0;
};

}  // namespace vqtts
