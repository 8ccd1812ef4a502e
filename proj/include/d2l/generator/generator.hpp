#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "d2l/nncore/network.hpp"
#include "d2l/synthstream/benchmark.hpp"

namespace d2l {

struct GeneratorDims {
  std::size_t image_dim = 144;
  std::size_t embed_dim = 32;  // d_e
  std::size_t soft_dim = 16;   // d_s
  std::size_t text_dim = 16;   // d_t
  std::size_t noise_dim = 8;   // d_eps
  std::size_t enc_hidden = 64;
  std::size_t dec_hidden = 96;

  std::size_t decoder_input() const { return embed_dim + soft_dim + text_dim + noise_dim; }
};

/// Unit-norm embedding of "An image of class <label>".
Tensor text_embed(const std::string& label, std::size_t dim = 16);

/// Conditioning prompt p_c = [p_soft, p_text]. Only p_soft is learnable.
class Prompt {
 public:
  Prompt() = default;
  Prompt(std::string label, std::size_t soft_dim, std::size_t text_dim)
      : label_(std::move(label)), soft_(Tensor::matrix(1, soft_dim)), text_(text_embed(label_, text_dim)) {}

  const std::string& label() const { return label_; }
  Tensor& soft() { return soft_; }
  const Tensor& soft() const { return soft_; }
  const Tensor& text() const { return text_; }

 private:
  std::string label_;
  Tensor soft_;
  Tensor text_;
};

/// Conditional autoencoder standing in for the image generator:
/// out = sigmoid-decoder(Enc(x) ++ p_soft ++ p_text ++ eps).
class FrozenGenerator {
 public:
  FrozenGenerator() = default;
  FrozenGenerator(const GeneratorDims& dims, Rng& rng);

  const GeneratorDims& dims() const { return dims_; }

  /// Differentiable in `p_soft` (and `cond`/`eps` if they are tracked);
  /// generator weights enter the tape as constants.
  Var generate(Tape& t, Var cond, Var p_soft, Var p_text, Var eps) const;
  Tensor generate(const Tensor& cond, const Tensor& p_soft, const Tensor& p_text, const Tensor& eps) const;
  Tensor generate(const Tensor& cond, const Prompt& p, const Tensor& eps) const {
    return generate(cond, p.soft(), p.text(), eps);
  }

  /// Per-row reconstruction error under the null prompt and zero noise.
  std::vector<double> reconstruction_error(const Tensor& images) const;
  /// Per-row quality proxy exp(-lambda * reconstruction error).
  std::vector<double> quality(const Tensor& images) const;
  double quality_lambda() const { return lambda_; }
  void set_quality_lambda(double lambda) { lambda_ = lambda; }

  std::uint64_t hash() const;

  std::vector<Tensor> export_tensors() const;
  static FrozenGenerator from_tensors(const std::vector<Tensor>& tensors);

  // Pretraining access.
  Mlp& encoder() { return enc_; }
  Mlp& decoder() { return dec_; }
  const Mlp& encoder() const { return enc_; }
  const Mlp& decoder() const { return dec_; }

 private:
  GeneratorDims dims_;
  Mlp enc_;
  Mlp dec_;
  double lambda_ = 1.0;
};

struct PretrainConfig {
  std::size_t steps = 4000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double prompt_sigma = 0.5;  // Gaussian perturbation injected into the p_soft slot
  double null_prompt_rate = 0.3;     // rows trained with zero prompt (plain reconstruction)
  double swap_condition_rate = 0.5;  // prompted rows whose condition is an unrelated image
  double swap_blend = 0.5;           // weight of the prompted class in a swapped row's target
  double loss_ceiling = 0.03;  // held-out MSE must end below this
  double median_quality = 0.8;
  std::uint64_t seed = 0;
  GeneratorDims dims;
};

struct PretrainReport {
  double first_loss = 0.0;
  double final_loss = 0.0;  // mean over the last 100 steps
  double holdout_mse = 0.0;
  double mean_image_mse = 0.0;
  double quality_lambda = 0.0;
  std::uint64_t bank_hash = 0;
  std::uint64_t param_hash = 0;
};

/// Trains Enc/Dec on `bank` (train split; test split is the hold-out).
/// Throws NumericError if the held-out MSE does not fall below the ceiling.
FrozenGenerator pretrain_generator(const TaskStream& bank, const PretrainConfig& cfg, PretrainReport* report = nullptr);

std::uint64_t hash_samples(const SampleSet& s);

/// Writes <path> (tensor container) and <path>.json (manifest).
void save_generator(const FrozenGenerator& g, const PretrainConfig& cfg, const PretrainReport& rep,
                    const std::filesystem::path& path);
FrozenGenerator load_generator(const std::filesystem::path& path);

}  // namespace d2l
