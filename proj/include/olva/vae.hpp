#pragma once

// Segmentation VAE: a strided conv encoder to a diagonal Gaussian latent,
// reparameterized sampling, and a transposed-conv decoder that emits
// per-class sigmoid maps.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "olva/adam.hpp"
#include "olva/checkpoint.hpp"
#include "olva/rng.hpp"
#include "olva/tensor.hpp"

namespace olva {

inline constexpr std::size_t kLadderDepth = 5;

struct VaeConfig {
  std::size_t extent = 32;
  std::size_t in_channels = 1;
  std::vector<std::size_t> encoder_channels = {16, 16, 32, 32, 32};
  std::size_t latent_dim = 16;
  /// Empty means the mirror of the encoder ending in `classes`.
  std::vector<std::size_t> decoder_channels;
  std::size_t classes = 5;
  double lrelu_slope = 0.3;
  double dropout_rate = 0.3;

  /// Decoder ladder with the mirror default applied.
  std::vector<std::size_t> resolved_decoder() const;
  /// Spatial extent at the bottleneck (extent / 2^5).
  std::size_t bottleneck_extent() const { return extent >> kLadderDepth; }
  /// Throws ConfigError on any violated invariant.
  void validate() const;
};

template <std::floating_point T>
struct BasicLatentCode {
  BasicTensor<T> mu;       // [N, K]
  BasicTensor<T> log_var;  // [N, K]
  BasicTensor<T> z;        // [N, K], mu + exp(log_var / 2) * eps
};

template <std::floating_point T>
struct BasicSegOutput {
  BasicTensor<T> probs;  // [N, C, H, W], every entry in (0, 1)
};

struct EncodeOptions {
  bool training = true;  // dropout after the head
  bool sample = true;    // false forces eps = 0, so z = mu
};

template <std::floating_point T>
class BasicSegVae {
 public:
  /// Weights drawn He-uniform (lrelu gain; unit gain before the head and
  /// the sigmoid) from init_seed; biases start at zero.
  BasicSegVae(VaeConfig config, std::uint64_t init_seed);

  BasicLatentCode<T> encode(const BasicTensor<T>& x, CounterRng& rng, EncodeOptions options = {}) const;
  BasicSegOutput<T> decode(const BasicTensor<T>& z) const;

  const VaeConfig& config() const { return config_; }
  std::vector<BasicParameter<T>>& parameters() { return params_; }
  const std::vector<BasicParameter<T>>& parameters() const { return params_; }
  BasicParameter<T>& parameter(const std::string& name);
  const BasicParameter<T>& parameter(const std::string& name) const;

  /// Marks every parameter frozen (no gradient) except those whose name
  /// starts with one of the given prefixes.
  void freeze_except(const std::vector<std::string>& trainable_prefixes);
  void unfreeze_all();
  /// Parameters that are not frozen, in declaration order.
  std::vector<BasicParameter<T>> trainable() const;

  std::size_t parameter_count() const;
  void zero_grad();

  /// Named float copies of the parameters, ready for a checkpoint.
  std::vector<NamedTensor> state() const;
  /// Copies values by name. Throws ConfigError naming the first tensor that
  /// is missing or shape-incompatible.
  void load_state(const std::vector<NamedTensor>& tensors);

 private:
  BasicTensor<T>& value(std::size_t index) const;

  VaeConfig config_;
  std::vector<BasicParameter<T>> params_;
  std::size_t fc_index_ = 0;
  std::size_t dec_index_ = 0;
};

using LatentCode = BasicLatentCode<float>;
using SegOutput = BasicSegOutput<float>;
using SegVae = BasicSegVae<float>;

/// Mean over the batch of -1/2 sum_k (1 + log_var - mu^2 - exp(log_var)).
template <std::floating_point T>
BasicTensor<T> kl_divergence(const BasicLatentCode<T>& code);

inline constexpr double kDiceSmoothing = 1e-6;

/// 1 - mean over (sample, class) of (2 sum p*y + eps) / (sum p + sum y + eps).
template <std::floating_point T>
BasicTensor<T> soft_dice_loss(const BasicSegOutput<T>& out, const BasicTensor<T>& labels);

/// Squared error between the one-hot mask and the probabilities, summed per
/// sample and averaged over the batch.
template <std::floating_point T>
BasicTensor<T> mask_reconstruction_loss(const BasicSegOutput<T>& out, const BasicTensor<T>& labels);

template <std::floating_point T>
struct BasicVaeSegLoss {
  BasicTensor<T> total;
  BasicTensor<T> recon;
  BasicTensor<T> kl;
  BasicTensor<T> dice;
  BasicLatentCode<T> code;
  BasicSegOutput<T> output;
};

/// recon + beta * KL + dice on a labeled batch. The latent code is returned
/// for reuse by the alignment term.
template <std::floating_point T>
BasicVaeSegLoss<T> vae_seg_loss(const BasicSegVae<T>& model, const BasicTensor<T>& images,
                                const BasicTensor<T>& labels, T beta, CounterRng& rng, EncodeOptions options = {});

using VaeSegLoss = BasicVaeSegLoss<float>;

/// Per-pixel class decision: argmax over channels, background (class 0)
/// when no channel reaches 0.5. probs is [C, H, W] for one sample.
std::vector<std::uint8_t> hard_labels(std::span<const float> probs, std::size_t classes, std::size_t area);

}  // namespace olva
