#include "olva/vae.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "olva/errors.hpp"
#include "olva/ops.hpp"

namespace olva {

std::vector<std::size_t> VaeConfig::resolved_decoder() const {
  if (!decoder_channels.empty()) return decoder_channels;
  std::vector<std::size_t> mirror(encoder_channels.rbegin(), encoder_channels.rend());
  // The encoder's first width would land on the output layer; the mirror
  // drops it and appends the class maps instead.
  if (!mirror.empty()) {
    mirror.erase(mirror.begin());
    mirror.push_back(classes);
  }
  return mirror;
}

void VaeConfig::validate() const {
  if (extent == 0 || (extent & (extent - 1)) != 0) {
    throw ConfigError("model.extent must be a power of two, got " + std::to_string(extent));
  }
  if (bottleneck_extent() < 1) {
    throw ConfigError("model.extent " + std::to_string(extent) + " is too small for five stride-2 layers");
  }
  if (in_channels == 0) throw ConfigError("model.in_channels must be positive");
  if (encoder_channels.size() != kLadderDepth) throw ConfigError("model.encoder_channels must have 5 entries");
  const auto dec = resolved_decoder();
  if (dec.size() != kLadderDepth) throw ConfigError("model.decoder_channels must have 5 entries");
  if (dec.back() != classes) throw ConfigError("model.decoder_channels must end in the class count");
  for (std::size_t c : encoder_channels)
    if (c == 0) throw ConfigError("model.encoder_channels entries must be positive");
  for (std::size_t c : dec)
    if (c == 0) throw ConfigError("model.decoder_channels entries must be positive");
  if (latent_dim == 0) throw ConfigError("model.latent_dim must be positive");
  if (classes < 2) throw ConfigError("model.classes must be at least 2");
  if (!(lrelu_slope >= 0.0 && lrelu_slope < 1.0)) throw ConfigError("model.lrelu_slope must lie in [0, 1)");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("model.dropout_rate must lie in [0, 1)");
}

template <std::floating_point T>
BasicSegVae<T>::BasicSegVae(VaeConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
  config_.validate();
  const CounterRng root(init_seed);
  // Weights U(-b, b) with b = gain * sqrt(3 / fan_in); biases start at zero.
  const double lrelu_gain = std::sqrt(2.0 / (1.0 + config_.lrelu_slope * config_.lrelu_slope));
  auto weight = [&](std::string name, Shape shape, std::size_t fan_in, double gain) {
    CounterRng rng = root.derive({params_.size()});
    const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
    std::vector<T> values(shape_numel(shape));
    for (T& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
    params_.push_back({std::move(name), BasicTensor<T>::from(std::move(shape), std::move(values), true), false});
  };
  auto bias = [&](std::string name, std::size_t size) {
    params_.push_back({std::move(name), BasicTensor<T>::zeros(Shape{size}, true), false});
  };

  std::size_t channels = config_.in_channels;
  for (std::size_t i = 0; i < kLadderDepth; ++i) {
    const std::size_t out = config_.encoder_channels[i];
    const std::string prefix = "enc.conv" + std::to_string(i);
    weight(prefix + ".w", Shape{out, channels, 3, 3}, channels * 9, lrelu_gain);
    bias(prefix + ".b", out);
    channels = out;
  }
  const std::size_t flat = channels * config_.bottleneck_extent() * config_.bottleneck_extent();
  fc_index_ = params_.size();
  weight("enc.fc.w", Shape{2 * config_.latent_dim, flat}, flat, 1.0);
  bias("enc.fc.b", 2 * config_.latent_dim);

  dec_index_ = params_.size();
  channels = config_.latent_dim;
  const auto dec = config_.resolved_decoder();
  for (std::size_t i = 0; i < kLadderDepth; ++i) {
    const std::size_t out = dec[i];
    const std::string prefix = "dec.conv" + std::to_string(i);
    // A stride-2 transposed conv feeds each output from about a quarter of
    // its kernel taps.
    const std::size_t fan_in = std::max<std::size_t>(1, channels * 9 / 4);
    weight(prefix + ".w", Shape{channels, out, 3, 3}, fan_in, i + 1 < kLadderDepth ? lrelu_gain : 1.0);
    bias(prefix + ".b", out);
    channels = out;
  }
}

template <std::floating_point T>
BasicTensor<T>& BasicSegVae<T>::value(std::size_t index) const {
  return const_cast<BasicTensor<T>&>(params_[index].value);
}

template <std::floating_point T>
BasicLatentCode<T> BasicSegVae<T>::encode(const BasicTensor<T>& x, CounterRng& rng, EncodeOptions options) const {
  if (x.rank() != 4) throw DimensionError("encode: input must be [N, C, H, W], got " + shape_str(x.shape()));
  if (x.dim(1) != config_.in_channels) {
    throw DimensionError("encode: channel axis (1) is " + std::to_string(x.dim(1)) + ", model expects " +
                         std::to_string(config_.in_channels));
  }
  if (x.dim(2) != config_.extent) {
    throw DimensionError("encode: height axis (2) is " + std::to_string(x.dim(2)) + ", model expects " +
                         std::to_string(config_.extent));
  }
  if (x.dim(3) != config_.extent) {
    throw DimensionError("encode: width axis (3) is " + std::to_string(x.dim(3)) + ", model expects " +
                         std::to_string(config_.extent));
  }
  const T slope = static_cast<T>(config_.lrelu_slope);
  const std::size_t n = x.dim(0), k = config_.latent_dim;

  BasicTensor<T> h = x;
  for (std::size_t i = 0; i < kLadderDepth; ++i) {
    h = ops::leaky_relu(ops::conv2d(h, value(2 * i), value(2 * i + 1), 2), slope);
  }
  h = ops::reshape(h, Shape{n, h.numel() / n});
  BasicTensor<T> head = ops::linear(h, value(fc_index_), value(fc_index_ + 1));
  head = ops::dropout(head, static_cast<T>(config_.dropout_rate), options.training, rng);

  BasicLatentCode<T> code;
  code.mu = ops::slice_cols(head, 0, k);
  code.log_var = ops::slice_cols(head, k, 2 * k);
  if (!options.sample) {
    code.z = code.mu;
    return code;
  }
  std::vector<T> eps(n * k);
  for (T& e : eps) e = static_cast<T>(rng.normal());
  const auto sigma = ops::exp(ops::scale(code.log_var, T(0.5)));
  code.z = ops::add(code.mu, ops::mul(sigma, BasicTensor<T>::from(Shape{n, k}, std::move(eps))));
  return code;
}

template <std::floating_point T>
BasicSegOutput<T> BasicSegVae<T>::decode(const BasicTensor<T>& z) const {
  if (z.rank() != 2) throw DimensionError("decode: latent must be [N, K], got " + shape_str(z.shape()));
  if (z.dim(1) != config_.latent_dim) {
    throw DimensionError("decode: latent axis (1) is " + std::to_string(z.dim(1)) + ", model expects K=" +
                         std::to_string(config_.latent_dim));
  }
  const T slope = static_cast<T>(config_.lrelu_slope);
  BasicTensor<T> h = ops::reshape(z, Shape{z.dim(0), z.dim(1), 1, 1});
  h = ops::tile_spatial(h, config_.bottleneck_extent());
  for (std::size_t i = 0; i < kLadderDepth; ++i) {
    h = ops::conv_transpose2d(h, value(dec_index_ + 2 * i), value(dec_index_ + 2 * i + 1), 2);
    h = (i + 1 < kLadderDepth) ? ops::leaky_relu(h, slope) : ops::sigmoid(h);
  }
  return {h};
}

template <std::floating_point T>
BasicParameter<T>& BasicSegVae<T>::parameter(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw ContractError("model has no parameter named '" + name + "'");
}

template <std::floating_point T>
const BasicParameter<T>& BasicSegVae<T>::parameter(const std::string& name) const {
  return const_cast<BasicSegVae*>(this)->parameter(name);
}

template <std::floating_point T>
void BasicSegVae<T>::freeze_except(const std::vector<std::string>& trainable_prefixes) {
  for (auto& p : params_) {
    bool keep = false;
    for (const auto& prefix : trainable_prefixes) keep = keep || p.name.starts_with(prefix);
    p.frozen = !keep;
    p.value.set_requires_grad(keep);
  }
}

template <std::floating_point T>
void BasicSegVae<T>::unfreeze_all() {
  for (auto& p : params_) {
    p.frozen = false;
    if (!p.value.requires_grad()) p.value.set_requires_grad(true);
  }
}

template <std::floating_point T>
std::vector<BasicParameter<T>> BasicSegVae<T>::trainable() const {
  std::vector<BasicParameter<T>> out;
  for (const auto& p : params_)
    if (!p.frozen) out.push_back(p);
  return out;
}

template <std::floating_point T>
std::size_t BasicSegVae<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <std::floating_point T>
void BasicSegVae<T>::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

template <std::floating_point T>
std::vector<NamedTensor> BasicSegVae<T>::state() const {
  std::vector<NamedTensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back({p.name, p.value.template cast<float>()});
  return out;
}

template <std::floating_point T>
void BasicSegVae<T>::load_state(const std::vector<NamedTensor>& tensors) {
  for (auto& p : params_) {
    const Tensor& src = find_tensor(tensors, p.name);
    if (src.shape() != p.value.shape()) {
      throw ConfigError("checkpoint tensor '" + p.name + "' has shape " + shape_str(src.shape()) +
                        " but the model expects " + shape_str(p.value.shape()));
    }
  }
  for (auto& p : params_) {
    const Tensor& src = find_tensor(tensors, p.name);
    auto dst = p.value.data();
    auto s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(s[i]);
  }
}

template <std::floating_point T>
BasicTensor<T> kl_divergence(const BasicLatentCode<T>& code) {
  const std::size_t n = code.mu.dim(0);
  auto inner = ops::sub(ops::sub(ops::add_scalar(code.log_var, T(1)), ops::square(code.mu)), ops::exp(code.log_var));
  return ops::scale(ops::sum(inner), T(-0.5) / static_cast<T>(n));
}

template <std::floating_point T>
BasicTensor<T> soft_dice_loss(const BasicSegOutput<T>& out, const BasicTensor<T>& labels) {
  const auto& probs = out.probs;
  if (probs.rank() != 4 || labels.rank() != 4) {
    throw DimensionError("soft_dice_loss: expected [N, C, H, W] operands, got " + shape_str(probs.shape()) + " and " +
                         shape_str(labels.shape()));
  }
  const T eps = static_cast<T>(kDiceSmoothing);
  auto overlap = ops::sum_inner(ops::mul(probs, labels), 2);
  auto denom = ops::add_scalar(ops::add(ops::sum_inner(probs, 2), ops::sum_inner(labels, 2)), eps);
  auto ratio = ops::div(ops::add_scalar(ops::scale(overlap, T(2)), eps), denom);
  return ops::add_scalar(ops::scale(ops::mean(ratio), T(-1)), T(1));
}

template <std::floating_point T>
BasicTensor<T> mask_reconstruction_loss(const BasicSegOutput<T>& out, const BasicTensor<T>& labels) {
  const std::size_t n = out.probs.dim(0);
  return ops::scale(ops::sum(ops::square(ops::sub(labels, out.probs))), T(1) / static_cast<T>(n));
}

template <std::floating_point T>
BasicVaeSegLoss<T> vae_seg_loss(const BasicSegVae<T>& model, const BasicTensor<T>& images,
                                const BasicTensor<T>& labels, T beta, CounterRng& rng, EncodeOptions options) {
  BasicVaeSegLoss<T> r;
  r.code = model.encode(images, rng, options);
  r.output = model.decode(r.code.z);
  r.recon = mask_reconstruction_loss(r.output, labels);
  r.kl = kl_divergence(r.code);
  r.dice = soft_dice_loss(r.output, labels);
  r.total = ops::add(ops::add(r.recon, ops::scale(r.kl, beta)), r.dice);
  return r;
}

std::vector<std::uint8_t> hard_labels(std::span<const float> probs, std::size_t classes, std::size_t area) {
  if (probs.size() != classes * area) {
    throw DimensionError("hard_labels: " + std::to_string(probs.size()) + " values for " + std::to_string(classes) +
                         " classes of " + std::to_string(area) + " pixels");
  }
  std::vector<std::uint8_t> out(area, 0);
  for (std::size_t p = 0; p < area; ++p) {
    std::size_t best = 0;
    float best_v = probs[p];
    for (std::size_t c = 1; c < classes; ++c) {
      const float v = probs[c * area + p];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    out[p] = best_v < 0.5f ? 0 : static_cast<std::uint8_t>(best);
  }
  return out;
}

template class BasicSegVae<float>;
template class BasicSegVae<double>;
template BasicTensor<float> kl_divergence(const BasicLatentCode<float>&);
template BasicTensor<double> kl_divergence(const BasicLatentCode<double>&);
template BasicTensor<float> soft_dice_loss(const BasicSegOutput<float>&, const BasicTensor<float>&);
template BasicTensor<double> soft_dice_loss(const BasicSegOutput<double>&, const BasicTensor<double>&);
template BasicTensor<float> mask_reconstruction_loss(const BasicSegOutput<float>&, const BasicTensor<float>&);
template BasicTensor<double> mask_reconstruction_loss(const BasicSegOutput<double>&, const BasicTensor<double>&);
template BasicVaeSegLoss<float> vae_seg_loss(const BasicSegVae<float>&, const BasicTensor<float>&,
                                             const BasicTensor<float>&, float, CounterRng&, EncodeOptions);
template BasicVaeSegLoss<double> vae_seg_loss(const BasicSegVae<double>&, const BasicTensor<double>&,
                                              const BasicTensor<double>&, double, CounterRng&, EncodeOptions);

}  // namespace olva
