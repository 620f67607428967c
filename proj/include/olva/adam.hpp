#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "olva/tensor.hpp"

namespace olva {

/// A named trainable tensor. Frozen parameters must not be handed to an
/// optimizer.
template <std::floating_point T>
struct BasicParameter {
  std::string name;
  BasicTensor<T> value;
  bool frozen = false;
};

using Parameter = BasicParameter<float>;

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam. First/second moments are keyed by parameter name and
/// persist across step() calls. Gradients are read, never modified.
template <std::floating_point T>
class BasicAdam {
 public:
  explicit BasicAdam(AdamOptions options = {}) : options_(options) {}

  void step(std::span<BasicParameter<T>> params);

  /// Completed steps; the bias correction of the next step uses steps()+1.
  std::uint64_t steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }

  struct Moments {
    std::vector<T> first;
    std::vector<T> second;
  };
  const Moments* moments(const std::string& name) const;

 private:
  AdamOptions options_;
  std::uint64_t steps_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

using Adam = BasicAdam<float>;

}  // namespace olva
