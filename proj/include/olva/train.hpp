#pragma once

// Alternating mini-batch optimization: with the networks fixed, solve the
// transport plan between source and target latents; with the plan fixed,
// take one Adam step on the combined loss.

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "olva/adam.hpp"
#include "olva/ot.hpp"
#include "olva/synth.hpp"
#include "olva/vae.hpp"

namespace olva::train {

enum class OtSolver { exact, sinkhorn };
enum class LatentSource { sampled_z, mu };

std::string to_string(OtSolver s);
std::string to_string(LatentSource s);
OtSolver ot_solver_from_string(const std::string& s);
LatentSource latent_source_from_string(const std::string& s);

struct TrainConfig {
  double alpha = 10.0;
  double beta = 0.1;
  double learning_rate = 1e-4;
  std::size_t source_batch = 32;
  std::size_t target_batch = 32;
  std::size_t iterations = 2000;
  OtSolver ot_solver = OtSolver::exact;
  double sinkhorn_epsilon = 0.01;
  LatentSource latent_source = LatentSource::sampled_z;
  std::uint64_t seed = 0;
  /// 0 disables intermediate checkpoints.
  std::size_t checkpoint_every = 0;
  /// Steps of the few-target regime (only the latent head is updated).
  std::size_t adapt_iterations = 500;
  std::size_t history_capacity = 256;

  void validate() const;
};

/// Multipliers applied to each term of the combined objective. The OT term
/// is sum_ij gamma_ij * ot * ||zs_i - zt_j||^2.
struct LossWeights {
  double dice = 1.0;
  double recon = 1.0;
  double kl_source = 0.1;
  double kl_target = 0.1;
  double ot = 10.0;

  static LossWeights olva(const TrainConfig& cfg);
  /// Only the latent-space terms (few-target regime).
  static LossWeights latent_only(const TrainConfig& cfg);
};

/// Unweighted dice/recon/KL values, the weighted OT term, and the weighted
/// total. ot_plan and ot_uniform are the weighted OT term recomputed in
/// double under the solved plan and under the independent coupling on the
/// same batch (diagnostics, never optimized).
struct LossBreakdown {
  std::size_t iteration = 0;
  double dice = 0.0;
  double recon = 0.0;
  double kl_s = 0.0;
  double kl_t = 0.0;
  double ot = 0.0;
  double total = 0.0;
  double ot_plan = 0.0;
  double ot_uniform = 0.0;
};

struct TrainState {
  SegVae model;
  Adam optimizer;
  std::size_t iteration = 0;
  std::deque<LossBreakdown> history;
  std::size_t history_capacity = 256;

  TrainState(const VaeConfig& vae, const TrainConfig& cfg);
  void remember(const LossBreakdown& b);
};

/// Per-iteration random streams, derived from (seed, iteration) so a
/// trajectory does not depend on which terms are active.
struct StepStreams {
  CounterRng source_batch;
  CounterRng target_batch;
  CounterRng source_encode;
  CounterRng target_encode;

  static StepStreams at(std::uint64_t seed, std::size_t iteration, std::uint64_t phase = 0);
};

struct StepOptions {
  LossWeights weights;
  /// Replace the solved plan by the independent coupling (tests).
  bool force_uniform_coupling = false;
  /// Optional sink for the plan used by this step.
  ot::Coupling* coupling_out = nullptr;
};

/// One alternating step on a labeled source batch and an unlabeled target
/// batch. Throws ContractError for empty batches and InvariantError when a
/// loss term is non-finite or negative.
LossBreakdown olva_step(TrainState& state, const Tensor& source_images, const Tensor& source_labels,
                        const Tensor& target_images, const TrainConfig& cfg, StepStreams streams,
                        const StepOptions& options);

/// One step of recon + dice + beta * KL on a labeled batch.
LossBreakdown supervised_step(TrainState& state, const Tensor& images, const Tensor& labels,
                              const TrainConfig& cfg, StepStreams streams);

/// One step updating only non-frozen parameters with the latent terms
/// (beta * KL_s + beta * KL_t + OT).
LossBreakdown latent_step(TrainState& state, const Tensor& source_images, const Tensor& target_images,
                          const TrainConfig& cfg, StepStreams streams);

enum class Mode {
  supervised,  // labeled set only; the target set is ignored
  olva,        // full combined objective
};

struct Callbacks {
  std::function<void(const LossBreakdown&)> on_step;
  std::function<void(const TrainState&)> on_checkpoint;
};

/// Runs cfg.iterations steps with batches drawn uniformly with replacement.
TrainState train(const VaeConfig& vae, const TrainConfig& cfg, Mode mode, const synth::Dataset& labeled,
                 const synth::Dataset& target, const Callbacks& callbacks = {});

/// Continues `state` for cfg.iterations steps (useful for resuming).
void run_steps(TrainState& state, const TrainConfig& cfg, Mode mode, const synth::Dataset& labeled,
               const synth::Dataset& target, const Callbacks& callbacks = {});

/// Few-target regime: all parameters except the latent head are frozen and
/// cfg.adapt_iterations latent_steps are taken. The returned state has the
/// same parameters as the input except enc.fc.*.
TrainState adapt_few(const TrainState& trained, const synth::Dataset& source, const synth::Dataset& target_scan,
                     const TrainConfig& cfg, const Callbacks& callbacks = {});

/// Deterministic inference: dropout off and z = mu.
Tensor predict(const SegVae& model, const Tensor& images);
/// Latent means for a batch of images.
Tensor encode_means(const SegVae& model, const Tensor& images);

}  // namespace olva::train
