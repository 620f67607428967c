#include "olva/train.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "olva/errors.hpp"
#include "olva/ops.hpp"

namespace olva::train {
namespace {

constexpr std::uint64_t kInitTag = 0x696e6974;  // "init"
constexpr std::uint64_t kStepTag = 0x73746570;  // "step"

// Tolerated float rounding below zero for non-negative terms.
constexpr double kNegativeSlack = 1e-5;

void check_term(const char* name, double value, std::size_t iteration) {
  if (!std::isfinite(value) || value < -kNegativeSlack) {
    std::ostringstream os;
    os << "loss term " << name << " = " << value << " at iteration " << iteration;
    throw InvariantError(os.str());
  }
}

void check_breakdown(const LossBreakdown& b) {
  check_term("dice", b.dice, b.iteration);
  check_term("recon", b.recon, b.iteration);
  check_term("kl_s", b.kl_s, b.iteration);
  check_term("kl_t", b.kl_t, b.iteration);
  check_term("ot", b.ot, b.iteration);
  check_term("total", b.total, b.iteration);
}

void require_batch(const char* op, const char* which, const Tensor& t) {
  if (!t.defined() || t.rank() != 4 || t.dim(0) == 0) {
    throw ContractError(std::string(op) + ": " + which + " batch must be a non-empty [N, C, H, W] tensor");
  }
}

std::vector<std::size_t> draw_batch(CounterRng& rng, std::size_t pool, std::size_t count) {
  std::vector<std::size_t> idx(count);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.below(pool));
  return idx;
}

// Source-side objective shared by every regime, so that nullifying the
// target weights leaves a bitwise-identical computation.
struct SourceTerms {
  Tensor total;
  Tensor recon;
  Tensor kl;
  Tensor dice;
  LatentCode code;
};

SourceTerms source_terms(const SegVae& model, const Tensor& images, const Tensor& labels, const LossWeights& w,
                         CounterRng& rng) {
  SourceTerms s;
  s.code = model.encode(images, rng);
  const SegOutput out = model.decode(s.code.z);
  s.recon = mask_reconstruction_loss(out, labels);
  s.kl = kl_divergence(s.code);
  s.dice = soft_dice_loss(out, labels);
  s.total = ops::add(ops::add(ops::scale(s.recon, static_cast<float>(w.recon)),
                              ops::scale(s.kl, static_cast<float>(w.kl_source))),
                     ops::scale(s.dice, static_cast<float>(w.dice)));
  return s;
}

const Tensor& latent_of(const LatentCode& code, LatentSource source) {
  return source == LatentSource::mu ? code.mu : code.z;
}

ot::Coupling solve_plan(const ot::CostMatrix& cost, const TrainConfig& cfg) {
  const auto rows = ot::uniform_marginal(cost.rows);
  const auto cols = ot::uniform_marginal(cost.cols);
  if (cfg.ot_solver == OtSolver::sinkhorn) {
    ot::SinkhornOptions o;
    o.epsilon = cfg.sinkhorn_epsilon;
    return ot::solve_sinkhorn(cost, rows, cols, o);
  }
  return ot::solve_exact(cost, rows, cols);
}

ot::Coupling uniform_plan(const ot::CostMatrix& cost) {
  ot::Coupling c;
  c.rows = cost.rows;
  c.cols = cost.cols;
  c.row_marginal = ot::uniform_marginal(cost.rows);
  c.col_marginal = ot::uniform_marginal(cost.cols);
  c.gamma.assign(cost.rows * cost.cols, 1.0 / static_cast<double>(cost.rows * cost.cols));
  c.objective = ot::transport_cost(cost, c);
  return c;
}

// Alignment between two latent batches under a plan solved on detached
// copies. Returns the weighted term and fills the diagnostics.
Tensor alignment_term(const Tensor& source_latent, const Tensor& target_latent, double weight,
                      const TrainConfig& cfg, const StepOptions* options, LossBreakdown& b) {
  // Unit-scaled cost: the plan is invariant to positive scaling.
  const ot::CostMatrix cost = ot::cost_matrix(source_latent.detach(), target_latent.detach(), 1.0);
  const ot::Coupling plan =
      options != nullptr && options->force_uniform_coupling ? uniform_plan(cost) : solve_plan(cost, cfg);
  b.ot_plan = weight * plan.objective;
  b.ot_uniform = weight * std::accumulate(cost.values.begin(), cost.values.end(), 0.0) /
                 static_cast<double>(cost.values.size());
  if (options != nullptr && options->coupling_out != nullptr) *options->coupling_out = plan;
  const Tensor pair = ops::weighted_pair_sqdist(source_latent, target_latent, plan.as_tensor<float>());
  return ops::scale(pair, static_cast<float>(weight));
}

void apply_step(TrainState& state, Tape& tape, const Tensor& total) {
  state.model.zero_grad();
  tape.backward(total);
  auto params = state.model.trainable();
  state.optimizer.step(params);
}

}  // namespace

std::string to_string(OtSolver s) { return s == OtSolver::exact ? "exact" : "sinkhorn"; }
std::string to_string(LatentSource s) { return s == LatentSource::mu ? "mu" : "sampled_z"; }

OtSolver ot_solver_from_string(const std::string& s) {
  if (s == "exact") return OtSolver::exact;
  if (s == "sinkhorn") return OtSolver::sinkhorn;
  throw ConfigError("unknown ot_solver '" + s + "' (expected exact or sinkhorn)");
}

LatentSource latent_source_from_string(const std::string& s) {
  if (s == "sampled_z") return LatentSource::sampled_z;
  if (s == "mu") return LatentSource::mu;
  throw ConfigError("unknown latent_source '" + s + "' (expected sampled_z or mu)");
}

void TrainConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("train.alpha must be > 0");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("train.beta must be >= 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train.learning_rate must be > 0");
  if (source_batch == 0) throw ConfigError("train.source_batch must be >= 1");
  if (target_batch == 0) throw ConfigError("train.target_batch must be >= 1");
  if (source_batch > ot::kMaxExactSide || target_batch > ot::kMaxExactSide) {
    throw ConfigError("train batches are limited to " + std::to_string(ot::kMaxExactSide) + " samples");
  }
  if (ot_solver == OtSolver::sinkhorn && !(sinkhorn_epsilon > 0.0)) {
    throw ConfigError("train.sinkhorn_epsilon must be > 0");
  }
  if (history_capacity == 0) throw ConfigError("train.history_capacity must be >= 1");
}

LossWeights LossWeights::olva(const TrainConfig& cfg) {
  return {1.0, 1.0, cfg.beta, cfg.beta, cfg.alpha};
}

LossWeights LossWeights::latent_only(const TrainConfig& cfg) {
  return {0.0, 0.0, cfg.beta, cfg.beta, cfg.alpha};
}

TrainState::TrainState(const VaeConfig& vae, const TrainConfig& cfg)
    : model(vae, hash_seed({cfg.seed, kInitTag})),
      optimizer(AdamOptions{cfg.learning_rate}),
      history_capacity(cfg.history_capacity) {}

void TrainState::remember(const LossBreakdown& b) {
  history.push_back(b);
  while (history.size() > history_capacity) history.pop_front();
}

StepStreams StepStreams::at(std::uint64_t seed, std::size_t iteration, std::uint64_t phase) {
  const CounterRng base(hash_seed({seed, kStepTag, phase, static_cast<std::uint64_t>(iteration)}));
  return {base.derive({1}), base.derive({2}), base.derive({3}), base.derive({4})};
}

LossBreakdown olva_step(TrainState& state, const Tensor& source_images, const Tensor& source_labels,
                        const Tensor& target_images, const TrainConfig& cfg, StepStreams streams,
                        const StepOptions& options) {
  require_batch("olva_step", "source", source_images);
  require_batch("olva_step", "target", target_images);
  const LossWeights& w = options.weights;
  LossBreakdown b;
  b.iteration = state.iteration;

  Tape tape;
  TapeGuard guard(tape);
  SourceTerms s = source_terms(state.model, source_images, source_labels, w, streams.source_encode);
  Tensor total = s.total;
  b.dice = s.dice.item();
  b.recon = s.recon.item();
  b.kl_s = s.kl.item();

  if (w.kl_target != 0.0 || w.ot != 0.0) {
    const LatentCode t = state.model.encode(target_images, streams.target_encode);
    const Tensor kl_t = kl_divergence(t);
    b.kl_t = kl_t.item();
    total = ops::add(total, ops::scale(kl_t, static_cast<float>(w.kl_target)));
    if (w.ot != 0.0) {
      const Tensor ot_term = alignment_term(latent_of(s.code, cfg.latent_source),
                                            latent_of(t, cfg.latent_source), w.ot, cfg, &options, b);
      b.ot = ot_term.item();
      total = ops::add(total, ot_term);
    }
  }
  b.total = total.item();
  check_breakdown(b);
  apply_step(state, tape, total);
  return b;
}

LossBreakdown supervised_step(TrainState& state, const Tensor& images, const Tensor& labels, const TrainConfig& cfg,
                              StepStreams streams) {
  require_batch("supervised_step", "labeled", images);
  LossBreakdown b;
  b.iteration = state.iteration;
  Tape tape;
  TapeGuard guard(tape);
  const LossWeights w{1.0, 1.0, cfg.beta, 0.0, 0.0};
  SourceTerms s = source_terms(state.model, images, labels, w, streams.source_encode);
  b.dice = s.dice.item();
  b.recon = s.recon.item();
  b.kl_s = s.kl.item();
  b.total = s.total.item();
  check_breakdown(b);
  apply_step(state, tape, s.total);
  return b;
}

LossBreakdown latent_step(TrainState& state, const Tensor& source_images, const Tensor& target_images,
                          const TrainConfig& cfg, StepStreams streams) {
  require_batch("latent_step", "source", source_images);
  require_batch("latent_step", "target", target_images);
  const LossWeights w = LossWeights::latent_only(cfg);
  LossBreakdown b;
  b.iteration = state.iteration;
  Tape tape;
  TapeGuard guard(tape);
  const LatentCode s = state.model.encode(source_images, streams.source_encode);
  const LatentCode t = state.model.encode(target_images, streams.target_encode);
  const Tensor kl_s = kl_divergence(s);
  const Tensor kl_t = kl_divergence(t);
  const Tensor ot_term =
      alignment_term(latent_of(s, cfg.latent_source), latent_of(t, cfg.latent_source), w.ot, cfg, nullptr, b);
  const Tensor total = ops::add(ops::add(ops::scale(kl_s, static_cast<float>(w.kl_source)),
                                         ops::scale(kl_t, static_cast<float>(w.kl_target))),
                                ot_term);
  b.kl_s = kl_s.item();
  b.kl_t = kl_t.item();
  b.ot = ot_term.item();
  b.total = total.item();
  check_breakdown(b);
  apply_step(state, tape, total);
  return b;
}

void run_steps(TrainState& state, const TrainConfig& cfg, Mode mode, const synth::Dataset& labeled,
               const synth::Dataset& target, const Callbacks& callbacks) {
  cfg.validate();
  if (labeled.empty()) throw ContractError("train: labeled dataset is empty");
  for (const auto& s : labeled)
    if (!s.label) throw ContractError("train: labeled dataset contains unlabeled samples");
  if (mode == Mode::olva && target.empty()) throw ContractError("train: target dataset is empty");

  const StepOptions options{LossWeights::olva(cfg)};
  for (std::size_t k = 0; k < cfg.iterations; ++k) {
    StepStreams streams = StepStreams::at(cfg.seed, state.iteration);
    const auto src = draw_batch(streams.source_batch, labeled.size(), cfg.source_batch);
    const Tensor images = synth::stack_images(labeled, src);
    const Tensor labels = synth::stack_labels(labeled, src);
    LossBreakdown b;
    if (mode == Mode::supervised) {
      b = supervised_step(state, images, labels, cfg, streams);
    } else {
      const auto tgt = draw_batch(streams.target_batch, target.size(), cfg.target_batch);
      b = olva_step(state, images, labels, synth::stack_images(target, tgt), cfg, streams, options);
    }
    ++state.iteration;
    state.remember(b);
    if (callbacks.on_step) callbacks.on_step(b);
    if (cfg.checkpoint_every != 0 && state.iteration % cfg.checkpoint_every == 0 && callbacks.on_checkpoint) {
      callbacks.on_checkpoint(state);
    }
  }
}

TrainState train(const VaeConfig& vae, const TrainConfig& cfg, Mode mode, const synth::Dataset& labeled,
                 const synth::Dataset& target, const Callbacks& callbacks) {
  TrainState state(vae, cfg);
  run_steps(state, cfg, mode, labeled, target, callbacks);
  return state;
}

TrainState adapt_few(const TrainState& trained, const synth::Dataset& source, const synth::Dataset& target_scan,
                     const TrainConfig& cfg, const Callbacks& callbacks) {
  cfg.validate();
  if (source.empty()) throw ContractError("adapt_few: source dataset is empty");
  if (target_scan.empty()) throw ContractError("adapt_few: target dataset is empty");

  TrainState state(trained.model.config(), cfg);
  state.model.load_state(trained.model.state());
  state.model.freeze_except({"enc.fc."});
  state.iteration = 0;

  for (std::size_t k = 0; k < cfg.adapt_iterations; ++k) {
    StepStreams streams = StepStreams::at(cfg.seed, state.iteration, 1);
    const auto src = draw_batch(streams.source_batch, source.size(), cfg.source_batch);
    const auto tgt = draw_batch(streams.target_batch, target_scan.size(), cfg.target_batch);
    const LossBreakdown b = latent_step(state, synth::stack_images(source, src),
                                        synth::stack_images(target_scan, tgt), cfg, streams);
    ++state.iteration;
    state.remember(b);
    if (callbacks.on_step) callbacks.on_step(b);
  }
  return state;
}

Tensor predict(const SegVae& model, const Tensor& images) {
  CounterRng unused;
  const LatentCode code = model.encode(images, unused, EncodeOptions{false, false});
  return model.decode(code.mu).probs;
}

Tensor encode_means(const SegVae& model, const Tensor& images) {
  CounterRng unused;
  return model.encode(images, unused, EncodeOptions{false, false}).mu;
}

}  // namespace olva::train
