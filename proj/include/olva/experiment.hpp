#pragma once

// Experiment configuration and the command implementations behind the
// `olva` executable. Commands are plain functions so tests can drive them
// in-process.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "olva/metrics.hpp"
#include "olva/synth.hpp"
#include "olva/train.hpp"
#include "olva/vae.hpp"

namespace olva::experiment {

enum class Regime { oracle, no_adapt, olva, adapt_few };

std::string to_string(Regime r);
Regime regime_from_string(const std::string& s);

struct DataSection {
  std::filesystem::path dir = "data";
  std::size_t scans = 40;
  std::size_t slices_per_scan = 16;
  std::uint64_t source_seed = 101;
  std::uint64_t target_seed = 202;
  std::uint64_t split_seed = 7;
  synth::SynthConfig synth;
};

struct EvalSection {
  double split_fraction = 0.8;
  std::filesystem::path output_dir = "runs/default";
  std::size_t batch_size = 64;
};

struct ExperimentConfig {
  DataSection data;
  VaeConfig model;
  train::TrainConfig train;
  EvalSection eval;
  Regime regime = Regime::olva;
  /// Unlabeled target scans drawn for the few-target regime.
  std::size_t adapt_scans = 1;
  /// No-adaptation checkpoint the few-target regime starts from.
  std::optional<std::filesystem::path> init_checkpoint;

  /// Throws ConfigError on any violated invariant.
  void validate() const;
};

/// Parses a JSON document. Missing keys take defaults; unknown keys and
/// ill-typed values throw ConfigError naming the key.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Fully resolved JSON (every field present), stable key order.
std::string dump_config(const ExperimentConfig& config);

// Dataset file names inside DataSection::dir.
inline constexpr const char* kSourceTrain = "source_train.olvt";
inline constexpr const char* kSourceEval = "source_eval.olvt";
inline constexpr const char* kTargetTrain = "target_train.olvt";
inline constexpr const char* kTargetEval = "target_eval.olvt";
inline constexpr const char* kResolvedConfig = "resolved_config.json";

struct Splits {
  synth::Dataset source_train, source_eval, target_train, target_eval;
};

/// Generates both domains and splits them by scan, in memory.
Splits make_splits(const ExperimentConfig& config);
/// Reads the four split files written by gen_data. Missing files throw
/// ConfigError naming the path.
Splits load_splits(const std::filesystem::path& dir);
/// Resolves a dataset name (source_train, source_eval, target_train,
/// target_eval) against loaded splits.
const synth::Dataset& named_split(const Splits& splits, const std::string& name);

/// Scans used by the few-target regime, drawn from `target_train` by seed.
synth::Dataset few_target_scans(const synth::Dataset& target_train, std::size_t count, std::uint64_t seed);

struct RunResult {
  train::TrainState state;
  std::vector<train::LossBreakdown> trace;
};

/// Trains one regime on in-memory splits. `base` is the no-adaptation state
/// required by adapt_few (ContractError if absent).
RunResult run_regime(const ExperimentConfig& config, const Splits& splits, const train::TrainState* base = nullptr,
                     const train::Callbacks& extra = {});

metrics::EvalReport evaluate_model(const SegVae& model, const synth::Dataset& dataset, std::size_t batch_size = 64);

/// "iteration,dice,recon,kl_s,kl_t,ot,total" then one row per step.
std::string loss_csv(const std::vector<train::LossBreakdown>& trace);

/// Top-two principal components of the rows of `points` [N, K]. Returns
/// N x 2 projections of the centered rows; each component's sign is fixed
/// so that its largest-magnitude loading is positive.
std::vector<std::array<double, 2>> pca2(const std::vector<std::vector<double>>& points);

// Command-line options shared by the subcommands.
struct CommandOptions {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> checkpoint;
  std::string dataset;
  std::string grid;
  std::string regime;  // overrides the configured regime when set
  bool quiet = false;
};

// Each returns a process exit code: 0 success, 1 internal invariant
// violation, 2 user or configuration error.
int cmd_gen_data(const CommandOptions& options);
int cmd_train(const CommandOptions& options);
int cmd_eval(const CommandOptions& options);
int cmd_export_latents(const CommandOptions& options);
int cmd_ablate(const CommandOptions& options);

/// Full command-line entry point (argv[0] is the program name).
int run_cli(int argc, char** argv);

}  // namespace olva::experiment
