#pragma once

// Experiment orchestration: oracle tables, baselines, training arms, epoch
// sweeps and the single-user to multi-user transfer protocol.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "isacbeam/bandit.hpp"
#include "isacbeam/beamcore.hpp"
#include "isacbeam/envsim.hpp"
#include "isacbeam/nn/qnetwork.hpp"

namespace isacbeam {

enum class Variant { kTrl, kDrl, kRandom, kExhaustive, kShared };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);
bool is_learning_variant(Variant v) noexcept;

// A step counts as optimal when its sum SE is within this of the oracle's.
inline constexpr double kOptimalTolerance = 1e-9;

struct StepRecord {
  std::size_t step = 0;
  double sum_se = 0.0;
  double oracle_se = 0.0;
  double reward = 0.0;
  BeamAssignment actions;
  bool optimal = false;
};

struct RunMetrics {
  std::string variant;
  std::vector<StepRecord> per_step;
  double average_se_regret = 0.0;
  double average_sum_se = 0.0;
  double optimal_action_fraction = 0.0;
  double mean_oracle_se = 0.0;
};

// Fills the aggregates from per_step.
RunMetrics summarize(std::string variant, std::vector<StepRecord> steps);

struct OracleTable {
  std::string scenario_hash;
  std::string codebook_hash;
  std::vector<OracleResult> per_step;  // indexed by step
};

std::string scenario_hash(const ScenarioTrace& trace);
std::string codebook_hash(const BeamCodebook& codebook);

// exhaustive_search at every step, parallel across steps.
OracleTable precompute_oracle(const ScenarioTrace& trace, const BeamCodebook& codebook,
                              std::size_t workers = 1);

void save_oracle_table(const OracleTable& table, const std::filesystem::path& path);
OracleTable load_oracle_table(const std::filesystem::path& path);

// Reuses <cache_dir>/oracle-<scenario>-<codebook>.bin when it loads and its
// hashes match; otherwise recomputes, rewrites the cache and reports why in
// `warning`.
OracleTable cached_oracle(const ScenarioTrace& trace, const BeamCodebook& codebook,
                          const std::filesystem::path& cache_dir, std::size_t workers,
                          std::string* warning = nullptr);

// Scores per-step joint actions on a split against the oracle.
RunMetrics score_actions(std::string variant, const ScenarioTrace& trace,
                         const BeamCodebook& codebook, const OracleTable& oracle, Split split,
                         const std::vector<BeamAssignment>& actions, double reward_exponent);

RunMetrics run_baseline_random(const ScenarioTrace& trace, const BeamCodebook& codebook,
                               const OracleTable& oracle, std::uint64_t seed,
                               double reward_exponent = 0.4);

RunMetrics run_baseline_exhaustive(const ScenarioTrace& trace, const BeamCodebook& codebook,
                                   const OracleTable& oracle, double reward_exponent = 0.4);

// Greedy rollout of trained agents on the test split.
RunMetrics evaluate_learner(std::string variant, const BanditLearner& learner,
                            const ScenarioTrace& trace, const BeamCodebook& codebook,
                            const OracleTable& oracle);

struct ExperimentSpec {
  std::string scenario = "s44";  // preset name or scenario file
  std::optional<ScenarioConfig> scenario_config;  // used instead of `scenario` when set
  Variant variant = Variant::kTrl;
  TrainingConfig training;
  nn::QNetworkConfig network;  // image, location and action sizes follow the scenario
  // Non-empty: train on interleaved epochs of this scenario and the main one
  // ("all scenarios" arm); evaluation stays on the main scenario.
  std::string auxiliary_scenario;
  std::filesystem::path output_dir;  // empty: nothing persisted
  std::filesystem::path cache_dir;   // empty: oracle not cached on disk
  std::size_t workers = 1;

  void validate() const;
};

// Resolved spec as JSON, for manifests.
std::string experiment_spec_to_json(const ExperimentSpec& spec);

// Preset name, or a path written by save_scenario.
ScenarioTrace load_scenario_source(const std::string& preset_or_file);
ScenarioTrace resolve_scenario(const ExperimentSpec& spec);

struct ExperimentResult {
  RunMetrics metrics;
  std::optional<BanditLearner> learner;  // learning variants only
  std::vector<TrainStepLog> training_log;
  std::string scenario_hash;
  std::string codebook_hash;
};

// Every failure is rethrown as PipelineError tagged with its stage
// (scenario, oracle, train, evaluate, persist).
ExperimentResult run_experiment(const ExperimentSpec& spec);

struct SweepPoint {
  std::size_t epochs = 0;
  RunMetrics metrics;
};

// One training trajectory up to the largest count, evaluated after each
// listed epoch count.
std::vector<SweepPoint> epoch_sweep(const ExperimentSpec& spec,
                                    const std::vector<std::size_t>& epoch_list);

struct TransferResult {
  RunMetrics before;
  RunMetrics after;
  BanditLearner learner;
};

// Throws TransferIncompatible naming the first mismatching field.
void check_transfer_compatible(const nn::QNetworkConfig& source, const nn::QNetworkConfig& target);

// Loads `source` into every agent of the target scenario, evaluates it,
// fine-tunes for `fine_tune_epochs` on fresh replay memories and evaluates
// again.
TransferResult transfer_experiment(const nn::QNetwork<float>& source, const ExperimentSpec& target,
                                   std::size_t fine_tune_epochs = 1);
TransferResult transfer_experiment(const std::filesystem::path& source_checkpoint,
                                   const ExperimentSpec& target, std::size_t fine_tune_epochs = 1);

}  // namespace isacbeam
