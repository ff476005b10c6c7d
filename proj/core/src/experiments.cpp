#include "isacbeam/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <random>
#include <type_traits>

#include <json.hpp>

#include "isacbeam/error.hpp"
#include "isacbeam/metrics_io.hpp"
#include "isacbeam/nn/checkpoint.hpp"

namespace isacbeam {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

template <typename F>
auto in_stage(const char* stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(stage, e.what());
  }
}

void apply_variant(Variant v, TrainingConfig& training, nn::QNetworkConfig& network) {
  switch (v) {
    case Variant::kTrl:
      network.bypass_mmt = false;
      break;
    case Variant::kDrl:
      network.bypass_mmt = true;
      break;
    case Variant::kShared:
      training.shared_agent = true;
      break;
    case Variant::kRandom:
    case Variant::kExhaustive:
      break;
  }
}

json training_to_json(const TrainingConfig& t) {
  return json{{"epochs", t.epochs},
              {"train_interval", t.train_interval},
              {"batch_size", t.batch_size},
              {"replay_capacity", t.replay_capacity},
              {"learning_rate", t.learning_rate},
              {"reward_exponent", t.reward_exponent},
              {"eps_start", t.eps_start},
              {"eps_end", t.eps_end},
              {"seed", t.seed},
              {"context_all_locations", t.context_all_locations},
              {"shared_agent", t.shared_agent}};
}

struct TrainingSetup {
  ScenarioTrace trace;
  BeamCodebook codebook;
  std::optional<ScenarioTrace> aux;
  BeamCodebook aux_codebook;
};

TrainingSetup load_setup(const ExperimentSpec& spec) {
  TrainingSetup s;
  s.trace = resolve_scenario(spec);
  s.codebook = scenario_codebook(s.trace.config);
  if (!spec.auxiliary_scenario.empty()) {
    s.aux = load_scenario_source(spec.auxiliary_scenario);
    const ScenarioConfig& a = s.aux->config;
    const ScenarioConfig& m = s.trace.config;
    if (a.image_height != m.image_height || a.image_width != m.image_width) {
      throw ConfigError("auxiliary scenario image size differs from the main scenario");
    }
    if (a.beam_subset.length() != m.beam_subset.length()) {
      throw ConfigError("auxiliary scenario has a different number of beams");
    }
    if (a.n_users > m.n_users) {
      throw ConfigError("auxiliary scenario has more users than the main scenario");
    }
    if (spec.training.context_all_locations && a.n_users != m.n_users) {
      throw ConfigError("context_all_locations needs equal user counts across scenarios");
    }
    s.aux_codebook = scenario_codebook(a);
  }
  return s;
}

std::size_t steps_per_epoch(const TrainingSetup& s) {
  return s.trace.config.train_steps() + (s.aux ? s.aux->config.train_steps() : 0);
}

// One epoch: the main scenario, then (if any) the auxiliary one with the
// serving agent rotated so every agent sees single-user data.
void run_epoch(BanditLearner& learner, const TrainingSetup& s, std::size_t epoch,
               std::vector<TrainStepLog>& log) {
  auto part = train_epoch(learner, s.trace, s.codebook, epoch);
  log.insert(log.end(), part.begin(), part.end());
  if (s.aux) {
    part = train_epoch(learner, *s.aux, s.aux_codebook, epoch, epoch % learner.agents.size());
    log.insert(log.end(), part.begin(), part.end());
  }
}

OracleTable oracle_for(const ExperimentSpec& spec, const ScenarioTrace& trace,
                       const BeamCodebook& codebook) {
  if (spec.cache_dir.empty()) return precompute_oracle(trace, codebook, spec.workers);
  std::string warning;
  OracleTable table = cached_oracle(trace, codebook, spec.cache_dir, spec.workers, &warning);
  if (!warning.empty()) std::cerr << "warning: " << warning << '\n';
  return table;
}

void save_agents(const BanditLearner& learner, const fs::path& dir, const std::string& suffix,
                 std::vector<std::string>& files) {
  for (std::size_t k = 0; k < learner.agents.size(); ++k) {
    const std::string name = "agent-" + std::to_string(k) + suffix + ".ckpt";
    nn::save_checkpoint(learner.agents[k].network, dir / name);
    files.push_back(name);
  }
}

void persist_manifest(const ExperimentSpec& spec, const std::string& command,
                      const std::string& started, const std::string& scenario_h,
                      const std::string& codebook_h, const std::vector<std::string>& files) {
  RunManifest m;
  m.command = command;
  m.config_json = experiment_spec_to_json(spec);
  m.seed = spec.training.seed;
  m.scenario_hash = scenario_h;
  m.codebook_hash = codebook_h;
  m.started_at = started;
  m.finished_at = utc_timestamp();
  m.revision = build_revision();
  write_manifest(std::move(m), files, spec.output_dir);
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kTrl: return "trl";
    case Variant::kDrl: return "drl";
    case Variant::kRandom: return "random";
    case Variant::kExhaustive: return "exhaustive";
    case Variant::kShared: return "shared";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::kTrl, Variant::kDrl, Variant::kRandom, Variant::kExhaustive,
                    Variant::kShared}) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + name +
                    "' (expected trl, drl, random, exhaustive or shared)");
}

bool is_learning_variant(Variant v) noexcept {
  return v == Variant::kTrl || v == Variant::kDrl || v == Variant::kShared;
}

RunMetrics summarize(std::string variant, std::vector<StepRecord> steps) {
  RunMetrics m;
  m.variant = std::move(variant);
  m.per_step = std::move(steps);
  if (m.per_step.empty()) return m;
  double regret = 0.0, sum = 0.0, oracle = 0.0;
  std::size_t optimal = 0;
  for (const StepRecord& r : m.per_step) {
    regret += r.oracle_se - r.sum_se;
    sum += r.sum_se;
    oracle += r.oracle_se;
    optimal += r.optimal ? 1 : 0;
  }
  const double n = static_cast<double>(m.per_step.size());
  m.average_se_regret = regret / n;
  m.average_sum_se = sum / n;
  m.mean_oracle_se = oracle / n;
  m.optimal_action_fraction = static_cast<double>(optimal) / n;
  return m;
}

RunMetrics score_actions(std::string variant, const ScenarioTrace& trace,
                         const BeamCodebook& codebook, const OracleTable& oracle, Split split,
                         const std::vector<BeamAssignment>& actions, double reward_exponent) {
  const StepRange range = split_range(trace, split);
  if (oracle.per_step.size() != trace.states.size()) {
    throw InvalidArgument("oracle table does not cover the scenario");
  }
  if (actions.size() != range.size()) {
    throw InvalidArgument("expected one joint action per step of the split");
  }
  std::vector<StepRecord> records;
  records.reserve(range.size());
  for (std::size_t s = range.begin; s < range.end; ++s) {
    const EnvironmentState& state = trace.states[s];
    const BeamAssignment& a = actions[s - range.begin];
    const std::vector<double> se =
        per_user_spectral_efficiency(state.channels, a, codebook, trace.budget);
    StepRecord r;
    r.step = state.step;
    for (double v : se) r.sum_se += v;
    r.oracle_se = oracle.per_step[s].sum_se;
    r.reward = shaped_reward(se, state.distances, reward_exponent);
    r.actions = a;
    r.optimal = std::abs(r.oracle_se - r.sum_se) <= kOptimalTolerance;
    records.push_back(std::move(r));
  }
  return summarize(std::move(variant), std::move(records));
}

RunMetrics run_baseline_random(const ScenarioTrace& trace, const BeamCodebook& codebook,
                               const OracleTable& oracle, std::uint64_t seed,
                               double reward_exponent) {
  const StepRange range = split_range(trace, Split::kTest);
  Rng rng = make_rng(seed, {6});
  std::uniform_int_distribution<std::size_t> pick(0, codebook.size() - 1);
  std::vector<BeamAssignment> actions(range.size());
  for (auto& a : actions) {
    a.actions.resize(trace.config.n_users);
    for (auto& x : a.actions) x = pick(rng);
  }
  return score_actions("random", trace, codebook, oracle, Split::kTest, actions, reward_exponent);
}

RunMetrics run_baseline_exhaustive(const ScenarioTrace& trace, const BeamCodebook& codebook,
                                   const OracleTable& oracle, double reward_exponent) {
  const StepRange range = split_range(trace, Split::kTest);
  if (oracle.per_step.size() != trace.states.size()) {
    throw InvalidArgument("oracle table does not cover the scenario");
  }
  std::vector<BeamAssignment> actions;
  for (std::size_t s = range.begin; s < range.end; ++s) {
    actions.push_back(oracle.per_step[s].assignment);
  }
  return score_actions("exhaustive", trace, codebook, oracle, Split::kTest, actions,
                       reward_exponent);
}

RunMetrics evaluate_learner(std::string variant, const BanditLearner& learner,
                            const ScenarioTrace& trace, const BeamCodebook& codebook,
                            const OracleTable& oracle) {
  RolloutLog rollout = greedy_rollout(learner, trace, codebook, Split::kTest);
  return score_actions(std::move(variant), trace, codebook, oracle, Split::kTest, rollout.actions,
                       learner.config.reward_exponent);
}

void ExperimentSpec::validate() const {
  if (scenario.empty() && !scenario_config) throw ConfigError("no scenario given");
  if (scenario_config) scenario_config->validate();
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (is_learning_variant(variant)) {
    training.validate();
  } else if (!auxiliary_scenario.empty()) {
    throw ConfigError("auxiliary_scenario only applies to learning variants");
  }
}

std::string experiment_spec_to_json(const ExperimentSpec& spec) {
  json j{{"variant", variant_name(spec.variant)},
         {"scenario", spec.scenario},
         {"auxiliary_scenario", spec.auxiliary_scenario},
         {"training", training_to_json(spec.training)},
         {"network", json::parse(nn::network_config_to_json(spec.network))},
         {"workers", spec.workers}};
  if (spec.scenario_config) {
    j["scenario_config"] = json::parse(scenario_config_to_json(*spec.scenario_config));
  }
  return j.dump();
}

ScenarioTrace load_scenario_source(const std::string& preset_or_file) {
  const auto names = scenario_preset_names();
  if (std::find(names.begin(), names.end(), preset_or_file) != names.end()) {
    return build_scenario(scenario_preset(preset_or_file));
  }
  if (!fs::exists(preset_or_file)) {
    throw ConfigError("'" + preset_or_file + "' is neither a preset nor a scenario file");
  }
  return load_scenario(preset_or_file);
}

ScenarioTrace resolve_scenario(const ExperimentSpec& spec) {
  if (spec.scenario_config) return build_scenario(*spec.scenario_config);
  return load_scenario_source(spec.scenario);
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  in_stage("scenario", [&] { spec.validate(); });
  const std::string started = utc_timestamp();
  const TrainingSetup setup = in_stage("scenario", [&] { return load_setup(spec); });
  const OracleTable oracle =
      in_stage("oracle", [&] { return oracle_for(spec, setup.trace, setup.codebook); });

  ExperimentResult result;
  result.scenario_hash = oracle.scenario_hash;
  result.codebook_hash = oracle.codebook_hash;
  TrainingConfig training = spec.training;
  nn::QNetworkConfig network = spec.network;
  apply_variant(spec.variant, training, network);

  if (is_learning_variant(spec.variant)) {
    in_stage("train", [&] {
      const nn::QNetworkConfig netcfg = network_config_for(setup.trace.config, training, network);
      BanditLearner learner = make_learner(setup.trace.config, training, netcfg,
                                           training.epochs * steps_per_epoch(setup));
      for (std::size_t e = 0; e < training.epochs; ++e) {
        run_epoch(learner, setup, e, result.training_log);
      }
      result.learner = std::move(learner);
    });
  }

  result.metrics = in_stage("evaluate", [&] {
    switch (spec.variant) {
      case Variant::kRandom:
        return run_baseline_random(setup.trace, setup.codebook, oracle, spec.training.seed,
                                   spec.training.reward_exponent);
      case Variant::kExhaustive:
        return run_baseline_exhaustive(setup.trace, setup.codebook, oracle,
                                       spec.training.reward_exponent);
      default:
        return evaluate_learner(variant_name(spec.variant), *result.learner, setup.trace,
                                setup.codebook, oracle);
    }
  });

  if (!spec.output_dir.empty()) {
    in_stage("persist", [&] {
      fs::create_directories(spec.output_dir);
      std::vector<std::string> files = write_metrics(result.metrics, spec.output_dir);
      if (result.learner) {
        write_train_log_csv(result.training_log, spec.output_dir / "train_log.csv");
        files.push_back("train_log.csv");
        save_agents(*result.learner, spec.output_dir, "", files);
      }
      persist_manifest(spec, "train", started, result.scenario_hash, result.codebook_hash, files);
    });
  }
  return result;
}

std::vector<SweepPoint> epoch_sweep(const ExperimentSpec& spec,
                                    const std::vector<std::size_t>& epoch_list) {
  in_stage("scenario", [&] {
    spec.validate();
    if (!is_learning_variant(spec.variant)) throw ConfigError("epoch sweeps need a learning variant");
    if (epoch_list.empty()) throw ConfigError("epoch list is empty");
    if (epoch_list.front() == 0) throw ConfigError("epoch counts must be >= 1");
    for (std::size_t i = 1; i < epoch_list.size(); ++i) {
      if (epoch_list[i] <= epoch_list[i - 1]) throw ConfigError("epoch list must be ascending");
    }
  });
  const std::string started = utc_timestamp();
  const TrainingSetup setup = in_stage("scenario", [&] { return load_setup(spec); });
  const OracleTable oracle =
      in_stage("oracle", [&] { return oracle_for(spec, setup.trace, setup.codebook); });

  TrainingConfig training = spec.training;
  nn::QNetworkConfig network = spec.network;
  apply_variant(spec.variant, training, network);
  training.epochs = epoch_list.back();
  const bool persist = !spec.output_dir.empty();
  if (persist) in_stage("persist", [&] { fs::create_directories(spec.output_dir); });

  std::vector<SweepPoint> points;
  std::vector<std::string> files;
  std::vector<TrainStepLog> log;
  BanditLearner learner = in_stage("train", [&] {
    const nn::QNetworkConfig netcfg = network_config_for(setup.trace.config, training, network);
    return make_learner(setup.trace.config, training, netcfg,
                        training.epochs * steps_per_epoch(setup));
  });
  std::size_t next = 0;
  for (std::size_t e = 0; e < training.epochs; ++e) {
    in_stage("train", [&] { run_epoch(learner, setup, e, log); });
    if (e + 1 != epoch_list[next]) continue;
    SweepPoint p;
    p.epochs = e + 1;
    p.metrics = in_stage("evaluate", [&] {
      return evaluate_learner(variant_name(spec.variant), learner, setup.trace, setup.codebook,
                              oracle);
    });
    if (persist) {
      in_stage("persist", [&] {
        const std::string sub = "epoch-" + std::to_string(p.epochs);
        fs::create_directories(spec.output_dir / sub);
        for (const std::string& f : write_metrics(p.metrics, spec.output_dir / sub)) {
          files.push_back(sub + "/" + f);
        }
        save_agents(learner, spec.output_dir, "-epoch-" + std::to_string(p.epochs), files);
      });
    }
    points.push_back(std::move(p));
    ++next;
  }
  if (persist) {
    in_stage("persist", [&] {
      write_epochs_csv(points, spec.output_dir / "epochs.csv");
      write_train_log_csv(log, spec.output_dir / "train_log.csv");
      files.insert(files.begin(), {"epochs.csv", "train_log.csv"});
      persist_manifest(spec, "sweep", started, oracle.scenario_hash, oracle.codebook_hash, files);
    });
  }
  return points;
}

void check_transfer_compatible(const nn::QNetworkConfig& source, const nn::QNetworkConfig& target) {
  auto check = [](const char* field, std::size_t a, std::size_t b) {
    if (a != b) {
      throw TransferIncompatible(field, std::string("transfer source and target disagree on ") +
                                            field + " (" + std::to_string(a) + " vs " +
                                            std::to_string(b) + ")");
    }
  };
  check("image_height", source.image_height, target.image_height);
  check("image_width", source.image_width, target.image_width);
  check("location_dim", source.location_dim, target.location_dim);
  check("n_actions", source.n_actions, target.n_actions);
}

TransferResult transfer_experiment(const nn::QNetwork<float>& source, const ExperimentSpec& target,
                                   std::size_t fine_tune_epochs) {
  in_stage("scenario", [&] {
    target.validate();
    if (!is_learning_variant(target.variant)) {
      throw ConfigError("transfer needs a learning variant");
    }
  });
  const std::string started = utc_timestamp();
  const TrainingSetup setup = in_stage("scenario", [&] { return load_setup(target); });
  TrainingConfig training = target.training;
  nn::QNetworkConfig network = target.network;
  apply_variant(target.variant, training, network);
  training.epochs = std::max<std::size_t>(fine_tune_epochs, 1);
  check_transfer_compatible(source.config(),
                            network_config_for(setup.trace.config, training, network));

  const OracleTable oracle =
      in_stage("oracle", [&] { return oracle_for(target, setup.trace, setup.codebook); });

  BanditLearner learner = in_stage("train", [&] {
    BanditLearner l = make_learner(setup.trace.config, training, source.config(),
                                   fine_tune_epochs * steps_per_epoch(setup));
    for (Agent& a : l.agents) a.network = source;
    l.schedule = EpsilonSchedule::constant(training.eps_end);
    return l;
  });
  RunMetrics before = in_stage("evaluate", [&] {
    return evaluate_learner("tl-zero-shot", learner, setup.trace, setup.codebook, oracle);
  });
  std::vector<TrainStepLog> log;
  in_stage("train", [&] {
    for (std::size_t e = 0; e < fine_tune_epochs; ++e) run_epoch(learner, setup, e, log);
  });
  RunMetrics after = in_stage("evaluate", [&] {
    return evaluate_learner("tl-finetuned", learner, setup.trace, setup.codebook, oracle);
  });

  if (!target.output_dir.empty()) {
    in_stage("persist", [&] {
      std::vector<std::string> files;
      for (const auto& [sub, m] : {std::pair<const char*, const RunMetrics*>{"zero-shot", &before},
                                   {"fine-tuned", &after}}) {
        fs::create_directories(target.output_dir / sub);
        for (const std::string& f : write_metrics(*m, target.output_dir / sub)) {
          files.push_back(std::string(sub) + "/" + f);
        }
      }
      write_train_log_csv(log, target.output_dir / "train_log.csv");
      files.push_back("train_log.csv");
      save_agents(learner, target.output_dir, "", files);
      persist_manifest(target, "transfer", started, oracle.scenario_hash, oracle.codebook_hash,
                       files);
    });
  }
  return TransferResult{std::move(before), std::move(after), std::move(learner)};
}

TransferResult transfer_experiment(const fs::path& source_checkpoint, const ExperimentSpec& target,
                                   std::size_t fine_tune_epochs) {
  return transfer_experiment(nn::load_checkpoint<float>(source_checkpoint), target,
                             fine_tune_epochs);
}

}  // namespace isacbeam
