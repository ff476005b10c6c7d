#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "isacbeam/error.hpp"
#include "isacbeam/experiments.hpp"
#include "isacbeam/metrics_io.hpp"
#include "isacbeam/nn/checkpoint.hpp"

using namespace isacbeam;
namespace fs = std::filesystem;

namespace {

ScenarioConfig tiny_scenario(std::size_t users) {
  ScenarioConfig c = scenario_preset(users == 1 ? "s44-small" : "s42-small");
  c.image_height = 16;
  c.image_width = 16;
  c.n_steps = 100;
  return c;
}

ExperimentSpec tiny_spec(std::size_t users, Variant variant = Variant::kTrl) {
  ExperimentSpec s;
  s.scenario_config = tiny_scenario(users);
  s.variant = variant;
  s.training.epochs = 2;
  s.training.train_interval = 10;
  s.training.batch_size = 16;
  s.training.seed = 3;
  s.network.d_model = 10;
  s.network.ffn_dim = 32;
  s.network.hidden_sizes = {32};
  return s;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("isacbeam_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Mean sum SE over all M^K joint assignments of one step.
double enumerated_mean_se(const EnvironmentState& st, const BeamCodebook& cb, const LinkBudget& b) {
  const std::size_t m = cb.size();
  double total = 0.0;
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t c = 0; c < m; ++c) total += sum_spectral_efficiency(st.channels, {{a, c}}, cb, b);
  }
  return total / static_cast<double>(m * m);
}

}  // namespace

TEST(Variants, NamesRoundTrip) {
  for (Variant v : {Variant::kTrl, Variant::kDrl, Variant::kRandom, Variant::kExhaustive,
                    Variant::kShared}) {
    EXPECT_EQ(parse_variant(variant_name(v)), v);
  }
  EXPECT_THROW(parse_variant("greedy"), ConfigError);
  EXPECT_TRUE(is_learning_variant(Variant::kDrl));
  EXPECT_FALSE(is_learning_variant(Variant::kRandom));
}

TEST(Metrics, SummaryIdentityHolds) {
  std::vector<StepRecord> steps;
  for (std::size_t i = 0; i < 10; ++i) {
    StepRecord r;
    r.step = i;
    r.oracle_se = 3.0 + 0.1 * static_cast<double>(i);
    r.sum_se = i % 3 == 0 ? r.oracle_se : r.oracle_se - 0.25 * static_cast<double>(i % 3);
    r.optimal = i % 3 == 0;
    steps.push_back(r);
  }
  const RunMetrics m = summarize("x", steps);
  EXPECT_NEAR(m.average_sum_se + m.average_se_regret, m.mean_oracle_se, 1e-9);
  EXPECT_NEAR(m.optimal_action_fraction, 0.4, 1e-12);
  EXPECT_NEAR(m.mean_oracle_se, 3.45, 1e-12);
}

TEST(Baselines, ExhaustiveHasZeroRegretAndDominates) {
  const ScenarioTrace trace = build_scenario(tiny_scenario(2));
  const BeamCodebook cb = scenario_codebook(trace.config);
  const OracleTable oracle = precompute_oracle(trace, cb, 2);
  const RunMetrics ex = run_baseline_exhaustive(trace, cb, oracle);
  EXPECT_EQ(ex.average_se_regret, 0.0);
  EXPECT_EQ(ex.optimal_action_fraction, 1.0);
  EXPECT_EQ(ex.per_step.size(), 20u);

  const RunMetrics rnd = run_baseline_random(trace, cb, oracle, 1);
  for (std::size_t i = 0; i < rnd.per_step.size(); ++i) {
    EXPECT_LE(rnd.per_step[i].sum_se, ex.per_step[i].sum_se + 1e-12);
  }
  EXPECT_NEAR(rnd.average_sum_se + rnd.average_se_regret, rnd.mean_oracle_se, 1e-9);
}

TEST(Baselines, RandomMatchesEnumeratedAverage) {
  const ScenarioTrace trace = build_scenario(tiny_scenario(2));
  const BeamCodebook cb = scenario_codebook(trace.config);
  const OracleTable oracle = precompute_oracle(trace, cb);
  const StepRange test = split_range(trace, Split::kTest);

  // Exact mean and variance of the random policy's average sum SE.
  double expected = 0.0, variance = 0.0;
  const std::size_t m = cb.size();
  for (std::size_t s = test.begin; s < test.end; ++s) {
    const double mean = enumerated_mean_se(trace.states[s], cb, trace.budget);
    double second = 0.0;
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t c = 0; c < m; ++c) {
        const double v = sum_spectral_efficiency(trace.states[s].channels, {{a, c}}, cb, trace.budget);
        second += v * v;
      }
    }
    expected += mean;
    variance += second / static_cast<double>(m * m) - mean * mean;
  }
  const double steps = static_cast<double>(test.size());
  expected /= steps;

  double observed = 0.0;
  const int seeds = 200;
  for (int seed = 0; seed < seeds; ++seed) {
    const RunMetrics r = run_baseline_random(trace, cb, oracle, seed);
    observed += r.average_sum_se;
    for (const StepRecord& rec : r.per_step) {
      ASSERT_NEAR(rec.sum_se,
                  sum_spectral_efficiency(trace.states[rec.step].channels, rec.actions, cb,
                                          trace.budget),
                  1e-12);
    }
  }
  const double sigma = std::sqrt(variance / (steps * steps) / seeds);
  EXPECT_NEAR(observed / seeds, expected, 4.0 * sigma);
}

TEST(Baselines, RandomIsSeeded) {
  const ScenarioTrace trace = build_scenario(tiny_scenario(2));
  const BeamCodebook cb = scenario_codebook(trace.config);
  const OracleTable oracle = precompute_oracle(trace, cb);
  const RunMetrics a = run_baseline_random(trace, cb, oracle, 7);
  const RunMetrics b = run_baseline_random(trace, cb, oracle, 7);
  const RunMetrics c = run_baseline_random(trace, cb, oracle, 8);
  EXPECT_EQ(a.average_sum_se, b.average_sum_se);
  EXPECT_NE(a.average_sum_se, c.average_sum_se);
}

TEST(Oracle, ParallelMatchesSerial) {
  const ScenarioTrace trace = build_scenario(tiny_scenario(2));
  const BeamCodebook cb = scenario_codebook(trace.config);
  const OracleTable a = precompute_oracle(trace, cb, 1);
  const OracleTable b = precompute_oracle(trace, cb, 3);
  ASSERT_EQ(a.per_step.size(), trace.states.size());
  for (std::size_t i = 0; i < a.per_step.size(); ++i) {
    EXPECT_EQ(a.per_step[i].assignment, b.per_step[i].assignment);
    EXPECT_EQ(a.per_step[i].sum_se, b.per_step[i].sum_se);
  }
}

TEST(Oracle, CacheRoundTripAndMismatchRecompute) {
  const fs::path dir = fresh_dir("oracle_cache");
  const ScenarioTrace trace = build_scenario(tiny_scenario(2));
  const BeamCodebook cb = scenario_codebook(trace.config);

  std::string warning;
  const OracleTable first = cached_oracle(trace, cb, dir, 1, &warning);
  EXPECT_TRUE(warning.empty());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
  ASSERT_EQ(files.size(), 1u);

  const OracleTable loaded = load_oracle_table(files[0]);
  EXPECT_EQ(loaded.scenario_hash, scenario_hash(trace));
  EXPECT_EQ(loaded.codebook_hash, codebook_hash(cb));
  for (std::size_t i = 0; i < loaded.per_step.size(); ++i) {
    EXPECT_EQ(loaded.per_step[i].sum_se, first.per_step[i].sum_se);
    EXPECT_EQ(loaded.per_step[i].assignment, first.per_step[i].assignment);
  }
  const OracleTable again = cached_oracle(trace, cb, dir, 1, &warning);
  EXPECT_TRUE(warning.empty());

  // A cache file whose stored hash does not match gets rebuilt with a warning.
  OracleTable tampered = first;
  tampered.scenario_hash = std::string(64, '0');
  tampered.per_step[0].sum_se = -1.0;
  save_oracle_table(tampered, files[0]);
  const OracleTable rebuilt = cached_oracle(trace, cb, dir, 1, &warning);
  EXPECT_FALSE(warning.empty());
  EXPECT_EQ(rebuilt.per_step[0].sum_se, first.per_step[0].sum_se);
  EXPECT_EQ(load_oracle_table(files[0]).scenario_hash, scenario_hash(trace));

  // So does a truncated one.
  fs::resize_file(files[0], fs::file_size(files[0]) / 2);
  warning.clear();
  cached_oracle(trace, cb, dir, 1, &warning);
  EXPECT_FALSE(warning.empty());
  EXPECT_ANY_THROW(load_oracle_table(dir / "missing.bin"));
  fs::remove_all(dir);
}

TEST(Oracle, HashesTrackContent) {
  ScenarioConfig c = tiny_scenario(1);
  const ScenarioTrace a = build_scenario(c);
  c.seed += 1;
  const ScenarioTrace b = build_scenario(c);
  EXPECT_EQ(scenario_hash(a), scenario_hash(build_scenario(tiny_scenario(1))));
  EXPECT_NE(scenario_hash(a), scenario_hash(b));
  EXPECT_EQ(scenario_hash(a).size(), 64u);
  ScenarioConfig wide = tiny_scenario(1);
  wide.beam_subset = {3, 11};
  EXPECT_NE(codebook_hash(scenario_codebook(wide)), codebook_hash(scenario_codebook(c)));
}

TEST(Pipeline, TrainRunWritesArtifactsAndIsReproducible) {
  const fs::path dir = fresh_dir("pipeline_train");
  ExperimentSpec spec = tiny_spec(2);
  spec.output_dir = dir;
  const ExperimentResult r = run_experiment(spec);
  ASSERT_TRUE(r.learner.has_value());
  EXPECT_EQ(r.metrics.variant, "trl");
  EXPECT_EQ(r.metrics.per_step.size(), 20u);
  EXPECT_EQ(r.training_log.size(), 160u);
  EXPECT_NEAR(r.metrics.average_sum_se + r.metrics.average_se_regret, r.metrics.mean_oracle_se,
              1e-9);
  for (const char* f : {"trace.csv", "metrics.json", "metrics.csv", "train_log.csv",
                        "agent-0.ckpt", "agent-1.ckpt", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const RunManifest m = read_manifest(dir / "manifest.json");
  EXPECT_EQ(m.command, "train");
  EXPECT_EQ(m.seed, 3u);
  EXPECT_EQ(m.scenario_hash, r.scenario_hash);

  const ExperimentResult again = run_experiment(tiny_spec(2));
  EXPECT_EQ(again.metrics.average_sum_se, r.metrics.average_sum_se);
  for (std::size_t i = 0; i < r.metrics.per_step.size(); ++i) {
    EXPECT_EQ(again.metrics.per_step[i].actions, r.metrics.per_step[i].actions);
  }

  // Checkpoints reload into identical agents.
  const nn::QNetwork<float> loaded = nn::load_checkpoint<float>(dir / "agent-1.ckpt");
  const nn::QNetwork<float>& trained = r.learner->agents[1].network;
  for (std::size_t i = 0; i < loaded.parameters().size(); ++i) {
    EXPECT_EQ(loaded.parameters()[i].value, trained.parameters()[i].value);
  }
  fs::remove_all(dir);
}

TEST(Pipeline, DrlAndSharedVariantsRun) {
  const ExperimentResult drl = run_experiment(tiny_spec(2, Variant::kDrl));
  EXPECT_TRUE(drl.learner->agents[0].network.config().bypass_mmt);
  const ExperimentResult shared = run_experiment(tiny_spec(2, Variant::kShared));
  EXPECT_EQ(shared.learner->agents.size(), 1u);
  EXPECT_EQ(shared.metrics.variant, "shared");
}

TEST(Pipeline, ErrorsCarryTheirStage) {
  ExperimentSpec spec = tiny_spec(1);
  spec.scenario_config.reset();
  spec.scenario = "no-such-file.bin";
  try {
    run_experiment(spec);
    FAIL() << "expected PipelineError";
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.stage(), "scenario");
  }
  ExperimentSpec bad = tiny_spec(1);
  bad.training.batch_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Pipeline, AuxiliaryScenarioMustMatchShapes) {
  ExperimentSpec spec = tiny_spec(2);
  spec.auxiliary_scenario = "s44-small";  // 32 x 32 images vs 16 x 16
  EXPECT_THROW(run_experiment(spec), PipelineError);
}

TEST(Sweep, SnapshotsPerListedEpochCount) {
  const fs::path dir = fresh_dir("sweep");
  ExperimentSpec spec = tiny_spec(1);
  spec.output_dir = dir;
  const std::vector<SweepPoint> pts = epoch_sweep(spec, {1, 3});
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[0].epochs, 1u);
  EXPECT_EQ(pts[1].epochs, 3u);
  EXPECT_TRUE(fs::exists(dir / "epochs.csv"));
  EXPECT_TRUE(fs::exists(dir / "epoch-1" / "metrics.json"));
  EXPECT_TRUE(fs::exists(dir / "epoch-3" / "trace.csv"));
  EXPECT_TRUE(fs::exists(dir / "agent-0-epoch-3.ckpt"));

  EXPECT_THROW(epoch_sweep(tiny_spec(1), {3, 1}), PipelineError);
  EXPECT_THROW(epoch_sweep(tiny_spec(1), {0, 1}), PipelineError);
  fs::remove_all(dir);
}

TEST(Transfer, IncompatibleShapesNameTheField) {
  nn::QNetworkConfig a;
  nn::QNetworkConfig b;
  b.n_actions = 12;
  try {
    check_transfer_compatible(a, b);
    FAIL() << "expected TransferIncompatible";
  } catch (const TransferIncompatible& e) {
    EXPECT_EQ(e.field(), "n_actions");
  }
  b = a;
  b.image_width = 32;
  try {
    check_transfer_compatible(a, b);
    FAIL();
  } catch (const TransferIncompatible& e) {
    EXPECT_EQ(e.field(), "image_width");
  }
  EXPECT_NO_THROW(check_transfer_compatible(a, a));
}

TEST(Transfer, SourceIsCopiedIntoEveryAgent) {
  const ExperimentResult source = run_experiment(tiny_spec(1));
  const nn::QNetwork<float>& src = source.learner->agents[0].network;
  const fs::path dir = fresh_dir("transfer");
  ExperimentSpec target = tiny_spec(2);
  target.output_dir = dir;
  const TransferResult r = transfer_experiment(src, target, 1);
  EXPECT_EQ(r.learner.agents.size(), 2u);
  EXPECT_EQ(r.before.per_step.size(), 20u);
  EXPECT_TRUE(fs::exists(dir / "zero-shot" / "metrics.json"));
  EXPECT_TRUE(fs::exists(dir / "fine-tuned" / "metrics.json"));

  // Zero-shot: both agents run the source network, so they agree wherever
  // their contexts coincide; the evaluation equals a direct greedy rollout.
  BanditLearner zero = r.learner;
  for (Agent& a : zero.agents) a.network = src;
  const RunMetrics direct = evaluate_learner("trl", zero, build_scenario(tiny_scenario(2)),
                                             scenario_codebook(tiny_scenario(2)),
                                             precompute_oracle(build_scenario(tiny_scenario(2)),
                                                               scenario_codebook(tiny_scenario(2))));
  EXPECT_EQ(direct.average_sum_se, r.before.average_sum_se);

  ExperimentSpec mismatched = tiny_spec(2);
  mismatched.scenario_config->image_height = 32;
  mismatched.scenario_config->image_width = 32;
  EXPECT_THROW(transfer_experiment(src, mismatched, 1), TransferIncompatible);
  EXPECT_THROW(transfer_experiment(dir / "missing.ckpt", tiny_spec(2), 1), CheckpointError);
  fs::remove_all(dir);
}
