#include <benchmark/benchmark.h>

#include <random>

#include "isacbeam/bandit.hpp"
#include "isacbeam/beamcore.hpp"
#include "isacbeam/envsim.hpp"
#include "isacbeam/nn/qnetwork.hpp"

using namespace isacbeam;

namespace {

std::vector<Channel> random_channels(std::size_t k, std::size_t n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Channel> out(k);
  for (auto& c : out) {
    for (std::size_t i = 0; i < n; ++i) c.coefficients.emplace_back(g(rng), g(rng));
  }
  return out;
}

void BM_SumSpectralEfficiency(benchmark::State& state) {
  const ScenarioConfig sc = scenario_preset("s42");
  const BeamCodebook cb = scenario_codebook(sc);
  const auto ch = random_channels(2, sc.geometry.size());
  const LinkBudget budget{1.0, 1e-3, sc.carrier_frequency};
  const BeamAssignment a{{3, 17}};
  for (auto _ : state) benchmark::DoNotOptimize(sum_spectral_efficiency(ch, a, cb, budget));
}
BENCHMARK(BM_SumSpectralEfficiency);

// One oracle step at M = 38: 38 (K=1) or 1444 (K=2) joint assignments.
void BM_ExhaustiveSearch(benchmark::State& state) {
  const ScenarioConfig sc = scenario_preset("s42");
  const BeamCodebook cb = scenario_codebook(sc);
  const auto ch = random_channels(static_cast<std::size_t>(state.range(0)), sc.geometry.size());
  const LinkBudget budget{1.0, 1e-3, sc.carrier_frequency};
  for (auto _ : state) benchmark::DoNotOptimize(exhaustive_search(ch, cb, budget));
}
BENCHMARK(BM_ExhaustiveSearch)->Arg(1)->Arg(2);

nn::Tensor<float> uniform(std::vector<std::size_t> shape) {
  nn::Tensor<float> t(std::move(shape));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& v : t.values()) v = u(rng);
  return t;
}

// Batch 1 greedy inference and a batch 64 training step on the 64 x 64 network.
void BM_Predict(benchmark::State& state) {
  nn::QNetworkConfig c;
  c.bypass_mmt = state.range(0) != 0;
  const nn::QNetwork<float> net(c, 1);
  const auto img = uniform({1, 1, 64, 64});
  const auto loc = uniform({1, 2});
  for (auto _ : state) benchmark::DoNotOptimize(net.predict(img, loc));
}
BENCHMARK(BM_Predict)->Arg(0)->Arg(1);

void BM_TrainStep(benchmark::State& state) {
  nn::QNetworkConfig c;
  c.bypass_mmt = state.range(0) != 0;
  nn::QNetwork<float> net(c, 1);
  const auto img = uniform({64, 1, 64, 64});
  const auto loc = uniform({64, 2});
  std::vector<std::size_t> actions(64);
  std::vector<float> targets(64, 1.0f);
  for (std::size_t i = 0; i < 64; ++i) actions[i] = i % c.n_actions;
  Rng rng(3);
  for (auto _ : state) {
    net.zero_grad();
    nn::Tensor<float> grad;
    nn::mse_loss<float>(net.forward(img, loc, nn::Mode::kTrain, &rng), actions, targets, &grad);
    net.backward(grad);
    net.adam_step(nn::AdamOptions{});
  }
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_TrainEpochSmall(benchmark::State& state) {
  const ScenarioConfig sc = scenario_preset("s42-small");
  const ScenarioTrace trace = build_scenario(sc);
  const BeamCodebook cb = scenario_codebook(sc);
  TrainingConfig tc;
  tc.train_interval = 10;
  const nn::QNetworkConfig net = network_config_for(sc, tc);
  for (auto _ : state) {
    BanditLearner learner = make_learner(sc, tc, net, sc.train_steps());
    benchmark::DoNotOptimize(train_epoch(learner, trace, cb));
  }
}
BENCHMARK(BM_TrainEpochSmall)->Unit(benchmark::kSecond)->Iterations(1);

}  // namespace

BENCHMARK_MAIN();
