#include "isacbeam/bandit.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "isacbeam/error.hpp"

namespace isacbeam {

ReplayMemory::ReplayMemory(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw InvalidArgument("replay capacity must be at least 1");
}

void ReplayMemory::push(Transition transition) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(transition));
  } else {
    items_[head_] = std::move(transition);
    head_ = (head_ + 1) % capacity_;
  }
  ++insertions_;
}

const Transition& ReplayMemory::at(std::size_t i) const {
  if (i >= items_.size()) throw InvalidArgument("replay index out of range");
  return items_[(head_ + i) % items_.size()];
}

std::vector<const Transition*> ReplayMemory::sample(std::size_t count, Rng& rng) const {
  if (items_.empty()) throw InvalidArgument("cannot sample from an empty replay memory");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<const Transition*> out(count);
  for (auto& p : out) p = &items_[pick(rng)];
  return out;
}

double EpsilonSchedule::operator()(std::uint64_t step) const noexcept {
  if (decay_horizon <= 0.0 || static_cast<double>(step) >= decay_horizon) return eps_end;
  return eps_start + (eps_end - eps_start) * (static_cast<double>(step) / decay_horizon);
}

EpsilonSchedule EpsilonSchedule::for_training(std::size_t total_steps, double eps_start,
                                              double eps_end) {
  return {eps_start, eps_end, 0.8 * static_cast<double>(total_steps)};
}

EpsilonSchedule EpsilonSchedule::constant(double eps) { return {eps, eps, 0.0}; }

void TrainingConfig::validate() const {
  if (epochs < 1 || train_interval < 1 || batch_size < 1 || replay_capacity < 1) {
    throw ConfigError("training counts (epochs, train_interval, batch_size, replay_capacity) must be >= 1");
  }
  if (!(reward_exponent >= 0.0)) throw ConfigError("reward_exponent must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(eps_start >= 0.0 && eps_start <= 1.0 && eps_end >= 0.0 && eps_end <= 1.0)) {
    throw ConfigError("epsilon bounds must lie in [0, 1]");
  }
}

nn::QNetworkConfig network_config_for(const ScenarioConfig& scenario, const TrainingConfig& training,
                                      nn::QNetworkConfig base) {
  base.image_height = scenario.image_height;
  base.image_width = scenario.image_width;
  base.location_dim = training.context_all_locations ? 2 * scenario.n_users : 2;
  base.n_actions = scenario.beam_subset.length();
  base.pool_layers.clear();
  return base.resolved();
}

BanditLearner make_learner(const ScenarioConfig& scenario, const TrainingConfig& training,
                           const nn::QNetworkConfig& network, std::size_t total_training_steps) {
  training.validate();
  BanditLearner learner;
  learner.config = training;
  learner.schedule =
      EpsilonSchedule::for_training(total_training_steps, training.eps_start, training.eps_end);
  learner.explore_rng = make_rng(training.seed, {3});
  const std::size_t n_agents = training.shared_agent ? 1 : scenario.n_users;
  for (std::size_t k = 0; k < n_agents; ++k) {
    Rng init = make_rng(training.seed, {4, k});
    learner.agents.push_back(Agent{nn::QNetwork<float>(network, init()),
                                   ReplayMemory(training.replay_capacity),
                                   make_rng(training.seed, {5, k}), 0, 0});
  }
  return learner;
}

std::vector<AgentContext> build_contexts(const EnvironmentState& state, bool all_locations) {
  std::vector<AgentContext> out(state.positions.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k].isac_image = state.isac_image;
    out[k].own_location = state.positions[k];
    out[k].user = k;
    if (all_locations) out[k].all_locations = state.positions;
  }
  return out;
}

std::vector<float> location_features(const AgentContext& context, const ScenarioConfig& scenario) {
  const Point2 ap = scenario.ap_position;
  std::vector<float> f;
  auto add = [&](Point2 p) {
    f.push_back(static_cast<float>(p.x - ap.x));
    f.push_back(static_cast<float>(p.y - ap.y));
  };
  add(context.own_location);
  for (std::size_t i = 0; i < context.all_locations.size(); ++i) {
    if (i != context.user) add(context.all_locations[i]);
  }
  return f;
}

void context_batch(std::span<const AgentContext* const> contexts, const ScenarioConfig& scenario,
                   nn::Tensor<float>& images, nn::Tensor<float>& locations) {
  const std::size_t b = contexts.size(), h = scenario.image_height, w = scenario.image_width;
  images = nn::Tensor<float>({b, 1, h, w});
  std::size_t loc_dim = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const Image& img = *contexts[i]->isac_image;
    if (img.height != h || img.width != w) throw InvalidArgument("context image has wrong size");
    std::copy(img.pixels.begin(), img.pixels.end(), images.data() + i * h * w);
    const std::vector<float> loc = location_features(*contexts[i], scenario);
    if (i == 0) {
      loc_dim = loc.size();
      locations = nn::Tensor<float>({b, loc_dim});
    } else if (loc.size() != loc_dim) {
      throw InvalidArgument("contexts disagree on location dimension");
    }
    std::copy(loc.begin(), loc.end(), locations.data() + i * loc_dim);
  }
}

std::size_t argmax_action(std::span<const float> q) {
  return static_cast<std::size_t>(std::max_element(q.begin(), q.end()) - q.begin());
}

std::size_t select_action(const nn::QNetwork<float>& network, const AgentContext& context,
                          const ScenarioConfig& scenario, double epsilon, Rng& rng) {
  const std::size_t m = network.config().n_actions;
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (epsilon > 0.0 && coin(rng) < epsilon) {
    return std::uniform_int_distribution<std::size_t>(0, m - 1)(rng);
  }
  const AgentContext* ctx[] = {&context};
  nn::Tensor<float> images, locations;
  context_batch(ctx, scenario, images, locations);
  const nn::Tensor<float> q = network.predict(images, locations);
  return argmax_action(q.values());
}

double compute_common_reward(const EnvironmentState& state, const BeamAssignment& joint_action,
                             const BeamCodebook& codebook, const LinkBudget& budget,
                             double exponent) {
  const std::vector<double> se =
      per_user_spectral_efficiency(state.channels, joint_action, codebook, budget);
  return shaped_reward(se, state.distances, exponent);
}

bool update_agent(Agent& agent, const ScenarioConfig& scenario, const TrainingConfig& config) {
  if (agent.memory.size() < config.batch_size) {
    ++agent.skipped_updates;
    return false;
  }
  const auto batch = agent.memory.sample(config.batch_size, agent.train_rng);
  std::vector<const AgentContext*> contexts;
  std::vector<std::size_t> actions;
  std::vector<float> targets;
  for (const Transition* t : batch) {
    contexts.push_back(&t->context);
    actions.push_back(t->action);
    targets.push_back(static_cast<float>(t->reward));
  }
  nn::Tensor<float> images, locations;
  context_batch(contexts, scenario, images, locations);

  auto& net = agent.network;
  net.zero_grad();
  const nn::Tensor<float> q = net.forward(images, locations, nn::Mode::kTrain, &agent.train_rng);
  nn::Tensor<float> grad;
  nn::mse_loss<float>(q, actions, targets, &grad);
  net.backward(grad);
  nn::AdamOptions opts;
  opts.learning_rate = config.learning_rate;
  net.adam_step(opts);
  ++agent.updates;
  return true;
}

std::vector<TrainStepLog> train_epoch(BanditLearner& learner, const ScenarioTrace& trace,
                                      const BeamCodebook& codebook, std::size_t epoch_index,
                                      std::size_t agent_offset) {
  const StepRange range = split_range(trace, Split::kTrain);
  if (range.size() == 0) throw InvalidArgument("scenario has an empty train split");
  const TrainingConfig& cfg = learner.config;
  const std::size_t k_users = trace.config.n_users;
  const std::size_t n_agents = learner.agents.size();
  if (n_agents == 0) throw InvalidArgument("learner has no agents");
  if (!cfg.shared_agent && n_agents < k_users) {
    throw InvalidArgument("agent count " + std::to_string(n_agents) + " is below the " +
                          std::to_string(k_users) + " users of the scenario");
  }
  auto agent_of = [&](std::size_t k) { return (learner.agent_for_user(k) + agent_offset) % n_agents; };

  std::vector<TrainStepLog> log;
  log.reserve(range.size());
  for (std::size_t s = range.begin; s < range.end; ++s) {
    const EnvironmentState& state = trace.states[s];
    const double eps = learner.schedule(learner.global_step);
    const std::vector<AgentContext> contexts = build_contexts(state, cfg.context_all_locations);

    BeamAssignment joint;
    joint.actions.resize(k_users);
    for (std::size_t k = 0; k < k_users; ++k) {
      const Agent& agent = learner.agents[agent_of(k)];
      joint.actions[k] =
          select_action(agent.network, contexts[k], trace.config, eps, learner.explore_rng);
    }
    const std::vector<double> se =
        per_user_spectral_efficiency(state.channels, joint, codebook, trace.budget);
    const double reward = shaped_reward(se, state.distances, cfg.reward_exponent);
    for (std::size_t k = 0; k < k_users; ++k) {
      learner.agents[agent_of(k)].memory.push(
          Transition{contexts[k], joint.actions[k], reward});
    }

    const std::size_t t = s - range.begin + 1;
    const bool tick = t % cfg.train_interval == 0 && t >= cfg.train_interval;
    if (tick) {
      for (Agent& agent : learner.agents) update_agent(agent, trace.config, cfg);
    }
    double sum = 0.0;
    for (double v : se) sum += v;
    log.push_back({epoch_index, state.step, eps, std::move(joint), sum, reward, tick});
    ++learner.global_step;
  }
  return log;
}

RolloutLog greedy_rollout(const BanditLearner& learner, const ScenarioTrace& trace,
                          const BeamCodebook& codebook, Split split) {
  const StepRange range = split_range(trace, split);
  const std::size_t k_users = trace.config.n_users;
  const bool all_loc = learner.config.context_all_locations;
  RolloutLog out;
  Rng unused(0);
  for (std::size_t s = range.begin; s < range.end; ++s) {
    const EnvironmentState& state = trace.states[s];
    const std::vector<AgentContext> contexts = build_contexts(state, all_loc);
    BeamAssignment joint;
    joint.actions.resize(k_users);
    for (std::size_t k = 0; k < k_users; ++k) {
      const Agent& agent = learner.agents[learner.agent_for_user(k)];
      joint.actions[k] = select_action(agent.network, contexts[k], trace.config, 0.0, unused);
    }
    std::vector<double> se =
        per_user_spectral_efficiency(state.channels, joint, codebook, trace.budget);
    double sum = 0.0;
    for (double v : se) sum += v;
    out.steps.push_back(state.step);
    out.reward.push_back(shaped_reward(se, state.distances, learner.config.reward_exponent));
    out.sum_se.push_back(sum);
    out.per_user_se.push_back(std::move(se));
    out.actions.push_back(std::move(joint));
  }
  return out;
}

}  // namespace isacbeam
