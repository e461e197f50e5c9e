#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dialcot/dialogue.hpp"
#include "dialcot/ppo.hpp"

namespace dialcot {

/// Selector driven by the policy network; records one transition per
/// decision it makes.
class PolicySelector final : public Selector {
 public:
  PolicySelector(const PolicyNetwork<double>& net, SelectMode mode, Rng& rng, bool select_decomposer_steps = true);

  std::size_t select(Role role, std::span<const Candidate> candidates) override;

  Trajectory& trajectory() { return trajectory_; }
  Trajectory take_trajectory() { return std::move(trajectory_); }

 private:
  const PolicyNetwork<double>& net_;
  SelectMode mode_;
  Rng& rng_;
  bool select_decomposer_steps_;
  Trajectory trajectory_;
};

struct EpisodeSettings {
  RewardConfig rewards;
  bool select_decomposer_steps = true;
  /// Bound S rounds by the gold sub-question count (supervised replay).
  bool replay_gold_rounds = true;
};

struct Episode {
  Transcript transcript;
  Trajectory trajectory;
  bool final_correct = false;
};

/// Runs DialCoT-S with the policy as selector and assigns rewards from gold.
Episode run_policy_episode(Generator& generator, const PromptTemplate& tmpl, const DialogueOptions& options,
                           const Problem& problem, const PolicyNetwork<double>& policy, SelectMode mode, Rng& rng,
                           const EpisodeSettings& settings);

/// Source of training and validation episodes for train().
class Environment {
 public:
  virtual ~Environment() = default;

  virtual int k() const = 0;
  virtual int feature_dim() const = 0;

  /// One exploration episode; `episode_seed` fully determines problem choice and generator noise.
  virtual Episode training_episode(std::uint64_t episode_seed, const PolicyNetwork<double>& policy,
                                   SelectMode mode) = 0;

  virtual std::size_t validation_size() const = 0;
  /// Greedy-policy episode on held-out problem i (deterministic).
  virtual Episode validation_episode(std::size_t index, const PolicyNetwork<double>& policy) = 0;
};

/// Environment over a fixed problem list and any generator.
class DatasetEnvironment final : public Environment {
 public:
  DatasetEnvironment(Generator& generator, PromptTemplate tmpl, DialogueOptions options,
                     std::vector<Problem> train, std::vector<Problem> validation, EpisodeSettings settings,
                     std::uint64_t seed);

  int k() const override { return options_.k; }
  int feature_dim() const override { return generator_.info().feature_dim; }
  Episode training_episode(std::uint64_t episode_seed, const PolicyNetwork<double>& policy,
                           SelectMode mode) override;
  std::size_t validation_size() const override { return validation_.size(); }
  Episode validation_episode(std::size_t index, const PolicyNetwork<double>& policy) override;

 private:
  Generator& generator_;
  PromptTemplate template_;
  DialogueOptions options_;
  std::vector<Problem> train_;
  std::vector<Problem> validation_;
  EpisodeSettings settings_;
  std::uint64_t seed_;
};

struct TrainConfig {
  PPOConfig ppo;
  int max_updates = 200;
  /// Stop after this many evaluations without a validation-accuracy improvement.
  int patience = 5;
  int eval_interval = 1;
  /// Consecutive failed episodes tolerated before training aborts.
  int max_episode_retries = 3;
  /// Parallel episode workers during collection and evaluation (1 = inline).
  int workers = 1;
};

struct CurvePoint {
  int update_index = 0;
  double mean_reward = 0.0;       ///< mean per-episode reward total
  double train_accuracy = 0.0;    ///< final-answer accuracy of exploration episodes
  double val_accuracy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  std::size_t episodes = 0;
  std::size_t transitions = 0;
};

struct TrainResult {
  PolicyNetwork<double> net;
  std::vector<CurvePoint> curve;
  AdamState optimizer;
  std::string rng_state;
  int updates = 0;
};

/// Called after every update with the current network; used for checkpoints and metrics logs.
using UpdateCallback = std::function<void(const CurvePoint&, const TrainResult&)>;

/// Collect/update loop until max_updates or a validation plateau. The
/// generator behind the environment is never modified.
TrainResult train(Environment& env, const TrainConfig& config, const UpdateCallback& on_update = {});

/// Final-answer accuracy of the policy in infer mode over the validation set.
double evaluate_policy(Environment& env, const PolicyNetwork<double>& policy, int workers = 1);

/// Runs fn(i) for i in [0, n) on up to `workers` threads; results are written by index.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace dialcot
