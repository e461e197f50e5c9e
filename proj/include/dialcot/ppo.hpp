#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dialcot/dialogue.hpp"
#include "dialcot/generator.hpp"
#include "dialcot/policy_network.hpp"
#include "dialcot/problem.hpp"
#include "dialcot/rng.hpp"

namespace dialcot {

/// Concatenated candidate features, zero-padded to k slots.
struct State {
  Eigen::VectorXd vector;                  ///< k*d entries
  Eigen::Array<bool, Eigen::Dynamic, 1> mask;  ///< true = real candidate
};

State build_state(std::span<const Candidate> candidates, int k, int d);

struct ActionDistribution {
  Eigen::VectorXd probs;
};

struct PolicyOutput {
  ActionDistribution dist;
  double value = 0.0;
};

PolicyOutput policy_forward(const PolicyNetwork<double>& net, const State& state);

enum class SelectMode { Explore, Infer };

struct ActionChoice {
  int action = 0;
  double logprob = 0.0;
};

/// Explore samples from the distribution; Infer takes the argmax (lowest index on ties).
ActionChoice select_action(const ActionDistribution& dist, SelectMode mode, Rng& rng);

struct Transition {
  State state;
  int action = 0;
  double behavior_logprob = 0.0;  ///< log pi_old(a|s) at collection time
  double value = 0.0;             ///< V_old(s) at collection time
  double reward = 0.0;
  bool done = false;
  Role role = Role::Solver;
};

using Trajectory = std::vector<Transition>;

struct RewardConfig {
  double r_m = 0.3;
  double r_f = 1.0;
  double tolerance = kDefaultAnswerTolerance;
};

/// Solver transition i earns r_m when its answer matches gold sub-answer i;
/// the final Solver transition earns r_f instead when the final answer is
/// right. Everything else earns 0. Also marks the last transition done.
void assign_rewards(const Transcript& transcript, Trajectory& trajectory, const Problem& gold,
                    const RewardConfig& config);

struct AdvantageResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// GAE over one trajectory; V(s_T) after the last step is `bootstrap_value`
/// (0 for terminated dialogues).
AdvantageResult compute_advantages(std::span<const double> rewards, std::span<const double> values,
                                   std::span<const bool> dones, double gamma, double lambda,
                                   double bootstrap_value = 0.0);
AdvantageResult compute_advantages(std::span<const Transition> trajectory, double gamma, double lambda);

/// In-place standardization (mean 0, std 1); std is floored at 1e-8.
void normalize_advantages(std::span<double> advantages);

/// Column-major training batch.
struct PPOBatch {
  Eigen::MatrixXd states;   ///< (k*d) x N
  MaskMatrix mask;          ///< k x N
  std::vector<int> actions;
  Eigen::VectorXd behavior_logprobs;
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;

  Eigen::Index size() const { return states.cols(); }
};

struct LossTerms {
  double clip_epsilon = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.0;
};

struct LossResult {
  double loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  PolicyNetwork<double> gradient;  ///< d loss / d theta (empty unless requested)
};

/// Negated clipped surrogate for one sample: -min(r A, clip(r, 1-eps, 1+eps) A).
double clipped_policy_term(double ratio, double advantage, double clip_epsilon);

/// Batch-mean PPO loss: clipped policy term + value_coef (V - R)^2 - entropy_coef H.
LossResult ppo_loss(const PPOBatch& batch, const PolicyNetwork<double>& net, const LossTerms& terms,
                    bool with_gradient = true);

struct PPOConfig {
  double learning_rate = 3e-4;
  std::size_t batch_size = 4096;
  std::size_t minibatch_size = 512;
  double clip_epsilon = 0.2;
  int k = 3;
  double r_m = 0.3;
  double gamma = 1.0;
  double gae_lambda = 0.95;
  int update_epochs = 4;
  double value_coef = 0.5;
  double entropy_coef = 0.0;
  double max_grad_norm = 1.0;
  bool normalize_advantages = true;
  int hidden = 1024;
  /// Select (and learn) at Decomposer steps as well as Solver steps.
  bool select_decomposer_steps = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Adam state with the network's own shapes.
struct AdamState {
  PolicyNetwork<double> m;
  PolicyNetwork<double> v;
  long step = 0;

  static AdamState for_network(const PolicyNetwork<double>& net);
};

void adam_step(PolicyNetwork<double>& net, const PolicyNetwork<double>& grad, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

/// Scales the gradient in place to global L2 norm <= max_norm; returns the pre-clip norm.
double clip_grad_norm(PolicyNetwork<double>& grad, double max_norm);

struct RolloutBuffer {
  std::vector<Trajectory> trajectories;

  std::size_t transition_count() const;
  void clear() { trajectories.clear(); }
};

/// Flattens a buffer into a batch: GAE per trajectory, optional per-batch normalization.
PPOBatch make_batch(const RolloutBuffer& buffer, const PPOConfig& config);

struct UpdateMetrics {
  double loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double grad_norm = 0.0;
  std::size_t minibatches = 0;
};

/// update_epochs passes of shuffled minibatch Adam steps on ppo_loss, then
/// copies theta into theta_old and clears the buffer. On NumericalError the
/// pre-update parameters and optimizer state are restored and the error is rethrown.
UpdateMetrics update_policy(PolicyNetwork<double>& net, PolicyNetwork<double>& old_net, RolloutBuffer& buffer,
                            const PPOConfig& config, AdamState& optimizer, Rng& rng);

}  // namespace dialcot
