#include "dialcot/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "dialcot/errors.hpp"

namespace dialcot {

State build_state(std::span<const Candidate> candidates, int k, int d) {
  if (candidates.empty()) throw PreconditionError("build_state needs at least one candidate");
  if (static_cast<int>(candidates.size()) > k) {
    throw PreconditionError(std::to_string(candidates.size()) + " candidates exceed k=" + std::to_string(k));
  }
  State s;
  s.vector = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k) * d);
  s.mask = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(k, false);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& f = candidates[i].features;
    if (f.size() != d) {
      throw ShapeError("candidate " + std::to_string(i) + " has feature dimension " + std::to_string(f.size()) +
                       ", expected " + std::to_string(d));
    }
    s.vector.segment(static_cast<Eigen::Index>(i) * d, d) = f;
    s.mask[static_cast<Eigen::Index>(i)] = true;
  }
  return s;
}

PolicyOutput policy_forward(const PolicyNetwork<double>& net, const State& state) {
  if (state.vector.size() != net.input_width() || state.mask.size() != net.k) {
    throw ShapeError("state shape does not match the policy network (k=" + std::to_string(net.k) +
                     ", d=" + std::to_string(net.d) + ")");
  }
  const auto fp = forward(net, Eigen::MatrixXd(state.vector), MaskMatrix(state.mask));
  return PolicyOutput{ActionDistribution{fp.probs.col(0)}, fp.values(0)};
}

ActionChoice select_action(const ActionDistribution& dist, SelectMode mode, Rng& rng) {
  const auto& p = dist.probs;
  int action = 0;
  if (mode == SelectMode::Infer) {
    for (Eigen::Index i = 1; i < p.size(); ++i) {
      if (p[i] > p[action]) action = static_cast<int>(i);
    }
  } else {
    const double u = uniform01(rng);
    double cumulative = 0.0;
    action = -1;
    int last_positive = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      if (p[i] <= 0.0) continue;
      last_positive = static_cast<int>(i);
      cumulative += p[i];
      if (u < cumulative) {
        action = static_cast<int>(i);
        break;
      }
    }
    // Rounding can leave u just above the cumulative sum.
    if (action < 0) action = last_positive;
  }
  return ActionChoice{action, std::log(p[action])};
}

void assign_rewards(const Transcript& transcript, Trajectory& trajectory, const Problem& gold,
                    const RewardConfig& config) {
  if (config.r_m > 0.0 && gold.gold_sub_answers.empty()) {
    throw MissingGoldError("problem '" + gold.id + "' has no gold sub-answers but r_m > 0");
  }
  const auto solver_texts = transcript.solver_texts();
  std::vector<Transition*> solver_steps;
  for (auto& t : trajectory) {
    t.reward = 0.0;
    t.done = false;
    if (t.role == Role::Solver) solver_steps.push_back(&t);
  }
  if (trajectory.empty()) return;
  trajectory.back().done = true;
  if (solver_steps.size() != solver_texts.size()) {
    throw ShapeError("trajectory has " + std::to_string(solver_steps.size()) + " Solver transitions for " +
                     std::to_string(solver_texts.size()) + " Solver turns");
  }

  for (std::size_t i = 0; i < solver_steps.size(); ++i) {
    if (config.r_m <= 0.0 || i >= gold.gold_sub_answers.size()) continue;
    const auto answer = extract_final_answer(solver_texts[i]);
    if (answer && answers_equal(*answer, gold.gold_sub_answers[i], config.tolerance)) {
      solver_steps[i]->reward = config.r_m;
    }
  }
  if (!solver_steps.empty() && transcript.final_answer &&
      answers_equal(*transcript.final_answer, gold.gold_final_answer, config.tolerance)) {
    solver_steps.back()->reward = config.r_f;
  }
}

AdvantageResult compute_advantages(std::span<const double> rewards, std::span<const double> values,
                                   std::span<const bool> dones, double gamma, double lambda,
                                   double bootstrap_value) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) {
    throw ShapeError("rewards, values and dones must have equal length");
  }
  AdvantageResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_advantage = 0.0;
  double next_value = bootstrap_value;
  for (std::size_t t = n; t-- > 0;) {
    const double not_done = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * next_value * not_done - values[t];
    next_advantage = delta + gamma * lambda * not_done * next_advantage;
    out.advantages[t] = next_advantage;
    out.returns[t] = next_advantage + values[t];
    next_value = values[t];
  }
  return out;
}

AdvantageResult compute_advantages(std::span<const Transition> trajectory, double gamma, double lambda) {
  std::vector<double> rewards, values;
  for (const auto& t : trajectory) {
    rewards.push_back(t.reward);
    values.push_back(t.value);
  }
  std::unique_ptr<bool[]> dones(new bool[trajectory.size()]);
  for (std::size_t i = 0; i < trajectory.size(); ++i) dones[i] = trajectory[i].done;
  return compute_advantages(rewards, values, std::span<const bool>(dones.get(), trajectory.size()), gamma, lambda);
}

void normalize_advantages(std::span<double> advantages) {
  if (advantages.empty()) return;
  const double n = static_cast<double>(advantages.size());
  const double mean = std::accumulate(advantages.begin(), advantages.end(), 0.0) / n;
  double var = 0.0;
  for (double a : advantages) var += (a - mean) * (a - mean);
  const double std_dev = std::max(std::sqrt(var / n), 1e-8);
  for (double& a : advantages) a = (a - mean) / std_dev;
}

double clipped_policy_term(double ratio, double advantage, double clip_epsilon) {
  const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
  return -std::min(ratio * advantage, clipped * advantage);
}

LossResult ppo_loss(const PPOBatch& batch, const PolicyNetwork<double>& net, const LossTerms& terms,
                    bool with_gradient) {
  const Eigen::Index n = batch.size();
  if (n == 0) throw PreconditionError("ppo_loss needs a nonempty batch");
  const auto fp = forward(net, batch.states, batch.mask);

  LossResult out;
  Eigen::MatrixXd grad_logits = Eigen::MatrixXd::Zero(net.k, n);
  Eigen::RowVectorXd grad_values(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  const double eps = terms.clip_epsilon;

  for (Eigen::Index j = 0; j < n; ++j) {
    const int a = batch.actions[static_cast<std::size_t>(j)];
    const double adv = batch.advantages[j];
    const double logp = fp.log_probs(a, j);
    const double ratio = std::exp(logp - batch.behavior_logprobs[j]);
    const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
    const double unclipped_obj = ratio * adv;
    const double clipped_obj = clipped * adv;
    out.policy_loss += -std::min(unclipped_obj, clipped_obj);
    if (std::abs(ratio - 1.0) > eps) out.clip_fraction += 1.0;
    out.approx_kl += (ratio - 1.0) - (logp - batch.behavior_logprobs[j]);

    double entropy = 0.0;
    for (int i = 0; i < net.k; ++i) {
      if (batch.mask(i, j)) entropy -= fp.probs(i, j) * fp.log_probs(i, j);
    }
    out.entropy += entropy;

    const double value_err = fp.values(j) - batch.returns[j];
    out.value_loss += value_err * value_err;

    if (with_gradient) {
      // d(policy term)/d log pi(a|s): the clipped branch is constant.
      const double dlogp = unclipped_obj <= clipped_obj ? -adv * ratio : 0.0;
      for (int i = 0; i < net.k; ++i) {
        if (!batch.mask(i, j)) continue;
        const double p = fp.probs(i, j);
        double g = dlogp * ((i == a ? 1.0 : 0.0) - p);
        g += terms.entropy_coef * p * (fp.log_probs(i, j) + entropy);
        grad_logits(i, j) = g * inv_n;
      }
      grad_values(j) = 2.0 * terms.value_coef * value_err * inv_n;
    }
  }
  out.policy_loss *= inv_n;
  out.value_loss *= inv_n;
  out.entropy *= inv_n;
  out.clip_fraction *= inv_n;
  out.approx_kl *= inv_n;
  out.loss = out.policy_loss + terms.value_coef * out.value_loss - terms.entropy_coef * out.entropy;
  if (!std::isfinite(out.loss)) throw NumericalError("non-finite PPO loss");
  if (with_gradient) out.gradient = backward(net, batch.states, fp, grad_logits, grad_values);
  return out;
}

void PPOConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("ppo." + what); };
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (minibatch_size < 1) fail("minibatch_size must be at least 1");
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) fail("clip_epsilon must lie in (0, 1)");
  if (k < 1) fail("k must be at least 1");
  if (!(r_m >= 0.0 && r_m <= 1.0)) fail("r_m must lie in [0, 1]");
  if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma must lie in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) fail("gae_lambda must lie in [0, 1]");
  if (update_epochs < 1) fail("update_epochs must be at least 1");
  if (!(value_coef >= 0.0)) fail("value_coef must be nonnegative");
  if (!(entropy_coef >= 0.0)) fail("entropy_coef must be nonnegative");
  if (!(max_grad_norm > 0.0)) fail("max_grad_norm must be positive");
  if (hidden < 1) fail("hidden must be at least 1");
}

AdamState AdamState::for_network(const PolicyNetwork<double>& net) {
  return AdamState{PolicyNetwork<double>::zeros(net.k, net.d, net.hidden),
                   PolicyNetwork<double>::zeros(net.k, net.d, net.hidden), 0};
}

void adam_step(PolicyNetwork<double>& net, const PolicyNetwork<double>& grad, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  Eigen::VectorXd theta = net.flatten();
  const Eigen::VectorXd gf = grad.flatten();
  Eigen::VectorXd m = state.m.flatten();
  Eigen::VectorXd v = state.v.flatten();
  m = beta1 * m + (1.0 - beta1) * gf;
  v = beta2 * v + (1.0 - beta2) * gf.cwiseProduct(gf);
  theta.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  net.unflatten(theta);
  state.m.unflatten(m);
  state.v.unflatten(v);
}

double clip_grad_norm(PolicyNetwork<double>& grad, double max_norm) {
  double sq = 0.0;
  grad.for_each([&](const auto& t) { sq += t.squaredNorm(); });
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    grad.for_each([&](auto& t) { t *= scale; });
  }
  return norm;
}

std::size_t RolloutBuffer::transition_count() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.size();
  return n;
}

PPOBatch make_batch(const RolloutBuffer& buffer, const PPOConfig& config) {
  const std::size_t n = buffer.transition_count();
  PPOBatch batch;
  if (n == 0) return batch;
  const Eigen::Index width = buffer.trajectories.front().front().state.vector.size();
  const Eigen::Index k = buffer.trajectories.front().front().state.mask.size();
  batch.states.resize(width, static_cast<Eigen::Index>(n));
  batch.mask.resize(k, static_cast<Eigen::Index>(n));
  batch.actions.reserve(n);
  batch.behavior_logprobs.resize(static_cast<Eigen::Index>(n));
  batch.advantages.resize(static_cast<Eigen::Index>(n));
  batch.returns.resize(static_cast<Eigen::Index>(n));

  Eigen::Index col = 0;
  for (const auto& traj : buffer.trajectories) {
    const auto adv = compute_advantages(traj, config.gamma, config.gae_lambda);
    for (std::size_t t = 0; t < traj.size(); ++t, ++col) {
      const auto& tr = traj[t];
      if (tr.state.vector.size() != width || tr.state.mask.size() != k) {
        throw ShapeError("rollout buffer mixes state shapes");
      }
      batch.states.col(col) = tr.state.vector;
      batch.mask.col(col) = tr.state.mask;
      batch.actions.push_back(tr.action);
      batch.behavior_logprobs[col] = tr.behavior_logprob;
      batch.advantages[col] = adv.advantages[t];
      batch.returns[col] = adv.returns[t];
    }
  }
  if (config.normalize_advantages) {
    normalize_advantages(std::span<double>(batch.advantages.data(), static_cast<std::size_t>(n)));
  }
  return batch;
}

namespace {

PPOBatch gather(const PPOBatch& batch, std::span<const Eigen::Index> idx) {
  PPOBatch out;
  const auto m = static_cast<Eigen::Index>(idx.size());
  out.states.resize(batch.states.rows(), m);
  out.mask.resize(batch.mask.rows(), m);
  out.behavior_logprobs.resize(m);
  out.advantages.resize(m);
  out.returns.resize(m);
  out.actions.resize(idx.size());
  for (Eigen::Index c = 0; c < m; ++c) {
    const Eigen::Index j = idx[static_cast<std::size_t>(c)];
    out.states.col(c) = batch.states.col(j);
    out.mask.col(c) = batch.mask.col(j);
    out.actions[static_cast<std::size_t>(c)] = batch.actions[static_cast<std::size_t>(j)];
    out.behavior_logprobs[c] = batch.behavior_logprobs[j];
    out.advantages[c] = batch.advantages[j];
    out.returns[c] = batch.returns[j];
  }
  return out;
}

}  // namespace

UpdateMetrics update_policy(PolicyNetwork<double>& net, PolicyNetwork<double>& old_net, RolloutBuffer& buffer,
                            const PPOConfig& config, AdamState& optimizer, Rng& rng) {
  if (buffer.transition_count() < config.batch_size) {
    throw PreconditionError("rollout buffer holds " + std::to_string(buffer.transition_count()) +
                            " transitions, fewer than batch_size=" + std::to_string(config.batch_size));
  }
  const PPOBatch batch = make_batch(buffer, config);
  const PolicyNetwork<double> saved_net = net;
  const AdamState saved_optimizer = optimizer;
  const LossTerms terms{config.clip_epsilon, config.value_coef, config.entropy_coef};

  std::vector<Eigen::Index> order(static_cast<std::size_t>(batch.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const std::size_t mb = std::min<std::size_t>(config.minibatch_size, order.size());

  UpdateMetrics metrics;
  long minibatch_id = 0;
  try {
    for (int epoch = 0; epoch < config.update_epochs; ++epoch) {
      shuffle(std::span<Eigen::Index>(order), rng);
      for (std::size_t start = 0; start < order.size(); start += mb, ++minibatch_id) {
        const std::size_t len = std::min(mb, order.size() - start);
        const PPOBatch minibatch = gather(batch, std::span<const Eigen::Index>(order.data() + start, len));
        LossResult result = ppo_loss(minibatch, net, terms, true);
        metrics.grad_norm += clip_grad_norm(result.gradient, config.max_grad_norm);
        adam_step(net, result.gradient, optimizer, config.learning_rate);
        if (!net.all_finite()) throw NumericalError("non-finite parameters after update");
        metrics.loss += result.loss;
        metrics.policy_loss += result.policy_loss;
        metrics.value_loss += result.value_loss;
        metrics.entropy += result.entropy;
        metrics.clip_fraction += result.clip_fraction;
        metrics.approx_kl += result.approx_kl;
        ++metrics.minibatches;
      }
    }
  } catch (const NumericalError& e) {
    net = saved_net;
    optimizer = saved_optimizer;
    throw NumericalError(std::string(e.what()) + " (minibatch " + std::to_string(minibatch_id) + ")", minibatch_id);
  }

  const double count = static_cast<double>(std::max<std::size_t>(metrics.minibatches, 1));
  metrics.loss /= count;
  metrics.policy_loss /= count;
  metrics.value_loss /= count;
  metrics.entropy /= count;
  metrics.clip_fraction /= count;
  metrics.approx_kl /= count;
  metrics.grad_norm /= count;

  old_net = net;
  buffer.clear();
  return metrics;
}

}  // namespace dialcot
