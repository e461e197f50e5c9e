#include "dialcot/trainer.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "dialcot/errors.hpp"

namespace dialcot {

PolicySelector::PolicySelector(const PolicyNetwork<double>& net, SelectMode mode, Rng& rng,
                               bool select_decomposer_steps)
    : net_(net), mode_(mode), rng_(rng), select_decomposer_steps_(select_decomposer_steps) {}

std::size_t PolicySelector::select(Role role, std::span<const Candidate> candidates) {
  if (role == Role::Decomposer && !select_decomposer_steps_) return 0;
  State state = build_state(candidates, net_.k, net_.d);
  const PolicyOutput out = policy_forward(net_, state);
  const ActionChoice choice = select_action(out.dist, mode_, rng_);
  Transition t;
  t.state = std::move(state);
  t.action = choice.action;
  t.behavior_logprob = choice.logprob;
  t.value = out.value;
  t.role = role;
  trajectory_.push_back(std::move(t));
  return static_cast<std::size_t>(choice.action);
}

Episode run_policy_episode(Generator& generator, const PromptTemplate& tmpl, const DialogueOptions& options,
                           const Problem& problem, const PolicyNetwork<double>& policy, SelectMode mode, Rng& rng,
                           const EpisodeSettings& settings) {
  if (policy.k != options.k) {
    throw ShapeError("policy k=" + std::to_string(policy.k) + " but dialogue k=" + std::to_string(options.k));
  }
  DialogueOptions opts = options;
  if (settings.replay_gold_rounds && !problem.gold_sub_questions.empty()) {
    opts.fixed_rounds = problem.gold_sub_questions.size();
  }
  DialogueEngine engine(generator, tmpl, opts);
  PolicySelector selector(policy, mode, rng, settings.select_decomposer_steps);
  Episode ep;
  ep.transcript = engine.run_step_by_step(problem, selector);
  ep.trajectory = selector.take_trajectory();
  assign_rewards(ep.transcript, ep.trajectory, problem, settings.rewards);
  ep.final_correct = ep.transcript.final_answer &&
                     answers_equal(*ep.transcript.final_answer, problem.gold_final_answer, settings.rewards.tolerance);
  return ep;
}

DatasetEnvironment::DatasetEnvironment(Generator& generator, PromptTemplate tmpl, DialogueOptions options,
                                       std::vector<Problem> train, std::vector<Problem> validation,
                                       EpisodeSettings settings, std::uint64_t seed)
    : generator_(generator),
      template_(std::move(tmpl)),
      options_(options),
      train_(std::move(train)),
      validation_(std::move(validation)),
      settings_(settings),
      seed_(seed) {
  if (train_.empty()) throw DataError("training set is empty");
}

Episode DatasetEnvironment::training_episode(std::uint64_t episode_seed, const PolicyNetwork<double>& policy,
                                             SelectMode mode) {
  Rng rng(episode_seed);
  const Problem& p = train_[uniform_index(rng, train_.size())];
  return run_policy_episode(generator_, template_, options_, p, policy, mode, rng, settings_);
}

Episode DatasetEnvironment::validation_episode(std::size_t index, const PolicyNetwork<double>& policy) {
  Rng rng(derive_seed(seed_, 0x7661, index));
  return run_policy_episode(generator_, template_, options_, validation_.at(index), policy, SelectMode::Infer, rng,
                            settings_);
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

double evaluate_policy(Environment& env, const PolicyNetwork<double>& policy, int workers) {
  const std::size_t n = env.validation_size();
  if (n == 0) return 0.0;
  std::vector<char> correct(n, 0);
  parallel_for(n, workers, [&](std::size_t i) {
    try {
      correct[i] = env.validation_episode(i, policy).final_correct ? 1 : 0;
    } catch (const Error&) {
      correct[i] = 0;
    }
  });
  std::size_t hits = 0;
  for (char c : correct) hits += static_cast<std::size_t>(c);
  return static_cast<double>(hits) / static_cast<double>(n);
}

namespace {

struct CollectedEpisode {
  std::optional<Episode> episode;
  std::string error;
};

// Episodes [first, first + count) of update `update`; attempt a retries with a fresh seed.
std::vector<CollectedEpisode> collect_wave(Environment& env, const PolicyNetwork<double>& old_net,
                                           const TrainConfig& config, int update, std::size_t first,
                                           std::size_t count) {
  std::vector<CollectedEpisode> out(count);
  parallel_for(count, config.workers, [&](std::size_t i) {
    const std::uint64_t index = first + i;
    for (int attempt = 0; attempt <= config.max_episode_retries; ++attempt) {
      try {
        const std::uint64_t seed =
            derive_seed(config.ppo.seed, static_cast<std::uint64_t>(update) + 1, index, static_cast<std::uint64_t>(attempt));
        out[i].episode = env.training_episode(seed, old_net, SelectMode::Explore);
        return;
      } catch (const Error& e) {
        out[i].error = e.what();
      }
    }
  });
  return out;
}

}  // namespace

TrainResult train(Environment& env, const TrainConfig& config, const UpdateCallback& on_update) {
  config.ppo.validate();
  if (env.k() != config.ppo.k) {
    throw ShapeError("environment k=" + std::to_string(env.k()) + " but ppo.k=" + std::to_string(config.ppo.k));
  }
  Rng rng(derive_seed(config.ppo.seed, 0x696e6974));
  TrainResult result;
  result.net = PolicyNetwork<double>::random(config.ppo.k, env.feature_dim(), config.ppo.hidden, rng);
  result.optimizer = AdamState::for_network(result.net);
  PolicyNetwork<double> old_net = result.net;

  auto save_rng = [&] {
    std::ostringstream os;
    os << rng;
    result.rng_state = os.str();
  };
  save_rng();
  if (config.max_updates <= 0) return result;

  double best_accuracy = -1.0;
  int stale_evaluations = 0;
  const std::size_t wave = static_cast<std::size_t>(std::max(1, config.workers)) * 8;

  for (int update = 0; update < config.max_updates; ++update) {
    RolloutBuffer buffer;
    std::size_t transitions = 0;
    std::size_t episodes = 0;
    std::size_t correct = 0;
    double reward_total = 0.0;
    int consecutive_failures = 0;

    // Waves are computed in parallel but consumed in episode order, so the
    // buffer does not depend on the worker count.
    std::size_t next_episode = 0;
    while (transitions < config.ppo.batch_size) {
      auto collected = collect_wave(env, old_net, config, update, next_episode, wave);
      next_episode += wave;
      for (auto& c : collected) {
        if (transitions >= config.ppo.batch_size) break;
        if (!c.episode) {
          if (++consecutive_failures >= config.max_episode_retries) {
            throw TrainingAborted("environment failed " + std::to_string(consecutive_failures) +
                                  " consecutive episodes; last error: " + c.error);
          }
          continue;
        }
        consecutive_failures = 0;
        Episode& ep = *c.episode;
        if (ep.trajectory.empty()) continue;
        for (const auto& t : ep.trajectory) reward_total += t.reward;
        correct += ep.final_correct ? 1 : 0;
        ++episodes;
        transitions += ep.trajectory.size();
        buffer.trajectories.push_back(std::move(ep.trajectory));
      }
    }

    const UpdateMetrics m = update_policy(result.net, old_net, buffer, config.ppo, result.optimizer, rng);
    result.updates = update + 1;

    CurvePoint point;
    point.update_index = update;
    point.mean_reward = episodes ? reward_total / static_cast<double>(episodes) : 0.0;
    point.train_accuracy = episodes ? static_cast<double>(correct) / static_cast<double>(episodes) : 0.0;
    point.clip_fraction = m.clip_fraction;
    point.approx_kl = m.approx_kl;
    point.policy_loss = m.policy_loss;
    point.value_loss = m.value_loss;
    point.entropy = m.entropy;
    point.episodes = episodes;
    point.transitions = transitions;

    const bool evaluate = (update + 1) % std::max(1, config.eval_interval) == 0 || update + 1 == config.max_updates;
    bool stop = false;
    if (evaluate) {
      point.val_accuracy = evaluate_policy(env, result.net, config.workers);
      if (point.val_accuracy > best_accuracy) {
        best_accuracy = point.val_accuracy;
        stale_evaluations = 0;
      } else if (++stale_evaluations >= config.patience) {
        stop = true;
      }
    } else if (!result.curve.empty()) {
      point.val_accuracy = result.curve.back().val_accuracy;
    }
    result.curve.push_back(point);
    save_rng();
    if (on_update) on_update(point, result);
    if (stop) break;
  }
  return result;
}

}  // namespace dialcot
