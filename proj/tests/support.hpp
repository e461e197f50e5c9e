#pragma once

// Oracles shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dialcot/dialogue.hpp"
#include "dialcot/ppo.hpp"
#include "dialcot/rng.hpp"

namespace dialcot::testing {

/// A_t as the explicit sum over l of (gamma lambda)^l delta_{t+l}, stopping
/// after the first done step; returns = A + V.
inline AdvantageResult direct_sum_advantages(const std::vector<double>& rewards, const std::vector<double>& values,
                                             const std::vector<bool>& dones, double gamma, double lambda,
                                             double bootstrap = 0.0) {
  const std::size_t n = rewards.size();
  std::vector<double> delta(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double next = t + 1 < n ? values[t + 1] : bootstrap;
    delta[t] = dones[t] ? rewards[t] - values[t] : rewards[t] + gamma * next - values[t];
  }
  AdvantageResult out;
  for (std::size_t t = 0; t < n; ++t) {
    double sum = 0.0;
    double weight = 1.0;
    for (std::size_t u = t; u < n; ++u) {
      sum += weight * delta[u];
      if (dones[u]) break;
      weight *= gamma * lambda;
    }
    out.advantages.push_back(sum);
    out.returns.push_back(sum + values[t]);
  }
  return out;
}

struct GradientCheck {
  double max_rel_error = 0.0;
  double clip_fraction = 0.0;
};

/// Central finite differences (h = 1e-5) against the analytic gradient of the
/// full loss on a random hidden-8, k=3, d=4 net. Ratios are placed away from
/// the clip kinks so the loss is smooth within +-h; with `bind_clip`, half the
/// samples sit on the clipped branch.
inline GradientCheck check_ppo_gradient(Rng& rng, bool bind_clip) {
  constexpr int k = 3, d = 4, hidden = 8, n = 12;
  constexpr double h = 1e-5;
  // Relative error denominators are floored so entries that are zero on both
  // sides (e.g. the clipped branch) compare absolutely.
  constexpr double floor = 1e-6;

  PolicyNetwork<double> net = PolicyNetwork<double>::random(k, d, hidden, rng);
  net.w3 *= 100.0;  // away from the near-uniform init so logits matter
  for (Eigen::Index i = 0; i < net.b1.size(); ++i) net.b1[i] = 0.3 * normal01(rng);

  PPOBatch batch;
  batch.states.resize(k * d, n);
  batch.mask.resize(k, n);
  batch.actions.resize(n);
  batch.behavior_logprobs.resize(n);
  batch.advantages.resize(n);
  batch.returns.resize(n);
  for (int j = 0; j < n; ++j) {
    for (int r = 0; r < k * d; ++r) batch.states(r, j) = normal01(rng);
    const int live = 1 + static_cast<int>(uniform_index(rng, k));
    for (int a = 0; a < k; ++a) batch.mask(a, j) = a < live;
    for (int a = live; a < k; ++a) batch.states.block(a * d, j, d, 1).setZero();
    batch.actions[j] = static_cast<int>(uniform_index(rng, live));
    batch.advantages[j] = normal01(rng);
    batch.returns[j] = normal01(rng);
  }

  LossTerms terms;
  terms.clip_epsilon = 0.2;
  terms.value_coef = uniform01(rng);
  terms.entropy_coef = 0.1 * uniform01(rng);

  const auto fp = forward(net, batch.states, batch.mask);
  const double smooth_ratios[] = {0.5, 0.7, 0.9, 1.0, 1.1, 1.3, 1.6, 2.0};
  for (int j = 0; j < n; ++j) {
    double ratio = smooth_ratios[uniform_index(rng, 8)];
    if (bind_clip && j % 2 == 0) {
      ratio = batch.advantages[j] > 0 ? 1.5 + uniform01(rng) : 0.3 + 0.4 * uniform01(rng);
    }
    batch.behavior_logprobs[j] = fp.log_probs(batch.actions[j], j) - std::log(ratio);
  }

  const LossResult analytic = ppo_loss(batch, net, terms, true);
  const Eigen::VectorXd g = analytic.gradient.flatten();
  Eigen::VectorXd theta = net.flatten();
  PolicyNetwork<double> probe = net;
  GradientCheck out;
  out.clip_fraction = analytic.clip_fraction;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + h;
    probe.unflatten(theta);
    const double up = ppo_loss(batch, probe, terms, false).loss;
    theta[i] = saved - h;
    probe.unflatten(theta);
    const double down = ppo_loss(batch, probe, terms, false).loss;
    theta[i] = saved;
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max({std::abs(numeric), std::abs(g[i]), floor});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(numeric - g[i]) / denom);
  }
  return out;
}

inline Candidate candidate(std::string text, double logprob) {
  return Candidate{std::move(text), logprob, Eigen::VectorXd::Zero(4)};
}

/// Problem with n sub-questions; the last one is the question's final sentence.
inline Problem chain_problem(std::size_t n) {
  Problem p;
  p.id = "chain-" + std::to_string(n);
  p.question = "A box holds 2 balls. Each step adds 1 ball. How many balls are in the box at the end?";
  for (std::size_t i = 1; i < n; ++i) p.gold_sub_questions.push_back("How many balls after step " + std::to_string(i) + "?");
  p.gold_sub_questions.push_back("How many balls are in the box at the end?");
  for (std::size_t i = 1; i <= n; ++i) p.gold_sub_answers.push_back(CanonicalNumber::from_integer(2 + static_cast<long long>(i)));
  p.gold_final_answer = CanonicalNumber::from_integer(2 + static_cast<long long>(n));
  return p;
}

/// Replies from the problem's gold decomposition: the top candidate is gold,
/// the rest are filler. S Decomposer rounds past the gold count say [END].
inline std::vector<Candidate> oracle_reply(const Problem& p, const GenerationRequest& r, int k) {
  std::string top;
  if (r.role == Role::Decomposer) {
    if (r.strategy == Strategy::S) {
      top = r.round < p.gold_sub_questions.size() ? p.gold_sub_questions[r.round] : std::string(kEndMarker);
    } else {
      for (std::size_t i = 0; i < p.gold_sub_questions.size(); ++i) {
        top += std::to_string(i + 1) + ". " + p.gold_sub_questions[i] + "\n";
      }
    }
  } else if (r.strategy == Strategy::A) {
    for (const auto& a : p.gold_sub_answers) top += a.format() + "\n";
    top += "The answer is " + p.gold_final_answer.format() + ".";
  } else {
    top = "The answer is " + p.gold_sub_answers.at(r.round).format() + ".";
  }
  std::vector<Candidate> out{candidate(top, -0.1)};
  for (int i = 1; i < k; ++i) out.push_back(candidate("wrong " + std::to_string(i), -1.0 - i));
  return out;
}

/// Counting generator over oracle_reply.
inline CallbackGenerator oracle_generator(const Problem& p) {
  return CallbackGenerator([p](const GenerationRequest& r, int k) { return oracle_reply(p, r, k); }, 4);
}

inline Problem clips_problem() {
  Problem p;
  p.id = "clips";
  p.question =
      "Natalia sold clips to 48 of her friends in April, and then she sold half as many clips to her friends "
      "in May. How many clips did Natalia sell altogether in April and May?";
  p.gold_sub_questions = {"How many clips did Natalia sell in May?",
                          "How many clips did Natalia sell altogether in April and May?"};
  p.gold_sub_answers = {normalize_answer("24"), normalize_answer("72")};
  p.gold_final_answer = normalize_answer("72");
  return p;
}

/// (golden file stem, rendered prompt) for every role, strategy and round shape.
inline std::vector<std::pair<std::string, std::string>> golden_prompt_cases() {
  const PromptTemplate tmpl = PromptTemplate::builtin();
  const Problem p = clips_problem();
  const std::string sub1 = p.gold_sub_questions[0];
  const std::string sub2 = p.gold_sub_questions[1];
  const std::string ans1 = "Natalia sold 48 / 2 = 24 clips in May.";
  const std::string decomposition = "1. " + sub1 + "\n2. " + sub2;
  const std::vector<Turn> d_turn{{Role::Decomposer, decomposition, 0}};
  const std::vector<Turn> m_turns{{Role::Decomposer, decomposition, 0}, {Role::Solver, ans1, 1}};
  const std::vector<Turn> s_turns{{Role::Decomposer, sub1, 0}, {Role::Solver, ans1, 1}};
  return {
      {"decomposer_A", build_decomposer_prompt(tmpl, Strategy::A, p, {})},
      {"decomposer_M", build_decomposer_prompt(tmpl, Strategy::M, p, {})},
      {"decomposer_S_round0", build_decomposer_prompt(tmpl, Strategy::S, p, {})},
      {"decomposer_S_round1", build_decomposer_prompt(tmpl, Strategy::S, p, s_turns)},
      {"solver_A", build_solver_prompt(tmpl, Strategy::A, p, std::nullopt, d_turn)},
      {"solver_M_step1", build_solver_prompt(tmpl, Strategy::M, p, sub1, d_turn)},
      {"solver_M_step2", build_solver_prompt(tmpl, Strategy::M, p, sub2, m_turns)},
      {"solver_S_step1", build_solver_prompt(tmpl, Strategy::S, p, sub1, {})},
      {"solver_S_step2", build_solver_prompt(tmpl, Strategy::S, p, sub2, s_turns)},
  };
}

inline Problem reward_gold() {
  Problem p;
  p.id = "g";
  p.question = "Q?";
  p.gold_sub_questions = {"a?", "b?", "Q?"};
  p.gold_sub_answers = {normalize_answer("7"), normalize_answer("14"), normalize_answer("11")};
  p.gold_final_answer = normalize_answer("11");
  return p;
}

/// S transcript with the given Solver answers and a matching trajectory.
inline std::pair<Transcript, Trajectory> s_episode(const std::vector<std::string>& answers) {
  Transcript t;
  t.strategy = Strategy::S;
  Trajectory traj;
  State s;
  s.vector = Eigen::VectorXd::Zero(6);
  s.mask = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(3, true);
  for (std::size_t i = 0; i < answers.size(); ++i) {
    t.turns.push_back({Role::Decomposer, "q" + std::to_string(i) + "?", t.turns.size()});
    t.turns.push_back({Role::Solver, "The answer is " + answers[i] + ".", t.turns.size()});
    Transition d;
    d.state = s;
    d.role = Role::Decomposer;
    traj.push_back(d);
    Transition a = d;
    a.role = Role::Solver;
    traj.push_back(a);
  }
  t.final_answer = extract_final_answer(t.turns.back().text);
  return {t, traj};
}

/// Rewards of the Solver transitions after assign_rewards.
inline std::vector<double> solver_rewards(const std::vector<std::string>& answers, const Problem& gold, double r_m) {
  auto [t, traj] = s_episode(answers);
  assign_rewards(t, traj, gold, RewardConfig{r_m, 1.0});
  std::vector<double> out;
  for (const auto& tr : traj) {
    if (tr.role == Role::Solver) out.push_back(tr.reward);
  }
  return out;
}

}  // namespace dialcot::testing
