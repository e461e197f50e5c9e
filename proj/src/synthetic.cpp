#include "dialcot/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <string>

#include "dialcot/errors.hpp"

namespace dialcot {
namespace {

constexpr std::array<const char*, 10> kNames = {"Ava", "Ben", "Chen", "Dara", "Eli",
                                                "Farah", "Gus", "Hana", "Ivan", "Jo"};
constexpr std::array<const char*, 8> kItems = {"marbles", "apples", "stickers", "coins",
                                               "books",   "shells", "cards",    "pencils"};
constexpr std::array<const char*, 4> kStepPrefixes = {"Before that, ", "At the start, ", "After the next step, ",
                                                      "Ignoring the last change, "};

std::string step_sentence(const std::string& name, const std::string& items, const ChainStep& s) {
  const std::string v = std::to_string(s.operand);
  switch (s.op) {
    case '+': return name + " gets " + v + " more " + items + ".";
    case '-': return name + " gives away " + v + " " + items + ".";
    default: return "The number of " + items + " " + name + " has is multiplied by " + v + ".";
  }
}

std::string step_question(const std::string& name, const std::string& items, const ChainStep& s) {
  const std::string v = std::to_string(s.operand);
  const std::string stem = "How many " + items + " does " + name + " have after ";
  switch (s.op) {
    case '+': return stem + "getting " + v + " more?";
    case '-': return stem + "giving away " + v + "?";
    default: return stem + "the number is multiplied by " + v + "?";
  }
}

long long draw_delta(const NoiseSpec& noise, Rng& rng) {
  const long long magnitude = uniform_int(rng, noise.distractor_delta_min, noise.distractor_delta_max);
  return uniform_index(rng, 2) == 0 ? magnitude : -magnitude;
}

// Wrong variant of a gold sub-question: its first integer shifted, or an
// off-by-one-step rephrasing when it carries no number.
std::string perturb_question(const std::string& question, std::size_t variant, const NoiseSpec& noise, Rng& rng) {
  const auto digit = std::find_if(question.begin(), question.end(), [](unsigned char c) { return std::isdigit(c); });
  if (digit != question.end() && variant % 2 == 0) {
    const auto begin = static_cast<std::size_t>(digit - question.begin());
    std::size_t end = begin;
    while (end < question.size() && std::isdigit(static_cast<unsigned char>(question[end]))) ++end;
    const long long value = std::stoll(question.substr(begin, end - begin));
    long long shifted = value + draw_delta(noise, rng);
    if (shifted < 1 || shifted == value) shifted = value + noise.distractor_delta_min + static_cast<long long>(variant);
    return question.substr(0, begin) + std::to_string(shifted) + question.substr(end);
  }
  std::string lowered = question;
  if (!lowered.empty()) lowered[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(lowered[0])));
  const std::size_t which = (variant / 2) % kStepPrefixes.size();
  std::string out = std::string(kStepPrefixes[which]) + lowered;
  if (variant / 2 >= kStepPrefixes.size()) out += " (" + std::to_string(variant) + ")";
  return out;
}

std::string numbered(const std::vector<std::string>& lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out += '\n';
    out += std::to_string(i + 1) + ". " + lines[i];
  }
  return out;
}

std::string answer_text(const CanonicalNumber& v) { return "The answer is " + v.format() + "."; }

CanonicalNumber shifted(const CanonicalNumber& v, long long delta) {
  return v - CanonicalNumber::from_integer(-delta);
}

// Value the step's consistent Solver response states.
CanonicalNumber solver_value(const Problem& p, const DialogueStep& step) {
  const auto& gold = p.gold_sub_answers[step.round];
  return step.carried_error ? gold - (-*step.carried_error) : gold;
}

// k-1 distinct wrong responses for the step; `gold` is excluded.
std::vector<std::string> distractors(const Problem& p, const DialogueStep& step, int k, const NoiseSpec& noise,
                                     const std::string& gold, Rng& rng) {
  std::vector<std::string> out;
  auto add = [&](std::string text) {
    if (text != gold && std::find(out.begin(), out.end(), text) == out.end()) out.push_back(std::move(text));
  };
  const std::size_t n = p.gold_sub_questions.size();
  const std::size_t want = static_cast<std::size_t>(k - 1);
  const std::size_t max_attempts = 64 * (want + 1);

  if (step.role == Role::Decomposer && step.strategy == Strategy::S) {
    // Earlier and later gold steps first, then wrong-operand variants.
    std::vector<std::string> others;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != step.round) others.push_back(p.gold_sub_questions[j]);
    }
    shuffle(std::span<std::string>(others), rng);
    for (auto& q : others) {
      if (out.size() == want) break;
      add(std::move(q));
    }
    for (std::size_t v = 0; out.size() < want && v < max_attempts; ++v) {
      add(perturb_question(p.gold_sub_questions[step.round], v, noise, rng));
    }
  } else if (step.role == Role::Decomposer) {
    for (std::size_t v = 0; out.size() < want && v < max_attempts; ++v) {
      std::vector<std::string> lines = p.gold_sub_questions;
      switch (v % 3) {
        case 0:
          if (lines.size() > 1) {
            shuffle(std::span<std::string>(lines), rng);
            break;
          }
          [[fallthrough]];
        case 1: {
          const std::size_t i = uniform_index(rng, lines.size());
          lines[i] = perturb_question(lines[i], v, noise, rng);
          break;
        }
        default:
          if (lines.size() > 1) {
            lines.erase(lines.begin() + static_cast<std::ptrdiff_t>(uniform_index(rng, lines.size() - 1)));
          } else {
            lines[0] = perturb_question(lines[0], v + 1, noise, rng);
          }
      }
      add(numbered(lines));
    }
  } else if (step.strategy == Strategy::A) {
    for (std::size_t v = 0; out.size() < want && v < max_attempts; ++v) {
      const long long delta = draw_delta(noise, rng);
      std::string text;
      for (std::size_t i = 0; i < n; ++i) {
        const bool last = i + 1 == n;
        const auto value = last ? shifted(p.gold_sub_answers[i], delta) : p.gold_sub_answers[i];
        text += std::to_string(i + 1) + ". " + value.format() + "\n";
      }
      text += answer_text(shifted(p.gold_final_answer, delta));
      add(std::move(text));
    }
  } else {
    const std::string true_gold = answer_text(p.gold_sub_answers[step.round]);
    const CanonicalNumber base = solver_value(p, step);
    for (std::size_t v = 0; out.size() < want && v < max_attempts; ++v) {
      std::string text = answer_text(shifted(base, draw_delta(noise, rng)));
      if (text != true_gold) add(std::move(text));
    }
  }
  if (out.size() < want) throw GenerationError("could not build " + std::to_string(want) + " distinct distractors");
  return out;
}

std::string gold_response(const Problem& p, const DialogueStep& step) {
  if (step.role == Role::Decomposer) {
    return step.strategy == Strategy::S ? p.gold_sub_questions[step.round] : numbered(p.gold_sub_questions);
  }
  if (step.strategy == Strategy::A) {
    std::string text;
    for (std::size_t i = 0; i < p.gold_sub_answers.size(); ++i) {
      text += std::to_string(i + 1) + ". " + p.gold_sub_answers[i].format() + "\n";
    }
    return text + answer_text(p.gold_final_answer);
  }
  return answer_text(solver_value(p, step));
}

Eigen::VectorXd features_for(bool correct, int d, const NoiseSpec& noise, Rng& rng) {
  Eigen::VectorXd f(d);
  const bool visible = correct ? uniform01(rng) < noise.p_correct_visible : true;
  const double signal = correct ? (visible ? 1.0 : 0.0) : -1.0;
  for (int i = 0; i < d; ++i) {
    f[i] = i < noise.signal_dims ? signal : noise.noise_std * normal01(rng);
  }
  return f;
}

}  // namespace

std::vector<long long> evaluate_chain(long long start, const std::vector<ChainStep>& chain) {
  std::vector<long long> values;
  values.reserve(chain.size());
  long long v = start;
  for (const auto& s : chain) {
    switch (s.op) {
      case '+': v += s.operand; break;
      case '-': v -= s.operand; break;
      case '*': v *= s.operand; break;
      default: throw GenerationError(std::string("unknown operator '") + s.op + "'");
    }
    values.push_back(v);
  }
  return values;
}

SyntheticProblem gen_problem(Rng& rng, int n_steps, const ValueRange& range) {
  if (n_steps < 1) throw PreconditionError("n_steps must be at least 1");
  for (int attempt = 0; attempt < 100; ++attempt) {
    if (range.start_min < 1 || range.start_min > range.start_max || range.start_min > range.max_value) continue;
    const long long start = uniform_int(rng, range.start_min, std::min(range.start_max, range.max_value));
    std::vector<ChainStep> chain;
    long long current = start;
    bool feasible = true;
    for (int s = 0; s < n_steps; ++s) {
      std::vector<char> ops;
      if (current + 1 <= range.max_value && range.add_max >= 1) ops.push_back('+');
      if (current >= 2) ops.push_back('-');
      if (range.multiply_max >= 2 && current * 2 <= range.max_value) ops.push_back('*');
      if (ops.empty()) {
        feasible = false;
        break;
      }
      ChainStep step;
      step.op = ops[uniform_index(rng, ops.size())];
      switch (step.op) {
        case '+': step.operand = uniform_int(rng, 1, std::min(range.add_max, range.max_value - current)); break;
        case '-': step.operand = uniform_int(rng, 1, current - 1); break;
        default: step.operand = uniform_int(rng, 2, std::min(range.multiply_max, range.max_value / current)); break;
      }
      current = evaluate_chain(current, {step}).front();
      chain.push_back(step);
    }
    if (!feasible) continue;

    const std::string name = kNames[uniform_index(rng, kNames.size())];
    const std::string items = kItems[uniform_index(rng, kItems.size())];
    const std::string final_question = "How many " + items + " does " + name + " have now?";

    SyntheticProblem sp;
    sp.start = start;
    sp.op_chain = chain;
    Problem& p = sp.problem;
    p.id = "synthetic";
    p.source = "synthetic";
    p.question = name + " has " + std::to_string(start) + " " + items + ".";
    for (const auto& step : chain) p.question += " " + step_sentence(name, items, step);
    p.question += " " + final_question;

    const auto values = evaluate_chain(start, chain);
    for (std::size_t i = 0; i < chain.size(); ++i) {
      p.gold_sub_questions.push_back(i + 1 == chain.size() ? final_question : step_question(name, items, chain[i]));
      p.gold_sub_answers.push_back(CanonicalNumber::from_integer(values[i]));
    }
    p.gold_final_answer = p.gold_sub_answers.back();
    return sp;
  }
  throw GenerationError("no feasible " + std::to_string(n_steps) + "-step chain within value range after 100 attempts");
}

void NoiseSpec::validate(int feature_dim) const {
  if (!(p_correct_visible >= 0.0 && p_correct_visible <= 1.0)) {
    throw ConfigError("noise.p_correct_visible must lie in [0, 1]");
  }
  if (distractor_delta_min < 1 || distractor_delta_max < distractor_delta_min) {
    throw ConfigError("noise distractor deltas need 1 <= min <= max (a delta of 0 is not a distractor)");
  }
  if (signal_dims < 0 || signal_dims > feature_dim) throw ConfigError("noise.signal_dims must lie in [0, feature_dim]");
  if (!(noise_std >= 0.0)) throw ConfigError("noise.noise_std must be nonnegative");
}

std::vector<Candidate> scripted_topk(const Problem& problem, const DialogueStep& step, int k, int feature_dim,
                                     const NoiseSpec& noise, Rng& rng) {
  if (k < 1) throw PreconditionError("k must be at least 1");
  const std::size_t n = problem.gold_sub_questions.size();
  if (n == 0 || problem.gold_sub_answers.size() != n) {
    throw ProtocolError("problem '" + problem.id + "' has no gold decomposition");
  }
  const bool single_call = step.strategy == Strategy::A || (step.strategy == Strategy::M && step.role == Role::Decomposer);
  if (single_call ? step.round != 0 : step.round >= n) {
    throw ProtocolError(std::string(role_name(step.role)) + " round " + std::to_string(step.round) +
                        " is beyond the gold decomposition of " + std::to_string(n) + " steps");
  }

  const std::string gold = gold_response(problem, step);
  std::vector<std::string> texts{gold};
  for (auto& t : distractors(problem, step, k, noise, gold, rng)) texts.push_back(std::move(t));

  std::vector<Candidate> out;
  out.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    Candidate c;
    c.text = std::move(texts[i]);
    c.features = features_for(i == 0, feature_dim, noise, rng);
    out.push_back(std::move(c));
  }
  shuffle(std::span<Candidate>(out), rng);

  std::vector<double> logprobs(out.size());
  for (double& lp : logprobs) lp = -(0.1 + 4.9 * uniform01(rng));
  std::sort(logprobs.begin(), logprobs.end(), std::greater<>());
  for (std::size_t i = 0; i < out.size(); ++i) out[i].logprob = logprobs[i];
  return out;
}

SyntheticGenerator::SyntheticGenerator(Problem problem, int feature_dim, NoiseSpec noise, std::uint64_t seed,
                                       int max_k)
    : problem_(std::move(problem)), feature_dim_(feature_dim), noise_(noise), seed_(seed), max_k_(max_k) {
  noise_.validate(feature_dim_);
}

GeneratorInfo SyntheticGenerator::info() const { return GeneratorInfo{feature_dim_, max_k_, "synthetic", false}; }

std::vector<Candidate> SyntheticGenerator::generate(const GenerationRequest& request, int k) {
  ++calls_;
  Rng rng(derive_seed(seed_, request.role == Role::Decomposer ? 1 : 2, request.round,
                      static_cast<std::uint64_t>(strategy_letter(request.strategy))));
  DialogueStep step{request.role, request.strategy, request.round, std::nullopt};
  if (request.role == Role::Solver) step.carried_error = carried_error(problem_, request.history);
  return scripted_topk(problem_, step, k, feature_dim_, noise_, rng);
}

std::optional<CanonicalNumber> carried_error(const Problem& problem, std::span<const Turn> history,
                                             double tolerance) {
  std::optional<CanonicalNumber> error;
  std::size_t j = 0;
  for (const Turn& t : history) {
    if (t.role != Role::Solver) continue;
    const auto answer = extract_final_answer(t.text);
    if (j >= problem.gold_sub_answers.size()) break;
    const auto& gold = problem.gold_sub_answers[j++];
    if (!answer) {
      error = CanonicalNumber::from_integer(1);
    } else if (error || !answers_equal(*answer, gold, tolerance)) {
      error = *answer - gold;
    }
  }
  return error;
}

OracleSelector::OracleSelector(const Problem& problem, double tolerance) : problem_(problem), tolerance_(tolerance) {}

std::size_t OracleSelector::select(Role role, std::span<const Candidate> candidates) {
  if (role == Role::Decomposer) {
    const std::size_t round = decomposer_round_++;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (round < problem_.gold_sub_questions.size() && candidates[i].text == problem_.gold_sub_questions[round]) {
        return i;
      }
    }
    return 0;
  }
  const std::size_t round = solver_round_++;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto answer = extract_final_answer(candidates[i].text);
    if (answer && round < problem_.gold_sub_answers.size() &&
        answers_equal(*answer, problem_.gold_sub_answers[round], tolerance_)) {
      return i;
    }
  }
  return 0;
}

void SyntheticConfig::validate() const {
  if (n_steps_min < 1 || n_steps_max < n_steps_min) throw ConfigError("synthetic n_steps needs 1 <= min <= max");
  if (feature_dim < 1) throw ConfigError("synthetic.feature_dim must be positive");
  if (k < 1) throw ConfigError("k must be at least 1");
  if (static_cast<std::size_t>(n_steps_max) > max_turns) throw ConfigError("synthetic n_steps_max exceeds max_turns");
  noise.validate(feature_dim);
}

SyntheticProblem synthetic_problem(const SyntheticConfig& config, std::uint64_t stream, std::uint64_t index) {
  Rng rng(derive_seed(config.seed, stream, index));
  const int n = static_cast<int>(uniform_int(rng, config.n_steps_min, config.n_steps_max));
  SyntheticProblem sp;
  try {
    sp = gen_problem(rng, n, config.range);
  } catch (const GenerationError& e) {
    throw GenerationError(std::string(e.what()) + " (seed " + std::to_string(config.seed) + ", stream " +
                          std::to_string(stream) + ", index " + std::to_string(index) + ")");
  }
  static constexpr const char* kStreamNames[] = {"x", "train", "val", "data"};
  sp.problem.id = std::string("syn-") + (stream < 4 ? kStreamNames[stream] : "x") + "-" + std::to_string(index);
  return sp;
}

Episode run_synthetic_episode(const Problem& problem, Selector& selector, const SyntheticConfig& config,
                              std::uint64_t generator_seed, const StepObserver& on_step) {
  SyntheticGenerator generator(problem, config.feature_dim, config.noise, generator_seed);
  DialogueOptions options;
  options.k = config.k;
  options.max_turns = config.max_turns;
  if (config.episode.replay_gold_rounds) options.fixed_rounds = problem.gold_sub_questions.size();
  DialogueEngine engine(generator, PromptTemplate::builtin(), options);
  Episode ep;
  ep.transcript = engine.run_step_by_step(problem, selector, on_step);
  ep.final_correct = ep.transcript.final_answer &&
                     answers_equal(*ep.transcript.final_answer, problem.gold_final_answer,
                                   config.episode.rewards.tolerance);
  return ep;
}

Episode episode(const Problem& problem, const PolicyNetwork<double>& policy, SelectMode mode,
                const SyntheticConfig& config, Rng& rng) {
  SyntheticGenerator generator(problem, config.feature_dim, config.noise, rng());
  DialogueOptions options;
  options.k = config.k;
  options.max_turns = config.max_turns;
  static const PromptTemplate tmpl = PromptTemplate::builtin();
  return run_policy_episode(generator, tmpl, options, problem, policy, mode, rng, config.episode);
}

SyntheticEnvironment::SyntheticEnvironment(SyntheticConfig config) : config_(std::move(config)) {
  config_.validate();
  validation_.reserve(config_.validation_size);
  for (std::size_t i = 0; i < config_.validation_size; ++i) {
    validation_.push_back(synthetic_problem(config_, kValidationStream, i));
    validation_questions_.insert(validation_.back().problem.question);
  }
}

Episode SyntheticEnvironment::training_episode(std::uint64_t episode_seed, const PolicyNetwork<double>& policy,
                                               SelectMode mode) {
  Rng rng(episode_seed);
  SyntheticProblem sp;
  // Training problems never coincide with held-out ones.
  do {
    const int n = static_cast<int>(uniform_int(rng, config_.n_steps_min, config_.n_steps_max));
    sp = gen_problem(rng, n, config_.range);
  } while (validation_questions_.count(sp.problem.question) != 0);
  sp.problem.id = "syn-train";
  return episode(sp.problem, policy, mode, config_, rng);
}

Episode SyntheticEnvironment::validation_episode(std::size_t index, const PolicyNetwork<double>& policy) {
  Rng rng(derive_seed(config_.seed, kValidationStream, index, 0x65706973));
  return episode(validation_.at(index).problem, policy, SelectMode::Infer, config_, rng);
}

}  // namespace dialcot
