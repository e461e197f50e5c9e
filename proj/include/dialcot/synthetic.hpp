#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <span>
#include <unordered_set>
#include <vector>

#include "dialcot/dialogue.hpp"
#include "dialcot/generator.hpp"
#include "dialcot/problem.hpp"
#include "dialcot/rng.hpp"
#include "dialcot/trainer.hpp"

namespace dialcot {

struct ChainStep {
  char op = '+';  ///< '+', '-' or '*'
  long long operand = 0;

  friend bool operator==(const ChainStep&, const ChainStep&) = default;
};

struct SyntheticProblem {
  Problem problem;
  long long start = 0;
  std::vector<ChainStep> op_chain;
};

/// Value after each step, applied left to right.
std::vector<long long> evaluate_chain(long long start, const std::vector<ChainStep>& chain);

struct ValueRange {
  long long start_min = 2;
  long long start_max = 20;
  long long max_value = 500;  ///< every intermediate stays in [1, max_value]
  long long add_max = 20;
  long long multiply_max = 4;
};

/// Templated word problem with one gold sub-question per chain step; the last
/// sub-question repeats the question finally asked.
SyntheticProblem gen_problem(Rng& rng, int n_steps, const ValueRange& range);

struct NoiseSpec {
  double p_correct_visible = 1.0;
  long long distractor_delta_min = 1;
  long long distractor_delta_max = 5;
  int signal_dims = 4;
  double noise_std = 1.0;

  void validate(int feature_dim) const;
};

struct DialogueStep {
  Role role = Role::Decomposer;
  Strategy strategy = Strategy::S;
  std::size_t round = 0;
  /// Solver only: how far the previous Solver answer was from gold. Once set,
  /// every candidate is shifted by it and none equals the gold sub-answer.
  std::optional<CanonicalNumber> carried_error;
};

/// Error carried into the next Solver step by the completed turns, if any
/// earlier Solver answer missed its gold sub-answer.
std::optional<CanonicalNumber> carried_error(const Problem& problem, std::span<const Turn> history,
                                             double tolerance = kDefaultAnswerTolerance);

/// Candidates for one dialogue step: the gold response plus k-1 wrong ones,
/// shuffled, with correctness encoded only in the features. After a wrong
/// Solver answer the "gold" response is the one consistent with that mistake.
std::vector<Candidate> scripted_topk(const Problem& problem, const DialogueStep& step, int k, int feature_dim,
                                     const NoiseSpec& noise, Rng& rng);

/// Generator bound to one problem; step noise is seeded from (seed, role, round)
/// so every selector sees the same candidate sets.
class SyntheticGenerator final : public Generator {
 public:
  SyntheticGenerator(Problem problem, int feature_dim, NoiseSpec noise, std::uint64_t seed, int max_k = 16);

  GeneratorInfo info() const override;
  std::size_t call_count() const { return calls_.load(); }

 protected:
  std::vector<Candidate> generate(const GenerationRequest& request, int k) override;

 private:
  Problem problem_;
  int feature_dim_;
  NoiseSpec noise_;
  std::uint64_t seed_;
  int max_k_;
  std::atomic<std::size_t> calls_{0};
};

/// Picks the gold candidate by reading the problem's decomposition.
class OracleSelector final : public Selector {
 public:
  explicit OracleSelector(const Problem& problem, double tolerance = kDefaultAnswerTolerance);
  std::size_t select(Role role, std::span<const Candidate> candidates) override;

 private:
  const Problem& problem_;
  double tolerance_;
  std::size_t decomposer_round_ = 0;
  std::size_t solver_round_ = 0;
};

class RandomSelector final : public Selector {
 public:
  explicit RandomSelector(Rng& rng) : rng_(rng) {}
  std::size_t select(Role, std::span<const Candidate> candidates) override {
    return static_cast<std::size_t>(uniform_index(rng_, candidates.size()));
  }

 private:
  Rng& rng_;
};

struct SyntheticConfig {
  int n_steps_min = 2;
  int n_steps_max = 3;
  ValueRange range;
  NoiseSpec noise;
  int feature_dim = 16;
  int k = 3;
  std::size_t validation_size = 500;
  std::uint64_t seed = 7;
  std::size_t max_turns = 10;
  EpisodeSettings episode;

  void validate() const;
};

/// Problems for index i of a named stream ("train", "val", "data").
SyntheticProblem synthetic_problem(const SyntheticConfig& config, std::uint64_t stream, std::uint64_t index);

inline constexpr std::uint64_t kTrainStream = 1;
inline constexpr std::uint64_t kValidationStream = 2;
inline constexpr std::uint64_t kDatasetStream = 3;

/// DialCoT-S over scripted_topk with an arbitrary selector, rewards from gold.
Episode run_synthetic_episode(const Problem& problem, Selector& selector, const SyntheticConfig& config,
                              std::uint64_t generator_seed, const StepObserver& on_step = {});

/// DialCoT-S over scripted_topk with the policy as selector.
Episode episode(const Problem& problem, const PolicyNetwork<double>& policy, SelectMode mode,
                const SyntheticConfig& config, Rng& rng);

/// Training stream of fresh problems plus a fixed held-out validation set.
class SyntheticEnvironment final : public Environment {
 public:
  explicit SyntheticEnvironment(SyntheticConfig config);

  int k() const override { return config_.k; }
  int feature_dim() const override { return config_.feature_dim; }
  Episode training_episode(std::uint64_t episode_seed, const PolicyNetwork<double>& policy,
                           SelectMode mode) override;
  std::size_t validation_size() const override { return validation_.size(); }
  Episode validation_episode(std::size_t index, const PolicyNetwork<double>& policy) override;

  const std::vector<SyntheticProblem>& validation_problems() const { return validation_; }
  const SyntheticConfig& config() const { return config_; }

 private:
  SyntheticConfig config_;
  std::vector<SyntheticProblem> validation_;
  std::unordered_set<std::string> validation_questions_;
};

}  // namespace dialcot
