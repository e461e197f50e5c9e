#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "dialcot/roles.hpp"

namespace dialcot {

/// One of the top-k generator outputs for a dialogue step.
struct Candidate {
  std::string text;
  double logprob = 0.0;       ///< Sum of token log-probabilities (natural log), <= 0.
  Eigen::VectorXd features;   ///< Fixed-dimension surrogate for the response's last hidden state.
};

struct GeneratorInfo {
  int feature_dim = 0;
  int max_k = 0;
  std::string backend_name;
  /// Set once a backend had to fall back to rank-based logprobs (-rank).
  bool pseudo_logprobs = false;
};

/// What the engine is asking for. Backends that only see text use `prompt`;
/// environment-aware backends (synthetic, scripted) may also key on the step.
struct GenerationRequest {
  std::string prompt;
  Role role = Role::Decomposer;
  Strategy strategy = Strategy::S;
  std::size_t round = 0;  ///< Index of this role's call within the run.
  std::span<const Turn> history;  ///< Turns completed before this call.
};

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual int dim() const = 0;
  virtual Eigen::VectorXd extract(std::string_view text) const = 0;
  /// Batch form; backends with a network round-trip override it.
  virtual std::vector<Eigen::VectorXd> extract_all(const std::vector<std::string>& texts) const;
};

/// Signed feature hashing of whitespace tokens, scaled to unit norm.
Eigen::VectorXd hash_features(std::string_view text, int d);

class HashFeatureExtractor final : public FeatureExtractor {
 public:
  explicit HashFeatureExtractor(int d);
  int dim() const override { return d_; }
  Eigen::VectorXd extract(std::string_view text) const override { return hash_features(text, d_); }

 private:
  int d_;
};

/// Top-k candidate generator. Implementations must be safe to call from many
/// threads at once.
class Generator {
 public:
  virtual ~Generator() = default;

  virtual GeneratorInfo info() const = 0;

  /// Returns 1..k distinct candidates ordered by logprob, descending.
  /// Throws PreconditionError when k is outside [1, max_k].
  std::vector<Candidate> generate_topk(const GenerationRequest& request, int k);
  std::vector<Candidate> generate_topk(std::string_view prompt, int k);

 protected:
  virtual std::vector<Candidate> generate(const GenerationRequest& request, int k) = 0;
};

/// Sorts by logprob (stable), drops duplicate texts, truncates to k and checks
/// feature shapes. Keeps the top raw candidate if everything else collapses.
std::vector<Candidate> finalize_candidates(std::vector<Candidate> raw, int k, int feature_dim);

struct ScriptEntry {
  std::string match;            ///< Substring (or regex when `is_regex`) tested against the prompt.
  bool is_regex = false;
  std::optional<Role> role;     ///< Restrict the entry to one role.
  std::vector<Candidate> candidates;
  std::string error;            ///< "transport", "transport-retryable" or "too-long" to simulate failures.
};

/// Test backend: returns programmed candidates for matching prompts and
/// records every call.
class ScriptedGenerator final : public Generator {
 public:
  ScriptedGenerator(std::vector<ScriptEntry> script, int feature_dim, int max_k = 16);

  /// Reads a JSON script: [{"match", "regex"?, "role"?, "error"?, "candidates": [{"text",
  /// "logprob", "features"?}]}]. Missing features are filled by hash_features.
  static std::unique_ptr<ScriptedGenerator> from_json_file(const std::string& path, int feature_dim,
                                                           int max_k = 16);
  static std::unique_ptr<ScriptedGenerator> from_json_text(const std::string& text, int feature_dim,
                                                           int max_k = 16);

  GeneratorInfo info() const override;

  std::size_t call_count() const { return calls_.load(); }
  /// Requests seen so far, without their history.
  std::vector<GenerationRequest> call_log() const;

 protected:
  std::vector<Candidate> generate(const GenerationRequest& request, int k) override;

 private:
  struct Compiled {
    ScriptEntry entry;
    std::optional<std::regex> pattern;
  };
  std::vector<Compiled> script_;
  int feature_dim_;
  int max_k_;
  std::atomic<std::size_t> calls_{0};
  mutable std::mutex log_mutex_;
  std::vector<GenerationRequest> log_;
};

/// Adapts a callable; handy for counting generators and fault injection.
class CallbackGenerator final : public Generator {
 public:
  using Fn = std::function<std::vector<Candidate>(const GenerationRequest&, int)>;
  CallbackGenerator(Fn fn, int feature_dim, int max_k = 16, std::string name = "callback");

  GeneratorInfo info() const override;
  std::size_t call_count() const { return calls_.load(); }

 protected:
  std::vector<Candidate> generate(const GenerationRequest& request, int k) override;

 private:
  Fn fn_;
  int feature_dim_;
  int max_k_;
  std::string name_;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace dialcot
