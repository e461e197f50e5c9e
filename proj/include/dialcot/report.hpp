#pragma once

#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "dialcot/dialogue.hpp"
#include "dialcot/trainer.hpp"

namespace dialcot {

/// How one problem went: final correctness plus one entry per gold sub-step.
struct ProblemOutcome {
  bool correct = false;
  bool failed = false;
  std::vector<bool> step_correct;
};

/// Sub-answers a transcript committed to, in order. A packs them as lines of
/// its single Solver turn; M and S have one Solver turn per sub-question.
std::vector<std::optional<CanonicalNumber>> solver_step_answers(const Transcript& transcript);

ProblemOutcome score_transcript(const Transcript& transcript, const Problem& problem, double tolerance);
/// An errored run: wrong at the final answer and at every gold sub-step.
ProblemOutcome failed_outcome(const Problem& problem);

struct AccuracyReport {
  std::string strategy;
  std::string selector;  ///< "greedy" or "policy"
  std::size_t n_problems = 0;
  std::size_t n_failed_runs = 0;
  double overall_accuracy = 0.0;
  /// Entry i: accuracy at sub-step i among problems whose gold decomposition has more than i steps.
  std::vector<double> per_step_accuracy;
  std::optional<double> wall_time;

  /// Throws DataError when an accuracy leaves [0, 1] or counts disagree.
  void validate() const;
  friend bool operator==(const AccuracyReport&, const AccuracyReport&) = default;
};

/// Overall accuracy counts every problem (an empty list scores 0). Per-step
/// accuracy uses only outcomes with `step_depth` gold steps when it is set.
AccuracyReport aggregate(const std::vector<ProblemOutcome>& outcomes, Strategy strategy, std::string selector,
                         std::optional<std::size_t> step_depth = std::nullopt);

/// Greedy top-1 against the policy on the same problems and candidate sets.
struct SelectorComparison {
  AccuracyReport greedy;
  AccuracyReport policy;
  double delta = 0.0;  ///< policy minus greedy overall accuracy
  std::size_t step_depth = 3;

  friend bool operator==(const SelectorComparison&, const SelectorComparison&) = default;
};

std::string report_to_json(const AccuracyReport& report);
AccuracyReport report_from_json(std::string_view text);
std::string comparison_to_json(const SelectorComparison& comparison);
SelectorComparison comparison_from_json(std::string_view text);

/// Columns: update_index, mean_reward, val_accuracy, clip_fraction, approx_kl.
void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve);
std::vector<CurvePoint> read_curve_csv(std::istream& in);

/// Every CurvePoint field as one JSON object.
std::string curve_point_to_json(const CurvePoint& point);

struct KSweepRow {
  int k = 0;
  double greedy_accuracy = 0.0;
  double policy_accuracy = 0.0;
  int updates = 0;

  friend bool operator==(const KSweepRow&, const KSweepRow&) = default;
};

void write_k_sweep_csv(std::ostream& out, const std::vector<KSweepRow>& rows);
std::vector<KSweepRow> read_k_sweep_csv(std::istream& in);

/// Shortest text that parses back to the same double.
std::string format_double(double value);

}  // namespace dialcot
