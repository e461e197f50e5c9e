#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dialcot/generator.hpp"
#include "dialcot/number.hpp"
#include "dialcot/problem.hpp"
#include "dialcot/roles.hpp"

namespace dialcot {

struct Transcript {
  std::string problem_id;
  Strategy strategy = Strategy::S;
  std::vector<Turn> turns;
  std::optional<CanonicalNumber> final_answer;

  /// Texts of the Solver turns, in order.
  std::vector<std::string> solver_texts() const;
};

std::string transcript_to_json(const Transcript& t);
Transcript transcript_from_json(std::string_view text);

/// Instruction text per (role, strategy), with placeholders {question},
/// {history}, {sub_question} and {sub_questions}.
///
/// File layout: section headers "[decomposer.S]", "[solver.M]", ... each
/// followed by the template body. A line holding only a placeholder that
/// renders empty is dropped.
class PromptTemplate {
 public:
  static PromptTemplate builtin();
  static PromptTemplate parse(std::string_view text);
  static PromptTemplate load(const std::string& path);

  const std::string& section(Role role, Strategy strategy) const;

  struct Slots {
    std::string_view question;
    std::string_view history;
    std::string_view sub_question;
    std::string_view sub_questions;
  };
  std::string render(Role role, Strategy strategy, const Slots& slots) const;

  friend bool operator==(const PromptTemplate&, const PromptTemplate&) = default;

 private:
  std::array<std::string, 6> sections_;
};

/// Text shipped as templates/dialcot_default.tmpl.
std::string_view builtin_template_text();

std::string build_decomposer_prompt(const PromptTemplate& tmpl, Strategy strategy, const Problem& problem,
                                    std::span<const Turn> history);

/// `history` holds the completed turns (the pending sub-question is passed
/// separately). For A it must contain the Decomposer turn listing all sub-questions.
std::string build_solver_prompt(const PromptTemplate& tmpl, Strategy strategy, const Problem& problem,
                                const std::optional<std::string>& pending_sub_question,
                                std::span<const Turn> history);

/// One sub-question per non-empty line, with "1.", "1)" and "-" markers removed.
std::vector<std::string> parse_subquestions(std::string_view decomposer_output);

/// Picks one candidate per dialogue step.
class Selector {
 public:
  virtual ~Selector() = default;
  virtual std::size_t select(Role role, std::span<const Candidate> candidates) = 0;
};

/// Plain DialCoT: the highest-probability candidate.
class GreedySelector final : public Selector {
 public:
  std::size_t select(Role, std::span<const Candidate>) override { return 0; }
};

using StepObserver = std::function<void(Role, std::span<const Candidate>, std::size_t chosen)>;

struct DialogueOptions {
  int k = 3;
  /// Upper bound on dialogue rounds (sub-questions).
  std::size_t max_turns = 10;
  /// Replay mode: run exactly this many S rounds (the gold sub-question count)
  /// instead of detecting the terminal sub-question.
  std::optional<std::size_t> fixed_rounds;
};

inline constexpr std::string_view kEndMarker = "[END]";

/// Executes the three schedules over a generator. Runs are independent and
/// may execute concurrently when the generator allows it.
class DialogueEngine {
 public:
  DialogueEngine(Generator& generator, PromptTemplate tmpl, DialogueOptions options = {});

  Transcript run(Strategy strategy, const Problem& problem, Selector& selector,
                 const StepObserver& on_step = {}) const;

  Transcript run_all_at_once(const Problem& problem, Selector& selector, const StepObserver& on_step = {}) const;
  Transcript run_mixed(const Problem& problem, Selector& selector, const StepObserver& on_step = {}) const;
  Transcript run_step_by_step(const Problem& problem, Selector& selector,
                              const StepObserver& on_step = {}) const;

  const DialogueOptions& options() const { return options_; }
  const PromptTemplate& prompt_template() const { return template_; }

 private:
  std::string step(Role role, Strategy strategy, std::size_t round, std::span<const Turn> history,
                   const std::string& prompt, Selector& selector, const StepObserver& on_step) const;

  Generator& generator_;
  PromptTemplate template_;
  DialogueOptions options_;
};

/// Lowercased, whitespace-collapsed form used for terminal detection.
std::string normalize_sentence(std::string_view text);

}  // namespace dialcot
