#include "dialcot/dialogue.hpp"

#include <algorithm>
#include <cctype>
#include <exception>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dialcot/errors.hpp"

namespace dialcot {
namespace {

using json = nlohmann::json;

constexpr std::string_view kBuiltinTemplate =
    R"([decomposer.A]
Instruction: You are the Decomposer. Break the question below into simpler sub-questions that lead to the answer. Write one sub-question per line and end with the question that is finally asked.
Question: {question}
Decomposer:
[decomposer.M]
Instruction: You are the Decomposer. Break the question below into simpler sub-questions that lead to the answer. Write one sub-question per line and end with the question that is finally asked.
Question: {question}
Decomposer:
[decomposer.S]
Instruction: You are the Decomposer. Read the question and the dialogue so far, then ask the single next sub-question. Ask the question that is finally asked last.
Question: {question}
{history}
Decomposer:
[solver.A]
Instruction: You are the Solver. Answer every sub-question in order, one line each, then state the final answer as "The answer is <number>".
Question: {question}
Sub-questions:
{sub_questions}
Solver:
[solver.M]
Instruction: You are the Solver. Use the steps already worked out to answer the current sub-question.
Question: {question}
{history}
Sub-question: {sub_question}
Solver:
[solver.S]
Instruction: You are the Solver. Answer the Decomposer's latest sub-question using the dialogue so far.
Question: {question}
{history}
Decomposer: {sub_question}
Solver:
)";

std::size_t section_index(Role role, Strategy strategy) {
  const std::size_t r = role == Role::Decomposer ? 0 : 3;
  switch (strategy) {
    case Strategy::A: return r + 0;
    case Strategy::M: return r + 1;
    case Strategy::S: return r + 2;
  }
  return r;
}

std::string section_name(Role role, Strategy strategy) {
  return std::string(role == Role::Decomposer ? "decomposer." : "solver.") + strategy_letter(strategy);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + needle.size())) ++n;
  return n;
}

void validate_section(const std::string& body, Role role, Strategy strategy) {
  const std::string name = section_name(role, strategy);
  if (count_occurrences(body, "{question}") != 1) {
    throw ConfigError("template section [" + name + "] must contain {question} exactly once");
  }
  auto require = [&](std::string_view slot) {
    if (body.find(slot) == std::string::npos) {
      throw ConfigError("template section [" + name + "] is missing " + std::string(slot));
    }
  };
  if (strategy == Strategy::S) require("{history}");
  if (role == Role::Solver && strategy == Strategy::M) require("{history}");
  if (role == Role::Solver && strategy == Strategy::A) require("{sub_questions}");
  if (role == Role::Solver && strategy != Strategy::A) require("{sub_question}");
}

std::string render_history(std::span<const Turn> turns) {
  std::string out;
  for (const auto& t : turns) {
    if (!out.empty()) out += '\n';
    out += role_prefix(t.role);
    out += t.text;
  }
  return out;
}

std::string strip_role_prefix(std::string_view text, Role role) {
  text = trim(text);
  if (text.starts_with(role_prefix(role))) text.remove_prefix(role_prefix(role).size());
  return std::string(trim(text));
}

std::string strip_enumeration(std::string_view line) {
  line = trim(line);
  if (line.starts_with("- ") || line.starts_with("* ") || line == "-") {
    line.remove_prefix(1);
    return std::string(trim(line));
  }
  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) {
    const std::size_t after = i + 1;
    if (after == line.size() || std::isspace(static_cast<unsigned char>(line[after]))) {
      line.remove_prefix(after);
    }
  }
  return std::string(trim(line));
}

}  // namespace

Strategy parse_strategy(std::string_view text) {
  if (text == "A" || text == "a") return Strategy::A;
  if (text == "M" || text == "m") return Strategy::M;
  if (text == "S" || text == "s") return Strategy::S;
  throw ConfigError("unknown strategy '" + std::string(text) + "' (expected A, M or S)");
}

Role parse_role(std::string_view text) {
  if (text == "Decomposer" || text == "decomposer") return Role::Decomposer;
  if (text == "Solver" || text == "solver") return Role::Solver;
  throw ConfigError("unknown role '" + std::string(text) + "'");
}

std::vector<std::string> Transcript::solver_texts() const {
  std::vector<std::string> out;
  for (const auto& t : turns) {
    if (t.role == Role::Solver) out.push_back(t.text);
  }
  return out;
}

std::string transcript_to_json(const Transcript& t) {
  json doc;
  doc["problem_id"] = t.problem_id;
  doc["strategy"] = std::string(1, strategy_letter(t.strategy));
  doc["turns"] = json::array();
  for (const auto& turn : t.turns) {
    doc["turns"].push_back(
        {{"role", std::string(role_name(turn.role))}, {"text", turn.text}, {"step_index", turn.step_index}});
  }
  doc["final_answer"] = t.final_answer ? json(t.final_answer->format()) : json(nullptr);
  return doc.dump(2);
}

Transcript transcript_from_json(std::string_view text) {
  const json doc = json::parse(text);
  Transcript t;
  t.problem_id = doc.at("problem_id").get<std::string>();
  t.strategy = parse_strategy(doc.at("strategy").get<std::string>());
  for (const auto& turn : doc.at("turns")) {
    t.turns.push_back(Turn{parse_role(turn.at("role").get<std::string>()), turn.at("text").get<std::string>(),
                           turn.at("step_index").get<std::size_t>()});
  }
  if (!doc.at("final_answer").is_null()) {
    t.final_answer = CanonicalNumber::parse(doc["final_answer"].get<std::string>());
  }
  return t;
}

std::string_view builtin_template_text() { return kBuiltinTemplate; }

PromptTemplate PromptTemplate::builtin() { return parse(kBuiltinTemplate); }

PromptTemplate PromptTemplate::parse(std::string_view text) {
  PromptTemplate tmpl;
  std::array<bool, 6> seen{};
  std::optional<std::size_t> current;
  std::vector<std::string> lines;

  auto flush = [&] {
    if (!current) return;
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
    std::string body;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (i) body += '\n';
      body += lines[i];
    }
    tmpl.sections_[*current] = std::move(body);
    lines.clear();
  };

  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string_view t = trim(line);
    if (t.size() > 2 && t.front() == '[' && t.back() == ']' && t.find('.') != std::string_view::npos &&
        t.find('{') == std::string_view::npos) {
      flush();
      const std::string_view name = t.substr(1, t.size() - 2);
      const auto dot = name.find('.');
      const std::string_view role_text = name.substr(0, dot);
      const std::string_view strat_text = name.substr(dot + 1);
      Role role;
      if (role_text == "decomposer") {
        role = Role::Decomposer;
      } else if (role_text == "solver") {
        role = Role::Solver;
      } else {
        throw ConfigError("unknown template section [" + std::string(name) + "]");
      }
      const Strategy strategy = parse_strategy(strat_text);
      const std::size_t idx = section_index(role, strategy);
      if (seen[idx]) throw ConfigError("duplicate template section [" + std::string(name) + "]");
      seen[idx] = true;
      current = idx;
      continue;
    }
    if (!current) {
      if (t.empty() || t.starts_with("#")) continue;
      throw ConfigError("template text before the first section header");
    }
    lines.push_back(line);
  }
  flush();

  for (Role role : {Role::Decomposer, Role::Solver}) {
    for (Strategy s : {Strategy::A, Strategy::M, Strategy::S}) {
      if (!seen[section_index(role, s)]) {
        throw ConfigError("template is missing section [" + section_name(role, s) + "]");
      }
      validate_section(tmpl.sections_[section_index(role, s)], role, s);
    }
  }
  return tmpl;
}

PromptTemplate PromptTemplate::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open template '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

const std::string& PromptTemplate::section(Role role, Strategy strategy) const {
  return sections_[section_index(role, strategy)];
}

std::string PromptTemplate::render(Role role, Strategy strategy, const Slots& slots) const {
  const std::string& body = section(role, strategy);
  const std::pair<std::string_view, std::string_view> values[] = {{"{question}", slots.question},
                                                                  {"{history}", slots.history},
                                                                  {"{sub_question}", slots.sub_question},
                                                                  {"{sub_questions}", slots.sub_questions}};
  std::string out;
  std::istringstream in(body);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    bool drop = false;
    for (const auto& [slot, value] : values) {
      if (trim(line) == slot && value.empty()) drop = true;
    }
    if (drop) continue;

    std::string rendered;
    std::size_t i = 0;
    while (i < line.size()) {
      bool replaced = false;
      if (line[i] == '{') {
        for (const auto& [slot, value] : values) {
          if (std::string_view(line).substr(i, slot.size()) == slot) {
            rendered += value;
            i += slot.size();
            replaced = true;
            break;
          }
        }
      }
      if (!replaced) rendered += line[i++];
    }
    if (!first) out += '\n';
    out += rendered;
    first = false;
  }
  return out;
}

std::string build_decomposer_prompt(const PromptTemplate& tmpl, Strategy strategy, const Problem& problem,
                                    std::span<const Turn> history) {
  if (strategy != Strategy::S && !history.empty()) {
    throw ProtocolError(std::string("strategy ") + strategy_letter(strategy) +
                        " runs the Decomposer once, on an empty transcript");
  }
  const std::string rendered_history = strategy == Strategy::S ? render_history(history) : std::string{};
  return tmpl.render(Role::Decomposer, strategy, {problem.question, rendered_history, {}, {}});
}

std::string build_solver_prompt(const PromptTemplate& tmpl, Strategy strategy, const Problem& problem,
                                const std::optional<std::string>& pending_sub_question,
                                std::span<const Turn> history) {
  switch (strategy) {
    case Strategy::A: {
      if (pending_sub_question) throw ProtocolError("strategy A answers all sub-questions at once");
      const auto decomposer = std::find_if(history.begin(), history.end(),
                                           [](const Turn& t) { return t.role == Role::Decomposer; });
      if (decomposer == history.end()) throw ProtocolError("strategy A Solver needs the Decomposer turn");
      const auto subs = parse_subquestions(decomposer->text);
      std::string listing;
      for (std::size_t i = 0; i < subs.size(); ++i) {
        if (i) listing += '\n';
        listing += std::to_string(i + 1) + ". " + subs[i];
      }
      return tmpl.render(Role::Solver, strategy, {problem.question, {}, {}, listing});
    }
    case Strategy::M: {
      if (!pending_sub_question) throw ProtocolError("strategy M Solver needs a pending sub-question");
      std::string working;
      for (const auto& t : history) {
        if (t.role != Role::Solver) continue;
        if (!working.empty()) working += '\n';
        working += t.text;
      }
      return tmpl.render(Role::Solver, strategy, {problem.question, working, *pending_sub_question, {}});
    }
    case Strategy::S: {
      if (!pending_sub_question) throw ProtocolError("strategy S Solver needs a pending sub-question");
      const std::string rendered_history = render_history(history);
      return tmpl.render(Role::Solver, strategy, {problem.question, rendered_history, *pending_sub_question, {}});
    }
  }
  throw ProtocolError("unknown strategy");
}

std::vector<std::string> parse_subquestions(std::string_view decomposer_output) {
  std::vector<std::string> out;
  std::istringstream in{std::string(decomposer_output)};
  std::string line;
  while (std::getline(in, line)) {
    std::string cleaned = strip_enumeration(line);
    if (cleaned.starts_with(role_prefix(Role::Decomposer))) {
      cleaned = std::string(trim(std::string_view(cleaned).substr(role_prefix(Role::Decomposer).size())));
    }
    if (!cleaned.empty()) out.push_back(std::move(cleaned));
  }
  if (out.empty()) throw EmptyDecomposition("Decomposer produced no sub-questions");
  return out;
}

std::string normalize_sentence(std::string_view text) {
  std::string out;
  bool space = false;
  for (char c : trim(text)) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out += ' ';
    space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

DialogueEngine::DialogueEngine(Generator& generator, PromptTemplate tmpl, DialogueOptions options)
    : generator_(generator), template_(std::move(tmpl)), options_(options) {
  if (options_.k < 1) throw ConfigError("k must be at least 1");
  if (options_.max_turns < 1) throw ConfigError("max_turns must be at least 1");
}

std::string DialogueEngine::step(Role role, Strategy strategy, std::size_t round, std::span<const Turn> history,
                                 const std::string& prompt, Selector& selector,
                                 const StepObserver& on_step) const {
  const std::size_t step_index = history.size();
  std::vector<Candidate> candidates;
  try {
    candidates = generator_.generate_topk(GenerationRequest{prompt, role, strategy, round, history}, options_.k);
  } catch (const std::exception& e) {
    std::throw_with_nested(StepError(std::string(role_name(role)) + " step " + std::to_string(step_index) +
                                         " failed: " + e.what(),
                                     std::string(role_name(role)), step_index));
  }
  const std::size_t chosen = selector.select(role, candidates);
  if (chosen >= candidates.size()) {
    throw ProtocolError("selector chose candidate " + std::to_string(chosen) + " of " +
                        std::to_string(candidates.size()));
  }
  if (on_step) on_step(role, candidates, chosen);
  return strip_role_prefix(candidates[chosen].text, role);
}

Transcript DialogueEngine::run(Strategy strategy, const Problem& problem, Selector& selector,
                               const StepObserver& on_step) const {
  switch (strategy) {
    case Strategy::A: return run_all_at_once(problem, selector, on_step);
    case Strategy::M: return run_mixed(problem, selector, on_step);
    case Strategy::S: return run_step_by_step(problem, selector, on_step);
  }
  throw ProtocolError("unknown strategy");
}

Transcript DialogueEngine::run_all_at_once(const Problem& problem, Selector& selector,
                                           const StepObserver& on_step) const {
  Transcript t{problem.id, Strategy::A, {}, std::nullopt};
  const std::string dprompt = build_decomposer_prompt(template_, Strategy::A, problem, {});
  t.turns.push_back({Role::Decomposer, step(Role::Decomposer, Strategy::A, 0, t.turns, dprompt, selector, on_step), 0});
  parse_subquestions(t.turns.back().text);

  const std::string sprompt = build_solver_prompt(template_, Strategy::A, problem, std::nullopt, t.turns);
  t.turns.push_back({Role::Solver, step(Role::Solver, Strategy::A, 0, t.turns, sprompt, selector, on_step), 1});
  t.final_answer = extract_final_answer(t.turns.back().text);
  return t;
}

Transcript DialogueEngine::run_mixed(const Problem& problem, Selector& selector, const StepObserver& on_step) const {
  Transcript t{problem.id, Strategy::M, {}, std::nullopt};
  const std::string dprompt = build_decomposer_prompt(template_, Strategy::M, problem, {});
  t.turns.push_back({Role::Decomposer, step(Role::Decomposer, Strategy::M, 0, t.turns, dprompt, selector, on_step), 0});
  const auto subs = parse_subquestions(t.turns.back().text);
  if (subs.size() > options_.max_turns) {
    throw TurnLimitExceeded(std::to_string(subs.size()) + " sub-questions exceed max_turns=" +
                            std::to_string(options_.max_turns));
  }
  for (std::size_t i = 0; i < subs.size(); ++i) {
    const std::string prompt = build_solver_prompt(template_, Strategy::M, problem, subs[i], t.turns);
    const std::size_t step_index = t.turns.size();
    t.turns.push_back(
        {Role::Solver, step(Role::Solver, Strategy::M, i, t.turns, prompt, selector, on_step), step_index});
  }
  t.final_answer = extract_final_answer(t.turns.back().text);
  return t;
}

Transcript DialogueEngine::run_step_by_step(const Problem& problem, Selector& selector,
                                            const StepObserver& on_step) const {
  Transcript t{problem.id, Strategy::S, {}, std::nullopt};
  const std::string final_question = normalize_sentence(final_question_sentence(problem.question));
  const std::size_t limit = options_.fixed_rounds ? *options_.fixed_rounds : options_.max_turns;
  if (options_.fixed_rounds && *options_.fixed_rounds == 0) {
    throw EmptyDecomposition("replay with zero gold sub-questions");
  }

  for (std::size_t round = 0;; ++round) {
    if (round == limit) {
      if (options_.fixed_rounds) break;
      throw TurnLimitExceeded("no terminal sub-question within max_turns=" + std::to_string(options_.max_turns));
    }
    const std::string dprompt = build_decomposer_prompt(template_, Strategy::S, problem, t.turns);
    std::string sub_question =
        step(Role::Decomposer, Strategy::S, round, t.turns, dprompt, selector, on_step);
    if (sub_question.find(kEndMarker) != std::string::npos) {
      if (round == 0) throw EmptyDecomposition("Decomposer ended the dialogue before any sub-question");
      break;
    }
    const bool terminal = !options_.fixed_rounds && normalize_sentence(sub_question) == final_question;

    const std::string sprompt = build_solver_prompt(template_, Strategy::S, problem, sub_question, t.turns);
    t.turns.push_back({Role::Decomposer, std::move(sub_question), t.turns.size()});
    const std::size_t solver_index = t.turns.size();
    t.turns.push_back(
        {Role::Solver, step(Role::Solver, Strategy::S, round, t.turns, sprompt, selector, on_step), solver_index});
    if (terminal) break;
  }
  t.final_answer = extract_final_answer(t.turns.back().text);
  return t;
}

}  // namespace dialcot
