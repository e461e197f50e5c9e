#include "dialcot/report.hpp"

#include <array>
#include <charconv>
#include <sstream>

#include <json.hpp>

#include "dialcot/errors.hpp"

namespace dialcot {
namespace {

using json = nlohmann::json;

constexpr std::string_view kCurveHeader = "update_index,mean_reward,val_accuracy,clip_fraction,approx_kl";
constexpr std::string_view kSweepHeader = "k,greedy_accuracy,policy_accuracy,delta,updates";

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) return out;
    start = comma + 1;
  }
}

template <typename T>
T parse_field(std::string_view text, std::size_t line) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw DataError(line, "bad CSV field '" + std::string(text) + "'");
  }
  return value;
}

/// Rows of a CSV with a fixed header; blank lines are skipped.
std::vector<std::vector<std::string_view>> read_rows(std::istream& in, std::string_view header,
                                                     std::vector<std::string>& storage) {
  std::string line;
  if (!std::getline(in, line) || line != header) throw DataError("CSV header must be '" + std::string(header) + "'");
  const std::size_t columns = split_commas(header).size();
  while (std::getline(in, line)) {
    if (!line.empty()) storage.push_back(line);
  }
  std::vector<std::vector<std::string_view>> rows;
  for (std::size_t i = 0; i < storage.size(); ++i) {
    auto fields = split_commas(storage[i]);
    if (fields.size() != columns) throw DataError(i + 2, "expected " + std::to_string(columns) + " CSV fields");
    rows.push_back(std::move(fields));
  }
  return rows;
}

json report_json(const AccuracyReport& r) {
  json j = {{"strategy", r.strategy},
            {"selector", r.selector},
            {"n_problems", r.n_problems},
            {"n_failed_runs", r.n_failed_runs},
            {"overall_accuracy", r.overall_accuracy},
            {"per_step_accuracy", r.per_step_accuracy}};
  if (r.wall_time) j["wall_time"] = *r.wall_time;
  return j;
}

AccuracyReport report_from(const json& j) {
  AccuracyReport r;
  try {
    r.strategy = j.at("strategy").get<std::string>();
    r.selector = j.at("selector").get<std::string>();
    r.n_problems = j.at("n_problems").get<std::size_t>();
    r.n_failed_runs = j.at("n_failed_runs").get<std::size_t>();
    r.overall_accuracy = j.at("overall_accuracy").get<double>();
    r.per_step_accuracy = j.at("per_step_accuracy").get<std::vector<double>>();
    if (j.contains("wall_time")) r.wall_time = j.at("wall_time").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
  r.validate();
  return r;
}

json parse_json(std::string_view text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError("report is not valid JSON");
  return j;
}

}  // namespace

std::string format_double(double value) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), ptr);
}

std::vector<std::optional<CanonicalNumber>> solver_step_answers(const Transcript& transcript) {
  std::vector<std::optional<CanonicalNumber>> out;
  const auto texts = transcript.solver_texts();
  if (transcript.strategy != Strategy::A) {
    for (const auto& t : texts) out.push_back(extract_final_answer(t));
    return out;
  }
  if (texts.empty()) return out;
  std::istringstream lines(texts.front());
  std::string line;
  while (std::getline(lines, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(extract_final_answer(line));
  }
  return out;
}

ProblemOutcome score_transcript(const Transcript& transcript, const Problem& problem, double tolerance) {
  ProblemOutcome o;
  o.correct = transcript.final_answer &&
              answers_equal(*transcript.final_answer, problem.gold_final_answer, tolerance);
  const auto answers = solver_step_answers(transcript);
  for (std::size_t i = 0; i < problem.gold_sub_answers.size(); ++i) {
    o.step_correct.push_back(i < answers.size() && answers[i] &&
                             answers_equal(*answers[i], problem.gold_sub_answers[i], tolerance));
  }
  return o;
}

ProblemOutcome failed_outcome(const Problem& problem) {
  ProblemOutcome o;
  o.failed = true;
  o.step_correct.assign(problem.gold_sub_answers.size(), false);
  return o;
}

void AccuracyReport::validate() const {
  auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!in_unit(overall_accuracy)) throw DataError("overall_accuracy outside [0, 1]");
  for (double a : per_step_accuracy) {
    if (!in_unit(a)) throw DataError("per_step_accuracy entry outside [0, 1]");
  }
  if (n_failed_runs > n_problems) throw DataError("n_failed_runs exceeds n_problems");
}

AccuracyReport aggregate(const std::vector<ProblemOutcome>& outcomes, Strategy strategy, std::string selector,
                         std::optional<std::size_t> step_depth) {
  AccuracyReport r;
  r.strategy = std::string(1, strategy_letter(strategy));
  r.selector = std::move(selector);
  r.n_problems = outcomes.size();
  std::size_t correct = 0;
  std::size_t depth = 0;
  for (const auto& o : outcomes) {
    correct += o.correct ? 1 : 0;
    r.n_failed_runs += o.failed ? 1 : 0;
    if (!step_depth || o.step_correct.size() == *step_depth) depth = std::max(depth, o.step_correct.size());
  }
  r.overall_accuracy = outcomes.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(outcomes.size());
  for (std::size_t i = 0; i < depth; ++i) {
    std::size_t hits = 0;
    std::size_t total = 0;
    for (const auto& o : outcomes) {
      if (step_depth && o.step_correct.size() != *step_depth) continue;
      if (i >= o.step_correct.size()) continue;
      ++total;
      hits += o.step_correct[i] ? 1 : 0;
    }
    r.per_step_accuracy.push_back(total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total));
  }
  return r;
}

std::string report_to_json(const AccuracyReport& report) { return report_json(report).dump(2) + "\n"; }

AccuracyReport report_from_json(std::string_view text) { return report_from(parse_json(text)); }

std::string comparison_to_json(const SelectorComparison& c) {
  json j = {{"greedy", report_json(c.greedy)},
            {"policy", report_json(c.policy)},
            {"delta", c.delta},
            {"per_step_depth", c.step_depth}};
  return j.dump(2) + "\n";
}

SelectorComparison comparison_from_json(std::string_view text) {
  const json j = parse_json(text);
  SelectorComparison c;
  try {
    c.greedy = report_from(j.at("greedy"));
    c.policy = report_from(j.at("policy"));
    c.delta = j.at("delta").get<double>();
    c.step_depth = j.at("per_step_depth").get<std::size_t>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed comparison report: ") + e.what());
  }
  return c;
}

void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve) {
  out << kCurveHeader << '\n';
  for (const auto& p : curve) {
    out << p.update_index << ',' << format_double(p.mean_reward) << ',' << format_double(p.val_accuracy) << ','
        << format_double(p.clip_fraction) << ',' << format_double(p.approx_kl) << '\n';
  }
}

std::vector<CurvePoint> read_curve_csv(std::istream& in) {
  std::vector<std::string> storage;
  std::vector<CurvePoint> curve;
  std::size_t line = 2;
  for (const auto& f : read_rows(in, kCurveHeader, storage)) {
    CurvePoint p;
    p.update_index = parse_field<int>(f[0], line);
    p.mean_reward = parse_field<double>(f[1], line);
    p.val_accuracy = parse_field<double>(f[2], line);
    p.clip_fraction = parse_field<double>(f[3], line);
    p.approx_kl = parse_field<double>(f[4], line);
    curve.push_back(p);
    ++line;
  }
  return curve;
}

std::string curve_point_to_json(const CurvePoint& p) {
  return json{{"update_index", p.update_index},
              {"mean_reward", p.mean_reward},
              {"train_accuracy", p.train_accuracy},
              {"val_accuracy", p.val_accuracy},
              {"clip_fraction", p.clip_fraction},
              {"approx_kl", p.approx_kl},
              {"policy_loss", p.policy_loss},
              {"value_loss", p.value_loss},
              {"entropy", p.entropy},
              {"episodes", p.episodes},
              {"transitions", p.transitions}}
      .dump();
}

void write_k_sweep_csv(std::ostream& out, const std::vector<KSweepRow>& rows) {
  out << kSweepHeader << '\n';
  for (const auto& r : rows) {
    out << r.k << ',' << format_double(r.greedy_accuracy) << ',' << format_double(r.policy_accuracy) << ','
        << format_double(r.policy_accuracy - r.greedy_accuracy) << ',' << r.updates << '\n';
  }
}

std::vector<KSweepRow> read_k_sweep_csv(std::istream& in) {
  std::vector<std::string> storage;
  std::vector<KSweepRow> rows;
  std::size_t line = 2;
  for (const auto& f : read_rows(in, kSweepHeader, storage)) {
    KSweepRow r;
    r.k = parse_field<int>(f[0], line);
    r.greedy_accuracy = parse_field<double>(f[1], line);
    r.policy_accuracy = parse_field<double>(f[2], line);
    r.updates = parse_field<int>(f[4], line);
    rows.push_back(r);
    ++line;
  }
  return rows;
}

}  // namespace dialcot
