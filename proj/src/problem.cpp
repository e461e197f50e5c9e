#include "dialcot/problem.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "dialcot/errors.hpp"
#include "dialcot/rng.hpp"

namespace dialcot {
namespace {

using json = nlohmann::json;

constexpr std::string_view kFinalMarker = "#### ";

struct NumericToken {
  std::size_t begin;
  std::size_t end;
};

bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

// Numbers in free text: an optional '-' and currency sign, digits with
// embedded thousands separators, and an optional fractional part.
std::vector<NumericToken> numeric_tokens(std::string_view text) {
  std::vector<NumericToken> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_digit(text[i])) {
      ++i;
      continue;
    }
    std::size_t begin = i;
    if (begin > 0 && text[begin - 1] == '$') --begin;
    if (begin > 0 && text[begin - 1] == '-' &&
        (begin == 1 || !std::isalnum(static_cast<unsigned char>(text[begin - 2])))) {
      --begin;
    }
    std::size_t end = i;
    while (end < text.size() &&
           (is_digit(text[end]) ||
            (text[end] == ',' && end + 1 < text.size() && is_digit(text[end + 1])))) {
      ++end;
    }
    if (end + 1 < text.size() && text[end] == '.' && is_digit(text[end + 1])) {
      ++end;
      while (end < text.size() && is_digit(text[end])) ++end;
    }
    tokens.push_back({begin, end});
    i = end;
  }
  return tokens;
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

Problem parse_record(const std::string& line, std::size_t line_no, const ParseOptions& options) {
  json record;
  try {
    record = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(line_no, std::string("malformed JSON: ") + e.what());
  }
  if (!record.is_object()) throw DataError(line_no, "record is not a JSON object");
  if (!record.contains("question") || !record["question"].is_string()) {
    throw DataError(line_no, "missing string field 'question'");
  }
  if (!record.contains("answer") || !record["answer"].is_string()) {
    throw DataError(line_no, "missing string field 'answer'");
  }

  Problem p;
  p.question = record["question"].get<std::string>();
  const std::string answer = strip_calculator_annotations(record["answer"].get<std::string>());
  const auto marker = answer.rfind(kFinalMarker);
  if (marker == std::string::npos) throw DataError(line_no, "answer lacks '#### ' marker");
  std::string_view final_text = std::string_view(answer).substr(marker + kFinalMarker.size());
  final_text = trim(final_text.substr(0, final_text.find('\n')));
  try {
    p.gold_final_answer = normalize_answer(final_text);
  } catch (const NotANumber& e) {
    throw DataError(line_no, std::string("final answer: ") + e.what());
  }

  if (record.contains("id") && !record["id"].is_null()) {
    p.id = record["id"].is_string() ? record["id"].get<std::string>() : record["id"].dump();
  } else {
    p.id = "line-" + std::to_string(line_no);
  }
  p.source = record.contains("source") && record["source"].is_string()
                 ? record["source"].get<std::string>()
                 : options.source_tag;

  auto read_strings = [&](const char* key) {
    std::vector<std::string> out;
    if (!record.contains(key) || record[key].is_null()) return out;
    if (!record[key].is_array()) throw DataError(line_no, std::string("'") + key + "' is not an array");
    for (const auto& v : record[key]) {
      if (v.is_string()) {
        out.push_back(v.get<std::string>());
      } else if (v.is_number()) {
        out.push_back(v.dump());
      } else {
        throw DataError(line_no, std::string("'") + key + "' holds a non-string entry");
      }
    }
    return out;
  };
  p.gold_sub_questions = read_strings("sub_questions");
  const auto sub_answers = read_strings("sub_answers");
  if (p.gold_sub_questions.size() != sub_answers.size()) {
    throw DataError(line_no, "sub_questions and sub_answers differ in length");
  }
  for (const auto& a : sub_answers) {
    try {
      p.gold_sub_answers.push_back(normalize_answer(strip_calculator_annotations(a)));
    } catch (const NotANumber& e) {
      throw DataError(line_no, std::string("sub answer: ") + e.what());
    }
  }
  return p;
}

}  // namespace

std::string strip_calculator_annotations(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text.substr(i, 2) == "<<") {
      const auto close = text.find(">>", i + 2);
      if (close != std::string_view::npos) {
        i = close + 2;
        continue;
      }
    }
    out += text[i++];
  }
  return out;
}

ParsedDataset parse_dataset(std::istream& in, const ParseOptions& options) {
  ParsedDataset out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.problems.push_back(parse_record(line, line_no, options));
    } catch (const DataError& e) {
      if (options.strict) throw;
      out.errors.push_back({line_no, e.what()});
    }
  }
  return out;
}

ParsedDataset load_dataset(const std::string& path, const ParseOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset '" + path + "'");
  return parse_dataset(in, options);
}

void write_dataset(std::ostream& out, const std::vector<Problem>& problems) {
  for (const auto& p : problems) {
    json record;
    record["id"] = p.id;
    record["question"] = p.question;
    std::string answer;
    for (std::size_t i = 0; i < p.gold_sub_questions.size(); ++i) {
      answer += p.gold_sub_questions[i] + " " + p.gold_sub_answers[i].format() + "\n";
    }
    answer += std::string(kFinalMarker) + p.gold_final_answer.format();
    record["answer"] = answer;
    if (!p.gold_sub_questions.empty()) {
      record["sub_questions"] = p.gold_sub_questions;
      json subs = json::array();
      for (const auto& a : p.gold_sub_answers) subs.push_back(a.format());
      record["sub_answers"] = subs;
    }
    record["source"] = p.source;
    out << record.dump() << '\n';
  }
}

std::optional<CanonicalNumber> extract_final_answer(std::string_view response) {
  const auto tokens = numeric_tokens(response);
  if (tokens.empty()) return std::nullopt;

  const std::string lower = lowercase(response);
  const auto anchor = lower.rfind("answer is");
  const NumericToken* chosen = &tokens.back();
  if (anchor != std::string::npos) {
    const auto after = std::find_if(tokens.begin(), tokens.end(),
                                     [&](const NumericToken& t) { return t.begin >= anchor; });
    if (after != tokens.end()) chosen = &*after;
  }
  try {
    return normalize_answer(response.substr(chosen->begin, chosen->end - chosen->begin));
  } catch (const NotANumber&) {
    return std::nullopt;
  }
}

DatasetSplit split_dataset(const std::vector<Problem>& problems, std::size_t val_size,
                           std::uint64_t seed) {
  if (val_size > problems.size()) {
    throw SizeError("validation size " + std::to_string(val_size) + " exceeds dataset size " +
                    std::to_string(problems.size()));
  }
  std::vector<std::size_t> order(problems.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(std::span<std::size_t>(order), rng);

  DatasetSplit split;
  split.seed = seed;
  split.validation.reserve(val_size);
  split.test.reserve(problems.size() - val_size);
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < val_size ? split.validation : split.test).push_back(problems[order[i]]);
  }
  return split;
}

std::string final_question_sentence(std::string_view question) {
  std::string_view q = trim(question);
  // Walk back from the end to the previous sentence terminator followed by whitespace.
  std::size_t start = 0;
  if (q.size() > 1) {
    for (std::size_t i = q.size() - 1; i-- > 0;) {
      const char c = q[i];
      if ((c == '.' || c == '?' || c == '!') && i + 1 < q.size() &&
          std::isspace(static_cast<unsigned char>(q[i + 1]))) {
        start = i + 1;
        break;
      }
    }
  }
  return std::string(trim(q.substr(start)));
}

}  // namespace dialcot
