#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "dialcot/number.hpp"

namespace dialcot {

struct Problem {
  std::string id;
  std::string question;
  CanonicalNumber gold_final_answer;
  std::vector<std::string> gold_sub_questions;
  std::vector<CanonicalNumber> gold_sub_answers;
  std::string source;

  bool has_decomposition() const { return !gold_sub_answers.empty(); }
};

struct RecordError {
  std::size_t line = 0;
  std::string message;
};

struct ParsedDataset {
  std::vector<Problem> problems;
  std::vector<RecordError> errors;
};

struct ParseOptions {
  /// Throw DataError on the first bad record instead of collecting it.
  bool strict = false;
  /// Used for Problem::source when a record carries no "source" field.
  std::string source_tag = "jsonl";
};

/// Reads GSM8K-style JSONL: question, answer ("... #### <final>"), and
/// optional sub_questions / sub_answers arrays.
ParsedDataset parse_dataset(std::istream& in, const ParseOptions& options = {});
ParsedDataset load_dataset(const std::string& path, const ParseOptions& options = {});

/// Writes problems in the same JSONL layout parse_dataset() accepts.
void write_dataset(std::ostream& out, const std::vector<Problem>& problems);

/// Removes GSM8K calculator annotations ("<<48/2=24>>") from answer text.
std::string strip_calculator_annotations(std::string_view text);

/// Never throws. Prefers the first number after the last "answer is", falling
/// back to the last number in the response.
std::optional<CanonicalNumber> extract_final_answer(std::string_view response);

struct DatasetSplit {
  std::vector<Problem> validation;
  std::vector<Problem> test;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kDefaultValidationSize = 500;

DatasetSplit split_dataset(const std::vector<Problem>& problems, std::size_t val_size,
                           std::uint64_t seed);

/// Last sentence of the question (the one actually asked), whitespace-trimmed.
std::string final_question_sentence(std::string_view question);

}  // namespace dialcot
