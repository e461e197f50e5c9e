#include <doctest.h>

#include <cstdio>
#include <string>

#include "dialcot/errors.hpp"
#include "dialcot/number.hpp"
#include "dialcot/rng.hpp"

using namespace dialcot;

namespace {

// Fixed-point oracle: values are integers scaled by 10^6.
std::string scaled_text(long long micros) {
  const bool neg = micros < 0;
  const unsigned long long m = neg ? -static_cast<unsigned long long>(micros) : micros;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%llu.%06llu", neg ? "-" : "", m / 1000000, m % 1000000);
  return buf;
}

}  // namespace

TEST_CASE("normalize_answer strips currency, separators and trailing punctuation") {
  CHECK(normalize_answer("$1,234.50").format() == "1234.5");
  CHECK(normalize_answer("$1,234.50") == CanonicalNumber::parse("1234.50"));
  CHECK(normalize_answer("-3.").format() == "-3");
  CHECK(normalize_answer("  42% ").format() == "42");
  CHECK(normalize_answer("€7").format() == "7");
  CHECK(normalize_answer("-$5").format() == "-5");
  CHECK(normalize_answer("0.500").format() == "0.5");
  CHECK(normalize_answer("-0").format() == "0");
  CHECK(normalize_answer("007").format() == "7");
  CHECK(normalize_answer(".25").format() == "0.25");
}

TEST_CASE("normalize_answer rejects non-numeric residue") {
  CHECK_THROWS_AS(normalize_answer("twelve"), NotANumber);
  CHECK_THROWS_AS(normalize_answer(""), NotANumber);
  CHECK_THROWS_AS(normalize_answer("12 apples"), NotANumber);
  CHECK_THROWS_AS(normalize_answer("1.2.3"), NotANumber);
  CHECK_THROWS_AS(normalize_answer("$"), NotANumber);
  CHECK_THROWS_AS(normalize_answer("-"), NotANumber);
}

TEST_CASE("answers_equal examples") {
  CHECK(answers_equal(normalize_answer("18"), normalize_answer("18.0"), 1e-6));
  CHECK_FALSE(answers_equal(normalize_answer("0.5"), normalize_answer("0.500002"), 1e-6));
  CHECK_FALSE(answers_equal(normalize_answer("-3"), normalize_answer("3"), 1e-6));
  CHECK(answers_equal(normalize_answer("0.5"), normalize_answer("0.5000004"), 1e-6));
  CHECK(answers_equal(normalize_answer("3"), normalize_answer("4"), 1.0));
}

TEST_CASE("normalization is idempotent through format") {
  Rng rng(11);
  const char* prefixes[] = {"", "$", "-", " "};
  const char* suffixes[] = {"", ".", "%", " "};
  for (int trial = 0; trial < 2000; ++trial) {
    const long long micros = uniform_int(rng, -5'000'000'000LL, 5'000'000'000LL);
    std::string raw = scaled_text(micros);
    if (raw[0] != '-') raw = std::string(prefixes[uniform_index(rng, 4)]) + raw;
    raw += suffixes[uniform_index(rng, 4)];
    const CanonicalNumber once = normalize_answer(raw);
    CHECK(normalize_answer(once.format()) == once);
    CHECK(CanonicalNumber::parse(once.format()).format() == once.format());
  }
}

TEST_CASE("exact subtraction matches a fixed-point oracle") {
  Rng rng(5);
  for (int trial = 0; trial < 5000; ++trial) {
    const long long a = uniform_int(rng, -2'000'000'000'000LL, 2'000'000'000'000LL);
    const long long b = uniform_int(rng, -2'000'000'000'000LL, 2'000'000'000'000LL);
    const CanonicalNumber diff = CanonicalNumber::parse(scaled_text(a)) - CanonicalNumber::parse(scaled_text(b));
    REQUIRE(diff == CanonicalNumber::parse(scaled_text(a - b)));
    CHECK((CanonicalNumber::parse(scaled_text(a)) < CanonicalNumber::parse(scaled_text(b))) == (a < b));
  }
}

TEST_CASE("ordering and helpers") {
  CHECK(CanonicalNumber::from_integer(-12).format() == "-12");
  CHECK(CanonicalNumber::from_integer(0).is_zero());
  CHECK((-CanonicalNumber::parse("2.5")).format() == "-2.5");
  CHECK(CanonicalNumber::parse("-2.5").abs().format() == "2.5");
  CHECK(CanonicalNumber::parse("-10") < CanonicalNumber::parse("-9.99"));
  CHECK(CanonicalNumber::parse("0.1") < CanonicalNumber::parse("0.11"));
  CHECK(CanonicalNumber::parse("123.25").to_double() == 123.25);
}
