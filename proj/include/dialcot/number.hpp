#pragma once

#include <compare>
#include <string>
#include <string_view>

namespace dialcot {

/// Exact decimal value: sign, integer digits and fractional digits.
///
/// Stored in normal form: no leading zeros in the integer part (a lone "0" is
/// kept), no trailing zeros in the fractional part and no negative zero.
/// Two numbers with the same value therefore compare equal member-wise.
class CanonicalNumber {
 public:
  CanonicalNumber() : integer_("0") {}

  /// Parses a plain decimal literal ("-12.50", "3", ".5"). Throws NotANumber
  /// on anything else; use normalize_answer() for raw model or dataset text.
  static CanonicalNumber parse(std::string_view literal);

  static CanonicalNumber from_integer(long long value);

  bool negative() const { return negative_; }
  const std::string& integer_digits() const { return integer_; }
  const std::string& fraction_digits() const { return fraction_; }
  bool is_zero() const { return integer_ == "0" && fraction_.empty(); }

  std::string format() const;
  double to_double() const;

  /// Exact difference a - b.
  friend CanonicalNumber operator-(const CanonicalNumber& a, const CanonicalNumber& b);
  CanonicalNumber operator-() const;
  CanonicalNumber abs() const;

  friend bool operator==(const CanonicalNumber&, const CanonicalNumber&) = default;
  friend std::strong_ordering operator<=>(const CanonicalNumber& a, const CanonicalNumber& b);

 private:
  CanonicalNumber(bool negative, std::string integer, std::string fraction);
  void canonicalize();

  bool negative_ = false;
  std::string integer_;
  std::string fraction_;
};

/// Strips whitespace, a leading currency symbol, thousands separators and a
/// trailing period or percent sign, then parses the remainder exactly.
CanonicalNumber normalize_answer(std::string_view raw);

inline constexpr double kDefaultAnswerTolerance = 1e-6;

/// |a - b| <= tol, with the difference computed exactly before widening to double.
bool answers_equal(const CanonicalNumber& a, const CanonicalNumber& b,
                   double tol = kDefaultAnswerTolerance);

}  // namespace dialcot
