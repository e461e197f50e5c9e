#include "dialcot/number.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <string>

#include "dialcot/errors.hpp"

namespace dialcot {
namespace {

bool all_digits(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c) != 0; });
}

// Magnitude comparison of two unsigned digit strings of equal length.
int compare_aligned(const std::string& a, const std::string& b) {
  if (a == b) return 0;
  return a < b ? -1 : 1;
}

// a - b for unsigned digit strings of equal length with a >= b.
std::string subtract_aligned(const std::string& a, const std::string& b) {
  std::string out(a.size(), '0');
  int borrow = 0;
  for (std::size_t i = a.size(); i-- > 0;) {
    int d = (a[i] - '0') - (b[i] - '0') - borrow;
    borrow = d < 0 ? 1 : 0;
    if (d < 0) d += 10;
    out[i] = static_cast<char>('0' + d);
  }
  return out;
}

std::string add_aligned(const std::string& a, const std::string& b) {
  std::string out(a.size(), '0');
  int carry = 0;
  for (std::size_t i = a.size(); i-- > 0;) {
    int d = (a[i] - '0') + (b[i] - '0') + carry;
    carry = d / 10;
    out[i] = static_cast<char>('0' + d % 10);
  }
  if (carry) out.insert(out.begin(), '1');
  return out;
}

struct Aligned {
  std::string a;
  std::string b;
  std::size_t scale;
};

Aligned align(const CanonicalNumber& x, const CanonicalNumber& y) {
  const std::size_t scale = std::max(x.fraction_digits().size(), y.fraction_digits().size());
  std::string xs = x.integer_digits() + x.fraction_digits() +
                   std::string(scale - x.fraction_digits().size(), '0');
  std::string ys = y.integer_digits() + y.fraction_digits() +
                   std::string(scale - y.fraction_digits().size(), '0');
  const std::size_t width = std::max(xs.size(), ys.size());
  xs.insert(0, width - xs.size(), '0');
  ys.insert(0, width - ys.size(), '0');
  return {std::move(xs), std::move(ys), scale};
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

constexpr std::string_view kCurrencySymbols[] = {"$", "\xE2\x82\xAC" /* euro */,
                                                 "\xC2\xA3" /* pound */, "\xC2\xA5" /* yen */};

bool strip_currency(std::string_view& s) {
  for (auto sym : kCurrencySymbols) {
    if (s.starts_with(sym)) {
      s.remove_prefix(sym.size());
      return true;
    }
  }
  return false;
}

}  // namespace

CanonicalNumber::CanonicalNumber(bool negative, std::string integer, std::string fraction)
    : negative_(negative), integer_(std::move(integer)), fraction_(std::move(fraction)) {
  canonicalize();
}

void CanonicalNumber::canonicalize() {
  const auto first = integer_.find_first_not_of('0');
  integer_ = first == std::string::npos ? "0" : integer_.substr(first);
  const auto last = fraction_.find_last_not_of('0');
  fraction_ = last == std::string::npos ? "" : fraction_.substr(0, last + 1);
  if (is_zero()) negative_ = false;
}

CanonicalNumber CanonicalNumber::parse(std::string_view literal) {
  std::string_view s = literal;
  bool negative = false;
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
    negative = s.front() == '-';
    s.remove_prefix(1);
  }
  const auto dot = s.find('.');
  std::string_view int_part = s.substr(0, dot);
  std::string_view frac_part = dot == std::string_view::npos ? std::string_view{} : s.substr(dot + 1);
  const bool has_digits = !int_part.empty() || !frac_part.empty();
  if (!has_digits || !all_digits(int_part) || !all_digits(frac_part) ||
      (dot != std::string_view::npos && frac_part.empty() && int_part.empty())) {
    throw NotANumber("not a number: '" + std::string(literal) + "'");
  }
  if (dot != std::string_view::npos && frac_part.empty()) {
    throw NotANumber("dangling decimal point: '" + std::string(literal) + "'");
  }
  return CanonicalNumber(negative, std::string(int_part.empty() ? "0" : int_part),
                         std::string(frac_part));
}

CanonicalNumber CanonicalNumber::from_integer(long long value) {
  const bool negative = value < 0;
  std::string digits = std::to_string(value);
  if (negative) digits.erase(0, 1);
  return CanonicalNumber(negative, std::move(digits), "");
}

std::string CanonicalNumber::format() const {
  std::string out;
  if (negative_) out += '-';
  out += integer_;
  if (!fraction_.empty()) {
    out += '.';
    out += fraction_;
  }
  return out;
}

double CanonicalNumber::to_double() const {
  const std::string text = format();
  return std::strtod(text.c_str(), nullptr);
}

CanonicalNumber CanonicalNumber::operator-() const {
  CanonicalNumber out = *this;
  out.negative_ = !negative_;
  out.canonicalize();
  return out;
}

CanonicalNumber CanonicalNumber::abs() const {
  CanonicalNumber out = *this;
  out.negative_ = false;
  return out;
}

CanonicalNumber operator-(const CanonicalNumber& a, const CanonicalNumber& b) {
  auto [x, y, scale] = align(a, b);
  bool negative = false;
  std::string magnitude;
  if (a.negative_ != b.negative_) {
    // a - (-|b|) = a + |b|, (-|a|) - b = -(|a| + b)
    magnitude = add_aligned(x, y);
    negative = a.negative_;
  } else {
    const int cmp = compare_aligned(x, y);
    if (cmp >= 0) {
      magnitude = subtract_aligned(x, y);
      negative = a.negative_;
    } else {
      magnitude = subtract_aligned(y, x);
      negative = !a.negative_;
    }
  }
  if (magnitude.size() < scale + 1) magnitude.insert(0, scale + 1 - magnitude.size(), '0');
  const std::size_t split = magnitude.size() - scale;
  return CanonicalNumber(negative, magnitude.substr(0, split), magnitude.substr(split));
}

std::strong_ordering operator<=>(const CanonicalNumber& a, const CanonicalNumber& b) {
  const CanonicalNumber diff = a - b;
  if (diff.is_zero()) return std::strong_ordering::equal;
  return diff.negative() ? std::strong_ordering::less : std::strong_ordering::greater;
}

CanonicalNumber normalize_answer(std::string_view raw) {
  std::string_view s = trim(raw);
  if (s.empty()) throw NotANumber("empty answer");

  bool negative = false;
  if (s.front() == '-' || s.front() == '+') {
    negative = s.front() == '-';
    s.remove_prefix(1);
  }
  if (strip_currency(s) && !negative && !s.empty() && (s.front() == '-' || s.front() == '+')) {
    negative = s.front() == '-';
    s.remove_prefix(1);
  }
  s = trim(s);
  if (!s.empty() && (s.back() == '.' || s.back() == '%')) s.remove_suffix(1);

  std::string body;
  body.reserve(s.size());
  for (char c : s) {
    if (c != ',') body += c;
  }
  if (body.empty() || body.front() == '-' || body.front() == '+') {
    throw NotANumber("not a number: '" + std::string(raw) + "'");
  }
  try {
    CanonicalNumber n = CanonicalNumber::parse(body);
    return negative ? -n : n;
  } catch (const NotANumber&) {
    throw NotANumber("not a number: '" + std::string(raw) + "'");
  }
}

bool answers_equal(const CanonicalNumber& a, const CanonicalNumber& b, double tol) {
  if (!(tol >= 0.0)) throw PreconditionError("answer tolerance must be nonnegative");
  return (a - b).abs().to_double() <= tol;
}

}  // namespace dialcot
