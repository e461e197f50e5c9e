#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace dialcot {

enum class Role { Decomposer, Solver };

/// A = all at once, M = mixed, S = step by step.
enum class Strategy { A, M, S };

constexpr std::string_view role_name(Role r) {
  return r == Role::Decomposer ? "Decomposer" : "Solver";
}

/// Prefix a turn carries when rendered into dialogue history.
constexpr std::string_view role_prefix(Role r) {
  return r == Role::Decomposer ? "Decomposer: " : "Solver: ";
}

constexpr char strategy_letter(Strategy s) {
  switch (s) {
    case Strategy::A: return 'A';
    case Strategy::M: return 'M';
    case Strategy::S: return 'S';
  }
  return '?';
}

Strategy parse_strategy(std::string_view text);
Role parse_role(std::string_view text);

struct Turn {
  Role role = Role::Decomposer;
  std::string text;
  std::size_t step_index = 0;

  friend bool operator==(const Turn&, const Turn&) = default;
};

}  // namespace dialcot
