#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace steer {

/// The four request types a user can issue after seeing a description.
enum class FeedbackKind : std::uint8_t {
  more,       // "m": make the description more abstract
  less,       // "l": make the description less abstract
  exit,       // "b": end the interrogation for this question
  user_op,    // "u": manual operator / history travel / predicate review
};

inline std::string_view to_string(FeedbackKind k) {
  switch (k) {
    case FeedbackKind::more: return "m";
    case FeedbackKind::less: return "l";
    case FeedbackKind::exit: return "b";
    case FeedbackKind::user_op: return "u";
  }
  return "?";
}

inline FeedbackKind feedback_from_string(std::string_view s) {
  if (s == "m") return FeedbackKind::more;
  if (s == "l") return FeedbackKind::less;
  if (s == "b") return FeedbackKind::exit;
  if (s == "u") return FeedbackKind::user_op;
  throw std::invalid_argument("unknown feedback kind: " + std::string(s));
}

inline bool is_adjustment(FeedbackKind k) {
  return k == FeedbackKind::more || k == FeedbackKind::less;
}

inline FeedbackKind opposite(FeedbackKind k) {
  if (k == FeedbackKind::more) return FeedbackKind::less;
  if (k == FeedbackKind::less) return FeedbackKind::more;
  throw std::invalid_argument("opposite() is only defined for m/l");
}

/// What a "u" request asks for.
enum class UserOpAction : std::uint8_t { apply_operator, history_travel, list_disallowed };

/// A request plus, for "u", its payload.
struct Feedback {
  FeedbackKind kind = FeedbackKind::more;
  UserOpAction action = UserOpAction::apply_operator;
  std::optional<int> operator_index;   // apply_operator
  std::optional<std::int64_t> travel_to;  // history_travel: timestep within the question

  static Feedback more() { return {FeedbackKind::more}; }
  static Feedback less() { return {FeedbackKind::less}; }
  static Feedback exit() { return {FeedbackKind::exit}; }
  static Feedback of(FeedbackKind k) { return {k}; }
  static Feedback apply(int op) { return {FeedbackKind::user_op, UserOpAction::apply_operator, op, {}}; }
  static Feedback travel(std::int64_t t) {
    return {FeedbackKind::user_op, UserOpAction::history_travel, {}, t};
  }
  static Feedback list_disallowed() {
    return {FeedbackKind::user_op, UserOpAction::list_disallowed, {}, {}};
  }
};

}  // namespace steer
