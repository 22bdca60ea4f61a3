#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "steer/feedback.hpp"
#include "steer/surrogate_env.hpp"

namespace steer {

/// What the final operator choice looked like at one timestep.
struct DecisionTrace {
  std::vector<double> d_samp;
  std::vector<double> ucb_indices;  // +inf for untried operators
  int chosen = -1;                  // catalog index
  bool fell_back = false;
  double entropy = 0.0;
};

/// The autouser's judgement of one transition.
struct AutouserVerdict {
  std::array<int, kNumCriteria> psi{};
  int s1 = 0;
  int s2 = 0;
  std::optional<double> alpha_draw;
  std::optional<double> threshold;
  double global_success = 0.0;
  FeedbackKind response = FeedbackKind::more;
  std::optional<double> opinion_strength;
  std::string termination = "continue";
};

/// One timestep: the state shown, the request made on it, and what followed.
///
/// A record is a transition q_t -> q_{t+1}: `request` is f_t, `chosen` is the
/// operator O_t applied in answer to it, `reward` is y_t once f_{t+1} is known.
struct InteractionRecord {
  std::string session_id;
  std::string question_id;
  std::int64_t t = 0;
  std::uint64_t seq = 0;  // global append order, assigned by the store
  SurrogateState state;
  int produced_by = -1;   // operator index that formed `state`; -1 for history travel
  std::optional<FeedbackKind> generating_request;  // f_{t-1}

  std::optional<Feedback> request;
  std::optional<int> chosen;
  bool fell_back = false;
  std::optional<int> reward;
  std::optional<DecisionTrace> trace;
  std::optional<AutouserVerdict> verdict;
  // Weight digest after this record's reward was applied.
  std::optional<std::vector<double>> weights;  // full snapshot (opt-in)
  double weights_l1 = 0.0, weights_min = 0.0, weights_max = 0.0;
  std::uint64_t weights_hash = 0;

  FeedbackKind request_kind() const {
    return request ? request->kind : FeedbackKind::exit;
  }
};

}  // namespace steer
