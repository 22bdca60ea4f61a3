#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "steer/feedback.hpp"
#include "steer/selectors.hpp"

namespace steer {

/// y_t from (f_t, f_{t+1}). Empty when f_t is an exit: there is no next step.
inline std::optional<int> reward_from_feedback(FeedbackKind f, std::optional<FeedbackKind> next) {
  if (f == FeedbackKind::exit) return std::nullopt;
  if (!next) throw std::invalid_argument("reward needs the following request");
  if (f == FeedbackKind::user_op || *next == FeedbackKind::user_op) return 0;
  if (*next == FeedbackKind::exit) return 1;
  return *next == f ? -1 : 1;
}

/// w_i += y * (vote_i[O_t] - 1/k) for every selector.
inline void update_weights(std::span<double> w, std::span<const VoteDistribution> votes, int chosen,
                           int y) {
  if (w.size() != votes.size()) throw std::invalid_argument("update_weights: one vote per weight");
  if (y == 0) return;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto& v = votes[i];
    if (chosen < 0 || static_cast<std::size_t>(chosen) >= v.size())
      throw std::invalid_argument("update_weights: chosen operator out of range");
    const double u = 1.0 / static_cast<double>(v.size());
    w[i] += y * (v[chosen] - u);
  }
}

}  // namespace steer
