#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "steer/selectors.hpp"
#include "steer/stats.hpp"
#include "steer/surrogate_env.hpp"

namespace steer {

/// Weighted vote sum, shifted so the most negative entry sits at zero, then
/// normalized. A vanishing total gives the uniform distribution.
inline VoteDistribution aggregate_votes(std::span<const VoteDistribution> votes,
                                        std::span<const double> w) {
  if (votes.size() != w.size()) throw std::invalid_argument("aggregate_votes: one weight per vote");
  if (votes.empty()) throw std::invalid_argument("aggregate_votes: no votes");
  const std::size_t k = votes.front().size();
  std::vector<double> d(k, 0.0);
  for (std::size_t i = 0; i < votes.size(); ++i) {
    if (votes[i].size() != k) throw std::invalid_argument("aggregate_votes: ragged votes");
    if (w[i] == 0.0) continue;
    for (std::size_t j = 0; j < k; ++j) d[j] += w[i] * votes[i][j];
  }
  double shift = 0.0;
  for (double x : d) shift = std::min(shift, x);
  double denom = 0.0;
  for (auto& x : d) denom += (x -= shift);
  if (!(denom > 1e-12)) return uniform_vote(k);
  for (auto& x : d) x /= denom;
  return d;
}

inline std::vector<double> ucb_indices(std::span<const double> d,
                                       std::span<const std::uint64_t> counts, std::uint64_t t) {
  if (d.size() != counts.size()) throw std::invalid_argument("ucb_indices: length mismatch");
  std::vector<double> idx(d.size());
  const double log_term = 2.0 * std::log1p(static_cast<double>(t));
  for (std::size_t i = 0; i < d.size(); ++i)
    idx[i] = counts[i] == 0 ? std::numeric_limits<double>::infinity()
                            : d[i] + std::sqrt(log_term / static_cast<double>(counts[i]));
  return idx;
}

/// Argmax of the UCB index; ties go to the lowest operator index.
inline int argmax_lowest(std::span<const double> idx) {
  if (idx.empty()) throw std::invalid_argument("argmax over nothing");
  std::size_t best = 0;
  for (std::size_t i = 1; i < idx.size(); ++i)
    if (idx[i] > idx[best]) best = i;
  return static_cast<int>(best);
}

inline int choose_operator(std::span<const double> d, std::span<const std::uint64_t> counts,
                           std::uint64_t t) {
  return argmax_lowest(ucb_indices(d, counts, t));
}

/// Successor used when the chosen operator cannot act: same params and
/// description, next timestep.
inline SurrogateState fallback_state(const SurrogateState& s) {
  SurrogateState next = s;
  next.t = s.t + 1;
  return next;
}

}  // namespace steer
