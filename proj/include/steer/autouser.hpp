#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>

#include "steer/feedback.hpp"
#include "steer/history.hpp"
#include "steer/record.hpp"
#include "steer/rng.hpp"
#include "steer/surrogate_env.hpp"

namespace steer {

inline double compute_ell(int k_au) {
  if (k_au < 2) throw std::invalid_argument("k_au must be at least 2");
  return -std::log(static_cast<double>(k_au - 1)) / std::log(0.6);
}

struct AutouserConfig {
  int k_au = 5;
  std::set<int> gamma1{2, 3, 4, 5};
  std::set<int> gamma2{1, 2, 3, 4};
  int max_adjustments = 200;
  int k_stall = 10;
  double ecdf_low = 0.4;
  double ecdf_high = 0.6;
  bool sign_convention_flip = false;

  double ell() const { return compute_ell(k_au); }

  void validate() const {
    // the criteria vector is fixed at five entries
    if (k_au != static_cast<int>(kNumCriteria))
      throw std::invalid_argument("k_au must equal the number of criteria (5)");
    for (const auto* g : {&gamma1, &gamma2})
      for (int j : *g)
        if (j < 1 || j > k_au) throw std::invalid_argument("gamma members must lie in 1..k_au");
    if (max_adjustments < 1) throw std::invalid_argument("max_adjustments must be positive");
    if (k_stall < 1) throw std::invalid_argument("k_stall must be positive");
    if (!(ecdf_low <= ecdf_high)) throw std::invalid_argument("ecdf band is inverted");
  }
};

/// 1 above b, -1 below a, 0 on [a, b].
inline int step_fn(double x, double a, double b) {
  if (a > b) throw std::invalid_argument("step_fn: a > b");
  if (x > b) return 1;
  if (x < a) return -1;
  return 0;
}

inline int indicator_step(bool c) { return step_fn(c ? 1.0 : 0.0, 0.5, 0.5); }

using PsiVector = std::array<int, kNumCriteria>;

/// Per-criterion change scores given the two criteria vectors and the ECDF of each criterion's
/// historical consecutive differences.
template <typename Ecdf>
PsiVector compute_psi(const CriteriaVector& prev, const CriteriaVector& curr, FeedbackKind f,
                      const AutouserConfig& cfg, Ecdf&& delta_ecdf) {
  if (!is_adjustment(f)) throw std::invalid_argument("compute_psi: request must be m or l");
  PsiVector psi{};
  const int dir = indicator_step(f == FeedbackKind::more);
  for (std::size_t i = 0; i < kNumCriteria; ++i) {
    const int j = static_cast<int>(i) + 1;
    int group = indicator_step(!cfg.gamma1.contains(j));
    if (cfg.sign_convention_flip) group = -group;
    const double diff = prev[i] - curr[i];
    const int change = cfg.gamma2.contains(j)
                           ? step_fn(delta_ecdf(i, diff), cfg.ecdf_low, cfg.ecdf_high)
                           : step_fn(diff, 0.0, 0.0);
    psi[i] = dir * group * change;
  }
  return psi;
}

inline PsiVector compute_psi(const SurrogateState& prev, const SurrogateState& curr,
                             const History& h, FeedbackKind f, const AutouserConfig& cfg) {
  return compute_psi(autouser_criteria(prev), autouser_criteria(curr), f, cfg,
                     [&](std::size_t i, double x) {
                       return h.deltas(kCriteriaFeatures[i]).ecdf(x);
                     });
}

inline double judge_threshold(double alpha, double g, double ell) {
  return alpha * g + (1.0 - alpha) * std::pow(g, ell);
}

/// (S1/S2 - g^l) / (g - g^l); undefined when g is 0 or 1.
inline std::optional<double> opinion_strength(double ratio, double g, double ell) {
  const double gl = std::pow(g, ell);
  if (g <= 0.0 || g >= 1.0 || g == gl) return std::nullopt;
  return (ratio - gl) / (g - gl);
}

/// Verdict from a ready ψ vector.
inline AutouserVerdict judge_psi(const PsiVector& psi, double g, FeedbackKind r_prev, Rng& rng,
                                 const AutouserConfig& cfg) {
  if (!is_adjustment(r_prev)) throw std::invalid_argument("judge: previous request must be m or l");
  AutouserVerdict v;
  v.psi = psi;
  for (int x : psi) {
    v.s1 += x;
    v.s2 += std::abs(x);
  }
  v.global_success = g;
  if (v.s2 == 0) {
    v.response = r_prev;
    return v;
  }
  const double ell = cfg.ell();
  const double ratio = static_cast<double>(v.s1) / static_cast<double>(v.s2);
  v.alpha_draw = rng.uniform();
  v.threshold = judge_threshold(*v.alpha_draw, g, ell);
  v.response = ratio >= *v.threshold ? opposite(r_prev) : r_prev;
  v.opinion_strength = opinion_strength(ratio, g, ell);
  return v;
}

inline AutouserVerdict judge(const SurrogateState& prev, const SurrogateState& curr,
                             const History& h, FeedbackKind r_prev, Rng& rng,
                             const AutouserConfig& cfg) {
  return judge_psi(compute_psi(prev, curr, h, r_prev, cfg), h.global_success_rate(), r_prev, rng,
                   cfg);
}

enum class Termination : std::uint8_t { continue_session, max_reached, stalled, box_range_only };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::continue_session: return "continue";
    case Termination::max_reached: return "max_reached";
    case Termination::stalled: return "stalled";
    case Termination::box_range_only: return "box_range_only";
  }
  return "?";
}

/// Per-session counters the termination rules look at.
struct SessionProgress {
  int adjustments = 0;     // m/l requests issued so far
  int unchanged_run = 0;   // consecutive transitions with an identical fingerprint
  int box_only_run = 0;    // consecutive states with no named predicate
  std::optional<std::uint64_t> last_fingerprint;

  void observe(const SurrogateState& s) {
    if (last_fingerprint && *last_fingerprint == s.stats.fingerprint)
      ++unchanged_run;
    else
      unchanged_run = 0;
    last_fingerprint = s.stats.fingerprint;
    box_only_run = s.stats.unique_named == 0 ? box_only_run + 1 : 0;
  }
};

inline Termination should_terminate(const SessionProgress& p, const AutouserConfig& cfg) {
  if (p.adjustments >= cfg.max_adjustments) return Termination::max_reached;
  if (p.unchanged_run >= cfg.k_stall) return Termination::stalled;
  if (p.box_only_run >= cfg.k_stall) return Termination::box_range_only;
  return Termination::continue_session;
}

}  // namespace steer
