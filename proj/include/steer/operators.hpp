#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "steer/feedback.hpp"
#include "steer/history.hpp"
#include "steer/surrogate_env.hpp"

namespace steer {

enum class OperatorCategory : std::uint8_t { special, param_adjust, predicate_constrain };

inline const char* to_string(OperatorCategory c) {
  switch (c) {
    case OperatorCategory::special: return "special";
    case OperatorCategory::param_adjust: return "param_adjust";
    case OperatorCategory::predicate_constrain: return "predicate_constrain";
  }
  return "?";
}

enum class OpKind : std::uint8_t {
  blank,
  radius_up,
  radius_down,
  reuse_on,
  reuse_off,
  split_question_only,
  split_all,
  merge_inc,
  merge_dec,
  merge_zero,
  precision_coarser,
  precision_finer,
  depth_inc,
  depth_dec,
  pga_on,
  pga_off,
  combo_more_abstract,
  combo_less_abstract,
  disallow_for_more,
  disallow_for_less,
  reallow_for_more,
  reallow_for_less,
  start,
};

struct OperatorSpec {
  int index = 0;
  std::string name;
  OperatorCategory category = OperatorCategory::special;
  OpKind kind = OpKind::blank;
  std::string mutation;
};

/// Raised when an operator cannot act on a state (e.g. re-allow with nothing
/// disallowed). The engine answers it with the copy-forward fallback.
class InapplicableOperator : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The ordered operator library. Selectable operators occupy indices
/// 0..selectable_count()-1, so a vote position is also a catalog index; the
/// start operator sits last.
class OperatorCatalog {
 public:
  const std::vector<OperatorSpec>& operators() const { return ops_; }
  std::size_t size() const { return ops_.size(); }
  std::size_t selectable_count() const { return ops_.size() - 1; }
  int start_index() const { return static_cast<int>(ops_.size()) - 1; }
  bool is_selectable(int op) const { return op >= 0 && op < static_cast<int>(selectable_count()); }
  const OperatorSpec& at(int op) const { return ops_.at(static_cast<std::size_t>(op)); }

  int index_of(const std::string& name) const {
    for (const auto& o : ops_)
      if (o.name == name) return o.index;
    throw std::out_of_range("no operator named " + name);
  }
  int index_of(OpKind kind) const {
    for (const auto& o : ops_)
      if (o.kind == kind) return o.index;
    throw std::out_of_range("operator kind not in catalog");
  }
  std::vector<int> predicate_operators() const {
    std::vector<int> out;
    for (const auto& o : ops_)
      if (o.category == OperatorCategory::predicate_constrain) out.push_back(o.index);
    return out;
  }

  void add(std::string name, OperatorCategory cat, OpKind kind, std::string mutation) {
    ops_.push_back({static_cast<int>(ops_.size()), std::move(name), cat, kind, std::move(mutation)});
  }

 private:
  std::vector<OperatorSpec> ops_;
};

inline OperatorCatalog build_catalog(const EnvConfig& = {}) {
  using C = OperatorCategory;
  OperatorCatalog c;
  c.add("blank", C::special, OpKind::blank, "regenerate with fresh noise only");
  c.add("sampling_radius_up", C::param_adjust, OpKind::radius_up, "sampling_radius *= 1.5");
  c.add("sampling_radius_down", C::param_adjust, OpKind::radius_down, "sampling_radius /= 1.5");
  c.add("reuse_reach_on", C::param_adjust, OpKind::reuse_on, "reuse_reach = true");
  c.add("reuse_reach_off", C::param_adjust, OpKind::reuse_off, "reuse_reach = false");
  c.add("split_question_only", C::param_adjust, OpKind::split_question_only,
        "split_question_vars_only = true");
  c.add("split_all", C::param_adjust, OpKind::split_all, "split_question_vars_only = false");
  c.add("merge_iters_inc", C::param_adjust, OpKind::merge_inc, "merge_iters += 1");
  c.add("merge_iters_dec", C::param_adjust, OpKind::merge_dec, "merge_iters -= 1");
  c.add("merge_iters_zero", C::param_adjust, OpKind::merge_zero, "merge_iters = 0");
  c.add("merge_precision_coarser", C::param_adjust, OpKind::precision_coarser,
        "merge_precision one step coarser in {1e-6,1e-4,1e-2}");
  c.add("merge_precision_finer", C::param_adjust, OpKind::precision_finer,
        "merge_precision one step finer in {1e-6,1e-4,1e-2}");
  c.add("depth_inc", C::param_adjust, OpKind::depth_inc, "E += 1 (epsilon /= 3)");
  c.add("depth_dec", C::param_adjust, OpKind::depth_dec, "E -= 1 (epsilon *= 3)");
  c.add("pga_on", C::param_adjust, OpKind::pga_on, "produce_greater_abstraction = true");
  c.add("pga_off", C::param_adjust, OpKind::pga_off, "produce_greater_abstraction = false");
  c.add("combo_more_abstract", C::param_adjust, OpKind::combo_more_abstract,
        "E -= 1 and produce_greater_abstraction = true");
  c.add("combo_less_abstract", C::param_adjust, OpKind::combo_less_abstract,
        "E += 1 and produce_greater_abstraction = false");
  c.add("disallow_for_more", C::predicate_constrain, OpKind::disallow_for_more,
        "disallow one occurring predicate, bandit aimed at 'm'");
  c.add("disallow_for_less", C::predicate_constrain, OpKind::disallow_for_less,
        "disallow one occurring predicate, bandit aimed at 'l'");
  c.add("reallow_for_more", C::predicate_constrain, OpKind::reallow_for_more,
        "re-allow one disallowed predicate, bandit aimed at 'm'");
  c.add("reallow_for_less", C::predicate_constrain, OpKind::reallow_for_less,
        "re-allow one disallowed predicate, bandit aimed at 'l'");
  c.add("start", C::special, OpKind::start, "initial description with default parameters");
  return c;
}

/// Per-candidate UCB1 detail of one predicate choice.
struct PredicateChoice {
  std::string id;
  std::map<std::string, double> index;
  std::map<std::string, PredicateTally> tallies;
};

namespace detail {

inline PredicateChoice ucb_pick(const std::vector<std::string>& sorted_candidates,
                                PredicateChange change, FeedbackKind aim, const History& h) {
  PredicateChoice out;
  std::uint64_t total = 0;
  for (const auto& id : sorted_candidates) {
    out.tallies[id] = h.tally(change, aim, id);
    total += out.tallies[id].occ;
  }
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& id : sorted_candidates) {
    const auto& t = out.tallies[id];
    double idx = std::numeric_limits<double>::infinity();
    if (t.occ > 0) {
      const double n = static_cast<double>(t.occ);
      idx = static_cast<double>(t.succ) / n +
            std::sqrt(2.0 * std::log(static_cast<double>(total)) / n);
    }
    out.index[id] = idx;
    if (out.id.empty() || idx > best) {  // strict: the lexicographically first id keeps ties
      best = idx;
      out.id = id;
    }
  }
  return out;
}

}  // namespace detail

/// Chooses which occurring named predicate to disallow.
inline PredicateChoice select_predicate_to_remove(const SurrogateState& s, const History& h,
                                                  FeedbackKind aim) {
  std::vector<std::string> cands;
  for (const auto& [id, count] : s.stats.named_multiset)
    if (count > 0) cands.push_back(id);
  if (cands.empty()) throw InapplicableOperator("no named predicate occurs in the description");
  return detail::ucb_pick(cands, PredicateChange::remove, aim, h);
}

/// Chooses which disallowed predicate to allow again.
inline PredicateChoice select_predicate_to_reallow(const SurrogateState& s, const History& h,
                                                   FeedbackKind aim) {
  std::vector<std::string> cands(s.params.disallowed_predicates.begin(),
                                 s.params.disallowed_predicates.end());
  if (cands.empty()) throw InapplicableOperator("no predicate is disallowed");
  return detail::ucb_pick(cands, PredicateChange::reallow, aim, h);
}

/// True when the operator can act on `s`. Parameter operators always can (they clamp).
inline bool is_applicable(const OperatorSpec& op, const SurrogateState& s) {
  switch (op.kind) {
    case OpKind::disallow_for_more:
    case OpKind::disallow_for_less: return s.stats.unique_named > 0;
    case OpKind::reallow_for_more:
    case OpKind::reallow_for_less: return !s.params.disallowed_predicates.empty();
    case OpKind::start: return false;
    default: return true;
  }
}

inline std::uint64_t fresh_noise(const SurrogateState& s, int op) {
  return mix_seed({s.params.noise_draw, static_cast<std::uint64_t>(s.t + 1),
                   static_cast<std::uint64_t>(op)});
}

/// Applies a selectable operator to `s`, producing the state for t+1.
/// Throws InapplicableOperator when the operator has nothing to act on.
inline SurrogateState apply_operator(const OperatorCatalog& catalog, int op,
                                     const SurrogateState& s, const History& h,
                                     const EnvConfig& cfg) {
  const auto& spec = catalog.at(op);
  StateParams p = s.params;
  auto step_depth = [&](int d) {
    p.refinement_depth = std::clamp(p.refinement_depth + d, kMinDepth, kMaxDepth);
  };
  switch (spec.kind) {
    case OpKind::start:
      throw std::invalid_argument("the start operator only opens a question");
    case OpKind::blank: break;
    case OpKind::radius_up:
      p.sampling_radius = std::min(kMaxSamplingRadius, p.sampling_radius * 1.5);
      break;
    case OpKind::radius_down:
      p.sampling_radius = std::max(kMinSamplingRadius, p.sampling_radius / 1.5);
      break;
    case OpKind::reuse_on: p.reuse_reach = true; break;
    case OpKind::reuse_off: p.reuse_reach = false; break;
    case OpKind::split_question_only: p.split_question_vars_only = true; break;
    case OpKind::split_all: p.split_question_vars_only = false; break;
    case OpKind::merge_inc: p.merge_iters = std::min(kMaxMergeIters, p.merge_iters + 1); break;
    case OpKind::merge_dec: p.merge_iters = std::max(0, p.merge_iters - 1); break;
    case OpKind::merge_zero: p.merge_iters = 0; break;
    case OpKind::precision_coarser:
      p.merge_precision_level =
          std::min(static_cast<int>(kMergePrecisions.size()) - 1, p.merge_precision_level + 1);
      break;
    case OpKind::precision_finer:
      p.merge_precision_level = std::max(0, p.merge_precision_level - 1);
      break;
    case OpKind::depth_inc: step_depth(+1); break;
    case OpKind::depth_dec: step_depth(-1); break;
    case OpKind::pga_on: p.produce_greater_abstraction = true; break;
    case OpKind::pga_off: p.produce_greater_abstraction = false; break;
    case OpKind::combo_more_abstract:
      step_depth(-1);
      p.produce_greater_abstraction = true;
      break;
    case OpKind::combo_less_abstract:
      step_depth(+1);
      p.produce_greater_abstraction = false;
      break;
    case OpKind::disallow_for_more:
    case OpKind::disallow_for_less: {
      const auto aim =
          spec.kind == OpKind::disallow_for_more ? FeedbackKind::more : FeedbackKind::less;
      p.disallowed_predicates.insert(select_predicate_to_remove(s, h, aim).id);
      break;
    }
    case OpKind::reallow_for_more:
    case OpKind::reallow_for_less: {
      const auto aim =
          spec.kind == OpKind::reallow_for_more ? FeedbackKind::more : FeedbackKind::less;
      p.disallowed_predicates.erase(select_predicate_to_reallow(s, h, aim).id);
      break;
    }
  }
  p.noise_draw = fresh_noise(s, op);
  return make_state(p, cfg, s.t + 1, s.question_id);
}

/// Default-parameter opening state of a question.
inline SurrogateState start_state(const EnvConfig& cfg, std::uint64_t question_seed,
                                  std::string question_id) {
  StateParams p;
  p.noise_draw = question_seed;
  return make_state(p, cfg, 0, std::move(question_id));
}

}  // namespace steer
