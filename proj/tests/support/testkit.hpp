#pragma once

// Shared helpers for the unit and acceptance suites: seeded generators,
// toy histories and a brute-force predicate-bandit oracle.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "steer/steer.hpp"

namespace testkit {

using namespace steer;

struct Gen {
  Rng rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return lo + (hi - lo) * rng.uniform(); }
  int integer(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
  }
  bool coin(double p = 0.5) { return rng.coin(p); }

  std::vector<double> distribution(std::size_t k, double zero_p = 0.3) {
    std::vector<double> v(k);
    double s = 0.0;
    for (auto& x : v) s += (x = coin(zero_p) ? 0.0 : uniform());
    if (s == 0.0) {
      v[rng.below(k)] = 1.0;
      return v;
    }
    for (auto& x : v) x /= s;
    return v;
  }

  StateParams params(const EnvConfig& cfg) {
    StateParams p;
    p.refinement_depth = integer(kMinDepth, kMaxDepth);
    p.sampling_radius = uniform(kMinSamplingRadius, kMaxSamplingRadius);
    p.reuse_reach = coin();
    p.split_question_vars_only = coin();
    p.merge_iters = integer(0, kMaxMergeIters);
    p.merge_precision_level = integer(0, 2);
    p.produce_greater_abstraction = coin();
    for (const auto& pred : cfg.predicate_catalog)
      if (coin(0.2)) p.disallowed_predicates.insert(pred.id);
    p.noise_draw = rng.next_u64();
    return p;
  }
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("steer_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Concatenation of every session log of a run, in file-name order.
inline std::string run_logs(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir / "sessions"))
    files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string out;
  for (const auto& f : files) out += f.filename().string() + "\n" + slurp(f);
  return out;
}

// ---------------------------------------------------------------------------
// Predicate-bandit toy histories

struct ToyStep {
  int question = 0;
  std::map<std::string, int> named;
  std::optional<FeedbackKind> request;
};

inline SurrogateState toy_state(const std::map<std::string, int>& named,
                                std::set<std::string> disallowed = {}) {
  SurrogateState s;
  for (const auto& [id, c] : named)
    if (c > 0) {
      s.stats.named_multiset[id] = c;
      ++s.stats.unique_named;
      s.stats.named_occurrences += c;
    }
  s.params.disallowed_predicates = std::move(disallowed);
  return s;
}

inline History toy_history(const std::vector<ToyStep>& steps) {
  History h;
  std::map<int, std::int64_t> next_t;
  for (const auto& st : steps) {
    InteractionRecord r;
    r.session_id = "s" + std::to_string(st.question);
    r.question_id = "q" + std::to_string(st.question);
    r.t = next_t[st.question]++;
    r.state = toy_state(st.named);
    const auto idx = h.append_state(std::move(r));
    if (st.request) h.set_request(idx, Feedback::of(*st.request));
  }
  return h;
}

/// occ/succ by direct enumeration of the transitions in `steps`.
inline PredicateTally oracle_tally(const std::vector<ToyStep>& steps, PredicateChange change,
                                   FeedbackKind aim, const std::string& id) {
  PredicateTally t;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i].request != aim) continue;
    std::optional<std::size_t> next;
    for (std::size_t j = i + 1; j < steps.size(); ++j)
      if (steps[j].question == steps[i].question) {
        next = j;
        break;
      }
    auto count = [&](std::size_t k) {
      auto it = steps[k].named.find(id);
      return it == steps[k].named.end() ? 0 : it->second;
    };
    const double wa = count(i);
    const double wb = next ? static_cast<double>(count(*next))
                           : std::numeric_limits<double>::infinity();
    const bool hit = change == PredicateChange::remove ? wa > wb : wa < wb;
    if (!hit) continue;
    ++t.occ;
    if (next && steps[*next].request &&
        (*steps[*next].request == FeedbackKind::exit || *steps[*next].request == opposite(aim)))
      ++t.succ;
  }
  return t;
}

/// UCB1 over sorted candidates with N = total occ; untried wins; first id keeps ties.
inline std::string oracle_pick(const std::vector<ToyStep>& steps,
                               const std::vector<std::string>& sorted_candidates,
                               PredicateChange change, FeedbackKind aim) {
  std::vector<PredicateTally> ts;
  double total = 0;
  for (const auto& id : sorted_candidates) {
    ts.push_back(oracle_tally(steps, change, aim, id));
    total += static_cast<double>(ts.back().occ);
  }
  std::string best;
  double best_idx = 0;
  for (std::size_t i = 0; i < sorted_candidates.size(); ++i) {
    const double n = static_cast<double>(ts[i].occ);
    const double idx = ts[i].occ == 0 ? std::numeric_limits<double>::infinity()
                                      : ts[i].succ / n + std::sqrt(2.0 * std::log(total) / n);
    if (best.empty() || idx > best_idx) {
      best = sorted_candidates[i];
      best_idx = idx;
    }
  }
  return best;
}

struct ToyCase {
  std::vector<ToyStep> steps;
  std::map<std::string, int> current;
  std::set<std::string> disallowed;
};

/// Random history of up to `max_records` steps over up to `max_preds` predicates.
inline ToyCase random_toy_case(Gen& g, int max_records = 8, int max_preds = 4) {
  static const char* ids[] = {"pa", "pb", "pc", "pd"};
  const int n_preds = g.integer(1, max_preds);
  const int n_records = g.integer(0, max_records);
  const int n_questions = g.integer(1, 3);
  ToyCase c;
  std::map<int, bool> closed;
  for (int i = 0; i < n_records; ++i) {
    ToyStep st;
    st.question = g.integer(0, n_questions - 1);
    if (closed[st.question]) continue;
    for (int p = 0; p < n_preds; ++p) st.named[ids[p]] = g.integer(0, 2);
    const int r = g.integer(0, 9);
    if (r < 4) st.request = FeedbackKind::more;
    else if (r < 8) st.request = FeedbackKind::less;
    else if (r == 8) st.request = FeedbackKind::user_op;
    else st.request = FeedbackKind::exit;
    if (st.request == FeedbackKind::exit) closed[st.question] = true;
    c.steps.push_back(st);
  }
  // the newest record of a question may still be waiting for its request
  for (auto it = c.steps.rbegin(); it != c.steps.rend(); ++it)
    if (it->request != FeedbackKind::exit && g.coin(0.3)) {
      bool newest = true;
      for (auto jt = c.steps.rbegin(); jt != it; ++jt) newest &= jt->question != it->question;
      if (newest) it->request.reset();
    }
  for (int p = 0; p < n_preds; ++p) {
    c.current[ids[p]] = g.integer(0, 2);
    if (g.coin(0.4)) c.disallowed.insert(ids[p]);
  }
  return c;
}

/// True when both predicate choosers (and their occ/succ counts) agree with
/// the enumeration oracle for both aims.
inline bool eq1_agrees(const ToyCase& c) {
  const auto h = toy_history(c.steps);
  const auto s = toy_state(c.current, c.disallowed);
  std::vector<std::string> present;
  for (const auto& [id, n] : c.current)
    if (n > 0) present.push_back(id);
  const std::vector<std::string> banned(c.disallowed.begin(), c.disallowed.end());
  for (auto aim : {FeedbackKind::more, FeedbackKind::less})
    for (auto change : {PredicateChange::remove, PredicateChange::reallow}) {
      const auto& cands = change == PredicateChange::remove ? present : banned;
      try {
        const auto got = change == PredicateChange::remove ? select_predicate_to_remove(s, h, aim)
                                                           : select_predicate_to_reallow(s, h, aim);
        if (cands.empty() || got.id != oracle_pick(c.steps, cands, change, aim)) return false;
        for (const auto& id : cands) {
          const auto want = oracle_tally(c.steps, change, aim, id);
          const auto& have = got.tallies.at(id);
          if (want.occ != have.occ || want.succ != have.succ) return false;
        }
      } catch (const InapplicableOperator&) {
        if (!cands.empty()) return false;
      }
    }
  return true;
}

}  // namespace testkit
