#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "steer/record.hpp"
#include "steer/stats.hpp"

namespace steer {

struct HistoryConfig {
  std::size_t reservoir_capacity = Reservoir::kDefaultCapacity;
  std::uint64_t seed = 0;
  bool keep_box_samples = false;
};

/// Resolved m- or l-records as parallel arrays, appended as rewards resolve.
/// A position `pos` indexes every array and feature column.
class QIndex {
 public:

  std::size_t size() const { return record_.size(); }
  bool empty() const { return record_.empty(); }
  std::size_t record(std::size_t pos) const { return record_[pos]; }
  std::uint64_t seq(std::size_t pos) const { return seq_[pos]; }
  int op(std::size_t pos) const { return op_[pos]; }
  int reward(std::size_t pos) const { return reward_[pos]; }
  std::span<const double> column(std::size_t field) const { return cols_[field]; }

  void add(std::size_t rec, std::uint64_t seq, int op, int reward, const FeatureVector& v) {
    record_.push_back(rec);
    seq_.push_back(seq);
    op_.push_back(op);
    reward_.push_back(reward);
    for (std::size_t j = 0; j < kNumFeatures; ++j) cols_[j].push_back(v[j]);
  }

 private:
  std::vector<std::size_t> record_;
  std::vector<std::uint64_t> seq_;
  std::vector<int> op_;
  std::vector<int> reward_;
  std::array<std::vector<double>, kNumFeatures> cols_;
};

enum class PredicateChange : std::uint8_t { remove, reallow };

struct PredicateTally {
  std::uint64_t occ = 0;
  std::uint64_t succ = 0;
};

/// Append-only interaction store H_t plus the streaming statistics selectors
/// and the autouser read from it.
///
/// Single writer. Every mutation keeps the derived statistics in step, so a
/// replay of the same records in `seq` order rebuilds identical state.
class History {
 public:
  explicit History(HistoryConfig cfg = {}) : cfg_(cfg) {
    for (std::size_t j = 0; j < kNumFeatures; ++j) {
      values_.emplace_back(cfg.reservoir_capacity, mix_seed({cfg.seed, 1, j}));
      deltas_.emplace_back(cfg.reservoir_capacity, mix_seed({cfg.seed, 2, j}));
    }
  }

  /// Adds the state shown at (session, t). Returns its index.
  std::size_t append_state(InteractionRecord rec) {
    if (auto it = last_t_by_session_.find(rec.session_id); it == last_t_by_session_.end()) {
      if (rec.t != 0) throw std::invalid_argument("first timestep of a session must be 0");
    } else if (rec.t <= it->second) {
      throw std::invalid_argument("duplicate (session, t) key");
    } else if (rec.t != it->second + 1) {
      throw std::invalid_argument("timestep not contiguous within session " + rec.session_id);
    }
    if (rec.request || rec.reward)
      throw std::invalid_argument("append_state expects an unresolved record");
    last_t_by_session_[rec.session_id] = rec.t;

    if (!cfg_.keep_box_samples) {
      rec.state.stats.box_volumes = {};
      rec.state.stats.box_side_sums = {};
    }
    rec.seq = next_seq_++;
    const std::size_t idx = records_.size();
    const auto& v = rec.state.features;
    for (std::size_t j = 0; j < kNumFeatures; ++j) {
      moments_[j].add(v[j]);
      values_[j].insert(v[j]);
    }
    std::optional<std::size_t> pred;
    if (auto it = last_index_by_question_.find(rec.question_id);
        it != last_index_by_question_.end())
      pred = it->second;
    records_.push_back(std::move(rec));
    links_.push_back({});
    last_index_by_question_[records_[idx].question_id] = idx;
    by_key_[key(records_[idx].session_id, records_[idx].t)] = idx;

    if (pred) {
      const auto& pv = records_[*pred].state.features;
      for (std::size_t j = 0; j < kNumFeatures; ++j) deltas_[j].insert(v[j] - pv[j]);
      if (is_dangling(*pred)) --dangling_[aim_slot(records_[*pred].request->kind)];
      links_[*pred].successor = idx;
      links_[idx].predecessor = *pred;
      update_tallies(*pred);
    }
    return idx;
  }

  /// Records f_t on record idx together with the operator answering it.
  void set_request(std::size_t idx, const Feedback& f, std::optional<int> chosen = {},
                   bool fell_back = false, std::optional<DecisionTrace> trace = {},
                   std::optional<AutouserVerdict> verdict = {}) {
    auto& r = records_.at(idx);
    if (r.request) throw std::logic_error("request already set on record");
    r.request = f;
    r.chosen = chosen;
    r.fell_back = fell_back;
    r.trace = std::move(trace);
    r.verdict = std::move(verdict);
    if (chosen) count_use(*chosen);
    if (is_dangling(idx)) ++dangling_[aim_slot(f.kind)];
    update_tallies(idx);
    if (links_[idx].predecessor) update_tallies(*links_[idx].predecessor);
  }

  /// Resolves y_t once f_{t+1} is known. Absent y (exit) is allowed.
  void resolve_reward(std::size_t idx, std::optional<int> y) {
    auto& r = records_.at(idx);
    if (!r.request) throw std::logic_error("reward resolved before request");
    if (r.reward) throw std::logic_error("reward already resolved");
    r.reward = y;
    if (!y) return;
    const auto kind = r.request->kind;
    if (!is_adjustment(kind)) return;
    if (*y != 0) {
      ++adjudicated_;
      if (*y > 0) ++successes_;
    }
    q_[aim_slot(kind)].add(idx, r.seq, r.chosen.value_or(-1), *y, r.state.features);
  }

  /// Attaches weight bookkeeping to a record after the fact (log metadata only).
  InteractionRecord& mutable_record(std::size_t idx) { return records_.at(idx); }

  const InteractionRecord& record(std::size_t idx) const { return records_.at(idx); }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::span<const InteractionRecord> records() const { return records_; }

  std::optional<std::size_t> successor(std::size_t idx) const { return links_.at(idx).successor; }
  std::optional<std::size_t> predecessor(std::size_t idx) const {
    return links_.at(idx).predecessor;
  }
  std::optional<std::size_t> find(const std::string& session, std::int64_t t) const {
    auto it = by_key_.find(key(session, t));
    if (it == by_key_.end()) return std::nullopt;
    return it->second;
  }

  const RunningMoments& moments(std::size_t field) const { return moments_.at(field); }
  const Reservoir& values(std::size_t field) const { return values_.at(field); }
  /// Same-question consecutive differences v_l - v_{l-1} of one field.
  const Reservoir& deltas(std::size_t field) const { return deltas_.at(field); }

  const QIndex& q_index(FeedbackKind request) const { return q_[aim_slot(request)]; }

  /// Records whose request matches f and whose reward has resolved.
  std::vector<std::size_t> filter_q(FeedbackKind f) const {
    const auto& q = q_index(f);
    std::vector<std::size_t> out(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) out[i] = q.record(i);
    return out;
  }

  /// Fraction of adjudicated (y = +-1) m/l requests that earned +1; 0 if none.
  double global_success_rate() const {
    return adjudicated_ ? static_cast<double>(successes_) / static_cast<double>(adjudicated_)
                        : 0.0;
  }
  std::uint64_t adjudicated_count() const { return adjudicated_; }
  std::uint64_t success_count() const { return successes_; }

  std::span<const std::uint64_t> use_counts() const { return use_counts_; }
  std::uint64_t total_uses() const { return total_uses_; }

  /// occ/succ counts behind the predicate-choosing bandit.
  ///
  /// `aim` fixes r_T (m -> rm, l -> rl). A record without a successor
  /// compares against omega = +inf: it never counts for removal and always
  /// counts toward occ (never succ) for re-allowing.
  PredicateTally tally(PredicateChange change, FeedbackKind aim, const std::string& id) const {
    PredicateTally out;
    const auto& table = tallies_[static_cast<int>(change)][aim_slot(aim)];
    if (auto it = table.find(id); it != table.end()) out = it->second;
    if (change == PredicateChange::reallow) out.occ += dangling_[aim_slot(aim)];
    return out;
  }

 private:
  struct Links {
    std::optional<std::size_t> predecessor;
    std::optional<std::size_t> successor;
    bool occ_counted = false;
    bool succ_counted = false;
  };

  static std::string key(const std::string& s, std::int64_t t) {
    return s + '#' + std::to_string(t);
  }
  static std::size_t aim_slot(FeedbackKind k) {
    if (k == FeedbackKind::more) return 0;
    if (k == FeedbackKind::less) return 1;
    throw std::invalid_argument("only m/l requests index Q and tallies");
  }

  bool is_dangling(std::size_t idx) const {
    const auto& r = records_[idx];
    return r.request && is_adjustment(r.request->kind) && !links_[idx].successor;
  }

  void count_use(int op) {
    if (op < 0) return;
    if (static_cast<std::size_t>(op) >= use_counts_.size()) use_counts_.resize(op + 1, 0);
    ++use_counts_[op];
    ++total_uses_;
  }

  // Pair (idx, successor): occ once both request(idx) and the successor exist,
  // succ once the successor's request is known too.
  void update_tallies(std::size_t idx) {
    auto& link = links_[idx];
    const auto& r = records_[idx];
    if (!link.successor || !r.request || !is_adjustment(r.request->kind)) return;
    const auto aim = r.request->kind;
    const auto& next = records_[*link.successor];
    const auto& a = r.state.stats;
    const auto& b = next.state.stats;
    std::vector<std::string> ids;
    for (const auto& [id, c] : a.named_multiset) ids.push_back(id);
    for (const auto& [id, c] : b.named_multiset)
      if (!a.named_multiset.count(id)) ids.push_back(id);

    auto for_each_change = [&](auto&& fn) {
      for (const auto& id : ids) {
        const int wa = a.occurrences_of(id), wb = b.occurrences_of(id);
        if (wa > wb) fn(PredicateChange::remove, id);
        if (wa < wb) fn(PredicateChange::reallow, id);
      }
    };
    if (!link.occ_counted) {
      link.occ_counted = true;
      for_each_change([&](PredicateChange c, const std::string& id) {
        ++tallies_[static_cast<int>(c)][aim_slot(aim)][id].occ;
      });
    }
    if (!link.succ_counted && next.request) {
      link.succ_counted = true;
      const auto nk = next.request->kind;
      const bool flipped = (nk == FeedbackKind::exit) || (is_adjustment(nk) && nk != aim);
      if (flipped)
        for_each_change([&](PredicateChange c, const std::string& id) {
          ++tallies_[static_cast<int>(c)][aim_slot(aim)][id].succ;
        });
    }
  }

  HistoryConfig cfg_;
  std::vector<InteractionRecord> records_;
  std::vector<Links> links_;
  std::uint64_t next_seq_ = 0;
  std::unordered_map<std::string, std::size_t> last_index_by_question_;
  std::unordered_map<std::string, std::int64_t> last_t_by_session_;
  std::unordered_map<std::string, std::size_t> by_key_;

  std::array<RunningMoments, kNumFeatures> moments_{};
  std::vector<Reservoir> values_;
  std::vector<Reservoir> deltas_;
  std::array<QIndex, 2> q_;
  std::uint64_t adjudicated_ = 0;
  std::uint64_t successes_ = 0;
  std::vector<std::uint64_t> use_counts_;
  std::uint64_t total_uses_ = 0;
  std::array<std::uint64_t, 2> dangling_{};
  std::array<std::array<std::map<std::string, PredicateTally>, 2>, 2> tallies_;
};

}  // namespace steer
