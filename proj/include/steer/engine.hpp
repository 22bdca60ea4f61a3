#pragma once

#include <chrono>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "steer/autouser.hpp"
#include "steer/decision.hpp"
#include "steer/history.hpp"
#include "steer/json_io.hpp"
#include "steer/learning.hpp"
#include "steer/operators.hpp"
#include "steer/record.hpp"
#include "steer/rng.hpp"
#include "steer/selectors.hpp"
#include "steer/stats.hpp"
#include "steer/surrogate_env.hpp"

namespace steer {

/// learned: the full vote/aggregate/UCB pipeline. blank_only: answers every
/// m/l with the blank operator (baseline).
enum class Policy : std::uint8_t { learned, blank_only };
enum class UserSource : std::uint8_t { autouser, interactive };

inline const char* to_string(Policy p) { return p == Policy::learned ? "learned" : "blank_only"; }
inline const char* to_string(UserSource u) {
  return u == UserSource::autouser ? "autouser" : "interactive";
}

struct EngineConfig {
  std::uint64_t seed = 0;  // also seeds the environment, projections and reservoirs
  EnvConfig env;
  AutouserConfig autouser;
  SelectorConfig selectors;
  std::size_t reservoir_capacity = Reservoir::kDefaultCapacity;
  Policy policy = Policy::learned;
  bool global_use_counts = true;
  bool log_weights = false;               // full weight vector on every record
  std::optional<std::string> log_dir;     // no logging when empty
  std::size_t max_records = 0;            // advisory cap on stored records, 0 = none
  double session_time_limit_s = 0.0;      // wall clock per autouser session, 0 = none

  void validate() const {
    env.validate();
    autouser.validate();
    if (selectors.alphas.empty()) throw std::invalid_argument("at least one alpha is required");
    for (double a : selectors.alphas)
      if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("alpha must lie in (0,1)");
    if (selectors.n_projections == 0) throw std::invalid_argument("n_projections must be positive");
    if (reservoir_capacity == 0) throw std::invalid_argument("reservoir capacity must be positive");
    if (selectors.featurization_refresh == 0)
      throw std::invalid_argument("featurization_refresh must be positive");
  }
};

inline void to_json(json& j, const EngineConfig& c) {
  j = json{{"seed", c.seed},
           {"env", c.env},
           {"autouser", c.autouser},
           {"selectors", c.selectors},
           {"reservoir_capacity", c.reservoir_capacity},
           {"policy", to_string(c.policy)},
           {"global_use_counts", c.global_use_counts},
           {"log_weights", c.log_weights},
           {"max_records", c.max_records}};
}

inline void from_json(const json& j, EngineConfig& c) {
  detail::get_if(j, "seed", c.seed);
  if (j.contains("env")) j["env"].get_to(c.env);
  if (j.contains("autouser")) j["autouser"].get_to(c.autouser);
  if (j.contains("selectors")) j["selectors"].get_to(c.selectors);
  detail::get_if(j, "reservoir_capacity", c.reservoir_capacity);
  if (j.contains("policy")) {
    const auto p = j["policy"].get<std::string>();
    if (p == "learned") c.policy = Policy::learned;
    else if (p == "blank_only") c.policy = Policy::blank_only;
    else throw std::invalid_argument("unknown policy " + p);
  }
  detail::get_if(j, "global_use_counts", c.global_use_counts);
  detail::get_if(j, "log_weights", c.log_weights);
  detail::get_if(j, "max_records", c.max_records);
}

class SessionNotFound : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};
class SessionClosed : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};
class BadFeedback : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// What one request did.
struct StepResult {
  std::string session_id;
  bool closed = false;
  std::optional<std::size_t> resolved_index;  // record whose y_{t-1} just resolved
  std::optional<int> resolved_reward;
  std::optional<std::size_t> state_index;     // record now on screen (absent once closed)
  std::optional<int> chosen;
  bool fell_back = false;
  std::optional<DecisionTrace> trace;
  std::vector<std::string> disallowed;        // answer to a list_disallowed request
};

struct SessionInfo {
  std::string id;
  std::string question_id;
  std::uint64_t question_seed = 0;
  UserSource source = UserSource::interactive;
  bool open = true;
  std::string close_reason;
  std::vector<std::size_t> records;  // history indices in t order
  std::size_t current = 0;
};

struct BootstrapSummary {
  std::size_t sessions = 0;
  std::size_t timesteps = 0;
  std::uint64_t adjudicated = 0;
  std::uint64_t successes = 0;
  double global_success = 0.0;
  double trailing_success = 0.0;  // last 100 adjudicated steps
  double seconds = 0.0;
  std::map<std::string, std::size_t> terminations;
};

inline std::uint64_t weights_hash(std::span<const double> w) {
  std::uint64_t h = 1469598103934665603ull;
  for (double x : w) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  return h;
}

/// Success rate over the last `window` adjudicated (y = +-1) records in
/// resolution order.
inline double trailing_success(std::span<const int> adjudicated, std::size_t window = 100) {
  if (adjudicated.empty()) return 0.0;
  const std::size_t n = std::min(window, adjudicated.size());
  std::size_t wins = 0;
  for (std::size_t i = adjudicated.size() - n; i < adjudicated.size(); ++i)
    wins += adjudicated[i] > 0;
  return static_cast<double>(wins) / static_cast<double>(n);
}

/// The learning loop: sessions, history, selector weights, logging.
///
/// Single writer; callers serialize access (the HTTP service holds a mutex).
class Engine {
 public:
  explicit Engine(EngineConfig cfg)
      : cfg_(std::move(cfg)),
        history_(HistoryConfig{cfg_.reservoir_capacity, mix_seed({cfg_.seed, fnv1a("history")})}) {
    cfg_.validate();
    cfg_.env.master_seed = cfg_.seed;
    catalog_ = build_catalog(cfg_.env);
    specs_ = build_selectors(catalog_, cfg_.selectors);
    projections_ = make_projection_vectors(cfg_.selectors.n_projections, cfg_.seed);
    rank_cap_ = rank_cap_for(specs_);
    for (auto k : {FeedbackKind::more, FeedbackKind::less})
      neighbors_.emplace_back(k, projections_, cfg_.selectors.featurization_refresh);
    weights_.assign(specs_.size(), 1.0);
    if (cfg_.log_dir) open_log_dir();
  }

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;
  ~Engine() {
    try {
      write_state_files();
    } catch (...) {
    }
  }

  const EngineConfig& config() const { return cfg_; }
  const OperatorCatalog& catalog() const { return catalog_; }
  const std::vector<SelectorSpec>& selectors() const { return specs_; }
  const std::vector<ProjectionVector>& projections() const { return projections_; }
  const std::vector<double>& weights() const { return weights_; }
  const History& history() const { return history_; }
  std::size_t rank_cap() const { return rank_cap_; }
  const std::vector<int>& adjudicated_rewards() const { return adjudicated_; }

  bool has_session(const std::string& id) const { return sessions_.count(id) > 0; }
  const SessionInfo& session(const std::string& id) const { return slot(id).info; }
  std::vector<std::string> session_ids() const {
    std::vector<std::string> out;
    for (const auto& [id, s] : sessions_) out.push_back(id);
    return out;
  }

  /// Starts a question: generates the start state as t = 0.
  std::string open_session(UserSource source = UserSource::interactive) {
    const std::size_t n = next_session_++;
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%05zu", n);
    std::string id = buf;
    std::snprintf(buf, sizeof buf, "q%05zu", n);
    Slot s;
    s.info.id = id;
    s.info.question_id = buf;
    s.info.question_seed = mix_seed({cfg_.seed, fnv1a("question"), n});
    s.info.source = source;
    s.local_counts.assign(catalog_.selectable_count(), 0);

    InteractionRecord rec;
    rec.session_id = id;
    rec.question_id = s.info.question_id;
    rec.t = 0;
    rec.state = start_state(cfg_.env, s.info.question_seed, s.info.question_id);
    rec.produced_by = catalog_.start_index();
    s.info.current = history_.append_state(std::move(rec));
    s.info.records.push_back(s.info.current);
    sessions_.emplace(id, std::move(s));
    check_capacity();
    return id;
  }

  /// Handles request f_t on the session's current state.
  StepResult feedback(const std::string& id, const Feedback& f,
                      std::optional<AutouserVerdict> verdict = {}) {
    auto& s = slot(id);
    if (!s.info.open) throw SessionClosed("session " + id + " is closed");
    validate_feedback(s, f);

    StepResult res;
    res.session_id = id;
    const std::size_t cur = s.info.current;

    if (s.pending) resolve_pending(s, f.kind, res);

    if (f.kind == FeedbackKind::exit) {
      history_.set_request(cur, f, {}, false, {}, std::move(verdict));
      history_.resolve_reward(cur, std::nullopt);
      stamp_weights(cur, /*full=*/true);
      s.info.open = false;
      s.info.close_reason = history_.record(cur).verdict ? history_.record(cur).verdict->termination
                                                         : std::string("user_exit");
      res.closed = true;
      flush(s);
      return res;
    }

    const SurrogateState& here = history_.record(cur).state;
    SurrogateState next;
    std::optional<int> chosen;
    int produced_by = -1;
    bool fell_back = false;
    std::optional<DecisionTrace> trace;
    std::vector<VoteDistribution> votes;

    auto apply = [&](int op) {
      chosen = op;
      produced_by = op;
      try {
        next = apply_operator(catalog_, op, here, history_, cfg_.env);
      } catch (const InapplicableOperator&) {
        next = fallback_state(here);
        fell_back = true;
      }
    };

    if (f.kind == FeedbackKind::user_op) {
      switch (f.action) {
        case UserOpAction::apply_operator: apply(*f.operator_index); break;
        case UserOpAction::history_travel: {
          const auto target = *history_.find(id, *f.travel_to);
          next = history_.record(target).state;
          next.t = here.t + 1;
          break;
        }
        case UserOpAction::list_disallowed:
          next = fallback_state(here);
          res.disallowed.assign(here.params.disallowed_predicates.begin(),
                                here.params.disallowed_predicates.end());
          break;
      }
    } else if (cfg_.policy == Policy::blank_only) {
      apply(catalog_.index_of(OpKind::blank));
    } else {
      trace = decide(s, here, f.kind, votes);
      apply(trace->chosen);
      trace->fell_back = fell_back;
    }

    if (chosen && !cfg_.global_use_counts) ++s.local_counts.at(*chosen);
    const auto request_kind = f.kind;
    history_.set_request(cur, f, chosen, fell_back, trace, std::move(verdict));

    InteractionRecord rec;
    rec.session_id = id;
    rec.question_id = s.info.question_id;
    rec.t = here.t + 1;
    next.t = rec.t;
    rec.state = std::move(next);
    rec.produced_by = produced_by;
    rec.generating_request = request_kind;
    const std::size_t idx = history_.append_state(std::move(rec));
    s.info.records.push_back(idx);
    s.info.current = idx;
    s.pending = cur;
    s.pending_votes = std::move(votes);

    res.state_index = idx;
    res.chosen = chosen;
    res.fell_back = fell_back;
    res.trace = std::move(trace);
    flush(s);
    check_capacity();
    return res;
  }

  /// One autouser-driven question from start to exit. Returns the session id.
  std::string run_autouser_session() {
    const std::string id = open_session(UserSource::autouser);
    const auto& info = session(id);
    Rng rng(mix_seed({info.question_seed, fnv1a("autouser")}));
    SessionProgress progress;
    progress.observe(history_.record(info.current).state);
    std::optional<FeedbackKind> last;
    const auto started = std::chrono::steady_clock::now();
    for (;;) {
      auto term = should_terminate(progress, cfg_.autouser);
      std::string reason = to_string(term);
      if (term == Termination::continue_session && cfg_.session_time_limit_s > 0.0) {
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - started;
        if (dt.count() > cfg_.session_time_limit_s) reason = "time_limit";
      }
      if (reason != "continue") {
        AutouserVerdict v;
        v.global_success = history_.global_success_rate();
        v.response = FeedbackKind::exit;
        v.termination = reason;
        feedback(id, Feedback::exit(), v);
        return id;
      }
      Feedback f;
      std::optional<AutouserVerdict> verdict;
      if (!last) {
        f = rng.coin(0.5) ? Feedback::more() : Feedback::less();
      } else {
        const auto cur = session(id).current;
        const auto prev = *history_.predecessor(cur);
        verdict = judge(history_.record(prev).state, history_.record(cur).state, history_, *last,
                        rng, cfg_.autouser);
        f = Feedback::of(verdict->response);
      }
      ++progress.adjustments;
      const auto res = feedback(id, f, verdict);
      progress.observe(history_.record(*res.state_index).state);
      last = f.kind;
    }
  }

  BootstrapSummary run_bootstrap(std::size_t n_sessions) {
    if (n_sessions == 0) throw std::invalid_argument("bootstrap needs at least one session");
    const auto started = std::chrono::steady_clock::now();
    BootstrapSummary out;
    const std::size_t before = history_.size();
    for (std::size_t i = 0; i < n_sessions; ++i) {
      const auto id = run_autouser_session();
      ++out.terminations[session(id).close_reason];
    }
    out.sessions = n_sessions;
    out.timesteps = history_.size() - before;
    out.adjudicated = history_.adjudicated_count();
    out.successes = history_.success_count();
    out.global_success = history_.global_success_rate();
    out.trailing_success = trailing_success(adjudicated_);
    out.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    write_state_files();
    return out;
  }

  /// engine_state.json and weights.csv in the log directory.
  void write_state_files() const {
    if (!cfg_.log_dir) return;
    const std::filesystem::path dir(*cfg_.log_dir);
    json state{{"config", cfg_},
               {"selector_count", specs_.size()},
               {"projections", projections_},
               {"weights", weights_},
               {"use_counts", history_.use_counts()},
               {"records", history_.size()}};
    write_json_file((dir / "engine_state.json").string(), state);
    std::ofstream csv(dir / "weights.csv");
    if (!csv) throw IoError("cannot write weights.csv");
    csv << "selector_id,kind,name,weight\n";
    char buf[64];
    for (const auto& sp : specs_) {
      std::snprintf(buf, sizeof buf, "%.17g", weights_[sp.id]);
      csv << sp.id << ',' << to_string(sp.kind) << ',' << sp.name << ',' << buf << '\n';
    }
  }

 private:
  struct Slot {
    SessionInfo info;
    std::optional<std::size_t> pending;  // record awaiting its reward
    std::vector<VoteDistribution> pending_votes;
    std::vector<std::uint64_t> local_counts;
    std::size_t flushed = 0;             // records written to the session log
    std::unique_ptr<std::ofstream> log;
  };

  Slot& slot(const std::string& id) {
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw SessionNotFound("unknown session " + id);
    return it->second;
  }
  const Slot& slot(const std::string& id) const {
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw SessionNotFound("unknown session " + id);
    return it->second;
  }

  void validate_feedback(const Slot& s, const Feedback& f) const {
    if (f.kind != FeedbackKind::user_op) return;
    switch (f.action) {
      case UserOpAction::apply_operator:
        if (!f.operator_index || *f.operator_index < 0 ||
            static_cast<std::size_t>(*f.operator_index) >= catalog_.selectable_count())
          throw BadFeedback("u: operator must be a selectable operator index");
        break;
      case UserOpAction::history_travel: {
        const auto now = history_.record(s.info.current).t;
        if (!f.travel_to || *f.travel_to < 0 || *f.travel_to > now)
          throw BadFeedback("u: travel target must be a timestep of this session");
        break;
      }
      case UserOpAction::list_disallowed: break;
    }
  }

  void resolve_pending(Slot& s, FeedbackKind next, StepResult& res) {
    const std::size_t p = *s.pending;
    const auto y = reward_from_feedback(history_.record(p).request_kind(), next);
    history_.resolve_reward(p, y);
    const auto& rec = history_.record(p);
    if (y && *y != 0 && is_adjustment(rec.request_kind())) adjudicated_.push_back(*y);
    if (y && *y != 0 && !s.pending_votes.empty() && rec.chosen)
      update_weights(weights_, s.pending_votes, *rec.chosen, *y);
    stamp_weights(p, false);
    res.resolved_index = p;
    res.resolved_reward = y;
    s.pending.reset();
    s.pending_votes.clear();
  }

  DecisionTrace decide(const Slot& s, const SurrogateState& here, FeedbackKind request,
                       std::vector<VoteDistribution>& votes) {
    auto& index = neighbors_[request == FeedbackKind::more ? 0 : 1];
    index.sync(history_);
    NeighborRanker ranker(index, history_.q_index(request), here.features, rank_cap_);
    VoteContext ctx{here, history_, request, catalog_, ranker};
    auto vr = run_voting_rounds(std::span<const SelectorSpec>(specs_),
                                [&](const SelectorSpec& sp, std::span<const VoteDistribution> e) {
                                  return evaluate_selector(sp, ctx, e);
                                });
    DecisionTrace trace;
    trace.d_samp = aggregate_votes(vr.votes, weights_);
    std::vector<std::uint64_t> counts(catalog_.selectable_count(), 0);
    std::uint64_t total = 0;
    if (cfg_.global_use_counts) {
      const auto h = history_.use_counts();
      for (std::size_t i = 0; i < counts.size() && i < h.size(); ++i) counts[i] = h[i];
      total = history_.total_uses();
    } else {
      counts = s.local_counts;
      for (auto c : counts) total += c;
    }
    trace.ucb_indices = ucb_indices(trace.d_samp, counts, total);
    trace.chosen = argmax_lowest(trace.ucb_indices);
    trace.entropy = entropy_nats(trace.d_samp);
    votes = std::move(vr.votes);
    return trace;
  }

  void stamp_weights(std::size_t idx, bool full) {
    auto& r = history_.mutable_record(idx);
    double l1 = 0.0, lo = weights_.front(), hi = weights_.front();
    for (double w : weights_) {
      l1 += std::abs(w);
      lo = std::min(lo, w);
      hi = std::max(hi, w);
    }
    r.weights_l1 = l1;
    r.weights_min = lo;
    r.weights_max = hi;
    r.weights_hash = weights_hash(weights_);
    if (full || cfg_.log_weights) r.weights = weights_;
  }

  // A record is final once its reward resolved (or the session closed).
  void flush(Slot& s) {
    if (!cfg_.log_dir) return;
    const auto& recs = s.info.records;
    while (s.flushed < recs.size()) {
      const auto& r = history_.record(recs[s.flushed]);
      const bool final = r.reward.has_value() || (r.request && r.request->kind == FeedbackKind::exit);
      if (!final) break;
      if (!s.log) {
        const auto path = std::filesystem::path(*cfg_.log_dir) / "sessions" / (s.info.id + ".jsonl");
        s.log = std::make_unique<std::ofstream>(path);
        if (!*s.log) throw IoError("cannot open " + path.string());
      }
      *s.log << json(r).dump() << '\n';
      ++s.flushed;
    }
    if (s.log && !*s.log) throw IoError("write failed for session " + s.info.id);
    if (!s.info.open) {
      if (s.log) s.log->flush();
      s.log.reset();
      write_index_line(s);
    }
  }

  void write_index_line(const Slot& s) {
    std::ofstream idx(std::filesystem::path(*cfg_.log_dir) / "index.jsonl", std::ios::app);
    if (!idx) throw IoError("cannot append to index.jsonl");
    json line{{"session_id", s.info.id},
              {"question_id", s.info.question_id},
              {"question_seed", s.info.question_seed},
              {"source", to_string(s.info.source)},
              {"records", s.info.records.size()},
              {"close_reason", s.info.close_reason},
              {"file", "sessions/" + s.info.id + ".jsonl"}};
    idx << line.dump() << '\n';
  }

  void open_log_dir() {
    std::error_code ec;
    const std::filesystem::path dir(*cfg_.log_dir);
    std::filesystem::create_directories(dir / "sessions", ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    // a fresh run starts a fresh index
    std::ofstream idx(dir / "index.jsonl", std::ios::trunc);
    if (!idx) throw IoError("cannot write " + (dir / "index.jsonl").string());
  }

  void check_capacity() const {
    if (cfg_.max_records && history_.size() > cfg_.max_records)
      std::fprintf(stderr, "warning: history holds %zu records (advisory cap %zu)\n",
                   history_.size(), cfg_.max_records);
  }

  EngineConfig cfg_;
  History history_;
  OperatorCatalog catalog_;
  std::vector<SelectorSpec> specs_;
  std::vector<ProjectionVector> projections_;
  std::size_t rank_cap_ = 1;
  std::vector<NeighborIndex> neighbors_;  // m, l
  std::vector<double> weights_;
  std::map<std::string, Slot> sessions_;
  std::size_t next_session_ = 0;
  std::vector<int> adjudicated_;
};

}  // namespace steer
