#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "steer/history.hpp"
#include "steer/json_io.hpp"
#include "steer/operators.hpp"
#include "steer/record.hpp"
#include "steer/stats.hpp"
#include "steer/surrogate_env.hpp"

namespace steer {

// ---------------------------------------------------------------------------
// Loading

struct RunLog {
  std::vector<InteractionRecord> records;  // ascending seq
  std::optional<json> engine_state;
  std::vector<json> index;
};

inline void load_jsonl(const std::filesystem::path& file, std::vector<InteractionRecord>& out) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line).get<InteractionRecord>());
    } catch (const json::exception& e) {
      throw IoError(file.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

/// Reads a run directory (index + sessions/ + engine_state.json) or a single
/// session file.
inline RunLog load_run(const std::string& path) {
  namespace fs = std::filesystem;
  RunLog log;
  const fs::path p(path);
  if (!fs::exists(p)) throw IoError("no such log: " + path);
  if (fs::is_regular_file(p)) {
    load_jsonl(p, log.records);
  } else {
    std::vector<fs::path> files;
    const auto dir = fs::is_directory(p / "sessions") ? p / "sessions" : p;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".jsonl" && e.path().filename() != "index.jsonl")
        files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) load_jsonl(f, log.records);
    if (fs::exists(p / "engine_state.json"))
      log.engine_state = read_json_file((p / "engine_state.json").string());
    if (std::ifstream idx(p / "index.jsonl"); idx) {
      std::string line;
      while (std::getline(idx, line))
        if (!line.empty()) log.index.push_back(json::parse(line));
    }
  }
  std::sort(log.records.begin(), log.records.end(),
            [](const auto& a, const auto& b) { return a.seq < b.seq; });
  return log;
}

/// Rebuilds the streaming statistics from logged records in seq order.
inline History replay_history(std::span<const InteractionRecord> records,
                              HistoryConfig cfg = {}) {
  History h(cfg);
  for (const auto& r : records) {
    InteractionRecord bare = r;
    bare.request.reset();
    bare.reward.reset();
    const auto idx = h.append_state(std::move(bare));
    if (r.request)
      h.set_request(idx, *r.request, r.chosen, r.fell_back, r.trace, r.verdict);
    if (r.request && (r.reward || r.request->kind == FeedbackKind::exit))
      h.resolve_reward(idx, r.reward);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Battery

inline bool is_adjudicated(const InteractionRecord& r) {
  return r.request && is_adjustment(r.request->kind) && r.reward && *r.reward != 0;
}

struct CurvePoint {
  std::size_t step = 0;   // index among adjudicated records
  std::uint64_t seq = 0;
  double rate = 0.0;
  double lo = 0.0, hi = 0.0;
  std::size_t window = 0;
};

/// Trailing-window success rate with a Wilson 95% interval at every
/// adjudicated record.
inline std::vector<CurvePoint> success_curve(std::span<const InteractionRecord> records,
                                             std::size_t window = 100) {
  std::vector<CurvePoint> out;
  std::vector<int> ys;
  std::size_t wins = 0;
  for (const auto& r : records) {
    if (!is_adjudicated(r)) continue;
    ys.push_back(*r.reward);
    wins += *r.reward > 0;
    if (ys.size() > window) wins -= ys[ys.size() - 1 - window] > 0;
    const std::size_t n = std::min(window, ys.size());
    const auto ci = wilson_interval(static_cast<double>(wins), static_cast<double>(n));
    out.push_back({ys.size() - 1, r.seq, static_cast<double>(wins) / static_cast<double>(n), ci.lo,
                   ci.hi, n});
  }
  return out;
}

struct EntropyPoint {
  std::uint64_t seq = 0;
  std::string session_id;
  std::int64_t t = 0;
  double entropy = 0.0;
  double running_mean = 0.0;
};

inline std::vector<EntropyPoint> entropy_series(std::span<const InteractionRecord> records) {
  std::vector<EntropyPoint> out;
  double sum = 0.0;
  for (const auto& r : records) {
    if (!r.trace) continue;
    const double e = entropy_nats(r.trace->d_samp);
    sum += e;
    out.push_back({r.seq, r.session_id, r.t, e, sum / static_cast<double>(out.size() + 1)});
  }
  return out;
}

struct OpinionPoint {
  std::uint64_t seq = 0;
  std::string session_id;
  std::int64_t t = 0;
  double ratio = 0.0;
  double global_success = 0.0;
  double strength = 0.0;
};

inline std::vector<OpinionPoint> opinion_strength_series(
    std::span<const InteractionRecord> records) {
  std::vector<OpinionPoint> out;
  for (const auto& r : records) {
    if (!r.verdict || !r.verdict->opinion_strength) continue;
    const auto& v = *r.verdict;
    out.push_back({r.seq, r.session_id, r.t, static_cast<double>(v.s1) / v.s2, v.global_success,
                   *v.opinion_strength});
  }
  return out;
}

namespace detail {

inline std::map<std::pair<std::string, std::int64_t>, std::size_t> key_index(
    std::span<const InteractionRecord> records) {
  std::map<std::pair<std::string, std::int64_t>, std::size_t> m;
  for (std::size_t i = 0; i < records.size(); ++i) m[{records[i].session_id, records[i].t}] = i;
  return m;
}

}  // namespace detail

struct BaselineRow {
  std::string criterion;
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;  // population
};

/// Moments of the change in each autouser criterion across transitions
/// made by the blank operator. Empty when blank was never applied.
inline std::vector<BaselineRow> blank_baseline(std::span<const InteractionRecord> records,
                                               int blank_index = 0) {
  static const char* names[kNumCriteria] = {"vol_named_total", "vol_box_total", "unique_named",
                                            "conjuncts", "box_ranges"};
  const auto idx = detail::key_index(records);
  std::array<std::vector<double>, kNumCriteria> deltas;
  for (const auto& r : records) {
    if (!r.chosen || *r.chosen != blank_index) continue;
    auto it = idx.find({r.session_id, r.t + 1});
    if (it == idx.end()) continue;
    const auto a = autouser_criteria(r.state), b = autouser_criteria(records[it->second].state);
    for (std::size_t j = 0; j < kNumCriteria; ++j) deltas[j].push_back(b[j] - a[j]);
  }
  std::vector<BaselineRow> out;
  if (deltas[0].empty()) return out;
  for (std::size_t j = 0; j < kNumCriteria; ++j) {
    const double m = mean_of(deltas[j]);
    const double sd = population_std(deltas[j]);
    out.push_back({names[j], deltas[j].size(), m, sd * sd});
  }
  return out;
}

struct Cycle {
  std::string session_id;
  std::int64_t from_t = 0;
  std::int64_t to_t = 0;
  std::uint64_t fingerprint = 0;
  std::int64_t period() const { return to_t - from_t; }
};

struct CycleReport {
  std::vector<Cycle> cycles;
  std::map<std::int64_t, std::size_t> periods;  // period -> count
};

/// A cycle is a description fingerprint reappearing within a session; its
/// period is the distance to the most recent earlier occurrence.
inline CycleReport cycle_scan(std::span<const InteractionRecord> records) {
  std::map<std::string, std::vector<const InteractionRecord*>> by_session;
  for (const auto& r : records) by_session[r.session_id].push_back(&r);
  CycleReport rep;
  for (auto& [sid, recs] : by_session) {
    std::sort(recs.begin(), recs.end(), [](auto* a, auto* b) { return a->t < b->t; });
    std::map<std::uint64_t, std::int64_t> last_seen;
    for (const auto* r : recs) {
      const auto fp = r->state.stats.fingerprint;
      if (auto it = last_seen.find(fp); it != last_seen.end()) {
        rep.cycles.push_back({sid, it->second, r->t, fp});
        ++rep.periods[r->t - it->second];
      }
      last_seen[fp] = r->t;
    }
  }
  return rep;
}

struct WeightRow {
  int selector_id = 0;
  std::string kind;
  std::string name;
  double weight = 0.0;
};

struct UsageRow {
  int op = 0;
  std::string name;
  std::size_t uses = 0;
  std::size_t adjudicated = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;
  std::optional<double> dirac_weight;
};

struct WeightUsageReport {
  std::vector<WeightRow> weights;  // descending |w|
  std::vector<UsageRow> usage;     // catalog order
};

inline WeightUsageReport weight_and_usage_report(std::span<const InteractionRecord> records,
                                                 std::span<const WeightRow> weights,
                                                 const OperatorCatalog& catalog) {
  WeightUsageReport rep;
  rep.weights.assign(weights.begin(), weights.end());
  std::stable_sort(rep.weights.begin(), rep.weights.end(), [](const auto& a, const auto& b) {
    return std::abs(a.weight) > std::abs(b.weight);
  });
  for (std::size_t op = 0; op < catalog.selectable_count(); ++op) {
    UsageRow u;
    u.op = static_cast<int>(op);
    u.name = catalog.at(u.op).name;
    for (const auto& w : weights)
      if (w.kind == "dirac" && w.name == "dirac:" + u.name) u.dirac_weight = w.weight;
    rep.usage.push_back(u);
  }
  for (const auto& r : records) {
    if (!r.chosen || !catalog.is_selectable(*r.chosen)) continue;
    auto& u = rep.usage[*r.chosen];
    ++u.uses;
    if (is_adjudicated(r)) {
      ++u.adjudicated;
      u.successes += *r.reward > 0;
    }
  }
  for (auto& u : rep.usage)
    u.success_rate = u.adjudicated ? static_cast<double>(u.successes) / u.adjudicated : 0.0;
  return rep;
}

/// Weights from engine_state.json, falling back to the newest full snapshot.
inline std::vector<WeightRow> weights_from_log(const RunLog& log) {
  std::vector<double> w;
  std::vector<WeightRow> rows;
  if (log.engine_state && log.engine_state->contains("weights"))
    w = (*log.engine_state)["weights"].get<std::vector<double>>();
  else
    for (auto it = log.records.rbegin(); it != log.records.rend(); ++it)
      if (it->weights) {
        w = *it->weights;
        break;
      }
  std::vector<SelectorSpec> specs;
  SelectorConfig sc;
  if (log.engine_state && log.engine_state->contains("config")) {
    const auto& c = (*log.engine_state)["config"];
    if (c.contains("selectors")) c["selectors"].get_to(sc);
  }
  specs = build_selectors(build_catalog(), sc);
  for (std::size_t i = 0; i < w.size(); ++i) {
    WeightRow r;
    r.selector_id = static_cast<int>(i);
    r.weight = w[i];
    if (i < specs.size()) {
      r.kind = to_string(specs[i].kind);
      r.name = specs[i].name;
    }
    rows.push_back(r);
  }
  return rows;
}

struct CorrelationRow {
  std::string session_id;
  std::int64_t t = 0;  // correlation of D_samp at t and t+1
  double pearson = 0.0;
  std::optional<int> reward;
  std::optional<double> opinion_strength;
};

/// Pearson correlation between consecutive D_samp vectors within a session,
/// with the reward of the first step and the opinion strength of the
/// verdict that followed it.
inline std::vector<CorrelationRow> dsamp_correlation(std::span<const InteractionRecord> records) {
  const auto idx = detail::key_index(records);
  std::vector<CorrelationRow> out;
  for (const auto& r : records) {
    if (!r.trace) continue;
    auto it = idx.find({r.session_id, r.t + 1});
    if (it == idx.end()) continue;
    const auto& n = records[it->second];
    if (!n.trace) continue;
    CorrelationRow row{r.session_id, r.t, pearson(r.trace->d_samp, n.trace->d_samp), r.reward, {}};
    if (n.verdict) row.opinion_strength = n.verdict->opinion_strength;
    out.push_back(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output

struct Report {
  std::vector<CurvePoint> success;
  std::vector<EntropyPoint> entropy;
  std::vector<OpinionPoint> opinion;
  std::vector<BaselineRow> baseline;
  CycleReport cycles;
  WeightUsageReport weights;
  std::vector<CorrelationRow> correlation;
  std::size_t records = 0;
  std::size_t sessions = 0;
};

inline Report build_report(const RunLog& log, std::size_t window = 100) {
  const auto catalog = build_catalog();
  Report rep;
  rep.success = success_curve(log.records, window);
  rep.entropy = entropy_series(log.records);
  rep.opinion = opinion_strength_series(log.records);
  rep.baseline = blank_baseline(log.records, catalog.index_of(OpKind::blank));
  rep.cycles = cycle_scan(log.records);
  const auto w = weights_from_log(log);
  rep.weights = weight_and_usage_report(log.records, w, catalog);
  rep.correlation = dsamp_correlation(log.records);
  rep.records = log.records.size();
  std::set<std::string> ids;
  for (const auto& r : log.records) ids.insert(r.session_id);
  rep.sessions = ids.size();
  return rep;
}

namespace detail {

inline std::string num(double x) {
  if (std::isnan(x)) return "nan";
  char b[40];
  std::snprintf(b, sizeof b, "%.17g", x);
  return b;
}

template <typename T>
std::string opt(const std::optional<T>& x) {
  if (!x) return "";
  if constexpr (std::is_floating_point_v<T>) return num(*x);
  else return std::to_string(*x);
}

inline json opt_json(const std::optional<double>& x) { return x ? json(*x) : json(); }

}  // namespace detail

inline json report_json(const Report& r) {
  json j;
  j["records"] = r.records;
  j["sessions"] = r.sessions;
  auto& sc = j["success_curve"] = json::array();
  for (const auto& p : r.success)
    sc.push_back({{"step", p.step}, {"seq", p.seq}, {"rate", p.rate}, {"lo", p.lo}, {"hi", p.hi},
                  {"window", p.window}});
  auto& en = j["entropy"] = json::array();
  for (const auto& p : r.entropy)
    en.push_back({{"seq", p.seq}, {"session_id", p.session_id}, {"t", p.t},
                  {"entropy", p.entropy}, {"running_mean", p.running_mean}});
  auto& op = j["opinion_strength"] = json::array();
  for (const auto& p : r.opinion)
    op.push_back({{"seq", p.seq}, {"session_id", p.session_id}, {"t", p.t}, {"ratio", p.ratio},
                  {"global_success", p.global_success}, {"strength", p.strength}});
  auto& bl = j["blank_baseline"] = json::array();
  for (const auto& b : r.baseline)
    bl.push_back({{"criterion", b.criterion}, {"n", b.n}, {"mean", b.mean},
                  {"variance", b.variance}});
  auto& cy = j["cycles"];
  cy["count"] = r.cycles.cycles.size();
  cy["periods"] = json::object();
  for (const auto& [p, c] : r.cycles.periods) cy["periods"][std::to_string(p)] = c;
  auto& ws = j["weights"] = json::array();
  for (const auto& w : r.weights.weights)
    ws.push_back({{"selector_id", w.selector_id}, {"kind", w.kind}, {"name", w.name},
                  {"weight", w.weight}});
  auto& us = j["operator_usage"] = json::array();
  for (const auto& u : r.weights.usage)
    us.push_back({{"op", u.op}, {"name", u.name}, {"uses", u.uses},
                  {"adjudicated", u.adjudicated}, {"successes", u.successes},
                  {"success_rate", u.success_rate}, {"dirac_weight", detail::opt_json(u.dirac_weight)}});
  auto& co = j["dsamp_correlation"] = json::array();
  for (const auto& c : r.correlation)
    co.push_back({{"session_id", c.session_id}, {"t", c.t}, {"pearson", detail::num(c.pearson)},
                  {"reward", c.reward ? json(*c.reward) : json()},
                  {"opinion_strength", detail::opt_json(c.opinion_strength)}});
  return j;
}

/// Writes one CSV per table plus summary.html into `dir`.
inline void write_report_csv(const Report& r, const std::filesystem::path& dir) {
  using detail::num;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string());
  auto open = [&](const char* name) {
    std::ofstream f(dir / name);
    if (!f) throw IoError("cannot write " + (dir / name).string());
    return f;
  };
  {
    auto f = open("success_curve.csv");
    f << "step,seq,rate,wilson_lo,wilson_hi,window\n";
    for (const auto& p : r.success)
      f << p.step << ',' << p.seq << ',' << num(p.rate) << ',' << num(p.lo) << ',' << num(p.hi)
        << ',' << p.window << '\n';
  }
  {
    auto f = open("entropy.csv");
    f << "seq,session_id,t,entropy,running_mean\n";
    for (const auto& p : r.entropy)
      f << p.seq << ',' << p.session_id << ',' << p.t << ',' << num(p.entropy) << ','
        << num(p.running_mean) << '\n';
  }
  {
    auto f = open("opinion_strength.csv");
    f << "seq,session_id,t,ratio,global_success,strength\n";
    for (const auto& p : r.opinion)
      f << p.seq << ',' << p.session_id << ',' << p.t << ',' << num(p.ratio) << ','
        << num(p.global_success) << ',' << num(p.strength) << '\n';
  }
  {
    auto f = open("blank_baseline.csv");
    f << "criterion,n,mean,variance\n";
    for (const auto& b : r.baseline)
      f << b.criterion << ',' << b.n << ',' << num(b.mean) << ',' << num(b.variance) << '\n';
  }
  {
    auto f = open("cycles.csv");
    f << "session_id,from_t,to_t,period,fingerprint\n";
    for (const auto& c : r.cycles.cycles)
      f << c.session_id << ',' << c.from_t << ',' << c.to_t << ',' << c.period() << ','
        << c.fingerprint << '\n';
  }
  {
    auto f = open("weights_ranked.csv");
    f << "rank,selector_id,kind,name,weight\n";
    std::size_t i = 0;
    for (const auto& w : r.weights.weights)
      f << ++i << ',' << w.selector_id << ',' << w.kind << ',' << w.name << ',' << num(w.weight)
        << '\n';
  }
  {
    auto f = open("operator_usage.csv");
    f << "op,name,uses,adjudicated,successes,success_rate,dirac_weight\n";
    for (const auto& u : r.weights.usage)
      f << u.op << ',' << u.name << ',' << u.uses << ',' << u.adjudicated << ',' << u.successes
        << ',' << num(u.success_rate) << ',' << detail::opt(u.dirac_weight) << '\n';
  }
  {
    auto f = open("dsamp_correlation.csv");
    f << "session_id,t,pearson,reward,opinion_strength\n";
    for (const auto& c : r.correlation)
      f << c.session_id << ',' << c.t << ',' << num(c.pearson) << ',' << detail::opt(c.reward)
        << ',' << detail::opt(c.opinion_strength) << '\n';
  }
  auto f = open("summary.html");
  const double last_rate = r.success.empty() ? 0.0 : r.success.back().rate;
  const double last_entropy = r.entropy.empty() ? 0.0 : r.entropy.back().running_mean;
  f << "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>steer run summary</title>"
       "<style>body{font-family:sans-serif;margin:2em}td,th{padding:2px 8px;text-align:right}"
       "th{text-align:left}</style></head><body>\n"
    << "<h1>Run summary</h1>\n<p>" << r.records << " records across " << r.sessions
    << " sessions.</p>\n<table>\n"
    << "<tr><th>final trailing success rate</th><td>" << num(last_rate) << "</td></tr>\n"
    << "<tr><th>mean D_samp entropy (nats)</th><td>" << num(last_entropy) << "</td></tr>\n"
    << "<tr><th>cycles</th><td>" << r.cycles.cycles.size() << "</td></tr>\n</table>\n"
    << "<h2>Operator usage</h2>\n<table><tr><th>operator</th><th>uses</th><th>success rate</th>"
       "<th>dirac weight</th></tr>\n";
  for (const auto& u : r.weights.usage)
    f << "<tr><th>" << u.name << "</th><td>" << u.uses << "</td><td>" << num(u.success_rate)
      << "</td><td>" << detail::opt(u.dirac_weight) << "</td></tr>\n";
  f << "</table>\n<h2>Largest-magnitude selector weights</h2>\n<table>\n";
  for (std::size_t i = 0; i < std::min<std::size_t>(20, r.weights.weights.size()); ++i)
    f << "<tr><th>" << r.weights.weights[i].name << "</th><td>"
      << num(r.weights.weights[i].weight) << "</td></tr>\n";
  f << "</table>\n<h2>Blank-operator baseline</h2>\n<table><tr><th>criterion</th><th>n</th>"
       "<th>mean</th><th>variance</th></tr>\n";
  for (const auto& b : r.baseline)
    f << "<tr><th>" << b.criterion << "</th><td>" << b.n << "</td><td>" << num(b.mean)
      << "</td><td>" << num(b.variance) << "</td></tr>\n";
  f << "</table>\n<p>Per-point series are in the CSV files next to this page.</p>\n"
       "</body></html>\n";
}

}  // namespace steer
