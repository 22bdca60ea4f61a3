#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "steer/history.hpp"
#include "steer/operators.hpp"
#include "steer/rng.hpp"
#include "steer/stats.hpp"
#include "steer/surrogate_env.hpp"

namespace steer {

/// Nonnegative masses over the selectable operators, summing to one.
using VoteDistribution = std::vector<double>;

inline bool is_distribution(std::span<const double> v, double tol = 1e-9) {
  double sum = 0.0;
  for (double x : v) {
    if (!(x >= 0.0) || !std::isfinite(x)) return false;
    sum += x;
  }
  return std::abs(sum - 1.0) <= tol;
}

inline VoteDistribution uniform_vote(std::size_t k) {
  if (k == 0) throw std::invalid_argument("uniform_vote: no operators");
  return VoteDistribution(k, 1.0 / static_cast<double>(k));
}

inline VoteDistribution dirac_vote(int op, std::size_t k) {
  if (op < 0 || static_cast<std::size_t>(op) >= k)
    throw std::invalid_argument("dirac_vote: operator is not selectable");
  VoteDistribution v(k, 0.0);
  v[static_cast<std::size_t>(op)] = 1.0;
  return v;
}

/// Zero mass on `op_set` when none of them can act on `s`, otherwise uniform.
inline VoteDistribution applicability_vote(std::span<const int> op_set, const SurrogateState& s,
                                           const OperatorCatalog& catalog) {
  const std::size_t k = catalog.selectable_count();
  if (op_set.empty()) throw std::invalid_argument("applicability_vote: empty operator set");
  const bool any_applicable = std::any_of(op_set.begin(), op_set.end(), [&](int op) {
    return is_applicable(catalog.at(op), s);
  });
  if (any_applicable) return uniform_vote(k);
  VoteDistribution v(k, 1.0);
  for (int op : op_set) v.at(static_cast<std::size_t>(op)) = 0.0;
  const double rest = std::accumulate(v.begin(), v.end(), 0.0);
  if (rest <= 0.0) return uniform_vote(k);
  for (auto& x : v) x /= rest;
  return v;
}

/// Normalized elementwise product; uniform when the supports are disjoint.
inline VoteDistribution product_vote(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("product_vote: length mismatch");
  VoteDistribution v(a.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (v[i] = a[i] * b[i]);
  if (!(sum > 0.0)) return uniform_vote(a.size());
  for (auto& x : v) x /= sum;
  return v;
}

// ---------------------------------------------------------------------------
// Distances and featurization

inline double single_feature_distance(const FeatureVector& a, const FeatureVector& b,
                                      std::size_t field) {
  if (field >= kNumFeatures) throw std::out_of_range("feature index");
  return std::abs(a[field] - b[field]);
}

/// (x - mean) / std over all-history moments; 0 when the spread is degenerate.
inline double featurize_standardize(double x, const RunningMoments& m) {
  const double sd = m.stddev();
  if (m.count < 2 || sd < 1e-12) return 0.0;
  return (x - m.mean()) / sd;
}

/// Empirical CDF of x within the field's reservoir; 0.5 when empty.
inline double featurize_ecdf(double x, const Reservoir& r) { return r.ecdf(x); }

enum class Featurization : std::uint8_t { standardize, ecdf };

inline const char* to_string(Featurization f) {
  return f == Featurization::standardize ? "standardize" : "ecdf";
}

using ProjectionVector = std::array<double, kNumFeatures>;

/// Components uniform on [0,1), then scaled to unit L2 norm.
inline std::vector<ProjectionVector> make_projection_vectors(std::size_t n, std::uint64_t seed) {
  Rng rng(mix_seed({seed, fnv1a("projections")}));
  std::vector<ProjectionVector> out(n);
  for (auto& u : out) {
    double norm = 0.0;
    for (auto& x : u) {
      x = rng.uniform();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : u) x /= norm;
  }
  return out;
}

inline double featurize(double x, std::size_t field, Featurization f, const History& h) {
  return f == Featurization::standardize ? featurize_standardize(x, h.moments(field))
                                         : featurize_ecdf(x, h.values(field));
}

inline double project(const FeatureVector& v, const ProjectionVector& u, Featurization f,
                      const History& h) {
  double acc = 0.0;
  for (std::size_t j = 0; j < kNumFeatures; ++j) acc += u[j] * featurize(v[j], j, f, h);
  return acc;
}

inline double random_projection_distance(const FeatureVector& a, const FeatureVector& b,
                                         const ProjectionVector& u, Featurization f,
                                         const History& h) {
  return std::abs(project(a, u, f, h) - project(b, u, f, h));
}

// ---------------------------------------------------------------------------
// Neighbour ranking

/// One member of Q_{f_t} with its rank (1 = nearest).
struct RankedRecord {
  std::size_t record = 0;
  double distance = 0.0;
  int op = -1;
  int reward = 0;
  std::size_t rank = 0;
};

using DistanceFn = std::function<double(const FeatureVector& current, const FeatureVector& past)>;

/// Q_{f_t} sorted nearest-first; equal distances put the newer record first.
/// Straightforward full sort, used for small histories and as a reference.
inline std::vector<RankedRecord> rank_neighbors(const SurrogateState& s, const History& h,
                                                FeedbackKind request, const DistanceFn& dist) {
  std::vector<RankedRecord> out;
  if (!is_adjustment(request)) return out;
  const auto& q = h.q_index(request);
  out.reserve(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    const auto& rec = h.record(q.record(i));
    out.push_back({q.record(i), dist(s.features, rec.state.features), q.op(i), q.reward(i), 0});
  }
  std::sort(out.begin(), out.end(), [&](const RankedRecord& a, const RankedRecord& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return h.record(a.record).seq > h.record(b.record).seq;
  });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = i + 1;
  return out;
}

/// Smallest R with alpha^R below `negligible`.
inline std::size_t rank_cap_for(double alpha, double negligible = 1e-17) {
  return static_cast<std::size_t>(std::ceil(std::log(negligible) / std::log(alpha)));
}

/// Featurization statistics frozen at one point in the history.
struct FeatureSnapshot {
  std::array<RunningMoments, kNumFeatures> moments{};
  std::array<std::vector<double>, kNumFeatures> sorted_values;
  std::size_t taken_at = 0;  // history size when taken

  static FeatureSnapshot take(const History& h) {
    FeatureSnapshot s;
    for (std::size_t j = 0; j < kNumFeatures; ++j) {
      s.moments[j] = h.moments(j);
      const auto v = h.values(j).sorted();
      s.sorted_values[j].assign(v.begin(), v.end());
    }
    s.taken_at = h.size();
    return s;
  }

  double ecdf(double x, std::size_t j) const {
    const auto& v = sorted_values[j];
    if (v.empty()) return 0.5;
    const auto n = std::upper_bound(v.begin(), v.end(), x) - v.begin();
    return static_cast<double>(n) / static_cast<double>(v.size());
  }

  double apply(double x, std::size_t j, Featurization f) const {
    return f == Featurization::standardize ? featurize_standardize(x, moments[j]) : ecdf(x, j);
  }

  double project(const FeatureVector& v, const ProjectionVector& u, Featurization f) const {
    double acc = 0.0;
    for (std::size_t j = 0; j < kNumFeatures; ++j) acc += u[j] * apply(v[j], j, f);
    return acc;
  }
};

/// Sorted score arrays over Q_f for every distance the selectors use, kept
/// across timesteps.
///
/// Keys 0..27 are the raw feature fields; key 28 + 2p + f is projection p
/// under featurization f. Projection scores use a FeatureSnapshot that is
/// refit once `refresh_every` states have been appended since it was taken
/// (1 refits before every query). Rows that arrive between folds sit in an
/// unsorted tail.
class NeighborIndex {
 public:
  // Sorted by score, then newest first, so a run of equal scores is already
  // in tie-break order.
  struct Entry {
    double score;
    std::uint64_t seq;
    std::uint32_t pos;
    bool operator<(const Entry& o) const {
      return score != o.score ? score < o.score : seq > o.seq;
    }
  };

  NeighborIndex(FeedbackKind kind, std::span<const ProjectionVector> projections,
                std::size_t refresh_every)
      : kind_(kind),
        projections_(projections.begin(), projections.end()),
        refresh_every_(std::max<std::size_t>(1, refresh_every)),
        scores_(key_count()),
        main_(key_count()) {}

  std::size_t key_count() const { return kNumFeatures + 2 * projections_.size(); }
  static std::size_t single_key(std::size_t field) { return field; }
  static std::size_t projection_key(std::size_t p, Featurization f) {
    return kNumFeatures + 2 * p + static_cast<std::size_t>(f);
  }
  FeedbackKind kind() const { return kind_; }
  const FeatureSnapshot& snapshot() const { return snap_; }

  /// Pulls newly resolved rows and refits the snapshot when stale.
  void sync(const History& h) {
    const auto& q = h.q_index(kind_);
    const bool stale = !have_snapshot_ || h.size() - snap_.taken_at >= refresh_every_;
    if (stale) {
      snap_ = FeatureSnapshot::take(h);
      have_snapshot_ = true;
    }
    for (std::size_t pos = synced_; pos < q.size(); ++pos) score_row(q, pos);
    synced_ = q.size();
    if (stale) {
      rebuild(q);
    } else if (synced_ - main_n_ > kTailLimit) {
      fold(q);
    }
  }

  /// Score of the current state under a key.
  double score_of(std::size_t key, const FeatureVector& v) const {
    if (key < kNumFeatures) return v[key];
    const std::size_t k = key - kNumFeatures;
    return snap_.project(v, projections_[k / 2], static_cast<Featurization>(k % 2));
  }

  /// The `cap` nearest rows to `here` (ascending distance, newer first on
  /// ties), ranked from 1.
  std::vector<RankedRecord> nearest(std::size_t key, double here, std::size_t cap,
                                    const QIndex& q) const {
    struct Cand {
      double dist;
      std::uint64_t seq;
      std::uint32_t pos;
      bool operator<(const Cand& o) const { return dist != o.dist ? dist < o.dist : seq > o.seq; }
    };
    using It = std::vector<Entry>::const_iterator;
    const auto& col = main_[key];
    std::vector<Cand> c;
    c.reserve(std::min(col.size(), cap) + (synced_ - main_n_));

    // Walk outward one group of equal distance at a time. Each group is a few
    // runs of equal score; runs are newest first, so a group that overflows
    // the cap is cut with a merge on seq.
    auto split = std::lower_bound(col.begin(), col.end(), here,
                                  [](const Entry& e, double v) { return e.score < v; });
    It left = split, right = split;  // unvisited: [begin, left) and [right, end)
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<std::pair<It, It>> runs;
    while (c.size() < cap && (left != col.begin() || right != col.end())) {
      const double dl = left != col.begin() ? std::abs(here - std::prev(left)->score) : inf;
      const double dr = right != col.end() ? std::abs(here - right->score) : inf;
      const double d = std::min(dl, dr);
      runs.clear();
      while (left != col.begin() && std::abs(here - std::prev(left)->score) == d) {
        const double sc = std::prev(left)->score;
        auto from = std::lower_bound(col.begin(), left, sc,
                                     [](const Entry& e, double v) { return e.score < v; });
        runs.push_back({from, left});
        left = from;
      }
      while (right != col.end() && std::abs(here - right->score) == d) {
        const double sc = right->score;
        auto to = std::upper_bound(right, col.end(), sc,
                                   [](double v, const Entry& e) { return v < e.score; });
        runs.push_back({right, to});
        right = to;
      }
      std::size_t group = 0;
      for (const auto& r : runs) group += static_cast<std::size_t>(r.second - r.first);
      const std::size_t need = cap - c.size();
      if (group <= need) {
        const auto at = c.size();
        for (const auto& r : runs)
          for (auto it = r.first; it != r.second; ++it) c.push_back({d, it->seq, it->pos});
        if (runs.size() > 1)
          std::sort(c.begin() + static_cast<std::ptrdiff_t>(at), c.end());
      } else {
        for (std::size_t taken = 0; taken < need; ++taken) {
          auto* best = &runs.front();
          for (auto& r : runs)
            if (r.first != r.second && (best->first == best->second || r.first->seq > best->first->seq))
              best = &r;
          c.push_back({d, best->first->seq, best->first->pos});
          ++best->first;
        }
      }
    }

    if (main_n_ < synced_) {
      const auto mid = c.size();
      const auto& sc = scores_[key];
      for (std::size_t pos = main_n_; pos < synced_; ++pos)
        c.push_back({std::abs(here - sc[pos]), q.seq(pos), static_cast<std::uint32_t>(pos)});
      std::sort(c.begin() + static_cast<std::ptrdiff_t>(mid), c.end());
      std::inplace_merge(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(mid), c.end());
    }
    const std::size_t keep = std::min(cap, c.size());
    std::vector<RankedRecord> out(keep);
    for (std::size_t i = 0; i < keep; ++i) {
      const auto pos = c[i].pos;
      out[i] = {q.record(pos), c[i].dist, q.op(pos), q.reward(pos), i + 1};
    }
    return out;
  }

 private:
  static constexpr std::size_t kTailLimit = 256;

  void score_row(const QIndex& q, std::size_t pos) {
    FeatureVector v;
    for (std::size_t j = 0; j < kNumFeatures; ++j) v[j] = q.column(j)[pos];
    for (std::size_t k = 0; k < key_count(); ++k) {
      if (scores_[k].size() <= pos) scores_[k].resize(pos + 1);
      scores_[k][pos] = score_of(k, v);
    }
  }

  // Fresh snapshot: every projection score changes, so re-score and re-sort.
  void rebuild(const QIndex& q) {
    const std::size_t n = synced_;
    for (std::size_t k = kNumFeatures; k < key_count(); ++k) scores_[k].assign(n, 0.0);
    std::vector<double> phi(n);
    for (auto f : {Featurization::standardize, Featurization::ecdf})
      for (std::size_t j = 0; j < kNumFeatures; ++j) {
        const auto col = q.column(j);
        for (std::size_t i = 0; i < n; ++i) phi[i] = snap_.apply(col[i], j, f);
        for (std::size_t p = 0; p < projections_.size(); ++p) {
          const double uj = projections_[p][j];
          auto& sc = scores_[projection_key(p, f)];
          for (std::size_t i = 0; i < n; ++i) sc[i] += uj * phi[i];
        }
      }
    fold(q);
    for (std::size_t k = kNumFeatures; k < key_count(); ++k) {
      auto& m = main_[k];
      m.resize(n);
      for (std::size_t i = 0; i < n; ++i)
        m[i] = {scores_[k][i], q.seq(i), static_cast<std::uint32_t>(i)};
      std::sort(m.begin(), m.end());
    }
  }

  // Merge the tail into the sorted arrays.
  void fold(const QIndex& q) {
    for (std::size_t k = 0; k < key_count(); ++k) {
      auto& m = main_[k];
      const auto mid = m.size();
      for (std::size_t pos = main_n_; pos < synced_; ++pos)
        m.push_back({scores_[k][pos], q.seq(pos), static_cast<std::uint32_t>(pos)});
      std::sort(m.begin() + static_cast<std::ptrdiff_t>(mid), m.end());
      std::inplace_merge(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(mid), m.end());
    }
    main_n_ = synced_;
  }

  FeedbackKind kind_;
  std::vector<ProjectionVector> projections_;
  std::size_t refresh_every_;
  FeatureSnapshot snap_;
  bool have_snapshot_ = false;
  std::vector<std::vector<double>> scores_;  // per key, per Q position
  std::vector<std::vector<Entry>> main_;     // per key, sorted over [0, main_n_)
  std::size_t main_n_ = 0;
  std::size_t synced_ = 0;
};

/// Per-timestep memo of neighbour lists drawn from a synced NeighborIndex.
class NeighborRanker {
 public:
  NeighborRanker(const NeighborIndex& index, const QIndex& q, const FeatureVector& current,
                 std::size_t cap)
      : index_(index), q_(q), current_(current), cap_(cap), lists_(index.key_count()) {}

  std::span<const RankedRecord> single_feature(std::size_t field) {
    return get(NeighborIndex::single_key(field));
  }
  std::span<const RankedRecord> projection(std::size_t p, Featurization f) {
    return get(NeighborIndex::projection_key(p, f));
  }
  std::size_t cap() const { return cap_; }

 private:
  std::span<const RankedRecord> get(std::size_t key) {
    auto& slot = lists_.at(key);
    if (!slot) slot = index_.nearest(key, index_.score_of(key, current_), cap_, q_);
    return *slot;
  }

  const NeighborIndex& index_;
  const QIndex& q_;
  FeatureVector current_;
  std::size_t cap_;
  std::vector<std::optional<std::vector<RankedRecord>>> lists_;
};

// ---------------------------------------------------------------------------
// History-informed votes

/// alpha^r for r = 0..n-1, each computed with std::pow and memoized per alpha.
inline std::span<const double> alpha_powers(double alpha, std::size_t n) {
  thread_local std::vector<std::pair<double, std::vector<double>>> cache;
  auto it = std::find_if(cache.begin(), cache.end(), [&](const auto& e) { return e.first == alpha; });
  if (it == cache.end()) {
    cache.emplace_back(alpha, std::vector<double>{});
    it = cache.end() - 1;
  }
  auto& table = it->second;
  while (table.size() < n) table.push_back(std::pow(alpha, static_cast<double>(table.size())));
  return {table.data(), n};
}

/// Sum of y * alpha^rank per operator, negatives clamped, normalized.
/// Uniform when nothing positive remains.
inline VoteDistribution history_informed_vote(std::span<const RankedRecord> ranked, double alpha,
                                              std::size_t k) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0,1)");
  std::vector<double> w(k, 0.0);
  std::size_t max_rank = 0;
  for (const auto& r : ranked) max_rank = std::max(max_rank, r.rank);
  const auto pw = alpha_powers(alpha, max_rank + 1);
  for (const auto& r : ranked) {
    if (r.op < 0 || static_cast<std::size_t>(r.op) >= k || r.reward == 0) continue;
    w[static_cast<std::size_t>(r.op)] += r.reward * pw[r.rank];
  }
  double sum = 0.0;
  for (auto& x : w) sum += (x = std::max(0.0, x));
  if (!(sum > 0.0)) return uniform_vote(k);
  for (auto& x : w) x /= sum;
  return w;
}

/// Success rate per operator over the z nearest records (y = 0 ignored).
inline VoteDistribution knn_vote(std::span<const RankedRecord> ranked, std::size_t z,
                                 std::size_t k) {
  if (z == 0) throw std::invalid_argument("knn_vote: z must be positive");
  std::vector<double> wins(k, 0.0), tries(k, 0.0);
  for (const auto& r : ranked) {
    if (r.rank > z) break;
    if (r.op < 0 || static_cast<std::size_t>(r.op) >= k || r.reward == 0) continue;
    tries[r.op] += 1.0;
    if (r.reward > 0) wins[r.op] += 1.0;
  }
  VoteDistribution v(k, 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    if (tries[i] > 0) sum += (v[i] = wins[i] / tries[i]);
  if (!(sum > 0.0)) return uniform_vote(k);
  for (auto& x : v) x /= sum;
  return v;
}

// ---------------------------------------------------------------------------
// Selector specs and the census

enum class SelectorKind : std::uint8_t {
  uniform,
  dirac,
  applicability,
  single_feature,
  random_projection,
  product,
  knn,
};

inline const char* to_string(SelectorKind k) {
  switch (k) {
    case SelectorKind::uniform: return "uniform";
    case SelectorKind::dirac: return "dirac";
    case SelectorKind::applicability: return "applicability";
    case SelectorKind::single_feature: return "single_feature";
    case SelectorKind::random_projection: return "random_projection";
    case SelectorKind::product: return "product";
    case SelectorKind::knn: return "knn";
  }
  return "?";
}

struct SelectorSpec {
  int id = 0;
  SelectorKind kind = SelectorKind::uniform;
  std::string name;
  int op = -1;                  // dirac
  std::vector<int> op_set;      // applicability
  int field = -1;               // single_feature, knn
  int projection = -1;          // random_projection
  Featurization featurization = Featurization::standardize;
  double alpha = 0.0;           // single_feature, random_projection
  std::size_t knn_z = 0;
  std::vector<int> depends_on;  // product

  bool history_informed() const {
    return kind == SelectorKind::single_feature || kind == SelectorKind::random_projection ||
           kind == SelectorKind::knn;
  }
};

struct SelectorConfig {
  std::vector<double> alphas{0.811, 0.896};
  double product_alpha = 0.811;  // alpha shared by both sides of feature-pair products
  std::size_t n_projections = 8;
  bool enable_knn = false;
  std::size_t knn_z = 10;
  std::size_t featurization_refresh = 128;  // appended states between projection refits
};

/// The default selector census (845 selectors with KNN off).
inline std::vector<SelectorSpec> build_selectors(const OperatorCatalog& catalog,
                                                 const SelectorConfig& cfg = {}) {
  std::vector<SelectorSpec> out;
  auto push = [&](SelectorSpec s) {
    s.id = static_cast<int>(out.size());
    out.push_back(std::move(s));
    return out.back().id;
  };
  auto fmt_alpha = [](double a) {
    char b[32];
    std::snprintf(b, sizeof b, "%.3f", a);
    return std::string(b);
  };
  const auto& fnames = feature::names();

  push({.kind = SelectorKind::uniform, .name = "uniform"});
  for (std::size_t op = 0; op < catalog.selectable_count(); ++op)
    push({.kind = SelectorKind::dirac,
          .name = "dirac:" + catalog.at(static_cast<int>(op)).name,
          .op = static_cast<int>(op)});
  std::vector<int> applicability;
  for (int op : catalog.predicate_operators())
    applicability.push_back(push({.kind = SelectorKind::applicability,
                                  .name = "applicability:" + catalog.at(op).name,
                                  .op_set = {op}}));

  std::vector<int> history;
  std::vector<int> single_at_product_alpha(kNumFeatures, -1);
  for (std::size_t j = 0; j < kNumFeatures; ++j)
    for (double a : cfg.alphas) {
      const int id = push({.kind = SelectorKind::single_feature,
                           .name = std::string("single:") + fnames[j] + ":a" + fmt_alpha(a),
                           .field = static_cast<int>(j),
                           .alpha = a});
      history.push_back(id);
      if (a == cfg.product_alpha) single_at_product_alpha[j] = id;
    }
  for (std::size_t p = 0; p < cfg.n_projections; ++p)
    for (auto f : {Featurization::standardize, Featurization::ecdf})
      for (double a : cfg.alphas)
        history.push_back(push({.kind = SelectorKind::random_projection,
                                .name = "projection:" + std::to_string(p) + ":" + to_string(f) +
                                        ":a" + fmt_alpha(a),
                                .projection = static_cast<int>(p),
                                .featurization = f,
                                .alpha = a}));
  if (cfg.enable_knn)
    for (std::size_t j = 0; j < kNumFeatures; ++j)
      push({.kind = SelectorKind::knn,
            .name = std::string("knn:") + fnames[j] + ":z" + std::to_string(cfg.knn_z),
            .field = static_cast<int>(j),
            .knn_z = cfg.knn_z});

  for (std::size_t a = 0; a < kNumFeatures; ++a)
    for (std::size_t b = a + 1; b < kNumFeatures; ++b) {
      const int ia = single_at_product_alpha[a], ib = single_at_product_alpha[b];
      if (ia < 0 || ib < 0) continue;
      push({.kind = SelectorKind::product,
            .name = "product:" + out[ia].name + "*" + out[ib].name,
            .depends_on = {ia, ib}});
    }
  for (int hsel : history)
    for (int asel : applicability)
      push({.kind = SelectorKind::product,
            .name = "product:" + out[hsel].name + "*" + out[asel].name,
            .depends_on = {hsel, asel}});
  return out;
}

/// Everything a selector may look at for one timestep.
struct VoteContext {
  const SurrogateState& state;
  const History& history;
  FeedbackKind request;
  const OperatorCatalog& catalog;
  NeighborRanker& ranker;
};

inline std::span<const RankedRecord> neighbours_for(const SelectorSpec& spec, VoteContext& ctx) {
  if (spec.kind == SelectorKind::random_projection)
    return ctx.ranker.projection(static_cast<std::size_t>(spec.projection), spec.featurization);
  return ctx.ranker.single_feature(static_cast<std::size_t>(spec.field));
}

/// One selector's vote; `earlier` holds votes cast in previous rounds.
inline VoteDistribution evaluate_selector(const SelectorSpec& spec, VoteContext& ctx,
                                          std::span<const VoteDistribution> earlier) {
  const std::size_t k = ctx.catalog.selectable_count();
  switch (spec.kind) {
    case SelectorKind::uniform: return uniform_vote(k);
    case SelectorKind::dirac: return dirac_vote(spec.op, k);
    case SelectorKind::applicability: return applicability_vote(spec.op_set, ctx.state, ctx.catalog);
    case SelectorKind::single_feature:
    case SelectorKind::random_projection:
      return history_informed_vote(neighbours_for(spec, ctx), spec.alpha, k);
    case SelectorKind::knn: return knn_vote(neighbours_for(spec, ctx), spec.knn_z, k);
    case SelectorKind::product:
      return product_vote(earlier[spec.depends_on.at(0)], earlier[spec.depends_on.at(1)]);
  }
  throw std::logic_error("unhandled selector kind");
}

class DeadlockDetected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct VotingResult {
  std::vector<VoteDistribution> votes;  // indexed by selector id
  std::size_t rounds = 0;
};

/// Round-based vote gathering: each round, every selector whose dependencies
/// voted in an earlier round casts exactly one vote. A round in which nobody
/// can vote means the dependency graph is unsatisfiable.
template <typename Eval>
VotingResult run_voting_rounds(std::span<const SelectorSpec> specs, Eval&& eval) {
  VotingResult res;
  res.votes.resize(specs.size());
  std::vector<char> done(specs.size(), 0);
  std::size_t remaining = specs.size();
  while (remaining > 0) {
    std::vector<std::size_t> ready;
    for (std::size_t i = 0; i < specs.size(); ++i) {
      if (done[i]) continue;
      const bool deps_ok = std::all_of(
          specs[i].depends_on.begin(), specs[i].depends_on.end(), [&](int d) {
            return d >= 0 && static_cast<std::size_t>(d) < specs.size() && done[d];
          });
      if (deps_ok) ready.push_back(i);
    }
    if (ready.empty())
      throw DeadlockDetected("voting round completed with no new votes");
    const std::span<const VoteDistribution> frozen(res.votes);
    for (auto i : ready) res.votes[i] = eval(specs[i], frozen);
    for (auto i : ready) done[i] = 1;
    remaining -= ready.size();
    ++res.rounds;
  }
  return res;
}

inline std::size_t rank_cap_for(const std::vector<SelectorSpec>& specs) {
  std::size_t cap = 1;
  for (const auto& s : specs) {
    if (s.alpha > 0.0) cap = std::max(cap, rank_cap_for(s.alpha));
    if (s.kind == SelectorKind::knn) cap = std::max(cap, s.knn_z);
  }
  return cap;
}

}  // namespace steer
