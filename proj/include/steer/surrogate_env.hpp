#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "steer/rng.hpp"
#include "steer/stats.hpp"

namespace steer {

inline constexpr std::size_t kNumFeatures = 28;
inline constexpr std::size_t kNumCriteria = 5;
inline constexpr int kMinDepth = 1;
inline constexpr int kMaxDepth = 6;
inline constexpr double kMinSamplingRadius = 0.1;
inline constexpr double kMaxSamplingRadius = 2.0;
inline constexpr int kMaxMergeIters = 3;
inline constexpr std::array<double, 3> kMergePrecisions{1e-6, 1e-4, 1e-2};

using FeatureVector = std::array<double, kNumFeatures>;
using CriteriaVector = std::array<double, kNumCriteria>;

/// Zero-based feature slots. The layout is frozen; logs and selectors index into it.
namespace feature {
inline constexpr std::size_t box_volume_first = 0;     // 8 stats
inline constexpr std::size_t side_sum_first = 8;       // 8 stats
inline constexpr std::size_t box_count = 16;
inline constexpr std::size_t unique_named = 17;
inline constexpr std::size_t named_occurrences = 18;
inline constexpr std::size_t conjuncts = 19;
inline constexpr std::size_t disjuncts = 20;
inline constexpr std::size_t box_ranges = 21;
inline constexpr std::size_t vol_named_total = 22;
inline constexpr std::size_t vol_named_unique = 23;
inline constexpr std::size_t vol_box_total = 24;
inline constexpr std::size_t vol_box_unique = 25;
inline constexpr std::size_t vol_conjunct_total = 26;
inline constexpr std::size_t vol_conjunct_unique = 27;

inline const std::array<const char*, kNumFeatures>& names() {
  static const std::array<const char*, kNumFeatures> n{
      "box_vol_min",      "box_vol_max",       "box_vol_mean",      "box_vol_median",
      "box_vol_std",      "box_vol_total",     "box_vol_q1",        "box_vol_q3",
      "side_sum_min",     "side_sum_max",      "side_sum_mean",     "side_sum_median",
      "side_sum_std",     "side_sum_total",    "side_sum_q1",       "side_sum_q3",
      "box_count",        "unique_named",      "named_occurrences", "conjuncts",
      "disjuncts",        "box_ranges",        "vol_named_total",   "vol_named_unique",
      "vol_box_total",    "vol_box_unique",    "vol_conjunct_total", "vol_conjunct_unique"};
  return n;
}
}  // namespace feature

/// Feature slots read by the autouser, in criterion order j = 1..5.
inline constexpr std::array<std::size_t, kNumCriteria> kCriteriaFeatures{
    feature::vol_named_total, feature::vol_box_total, feature::unique_named, feature::conjuncts,
    feature::box_ranges};

struct NamedPredicateSpec {
  std::string id;
  double abstraction_level = 0.5;
};

struct EnvConfig {
  int input_dims = 4;       // zeta_I
  int question_dims = 2;    // h
  std::vector<NamedPredicateSpec> predicate_catalog = default_catalog();
  std::uint64_t master_seed = 0;
  double trisect_probability = 0.5;
  std::size_t box_sample_cap = 128;

  /// Twelve predicates p00..p11 with abstraction levels spread evenly over [0, 1].
  static std::vector<NamedPredicateSpec> default_catalog() {
    std::vector<NamedPredicateSpec> out;
    for (int i = 0; i < 12; ++i) {
      char id[8];
      std::snprintf(id, sizeof id, "p%02d", i);
      out.push_back({id, static_cast<double>(i) / 11.0});
    }
    return out;
  }

  void validate() const {
    if (input_dims < 1 || input_dims > 6)
      throw std::invalid_argument("input_dims must be in [1, 6]");
    if (question_dims < 1 || question_dims > input_dims)
      throw std::invalid_argument("question_dims must be in [1, input_dims]");
    if (predicate_catalog.empty()) throw std::invalid_argument("predicate catalog is empty");
    std::set<std::string> ids;
    for (const auto& p : predicate_catalog) {
      if (!(p.abstraction_level >= 0.0 && p.abstraction_level <= 1.0))
        throw std::invalid_argument("abstraction level out of [0,1] for " + p.id);
      if (!ids.insert(p.id).second) throw std::invalid_argument("duplicate predicate id " + p.id);
    }
    if (!(trisect_probability >= 0.0 && trisect_probability <= 1.0))
      throw std::invalid_argument("trisect_probability must be in [0,1]");
    if (box_sample_cap == 0) throw std::invalid_argument("box_sample_cap must be positive");
  }

  bool has_predicate(const std::string& id) const {
    return std::any_of(predicate_catalog.begin(), predicate_catalog.end(),
                       [&](const NamedPredicateSpec& p) { return p.id == id; });
  }
};

struct StateParams {
  int refinement_depth = 3;        // E; side length 3^-E
  double sampling_radius = 1.0;
  bool reuse_reach = false;
  bool split_question_vars_only = false;
  int merge_iters = 0;
  int merge_precision_level = 1;   // index into kMergePrecisions
  bool produce_greater_abstraction = false;
  std::set<std::string> disallowed_predicates;
  std::uint64_t noise_draw = 0;

  double merge_precision() const { return kMergePrecisions.at(merge_precision_level); }
  int effective_dims(const EnvConfig& cfg) const {
    return split_question_vars_only ? cfg.question_dims : cfg.input_dims;
  }

  bool operator==(const StateParams&) const = default;
};

inline bool params_valid(const StateParams& p, const EnvConfig& cfg) {
  if (p.refinement_depth < kMinDepth || p.refinement_depth > kMaxDepth) return false;
  if (!(p.sampling_radius >= kMinSamplingRadius - 1e-12 &&
        p.sampling_radius <= kMaxSamplingRadius + 1e-12))
    return false;
  if (p.merge_iters < 0 || p.merge_iters > kMaxMergeIters) return false;
  if (p.merge_precision_level < 0 ||
      p.merge_precision_level >= static_cast<int>(kMergePrecisions.size()))
    return false;
  return std::all_of(p.disallowed_predicates.begin(), p.disallowed_predicates.end(),
                     [&](const std::string& id) { return cfg.has_predicate(id); });
}

struct DescriptionStats {
  std::uint64_t n_boxes = 1;
  int unique_named = 0;        // u
  int named_occurrences = 0;   // o
  int box_ranges = 0;          // b
  int disjuncts = 1;
  int conjuncts = 0;
  double vol_named_total = 0, vol_named_unique = 0;
  double vol_box_total = 0, vol_box_unique = 0;
  double vol_conjunct_total = 0, vol_conjunct_unique = 0;
  // Representative box sample; each entry stands for `box_multiplicity` boxes.
  std::vector<double> box_volumes;
  std::vector<double> box_side_sums;
  double box_multiplicity = 1.0;
  std::map<std::string, int> named_multiset;
  std::uint64_t fingerprint = 0;

  int occurrences_of(const std::string& id) const {
    auto it = named_multiset.find(id);
    return it == named_multiset.end() ? 0 : it->second;
  }

  /// Equality on everything the description shows, ignoring the box sample
  /// (which persisted logs drop and regenerate).
  bool same_summary(const DescriptionStats& o) const {
    return n_boxes == o.n_boxes && unique_named == o.unique_named &&
           named_occurrences == o.named_occurrences && box_ranges == o.box_ranges &&
           disjuncts == o.disjuncts && conjuncts == o.conjuncts &&
           vol_named_total == o.vol_named_total && vol_named_unique == o.vol_named_unique &&
           vol_box_total == o.vol_box_total && vol_box_unique == o.vol_box_unique &&
           vol_conjunct_total == o.vol_conjunct_total &&
           vol_conjunct_unique == o.vol_conjunct_unique && box_multiplicity == o.box_multiplicity &&
           named_multiset == o.named_multiset && fingerprint == o.fingerprint;
  }
  bool operator==(const DescriptionStats&) const = default;
};

struct SurrogateState {
  StateParams params;
  DescriptionStats stats;
  FeatureVector features{};
  std::int64_t t = 0;
  std::string question_id;
};

inline double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

/// Abstraction score driving every count in the surrogate description.
inline double abstraction_score(const StateParams& p) {
  return clamp01(0.15 * (kMaxDepth - p.refinement_depth) +
                 0.25 * (p.produce_greater_abstraction ? 1.0 : 0.0) +
                 0.1 * (p.sampling_radius - 1.0) + 0.05 * p.merge_iters);
}

namespace detail {

struct BoxDraw {
  std::uint64_t raw_count = 1;  // n0
  std::uint64_t n_boxes = 1;
  Rng stream{0};               // positioned after the factor draws
};

inline std::uint64_t reach_seed(const StateParams& p, const EnvConfig& cfg) {
  return p.reuse_reach ? mix_seed({cfg.master_seed, fnv1a("reach")})
                       : mix_seed({cfg.master_seed, p.noise_draw, fnv1a("reach")});
}

// Factors are always the leading d_eff*E draws of one stream, so n0 can only
// grow with E and with d_eff.
inline BoxDraw draw_boxes(const StateParams& p, const EnvConfig& cfg) {
  BoxDraw out;
  out.stream = Rng(reach_seed(p, cfg));
  const int n_factors = p.effective_dims(cfg) * p.refinement_depth;
  std::uint64_t n0 = 1;
  for (int i = 0; i < n_factors; ++i) n0 *= out.stream.coin(cfg.trisect_probability) ? 3 : 2;
  out.raw_count = n0;
  const double merged = static_cast<double>(n0) * (1.0 - 0.08 * p.merge_iters);
  out.n_boxes = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(merged)));
  return out;
}

inline std::string render(const DescriptionStats& s) {
  std::ostringstream os;
  os.precision(9);
  os << "boxes=" << s.n_boxes << ";b=" << s.box_ranges << ";c=" << s.conjuncts
     << ";d=" << s.disjuncts << ";named=";
  for (const auto& [id, c] : s.named_multiset) os << id << 'x' << c << ',';
  os << ";vols=";
  for (std::size_t i = 0; i < std::min<std::size_t>(8, s.box_volumes.size()); ++i)
    os << s.box_volumes[i] * s.box_multiplicity << ',';
  return os.str();
}

}  // namespace detail

/// Raw (pre-merge) box count n0 for the given params.
inline std::uint64_t raw_box_count(const StateParams& p, const EnvConfig& cfg) {
  return detail::draw_boxes(p, cfg).raw_count;
}

/// Deterministic surrogate for the description generator.
inline DescriptionStats generate_description(const StateParams& p, const EnvConfig& cfg) {
  auto boxes = detail::draw_boxes(p, cfg);
  Rng& reach = boxes.stream;
  Rng noise(mix_seed({cfg.master_seed, p.noise_draw, fnv1a("noise")}));

  DescriptionStats s;
  s.n_boxes = boxes.n_boxes;
  const double A = abstraction_score(p);
  const double band = 0.2 + 0.1 * p.sampling_radius;

  std::vector<std::string> present;
  for (const auto& pred : cfg.predicate_catalog) {
    if (p.disallowed_predicates.count(pred.id)) continue;
    if (std::abs(pred.abstraction_level - A) <= band) present.push_back(pred.id);
  }
  s.unique_named = static_cast<int>(present.size());
  s.named_occurrences =
      s.unique_named + static_cast<int>(std::lround(0.3 * s.unique_named * (1.0 - A)));
  for (const auto& id : present) s.named_multiset[id] = 1;
  for (int extra = s.unique_named; extra < s.named_occurrences; ++extra)
    ++s.named_multiset[present[noise.below(present.size())]];

  const int eta = p.reuse_reach ? 0 : static_cast<int>(noise.below(3)) - 1;
  const double log3n = std::log(static_cast<double>(s.n_boxes)) / std::log(3.0);
  s.box_ranges = std::max(0, static_cast<int>(std::lround((1.0 - A) * (2.0 + log3n))) + eta);
  s.disjuncts = 1 + static_cast<int>(std::lround(2.0 * (1.0 - A)));
  s.conjuncts = s.disjuncts *
                std::max(1, static_cast<int>(std::lround(static_cast<double>(s.unique_named +
                                                                             s.box_ranges) /
                                                         s.disjuncts)));

  s.vol_named_total = s.unique_named > 0 ? clamp01(0.2 + 0.6 * A) : 0.0;
  s.vol_named_unique = 0.8 * s.vol_named_total;
  s.vol_box_total = 1.0 - s.vol_named_total;
  s.vol_box_unique = 0.8 * s.vol_box_total;
  s.vol_conjunct_total = clamp01(0.6 + 0.4 * (1.0 - A));
  s.vol_conjunct_unique = 0.8 * s.vol_conjunct_total;

  const int eta2 = static_cast<int>(reach.below(3)) - 1;
  const double covered = clamp01(0.9 + 0.05 * eta2);
  const std::size_t k =
      static_cast<std::size_t>(std::min<std::uint64_t>(s.n_boxes, cfg.box_sample_cap));
  s.box_multiplicity = static_cast<double>(s.n_boxes) / static_cast<double>(k);
  const double shape = 1.0 + 0.25 * p.merge_precision_level;
  std::vector<double> w(k);
  double wsum = 0.0;
  for (auto& x : w) {
    x = 0.05 + std::pow(-std::log1p(-reach.uniform()), shape);
    wsum += x;
  }
  const int d_eff = p.effective_dims(cfg);
  s.box_volumes.resize(k);
  s.box_side_sums.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    s.box_volumes[i] = covered * (w[i] / wsum) / s.box_multiplicity;
    s.box_side_sums[i] = d_eff * std::pow(s.box_volumes[i], 1.0 / d_eff);
  }
  s.fingerprint = fnv1a(detail::render(s));
  return s;
}

/// log3(n_boxes) - d_eff * E: zero at maximal trisection, negative below it.
inline double box_count_feature(std::uint64_t n_boxes, int depth, int d_eff) {
  if (n_boxes == 0) throw std::invalid_argument("box_count_feature: n_boxes must be >= 1");
  return std::log(static_cast<double>(n_boxes)) / std::log(3.0) -
         static_cast<double>(d_eff) * depth;
}

namespace detail {
// min, max, mean, median, std, total, Q1, Q3
inline void eight_stats(std::vector<double> xs, double multiplicity, double* out) {
  std::sort(xs.begin(), xs.end());
  out[0] = xs.front();
  out[1] = xs.back();
  out[2] = mean_of(xs);
  out[3] = quantile_sorted(xs, 0.5);
  out[4] = population_std(xs);
  out[5] = multiplicity * std::accumulate(xs.begin(), xs.end(), 0.0);
  out[6] = quantile_sorted(xs, 0.25);
  out[7] = quantile_sorted(xs, 0.75);
}
}  // namespace detail

inline FeatureVector extract_features(const StateParams& p, const DescriptionStats& s,
                                      const EnvConfig& cfg) {
  FeatureVector v{};
  detail::eight_stats(s.box_volumes, s.box_multiplicity, v.data() + feature::box_volume_first);
  detail::eight_stats(s.box_side_sums, s.box_multiplicity, v.data() + feature::side_sum_first);
  v[feature::box_count] = box_count_feature(s.n_boxes, p.refinement_depth, p.effective_dims(cfg));
  v[feature::unique_named] = s.unique_named;
  v[feature::named_occurrences] = s.named_occurrences;
  v[feature::conjuncts] = s.conjuncts;
  v[feature::disjuncts] = s.disjuncts;
  v[feature::box_ranges] = s.box_ranges;
  v[feature::vol_named_total] = s.vol_named_total;
  v[feature::vol_named_unique] = s.vol_named_unique;
  v[feature::vol_box_total] = s.vol_box_total;
  v[feature::vol_box_unique] = s.vol_box_unique;
  v[feature::vol_conjunct_total] = s.vol_conjunct_total;
  v[feature::vol_conjunct_unique] = s.vol_conjunct_unique;
  return v;
}

inline FeatureVector extract_features(const SurrogateState& s, const EnvConfig& cfg) {
  return extract_features(s.params, s.stats, cfg);
}

/// The five quantities the autouser judges: [vol_named_total, vol_box_total, u, conjuncts, b].
inline CriteriaVector autouser_criteria(const SurrogateState& s) {
  return {s.stats.vol_named_total, s.stats.vol_box_total,
          static_cast<double>(s.stats.unique_named), static_cast<double>(s.stats.conjuncts),
          static_cast<double>(s.stats.box_ranges)};
}

inline SurrogateState make_state(const StateParams& p, const EnvConfig& cfg, std::int64_t t,
                                 std::string question_id) {
  SurrogateState s;
  s.params = p;
  s.stats = generate_description(p, cfg);
  s.features = extract_features(p, s.stats, cfg);
  s.t = t;
  s.question_id = std::move(question_id);
  return s;
}

}  // namespace steer
