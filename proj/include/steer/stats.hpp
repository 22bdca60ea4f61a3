#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "steer/rng.hpp"

namespace steer {

/// Fixed-capacity uniform sample of a stream (algorithm R).
///
/// A sorted mirror of the sample is kept in step with every insert so that
/// ECDF queries are a binary search.
class Reservoir {
 public:
  static constexpr std::size_t kDefaultCapacity = 4096;

  explicit Reservoir(std::size_t capacity = kDefaultCapacity, std::uint64_t seed = 0)
      : capacity_(capacity), rng_(seed) {
    if (capacity_ == 0) throw std::invalid_argument("reservoir capacity must be positive");
  }

  void insert(double x) {
    ++seen_;
    if (items_.size() < capacity_) {
      items_.push_back(x);
      sorted_.insert(std::upper_bound(sorted_.begin(), sorted_.end(), x), x);
      return;
    }
    const std::uint64_t slot = rng_.below(seen_);
    if (slot >= capacity_) return;
    const double old = items_[slot];
    items_[slot] = x;
    sorted_.erase(std::lower_bound(sorted_.begin(), sorted_.end(), old));
    sorted_.insert(std::upper_bound(sorted_.begin(), sorted_.end(), x), x);
  }

  /// Fraction of retained samples <= x; 0.5 when nothing has been seen.
  double ecdf(double x) const {
    if (sorted_.empty()) return 0.5;
    const auto n = std::upper_bound(sorted_.begin(), sorted_.end(), x) - sorted_.begin();
    return static_cast<double>(n) / static_cast<double>(sorted_.size());
  }

  std::size_t capacity() const { return capacity_; }
  std::uint64_t seen_count() const { return seen_; }
  std::size_t size() const { return items_.size(); }
  std::span<const double> items() const { return items_; }
  std::span<const double> sorted() const { return sorted_; }

 private:
  std::size_t capacity_;
  Rng rng_;
  std::uint64_t seen_ = 0;
  std::vector<double> items_;
  std::vector<double> sorted_;
};

/// Count / sum / sum of squares of one field.
struct RunningMoments {
  std::uint64_t count = 0;
  double sum = 0.0;
  double sum_sq = 0.0;

  void add(double x) {
    ++count;
    sum += x;
    sum_sq += x * x;
  }
  double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
  // population variance, clamped against cancellation
  double variance() const {
    if (count == 0) return 0.0;
    const double m = mean();
    return std::max(0.0, sum_sq / static_cast<double>(count) - m * m);
  }
  double stddev() const { return std::sqrt(variance()); }

  bool operator==(const RunningMoments&) const = default;
};

/// Exact ECDF of a finite sample: |{b in sample : b <= a}| / |sample|.
inline double exact_ecdf(double a, std::span<const double> sample) {
  if (sample.empty()) return 0.5;
  const auto n = std::count_if(sample.begin(), sample.end(), [a](double b) { return b <= a; });
  return static_cast<double>(n) / static_cast<double>(sample.size());
}

/// Quantile by linear interpolation between order statistics at (n-1)q.
/// `sorted` must be ascending and non-empty.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double mean_of(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

inline double population_std(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

/// Shannon entropy in nats, with 0 ln 0 = 0.
inline double entropy_nats(std::span<const double> p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Wilson score interval for `successes` out of `trials` (z = 1.96 for 95%).
inline Interval wilson_interval(double successes, double trials, double z = 1.959963984540054) {
  if (trials <= 0.0) return {0.0, 1.0};
  const double p = successes / trials;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / trials;
  const double centre = (p + z2 / (2.0 * trials)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / trials + z2 / (4.0 * trials * trials)) / denom;
  return {centre - half, centre + half};
}

/// Pearson correlation; NaN when either side has zero variance.
inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("pearson: size mismatch");
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::nan("");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace steer
