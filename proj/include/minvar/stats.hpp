#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace minvar::stats {

inline double mean(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("mean of empty range");
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

/// Population variance (divisor N). Corrected two-pass form: exactly zero
/// for constant input.
inline double variance_pop(std::span<const double> x) {
  const double m = mean(x);
  double s2 = 0.0, s1 = 0.0;
  for (double v : x) {
    const double d = v - m;
    s2 += d * d;
    s1 += d;
  }
  const auto n = static_cast<double>(x.size());
  return std::max(0.0, (s2 - s1 * s1 / n) / n);
}

/// Sample variance (divisor N-1).
inline double variance_sample(std::span<const double> x) {
  if (x.size() < 2) throw std::invalid_argument("sample variance needs >= 2 points");
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

inline double stddev_pop(std::span<const double> x) { return std::sqrt(variance_pop(x)); }
inline double stddev_sample(std::span<const double> x) { return std::sqrt(variance_sample(x)); }

/// Quantile with linear interpolation between order statistics:
/// position p*(N-1) on the sorted sample.
inline double quantile(std::vector<double> x, double p) {
  if (x.empty()) throw std::invalid_argument("quantile of empty range");
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("quantile level outside [0,1]");
  std::sort(x.begin(), x.end());
  const double pos = p * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return x[lo] + frac * (x[hi] - x[lo]);
}

inline double median(std::vector<double> x) { return quantile(std::move(x), 0.5); }

/// Pool-adjacent-violators: least-squares isotonic (non-decreasing) fit with
/// uniform weights. Preserves the total sum exactly.
inline std::vector<double> isotonic_fit(const std::vector<double>& y) {
  const std::size_t n = y.size();
  std::vector<double> level(n), weight(n);
  std::vector<std::size_t> count(n);
  std::size_t blocks = 0;
  for (std::size_t i = 0; i < n; ++i) {
    level[blocks] = y[i];
    weight[blocks] = 1.0;
    count[blocks] = 1;
    ++blocks;
    while (blocks > 1 && level[blocks - 2] > level[blocks - 1]) {
      const double w = weight[blocks - 2] + weight[blocks - 1];
      level[blocks - 2] =
          (level[blocks - 2] * weight[blocks - 2] + level[blocks - 1] * weight[blocks - 1]) / w;
      weight[blocks - 2] = w;
      count[blocks - 2] += count[blocks - 1];
      --blocks;
    }
  }
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t b = 0; b < blocks; ++b)
    out.insert(out.end(), count[b], level[b]);
  return out;
}

}  // namespace minvar::stats
