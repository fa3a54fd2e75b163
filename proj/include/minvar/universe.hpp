#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "minvar/panel.hpp"
#include "minvar/stats.hpp"

namespace minvar {

/// Investable-universe thresholds. Defaults follow the published selection
/// rules; every knob is exposed so desk-scale fixtures can shrink the
/// windows.
struct FilterConfig {
  int history_days = 1200;       // full-history span consulted
  int rolling_window = 252;      // auction-participation window (trading days)
  double min_participation = 0.95;
  int recent_days = 5;           // strict liquidity window
  double min_shares_outstanding = 5e6;
  double price_min = 10.0;
  double price_max = 2000.0;
  double volume_frac_shares = 0.01;  // volume >= 1% of shares outstanding
  double volume_frac_cap = 0.01;     // volume * price >= 1% of market cap
  int outlier_window_short = 5;
  int outlier_window_long = 20;
  double iqr_multiplier = 1.5;
  double max_pairwise_corr = 0.95;
  int min_corr_overlap = 30;  // days required before the correlation filter binds
  int delist_lookahead = 5;   // documented look-ahead exemption (delisting notice)
};

struct UniverseResult {
  std::vector<std::string> assets;  // descending market cap, then id
  bool shortfall = false;           // fewer survivors than requested
  std::vector<std::string> warnings;
};

/// Exclusion mask for anomalously low volatility: an asset is excluded iff
/// its log standard deviation lies below Q1 - k*IQR in BOTH windows.
/// Quantiles use linear interpolation between order statistics. If every
/// asset has zero variance in some window the filter abstains (warning flag).
inline std::vector<bool> low_variance_outlier_mask(const std::vector<double>& logvol_short,
                                                   const std::vector<double>& logvol_long,
                                                   double iqr_multiplier = 1.5,
                                                   bool* degenerate_warning = nullptr) {
  const std::size_t m = logvol_short.size();
  if (logvol_long.size() != m)
    throw std::invalid_argument("low_variance_outlier_mask: window size mismatch");
  if (m < 4) throw std::invalid_argument("low_variance_outlier_mask: need >= 4 assets");
  if (degenerate_warning != nullptr) *degenerate_warning = false;

  auto fence = [&](const std::vector<double>& v) -> std::optional<double> {
    bool all_degenerate = true;
    for (double x : v)
      if (std::isfinite(x)) all_degenerate = false;
    if (all_degenerate) return std::nullopt;
    const double q1 = stats::quantile(v, 0.25);
    const double q3 = stats::quantile(v, 0.75);
    return q1 - iqr_multiplier * (q3 - q1);
  };
  const auto fs = fence(logvol_short);
  const auto fl = fence(logvol_long);
  std::vector<bool> excluded(m, false);
  if (!fs || !fl) {
    if (degenerate_warning != nullptr) *degenerate_warning = true;
    return excluded;
  }
  for (std::size_t i = 0; i < m; ++i)
    excluded[i] = logvol_short[i] < *fs && logvol_long[i] < *fl;
  return excluded;
}

namespace detail {

/// Issuer key: asset id up to the first '.', so "ABC" and "ABC.B" share one
/// issuer.
inline std::string issuer_of(const std::string& asset) {
  const auto dot = asset.find('.');
  return dot == std::string::npos ? asset : asset.substr(0, dot);
}

/// Consecutive-day adjusted-close returns for one asset over store indices
/// (from, to] -- requires presence on every day in [from, to].
inline std::optional<std::vector<double>> asset_returns(const AssetDayStore& store,
                                                        const std::string& asset, int from,
                                                        int to) {
  std::vector<double> out;
  const AssetDayRecord* prev = store.find(from, asset);
  if (prev == nullptr) return std::nullopt;
  for (int d = from + 1; d <= to; ++d) {
    const AssetDayRecord* cur = store.find(d, asset);
    if (cur == nullptr) return std::nullopt;
    out.push_back(cur->adjusted_close() / prev->adjusted_close() - 1.0);
    prev = cur;
  }
  return out;
}

inline double log_std_or_neginf(const std::vector<double>& returns) {
  const double sd = stats::stddev_pop(returns);
  return sd > 0.0 ? std::log(sd) : -std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Investable-universe selection at a decision date. Only information dated
/// <= date-1 is consulted, except the delisting look-ahead exclusion (backed
/// by the exchange-notice rule). Survivors are ranked by descending market
/// capitalization at date-1.
inline UniverseResult filter_universe(const AssetDayStore& store, const Date& decision_date,
                                      int n_target, const FilterConfig& cfg,
                                      const std::vector<std::string>* candidates = nullptr) {
  UniverseResult out;
  const int t = store.date_index(decision_date);
  if (t < 0) throw std::invalid_argument("filter_universe: unknown decision date " +
                                         decision_date.to_string());
  if (t < 1) throw std::invalid_argument("filter_universe: no history before decision date");
  const int prev = t - 1;
  const int last = static_cast<int>(store.dates().size()) - 1;

  std::vector<std::string> pool;
  if (candidates != nullptr)
    pool = *candidates;
  else
    pool = store.assets();

  struct Candidate {
    std::string asset;
    double cap = 0.0;
  };
  std::vector<Candidate> alive;

  for (const auto& asset : pool) {
    const AssetDayRecord* yday = store.find(prev, asset);
    if (yday == nullptr) continue;

    // Delisting within the next few trading days (documented exemption).
    bool delisting = false;
    for (int d = t; d <= std::min(t + cfg.delist_lookahead - 1, last) && !delisting; ++d) {
      const AssetDayRecord* r = store.find(d, asset);
      if (r != nullptr && r->delist_flag) delisting = true;
    }
    if (delisting) continue;

    // Day-before size floor.
    if (!(yday->shares_outstanding > cfg.min_shares_outstanding)) continue;

    // Strict recent window: auction executed, price inside the band and
    // volume thresholds on each of the last `recent_days` days. Market cap
    // uses the prior day's close.
    bool liquid = true;
    for (int d = t - cfg.recent_days; d < t && liquid; ++d) {
      if (d < 1) {
        liquid = false;
        break;
      }
      const AssetDayRecord* r = store.find(d, asset);
      const AssetDayRecord* rp = store.find(d - 1, asset);
      if (r == nullptr || rp == nullptr || !r->auction_flag) {
        liquid = false;
        break;
      }
      if (r->close < cfg.price_min || r->close > cfg.price_max) liquid = false;
      if (r->volume < cfg.volume_frac_shares * r->shares_outstanding) liquid = false;
      const double cap_prev = rp->close * rp->shares_outstanding;
      if (r->volume * r->close < cfg.volume_frac_cap * cap_prev) liquid = false;
    }
    if (!liquid) continue;

    // Full-history auction participation on every rolling window.
    const int hist_from = std::max(0, t - cfg.history_days);
    std::vector<int> participation;
    participation.reserve(static_cast<std::size_t>(prev - hist_from + 1));
    for (int d = hist_from; d <= prev; ++d) {
      const AssetDayRecord* r = store.find(d, asset);
      participation.push_back(r != nullptr && r->auction_flag ? 1 : 0);
    }
    const int window = std::min<int>(cfg.rolling_window,
                                     static_cast<int>(participation.size()));
    bool participated = window > 0;
    int run = 0;
    for (int i = 0; i < static_cast<int>(participation.size()); ++i) {
      run += participation[static_cast<std::size_t>(i)];
      if (i >= window) run -= participation[static_cast<std::size_t>(i - window)];
      if (i >= window - 1 &&
          run < static_cast<int>(std::ceil(cfg.min_participation * window)))
        participated = false;
    }
    if (!participated) continue;

    alive.push_back({asset, yday->close * yday->shares_outstanding});
  }

  // Low-variance outliers over the two recent windows (complete windows only).
  if (alive.size() >= 4) {
    std::vector<double> lv_short(alive.size()), lv_long(alive.size());
    std::vector<bool> has_windows(alive.size(), false);
    for (std::size_t i = 0; i < alive.size(); ++i) {
      auto rs = detail::asset_returns(store, alive[i].asset,
                                      t - cfg.outlier_window_short - 1, prev);
      auto rl = detail::asset_returns(store, alive[i].asset,
                                      t - cfg.outlier_window_long - 1, prev);
      if (t - cfg.outlier_window_long - 1 >= 0 && rs && rl) {
        has_windows[i] = true;
        lv_short[i] = detail::log_std_or_neginf(*rs);
        lv_long[i] = detail::log_std_or_neginf(*rl);
      } else {
        lv_short[i] = lv_long[i] = 0.0;  // placeholder, never excluded
      }
    }
    std::vector<double> s_complete, l_complete;
    std::vector<std::size_t> idx_complete;
    for (std::size_t i = 0; i < alive.size(); ++i)
      if (has_windows[i]) {
        s_complete.push_back(lv_short[i]);
        l_complete.push_back(lv_long[i]);
        idx_complete.push_back(i);
      }
    if (idx_complete.size() >= 4) {
      bool degenerate = false;
      const auto mask = low_variance_outlier_mask(s_complete, l_complete,
                                                  cfg.iqr_multiplier, &degenerate);
      if (degenerate) out.warnings.push_back("low-variance filter degenerate; no exclusions");
      std::vector<Candidate> kept;
      std::vector<bool> drop(alive.size(), false);
      for (std::size_t k = 0; k < idx_complete.size(); ++k) drop[idx_complete[k]] = mask[k];
      for (std::size_t i = 0; i < alive.size(); ++i)
        if (!drop[i]) kept.push_back(alive[i]);
      alive.swap(kept);
    }
  }

  // One share class per issuer: keep the largest cap, ties to the smaller id.
  {
    std::map<std::string, Candidate> best;
    for (const auto& c : alive) {
      const std::string issuer = detail::issuer_of(c.asset);
      auto it = best.find(issuer);
      if (it == best.end() || c.cap > it->second.cap ||
          (c.cap == it->second.cap && c.asset < it->second.asset))
        best[issuer] = c;
    }
    std::vector<Candidate> kept;
    kept.reserve(best.size());
    for (const auto& c : alive)
      if (best[detail::issuer_of(c.asset)].asset == c.asset) kept.push_back(c);
    alive.swap(kept);
  }

  // Near-duplicate filter: in-sample correlation above the threshold drops
  // the smaller-cap member of the pair.
  if (alive.size() >= 2) {
    const int hist_from = std::max(0, t - cfg.history_days);
    std::vector<std::optional<std::vector<double>>> series(alive.size());
    for (std::size_t i = 0; i < alive.size(); ++i)
      series[i] = detail::asset_returns(store, alive[i].asset, hist_from, prev);
    struct Pair {
      double corr;
      std::size_t a, b;
    };
    std::vector<Pair> hits;
    for (std::size_t i = 0; i < alive.size(); ++i) {
      if (!series[i] || static_cast<int>(series[i]->size()) < cfg.min_corr_overlap) continue;
      for (std::size_t j = i + 1; j < alive.size(); ++j) {
        if (!series[j] || series[j]->size() != series[i]->size()) continue;
        const auto& x = *series[i];
        const auto& y = *series[j];
        const double mx = stats::mean(x), my = stats::mean(y);
        double sxy = 0.0, sxx = 0.0, syy = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) {
          sxy += (x[k] - mx) * (y[k] - my);
          sxx += (x[k] - mx) * (x[k] - mx);
          syy += (y[k] - my) * (y[k] - my);
        }
        if (sxx <= 0.0 || syy <= 0.0) continue;
        const double corr = sxy / std::sqrt(sxx * syy);
        if (corr > cfg.max_pairwise_corr) hits.push_back({corr, i, j});
      }
    }
    std::sort(hits.begin(), hits.end(), [](const Pair& a, const Pair& b) {
      return a.corr > b.corr;
    });
    std::vector<bool> dropped(alive.size(), false);
    for (const auto& h : hits) {
      if (dropped[h.a] || dropped[h.b]) continue;
      const bool drop_a = alive[h.a].cap < alive[h.b].cap ||
                          (alive[h.a].cap == alive[h.b].cap && alive[h.a].asset > alive[h.b].asset);
      dropped[drop_a ? h.a : h.b] = true;
    }
    std::vector<Candidate> kept;
    for (std::size_t i = 0; i < alive.size(); ++i)
      if (!dropped[i]) kept.push_back(alive[i]);
    alive.swap(kept);
  }

  std::sort(alive.begin(), alive.end(), [](const Candidate& a, const Candidate& b) {
    if (a.cap != b.cap) return a.cap > b.cap;
    return a.asset < b.asset;
  });
  out.shortfall = static_cast<int>(alive.size()) < n_target;
  const int take = std::min<int>(n_target, static_cast<int>(alive.size()));
  out.assets.reserve(static_cast<std::size_t>(take));
  for (int i = 0; i < take; ++i) out.assets.push_back(alive[static_cast<std::size_t>(i)].asset);
  return out;
}

}  // namespace minvar
