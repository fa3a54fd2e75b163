#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "minvar/dates.hpp"
#include "minvar/stats.hpp"

namespace minvar {

/// Shared performance metrics (frictionless backtests and the account
/// simulator). Annualization: sqrt(252) for volatility, 252 for the mean;
/// Sharpe and Sortino use a zero risk-free rate; Sortino's downside
/// deviation is taken about zero.
struct PerformanceMetrics {
  double ann_volatility = 0.0;
  double ann_return = 0.0;
  double sharpe = std::numeric_limits<double>::quiet_NaN();
  double sortino = std::numeric_limits<double>::quiet_NaN();
  double turnover = 0.0;       // mean 0.5 * L1 distance between target weights
  double leverage = 0.0;       // mean sum |w_i|
  double n_eff = 0.0;          // mean inverse Herfindahl 1 / sum w_i^2
  double max_drawdown = 0.0;   // peak-to-trough of the cumulative curve
  std::map<int, double> mdd_by_year;
};

inline double max_drawdown_of(const std::vector<double>& values) {
  double peak = -std::numeric_limits<double>::infinity();
  double mdd = 0.0;
  for (double v : values) {
    peak = std::max(peak, v);
    if (peak > 0.0) mdd = std::max(mdd, 1.0 - v / peak);
  }
  return mdd;
}

/// `daily_returns` drive the return/vol/drawdown block; `target_weights` (one
/// vector per rebalance) drive turnover, leverage and n_eff. `dates`, when
/// provided (one per daily return), add the per-calendar-year drawdowns.
inline PerformanceMetrics compute_metrics(const std::vector<double>& daily_returns,
                                          const std::vector<Eigen::VectorXd>& target_weights,
                                          const std::vector<Date>& dates = {}) {
  if (daily_returns.size() < 2)
    throw std::invalid_argument("compute_metrics: need at least 2 periods");
  PerformanceMetrics m;

  const double mean_daily = stats::mean(daily_returns);
  const double sd_daily = stats::stddev_sample(daily_returns);
  m.ann_return = 252.0 * mean_daily;
  m.ann_volatility = std::sqrt(252.0) * sd_daily;
  if (sd_daily > 0.0) m.sharpe = m.ann_return / m.ann_volatility;

  double downside = 0.0;
  for (double r : daily_returns) downside += r < 0.0 ? r * r : 0.0;
  downside = std::sqrt(downside / static_cast<double>(daily_returns.size())) * std::sqrt(252.0);
  if (downside > 0.0) m.sortino = m.ann_return / downside;

  if (!target_weights.empty()) {
    double lev = 0.0, neff = 0.0;
    for (const auto& w : target_weights) {
      lev += w.cwiseAbs().sum();
      neff += 1.0 / w.squaredNorm();
    }
    m.leverage = lev / static_cast<double>(target_weights.size());
    m.n_eff = neff / static_cast<double>(target_weights.size());
    double to = 0.0;
    for (std::size_t k = 1; k < target_weights.size(); ++k)
      to += 0.5 * (target_weights[k] - target_weights[k - 1]).cwiseAbs().sum();
    m.turnover = target_weights.size() > 1
                     ? to / static_cast<double>(target_weights.size() - 1)
                     : 0.0;
  }

  std::vector<double> curve;
  curve.reserve(daily_returns.size() + 1);
  curve.push_back(1.0);
  for (double r : daily_returns) curve.push_back(curve.back() * (1.0 + r));
  m.max_drawdown = max_drawdown_of(curve);

  if (!dates.empty()) {
    if (dates.size() != daily_returns.size())
      throw std::invalid_argument("compute_metrics: dates/returns size mismatch");
    std::map<int, std::vector<double>> by_year;
    for (std::size_t i = 0; i < dates.size(); ++i)
      by_year[dates[i].year].push_back(curve[i + 1]);
    for (auto& [year, values] : by_year) m.mdd_by_year[year] = max_drawdown_of(values);
  }
  return m;
}

/// Rolling annualized volatility over a trailing window of daily returns;
/// entry i covers returns [i-window+1, i] and is NaN before the window fills.
inline std::vector<double> rolling_volatility(const std::vector<double>& daily_returns,
                                              int window = 252) {
  std::vector<double> out(daily_returns.size(),
                          std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (i + 1 < static_cast<std::size_t>(window)) continue;
    std::span<const double> win(daily_returns.data() + i + 1 - window,
                                static_cast<std::size_t>(window));
    out[i] = std::sqrt(252.0) * stats::stddev_sample(win);
  }
  return out;
}

}  // namespace minvar
