#pragma once

#include <fstream>
#include <optional>

#include "minvar/estimators.hpp"
#include "minvar/metrics.hpp"
#include "minvar/panel.hpp"
#include "minvar/pipeline.hpp"
#include "minvar/qp.hpp"
#include "minvar/trainer.hpp"

namespace minvar {

enum class StrategyKind { kNN, kEstimator, kErb, kMcw };

/// Weight engine shared by the frictionless backtester, the simulator and
/// the CLI. For classic estimators the trailing window is cleaned and
/// projected on MLE volatilities; the NN route runs the trained pipeline.
struct Strategy {
  StrategyKind kind = StrategyKind::kEstimator;
  EstimatorConfig estimator;
  const ModelParams* model = nullptr;  // NN route
  PortfolioWeights::Constraint constraint = PortfolioWeights::Constraint::kUnconstrained;
  int dt_in = 120;  // trailing estimation window (NN: must equal the model's)

  /// Market caps at a decision row; only the MCW rule consumes this.
  std::function<Eigen::VectorXd(int t_index, const std::vector<int>& cols)> caps;
};

/// Weights at decision row t from the trailing window rows [t-dt_in, t-1] of
/// the selected columns. Decisions never touch row t or later.
inline Eigen::VectorXd strategy_weights(const Strategy& strat, const ReturnPanel& panel,
                                        int t_index, const std::vector<int>& cols) {
  const int n = static_cast<int>(cols.size());
  if (t_index - strat.dt_in < 0)
    throw std::invalid_argument("strategy_weights: not enough trailing history");
  Eigen::MatrixXd window(strat.dt_in, n);
  for (int j = 0; j < n; ++j)
    for (int r = 0; r < strat.dt_in; ++r)
      window(r, j) = panel.returns(t_index - strat.dt_in + r, cols[static_cast<std::size_t>(j)]);

  const bool longonly = strat.constraint == PortfolioWeights::Constraint::kLongOnly;
  switch (strat.kind) {
    case StrategyKind::kNN: {
      if (strat.model == nullptr)
        throw std::invalid_argument("strategy_weights: NN strategy without a model");
      Eigen::MatrixXd lagged = window.colwise().reverse();
      if (longonly) return longonly_weights_from_model(lagged, *strat.model);
      return run_pipeline<double>(lagged, *strat.model).weights;
    }
    case StrategyKind::kEstimator: {
      auto cleaned = estimate_covariance(window, strat.estimator);
      if (longonly) return solve_longonly_gmv(cleaned.covariance).weights;
      Eigen::VectorXd u =
          cleaned.covariance.ldlt().solve(Eigen::VectorXd::Ones(n));
      const double denom = u.sum();
      if (!(denom > 0.0))
        throw std::domain_error("strategy_weights: non-positive GMV normalizer");
      return u / denom;
    }
    case StrategyKind::kErb: {
      Eigen::VectorXd var(n);
      for (int j = 0; j < n; ++j) {
        const auto col = window.col(j);
        const double mean = col.mean();
        var(j) = (col.array() - mean).square().sum() / static_cast<double>(strat.dt_in);
      }
      return erb_weights(var).w;
    }
    case StrategyKind::kMcw: {
      if (!strat.caps)
        throw std::invalid_argument("strategy_weights: MCW needs a caps provider");
      return mcw_weights(strat.caps(t_index, cols)).w;
    }
  }
  throw std::logic_error("strategy_weights: unreachable");
}

struct BacktestConfig {
  int n = 300;
  int rebalances = 250;
  int interval = 5;  // trading days between rebalances
  int replications = 1000;
  std::uint64_t seed = 1;
  int oos_horizon = 5;  // short-horizon loss window per rebalance
};

struct ReplicationResult {
  PerformanceMetrics metrics;
  double mean_short_loss = 0.0;  // average realized loss per rebalance
  int start_row = 0;
};

struct BacktestReport {
  std::vector<ReplicationResult> replications;
  PerformanceMetrics aggregate;       // field-wise mean over replications
  double mean_short_loss = 0.0;
};

namespace detail {

inline PerformanceMetrics mean_metrics(const std::vector<ReplicationResult>& reps) {
  PerformanceMetrics agg;
  if (reps.empty()) return agg;
  double sharpe = 0.0, sortino = 0.0;
  for (const auto& r : reps) {
    agg.ann_volatility += r.metrics.ann_volatility;
    agg.ann_return += r.metrics.ann_return;
    sharpe += r.metrics.sharpe;
    sortino += r.metrics.sortino;
    agg.turnover += r.metrics.turnover;
    agg.leverage += r.metrics.leverage;
    agg.n_eff += r.metrics.n_eff;
    agg.max_drawdown += r.metrics.max_drawdown;
  }
  const double inv = 1.0 / static_cast<double>(reps.size());
  agg.ann_volatility *= inv;
  agg.ann_return *= inv;
  agg.sharpe = sharpe * inv;
  agg.sortino = sortino * inv;
  agg.turnover *= inv;
  agg.leverage *= inv;
  agg.n_eff *= inv;
  agg.max_drawdown *= inv;
  return agg;
}

}  // namespace detail

/// Bootstrap backtest without frictions: random start dates and random
/// baskets, weights recomputed every `interval` days from the trailing
/// window, daily compounding with intra-period weight drift (reset at each
/// rebalance), perfect fractional shares and zero costs.
///
/// When a universe provider is given, assets leaving the universe at a
/// rebalance are replaced by fresh random members so the basket size stays
/// constant.
inline BacktestReport run_frictionless(const ReturnPanel& panel, const Strategy& strat,
                                       const BacktestConfig& cfg,
                                       const UniverseProvider& universe = nullptr) {
  const int horizon = cfg.rebalances * cfg.interval;
  const int min_start = strat.dt_in;
  const int max_start = panel.days() - horizon - cfg.oos_horizon - 1;
  if (max_start < min_start)
    throw std::invalid_argument("run_frictionless: panel too short for the configured span");

  Rng root(cfg.seed);
  BacktestReport report;
  report.replications.reserve(static_cast<std::size_t>(cfg.replications));

  for (int rep = 0; rep < cfg.replications; ++rep) {
    Rng rng = root.split(static_cast<std::uint64_t>(rep));
    const int t0 = static_cast<int>(rng.uniform_int(min_start, max_start));

    std::vector<int> pool;
    if (universe)
      pool = universe(t0);
    else {
      pool.resize(static_cast<std::size_t>(panel.n_assets()));
      std::iota(pool.begin(), pool.end(), 0);
    }
    const int n = std::min<int>(cfg.n, static_cast<int>(pool.size()));
    for (int i = 0; i < n; ++i) {
      const auto j = static_cast<std::size_t>(
          rng.uniform_int(i, static_cast<long long>(pool.size()) - 1));
      std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    }
    std::vector<int> cols(pool.begin(), pool.begin() + n);

    std::vector<Eigen::VectorXd> targets;
    std::vector<double> daily;
    std::vector<Date> dates;
    double short_loss = 0.0;
    Eigen::VectorXd held;  // drifting weights

    for (int k = 0; k < cfg.rebalances; ++k) {
      const int tk = t0 + k * cfg.interval;
      if (universe && k > 0) {
        // Replace members that dropped out of the universe, keeping n fixed.
        std::vector<int> live = universe(tk);
        std::vector<bool> alive(static_cast<std::size_t>(panel.n_assets()), false);
        for (int c : live) alive[static_cast<std::size_t>(c)] = true;
        for (auto& c : cols) {
          if (alive[static_cast<std::size_t>(c)]) continue;
          for (int attempts = 0; attempts < 1000; ++attempts) {
            const int cand = live[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<long long>(live.size()) - 1))];
            if (std::find(cols.begin(), cols.end(), cand) == cols.end()) {
              c = cand;
              break;
            }
          }
        }
      }
      Eigen::VectorXd w = strategy_weights(strat, panel, tk, cols);
      targets.push_back(w);

      // Realized short-horizon loss over the shifted window [tk+1, tk+h].
      Eigen::MatrixXd oos(cfg.oos_horizon, n);
      for (int j = 0; j < n; ++j)
        for (int r = 0; r < cfg.oos_horizon; ++r)
          oos(r, j) = panel.returns(tk + 1 + r, cols[static_cast<std::size_t>(j)]);
      short_loss += gmv_loss_eval(w, oos);

      // Daily compounding with drifting weights until the next rebalance.
      held = w;
      for (int d = tk + 1; d <= tk + cfg.interval; ++d) {
        double port = 0.0;
        for (int j = 0; j < n; ++j)
          port += held(j) * panel.returns(d, cols[static_cast<std::size_t>(j)]);
        daily.push_back(port);
        dates.push_back(panel.dates[static_cast<std::size_t>(d)]);
        for (int j = 0; j < n; ++j)
          held(j) = held(j) * (1.0 + panel.returns(d, cols[static_cast<std::size_t>(j)])) /
                    (1.0 + port);
      }
    }

    ReplicationResult rr;
    rr.start_row = t0;
    rr.mean_short_loss = short_loss / static_cast<double>(cfg.rebalances);
    rr.metrics = compute_metrics(daily, targets, dates);
    report.replications.push_back(std::move(rr));
  }

  report.aggregate = detail::mean_metrics(report.replications);
  for (const auto& r : report.replications) report.mean_short_loss += r.mean_short_loss;
  report.mean_short_loss /= static_cast<double>(report.replications.size());
  return report;
}

/// CSV: one row per replication plus an aggregate row.
inline void write_backtest_csv(const BacktestReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_backtest_csv: cannot open " + path);
  out << "replication,start_row,short_loss,ann_volatility,ann_return,sharpe,sortino,"
         "turnover,leverage,n_eff,max_drawdown\n";
  out.precision(10);
  for (std::size_t i = 0; i < report.replications.size(); ++i) {
    const auto& r = report.replications[i];
    out << i << ',' << r.start_row << ',' << r.mean_short_loss << ','
        << r.metrics.ann_volatility << ',' << r.metrics.ann_return << ',' << r.metrics.sharpe
        << ',' << r.metrics.sortino << ',' << r.metrics.turnover << ',' << r.metrics.leverage
        << ',' << r.metrics.n_eff << ',' << r.metrics.max_drawdown << "\n";
  }
  const auto& a = report.aggregate;
  out << "aggregate,," << report.mean_short_loss << ',' << a.ann_volatility << ','
      << a.ann_return << ',' << a.sharpe << ',' << a.sortino << ',' << a.turnover << ','
      << a.leverage << ',' << a.n_eff << ',' << a.max_drawdown << "\n";
}

/// Human-readable single-strategy summary line set.
inline std::string format_backtest_table(const std::string& label,
                                         const BacktestReport& report) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%-10s loss %.4f  vol %6.2f%%  ret %6.2f%%  sharpe %6.3f  sortino %6.3f  "
                "n_eff %6.1f  turnover %5.1f%%  leverage %5.2f  mdd %5.1f%%",
                label.c_str(), report.mean_short_loss,
                100.0 * report.aggregate.ann_volatility, 100.0 * report.aggregate.ann_return,
                report.aggregate.sharpe, report.aggregate.sortino, report.aggregate.n_eff,
                100.0 * report.aggregate.turnover, report.aggregate.leverage,
                100.0 * report.aggregate.max_drawdown);
  return buf;
}

}  // namespace minvar
