#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>

#include "minvar/metrics.hpp"
#include "minvar/panel.hpp"

namespace minvar {

/// All cash amounts are held in integer micro-units (1e-6 of a currency
/// unit), so the accounting identities below hold exactly.
using Micro = std::int64_t;

inline constexpr Micro kMicroPerUnit = 1000000;

inline Micro to_micro(double currency) {
  // Round half away from zero.
  return static_cast<Micro>(std::llround(currency * 1e6));
}

inline double from_micro(Micro m) { return static_cast<double>(m) * 1e-6; }

/// Product of a share count and a micro price, exact in 128-bit intermediate.
inline Micro shares_times_price(long long shares, Micro price_micro) {
  return static_cast<Micro>(static_cast<__int128>(shares) * price_micro);
}

/// Commission tiers, venue fees and financing terms of the simulated account.
struct FeeSchedule {
  double commission_per_share_tier1 = 0.0035;  // below the monthly volume break
  double commission_per_share_tier2 = 0.0020;  // above it
  long long tier_break_shares = 300000;        // month-to-date routed shares
  double ticket_floor = 0.35;                  // minimum commission per ticket
  double notional_fee_rate = 0.000845;         // exchange+clearing+activity, both sides
  double sec_fee_rate = 0.0001157;             // sell notional only
  double debit_spread = 0.015;                 // added to the reference rate
  int day_count = 360;

  void validate() const {
    if (commission_per_share_tier1 < 0 || commission_per_share_tier2 < 0 ||
        ticket_floor < 0 || notional_fee_rate < 0 || sec_fee_rate < 0 || debit_spread < 0)
      throw std::invalid_argument("FeeSchedule: negative rate");
    if (tier_break_shares < 0 || day_count <= 0)
      throw std::invalid_argument("FeeSchedule: bad tier break or day count");
  }
};

/// Step-function reference-rate series (annualized decimal, e.g. 0.05).
class RateSeries {
 public:
  RateSeries() = default;
  explicit RateSeries(double constant) { points_[Date{1900, 1, 1}] = constant; }

  void add(const Date& d, double rate) { points_[d] = rate; }

  double at(const Date& d) const {
    if (points_.empty()) throw std::runtime_error("RateSeries: empty");
    auto it = points_.upper_bound(d);
    if (it == points_.begin())
      throw std::runtime_error("RateSeries: no rate on or before " + d.to_string());
    return std::prev(it)->second;
  }

  static RateSeries from_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("RateSeries: cannot open " + path);
    RateSeries out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line == "\r") continue;
      if (line_no == 1 && line.rfind("date,", 0) == 0) continue;
      const auto comma = line.find(',');
      if (comma == std::string::npos)
        throw std::runtime_error("RateSeries: malformed line " + std::to_string(line_no));
      out.add(Date::parse(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
    }
    return out;
  }

 private:
  std::map<Date, double> points_;
};

struct AccountState {
  std::map<std::string, long long> shares;  // integral positions
  Micro cash = 0;
  long long month_volume_shares = 0;  // routed shares, reset each month
  Date date{1900, 1, 1};

  // Cumulative flow ledger (exact).
  Micro fees_commission = 0;
  Micro fees_notional = 0;
  Micro fees_sec = 0;
  Micro interest_paid = 0;
  Micro dividends_received = 0;
  Micro cash_in_lieu = 0;
  Micro trading_pnl = 0;

  long long position(const std::string& asset) const {
    const auto it = shares.find(asset);
    return it == shares.end() ? 0 : it->second;
  }
};

struct TradeRecord {
  Date date;
  std::string asset;
  long long delta_shares = 0;
  Micro exec_price = 0;
  Micro commission = 0;
  Micro notional_fee = 0;
  Micro sec_fee = 0;
};

struct LedgerRow {
  Date date;
  Micro nlv = 0;
  Micro cash = 0;
  Micro positions_value = 0;
  Micro fees_commission = 0;  // per-day flows
  Micro fees_notional = 0;
  Micro fees_sec = 0;
  Micro interest = 0;
  Micro dividends = 0;
};

/// Estimated execution prices for the coming close: the day's open when
/// present, otherwise the previous close fully adjusted for today's split.
inline Micro estimate_price(const AssetDayStore& store, int date_idx,
                            const std::string& asset) {
  const AssetDayRecord* today = store.find(date_idx, asset);
  if (today != nullptr && today->open > 0.0) return to_micro(today->open);
  for (int d = date_idx - 1; d >= 0; --d) {
    const AssetDayRecord* prev = store.find(d, asset);
    if (prev != nullptr) {
      double px = prev->close;
      // Apply splits effective after the reference close, including today.
      for (int s = d + 1; s <= date_idx; ++s) {
        const AssetDayRecord* sr = store.find(s, asset);
        if (sr != nullptr && sr->split_ratio != 1.0) px /= sr->split_ratio;
      }
      return to_micro(px);
    }
  }
  throw std::runtime_error("estimate_price: no price history for " + asset + " at " +
                           store.dates()[static_cast<std::size_t>(date_idx)].to_string());
}

inline Micro close_price_micro(const AssetDayStore& store, int date_idx,
                               const std::string& asset) {
  const AssetDayRecord* rec = store.find(date_idx, asset);
  if (rec == nullptr)
    throw std::runtime_error("close price missing for held asset " + asset + " on " +
                             store.dates()[static_cast<std::size_t>(date_idx)].to_string());
  return to_micro(rec->close);
}

inline Micro mark_positions(const AccountState& state, const AssetDayStore& store,
                            int date_idx) {
  Micro total = 0;
  for (const auto& [asset, count] : state.shares) {
    if (count == 0) continue;
    total += shares_times_price(count, close_price_micro(store, date_idx, asset));
  }
  return total;
}

/// Start-of-day accruals: month-boundary volume reset, debit interest on the
/// overnight cash balance (calendar-day count / 360), splits applied to share
/// counts (fractional remainders paid as cash in lieu at the estimated
/// price), and cash dividends of the day.
inline LedgerRow accrue_daily(AccountState& state, const AssetDayStore& store, int date_idx,
                              const FeeSchedule& fees, const RateSeries& rates) {
  const Date today = store.dates()[static_cast<std::size_t>(date_idx)];
  LedgerRow row;
  row.date = today;

  if (today.month != state.date.month || today.year != state.date.year)
    state.month_volume_shares = 0;

  if (state.cash < 0) {
    const long long days =
        state.date.year > 1900 ? calendar_days_between(state.date, today) : 1;
    const double rate = rates.at(today) + fees.debit_spread;
    const double interest =
        from_micro(-state.cash) * rate * static_cast<double>(days) /
        static_cast<double>(fees.day_count);
    const Micro interest_micro = to_micro(interest);
    state.cash -= interest_micro;
    state.interest_paid += interest_micro;
    row.interest = interest_micro;
  }

  for (auto& [asset, count] : state.shares) {
    if (count == 0) continue;
    const AssetDayRecord* rec = store.find(date_idx, asset);
    if (rec == nullptr) continue;
    if (rec->split_ratio != 1.0) {
      const double exact = static_cast<double>(count) * rec->split_ratio;
      const long long whole = static_cast<long long>(std::floor(exact + 1e-9));
      const double fraction = exact - static_cast<double>(whole);
      if (fraction > 1e-9) {
        const Micro px = estimate_price(store, date_idx, asset);
        const Micro cil = to_micro(fraction * from_micro(px));
        state.cash += cil;
        state.cash_in_lieu += cil;
      }
      count = whole;
    }
    if (rec->dividend_cash > 0.0) {
      const Micro div = to_micro(rec->dividend_cash * static_cast<double>(count));
      state.cash += div;
      state.dividends_received += div;
      row.dividends += div;
    }
  }

  state.date = today;
  return row;
}

/// Execute a rebalance toward target weights at the day's close.
///
/// Pre-execution NLV uses split-corrected positions and estimated prices;
/// targets are rounded half away from zero; fills at the actual close with
/// commissions (tiered per-share with a ticket floor, tier split pro-rata at
/// the monthly boundary), flat notional fees on both sides, and the
/// sell-side regulatory fee. All charges hit free cash instantly.
inline std::vector<TradeRecord> rebalance(AccountState& state, const AssetDayStore& store,
                                          int date_idx,
                                          const std::vector<std::string>& assets,
                                          const Eigen::VectorXd& weights,
                                          const FeeSchedule& fees, LedgerRow* row = nullptr) {
  if (static_cast<std::size_t>(weights.size()) != assets.size())
    throw std::invalid_argument("rebalance: weight/asset size mismatch");
  fees.validate();

  // Pre-execution NLV estimate.
  Micro nlv_pre = state.cash;
  std::map<std::string, Micro> est_price;
  for (const auto& [asset, count] : state.shares)
    if (count != 0) est_price[asset] = estimate_price(store, date_idx, asset);
  for (std::size_t j = 0; j < assets.size(); ++j)
    if (!est_price.count(assets[j]))
      est_price[assets[j]] = estimate_price(store, date_idx, assets[j]);
  for (const auto& [asset, count] : state.shares)
    if (count != 0) nlv_pre += shares_times_price(count, est_price[asset]);

  // Targets; assets not in the target list head to zero.
  std::map<std::string, long long> target;
  for (const auto& [asset, count] : state.shares) target[asset] = 0;
  for (std::size_t j = 0; j < assets.size(); ++j) {
    const double ideal = weights(static_cast<Eigen::Index>(j)) *
                         from_micro(nlv_pre) / from_micro(est_price[assets[j]]);
    target[assets[j]] = std::llround(ideal);  // half away from zero
  }

  std::vector<TradeRecord> trades;
  for (const auto& [asset, tgt] : target) {
    const long long cur = state.position(asset);
    const long long delta = tgt - cur;
    if (delta == 0) continue;
    const Micro close_px = close_price_micro(store, date_idx, asset);

    TradeRecord tr;
    tr.date = store.dates()[static_cast<std::size_t>(date_idx)];
    tr.asset = asset;
    tr.delta_shares = delta;
    tr.exec_price = close_px;

    const long long qty = std::llabs(delta);
    const Micro notional = shares_times_price(qty, close_px);

    // Commission with the tier boundary split pro-rata inside the ticket.
    const long long below =
        std::max(0LL, std::min(qty, fees.tier_break_shares - state.month_volume_shares));
    const long long above = qty - below;
    double commission = fees.commission_per_share_tier1 * static_cast<double>(below) +
                        fees.commission_per_share_tier2 * static_cast<double>(above);
    commission = std::max(commission, fees.ticket_floor);
    tr.commission = to_micro(commission);
    tr.notional_fee = to_micro(fees.notional_fee_rate * from_micro(notional));
    tr.sec_fee = delta < 0 ? to_micro(fees.sec_fee_rate * from_micro(notional)) : 0;

    state.cash -= delta > 0 ? notional : -notional;
    state.cash -= tr.commission + tr.notional_fee + tr.sec_fee;
    state.fees_commission += tr.commission;
    state.fees_notional += tr.notional_fee;
    state.fees_sec += tr.sec_fee;
    state.month_volume_shares += qty;
    if (row != nullptr) {
      row->fees_commission += tr.commission;
      row->fees_notional += tr.notional_fee;
      row->fees_sec += tr.sec_fee;
    }

    auto& pos = state.shares[asset];
    pos += delta;
    trades.push_back(tr);
  }
  return trades;
}

// ---------------------------------------------------------------------------
// Daily simulation loop
// ---------------------------------------------------------------------------

/// Weight decision at a store date index; nullopt keeps the book unchanged
/// (all-cash strategies never trade).
using SimStrategy = std::function<std::optional<std::pair<std::vector<std::string>, Eigen::VectorXd>>(
    int date_idx)>;

struct SimulationConfig {
  double start_cash = 1000000.0;
  int rebalance_interval = 5;
  int start_index = 0;  // first simulated day (must leave room for estimation)
  FeeSchedule fees;
  RateSeries rates = RateSeries(0.0);
};

struct SimulationResult {
  std::vector<LedgerRow> ledger;
  std::vector<TradeRecord> trades;
  PerformanceMetrics metrics;
  std::vector<double> daily_returns;
  std::vector<double> rolling_vol;  // trailing-252-day annualized
  std::map<int, double> mdd_by_year;
  AccountState final_state;
  Micro nlv_start = 0;
  Micro nlv_end = 0;

  Micro total_fees() const {
    return final_state.fees_commission + final_state.fees_notional + final_state.fees_sec;
  }
};

/// Full daily life cycle: accrue, decide on rebalance days, execute at the
/// close, mark the book. Deterministic for a fixed store, strategy and
/// configuration.
inline SimulationResult run_simulation(const AssetDayStore& store, const SimStrategy& strategy,
                                       const SimulationConfig& cfg) {
  const auto& dates = store.dates();
  if (cfg.start_index < 0 || cfg.start_index >= static_cast<int>(dates.size()))
    throw std::invalid_argument("run_simulation: bad start index");

  SimulationResult result;
  AccountState state;
  state.cash = to_micro(cfg.start_cash);
  state.date = cfg.start_index > 0
                   ? dates[static_cast<std::size_t>(cfg.start_index - 1)]
                   : Date{1900, 1, 1};
  result.nlv_start = state.cash;

  std::vector<Eigen::VectorXd> target_history;
  Micro prev_nlv = state.cash;
  Micro prev_positions_value = 0;
  int since_rebalance = cfg.rebalance_interval;  // trade on the first day

  for (int d = cfg.start_index; d < static_cast<int>(dates.size()); ++d) {
    LedgerRow row = accrue_daily(state, store, d, cfg.fees, cfg.rates);
    Micro traded_notional = 0;

    if (++since_rebalance > cfg.rebalance_interval) since_rebalance = cfg.rebalance_interval;
    if (since_rebalance == cfg.rebalance_interval) {
      std::optional<std::pair<std::vector<std::string>, Eigen::VectorXd>> decision;
      try {
        decision = strategy(d);
      } catch (const std::exception& e) {
        throw std::runtime_error("strategy failed on " + dates[static_cast<std::size_t>(d)].to_string() +
                                 ": " + e.what());
      }
      if (decision) {
        auto trades = rebalance(state, store, d, decision->first, decision->second,
                                cfg.fees, &row);
        for (auto& t : trades) {
          traded_notional += t.delta_shares > 0
                                 ? shares_times_price(t.delta_shares, t.exec_price)
                                 : -shares_times_price(-t.delta_shares, t.exec_price);
          result.trades.push_back(std::move(t));
        }
        target_history.push_back(decision->second);
      }
      since_rebalance = 0;
    }

    row.cash = state.cash;
    row.positions_value = mark_positions(state, store, d);
    row.nlv = row.cash + row.positions_value;
    result.ledger.push_back(row);

    // Exact per-day trading P&L: position value change minus cash spent on
    // fills (fees, interest, dividends and cash-in-lieu are booked apart).
    state.trading_pnl += (row.positions_value - prev_positions_value) - traded_notional;
    prev_positions_value = row.positions_value;

    if (d > cfg.start_index) {
      result.daily_returns.push_back(from_micro(row.nlv) / from_micro(prev_nlv) - 1.0);
    }
    prev_nlv = row.nlv;
  }

  result.nlv_end = result.ledger.back().nlv;
  result.final_state = state;
  if (result.daily_returns.size() >= 2) {
    std::vector<Date> rdates;
    for (std::size_t i = 1; i < result.ledger.size(); ++i)
      rdates.push_back(result.ledger[i].date);
    result.metrics = compute_metrics(result.daily_returns, target_history, rdates);
    result.mdd_by_year = result.metrics.mdd_by_year;
    result.rolling_vol = rolling_volatility(result.daily_returns);
  }
  return result;
}

/// The post-execution identity NLV = cash + sum s * p at the day's closes.
inline bool nlv_identity_holds(const SimulationResult& result) {
  for (const auto& row : result.ledger)
    if (row.nlv != row.cash + row.positions_value) return false;
  return true;
}

/// Cash-flow conservation: NLV_T - NLV_0 equals trading P&L + dividends +
/// cash-in-lieu - fees - interest, exactly in micro-units.
inline bool conservation_identity_holds(const SimulationResult& result) {
  const AccountState& s = result.final_state;
  const Micro lhs = result.nlv_end - result.nlv_start;
  const Micro rhs = s.trading_pnl + s.dividends_received + s.cash_in_lieu -
                    s.fees_commission - s.fees_notional - s.fees_sec - s.interest_paid;
  return lhs == rhs;
}

inline void write_ledger_csv(const SimulationResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_ledger_csv: cannot open " + path);
  out << "date,nlv,cash,positions_value,fees_commission,fees_notional,fees_sec,interest,"
         "dividends\n";
  for (const auto& r : result.ledger)
    out << r.date.to_string() << ',' << from_micro(r.nlv) << ',' << from_micro(r.cash) << ','
        << from_micro(r.positions_value) << ',' << from_micro(r.fees_commission) << ','
        << from_micro(r.fees_notional) << ',' << from_micro(r.fees_sec) << ','
        << from_micro(r.interest) << ',' << from_micro(r.dividends) << "\n";
}

inline void write_trades_csv(const SimulationResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_trades_csv: cannot open " + path);
  out << "date,asset,delta_shares,exec_price,commission,notional_fee,sec_fee\n";
  for (const auto& t : result.trades)
    out << t.date.to_string() << ',' << t.asset << ',' << t.delta_shares << ','
        << from_micro(t.exec_price) << ',' << from_micro(t.commission) << ','
        << from_micro(t.notional_fee) << ',' << from_micro(t.sec_fee) << "\n";
}

}  // namespace minvar
