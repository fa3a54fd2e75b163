#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "minvar/dates.hpp"

namespace minvar {

/// One asset-day row of the raw data store.
struct AssetDayRecord {
  Date date;
  std::string asset;
  double open = 0.0;   // 0 = missing
  double close = 0.0;
  double adj_factor = 1.0;  // cumulative; adjusted close = close * adj_factor
  double volume = 0.0;
  double shares_outstanding = 0.0;
  double dividend_cash = 0.0;
  double split_ratio = 1.0;  // shares multiply by this on the record's date
  bool auction_flag = true;
  bool delist_flag = false;

  void validate() const {
    if (open != 0.0 && !(open > 0.0))
      throw std::invalid_argument("record " + asset + "@" + date.to_string() +
                                  ": open must be positive when present");
    if (!(close > 0.0))
      throw std::invalid_argument("record " + asset + "@" + date.to_string() +
                                  ": close must be positive");
    if (!(adj_factor > 0.0))
      throw std::invalid_argument("record " + asset + "@" + date.to_string() +
                                  ": adj_factor must be positive");
    if (!(split_ratio > 0.0))
      throw std::invalid_argument("record " + asset + "@" + date.to_string() +
                                  ": split_ratio must be positive");
  }

  double adjusted_close() const { return close * adj_factor; }
};

/// Records keyed by (date, asset) over a shared trading calendar.
class AssetDayStore {
 public:
  void insert(AssetDayRecord rec) {
    rec.validate();
    auto& per_asset = by_date_[rec.date];
    if (!per_asset.emplace(rec.asset, rec).second)
      throw std::invalid_argument("duplicate (date, asset) key: " + rec.date.to_string() +
                                  ", " + rec.asset);
    dates_dirty_ = true;
  }

  const std::vector<Date>& dates() const {
    refresh();
    return dates_;
  }

  /// Index of a date on the calendar, -1 if absent.
  int date_index(const Date& d) const {
    refresh();
    const auto it = std::lower_bound(dates_.begin(), dates_.end(), d);
    if (it == dates_.end() || !(*it == d)) return -1;
    return static_cast<int>(it - dates_.begin());
  }

  const AssetDayRecord* find(int date_idx, const std::string& asset) const {
    refresh();
    if (date_idx < 0 || date_idx >= static_cast<int>(dates_.size())) return nullptr;
    const auto di = by_date_.find(dates_[static_cast<std::size_t>(date_idx)]);
    if (di == by_date_.end()) return nullptr;
    const auto ai = di->second.find(asset);
    return ai == di->second.end() ? nullptr : &ai->second;
  }

  /// Sorted union of all asset ids.
  std::vector<std::string> assets() const {
    std::map<std::string, bool> seen;
    for (const auto& [d, per_asset] : by_date_)
      for (const auto& [a, rec] : per_asset) seen[a] = true;
    std::vector<std::string> out;
    out.reserve(seen.size());
    for (const auto& [a, b] : seen) out.push_back(a);
    return out;
  }

  std::size_t record_count() const {
    std::size_t c = 0;
    for (const auto& [d, per_asset] : by_date_) c += per_asset.size();
    return c;
  }

  bool empty() const { return by_date_.empty(); }

 private:
  void refresh() const {
    if (!dates_dirty_) return;
    dates_.clear();
    dates_.reserve(by_date_.size());
    for (const auto& [d, per_asset] : by_date_) dates_.push_back(d);
    dates_dirty_ = false;
  }

  std::map<Date, std::map<std::string, AssetDayRecord>> by_date_;
  mutable std::vector<Date> dates_;
  mutable bool dates_dirty_ = false;
};

/// Dated matrix of daily fractional close-to-close returns. Row t holds the
/// returns realized on dates[t] (close of the previous calendar entry to
/// close of dates[t]).
struct ReturnPanel {
  std::vector<Date> dates;
  std::vector<std::string> assets;
  Eigen::MatrixXd returns;  // dates.size() x assets.size()

  int days() const { return static_cast<int>(dates.size()); }
  int n_assets() const { return static_cast<int>(assets.size()); }
  double aspect_ratio() const {
    return static_cast<double>(n_assets()) / static_cast<double>(days());
  }

  void validate() const {
    if (returns.rows() != days() || returns.cols() != n_assets())
      throw std::logic_error("ReturnPanel: shape mismatch");
    for (std::size_t i = 1; i < dates.size(); ++i)
      if (!(dates[i - 1] < dates[i]))
        throw std::logic_error("ReturnPanel: dates not strictly increasing at " +
                               dates[i].to_string());
    for (Eigen::Index i = 0; i < returns.size(); ++i) {
      const double r = returns.data()[i];
      if (!std::isfinite(r) || std::abs(r) >= 1.0)
        throw std::logic_error("ReturnPanel: invalid return " + std::to_string(r));
    }
  }

  /// Chronological window of `length` rows ending just before row
  /// `end_exclusive`.
  Eigen::MatrixXd window(int end_exclusive, int length) const {
    if (length < 1 || end_exclusive - length < 0 || end_exclusive > days())
      throw std::out_of_range("ReturnPanel::window: out of range");
    return returns.middleRows(end_exclusive - length, length);
  }

  /// Same window with rows reversed: row 0 = most recent day (lag order).
  Eigen::MatrixXd window_lagged(int end_exclusive, int length) const {
    return window(end_exclusive, length).colwise().reverse();
  }

  int index_of(const Date& d) const {
    const auto it = std::lower_bound(dates.begin(), dates.end(), d);
    if (it == dates.end() || !(*it == d)) return -1;
    return static_cast<int>(it - dates.begin());
  }

  /// Column subset in the given asset order.
  ReturnPanel select(const std::vector<std::string>& subset) const {
    ReturnPanel out;
    out.dates = dates;
    out.assets = subset;
    out.returns.resize(days(), static_cast<Eigen::Index>(subset.size()));
    for (std::size_t j = 0; j < subset.size(); ++j) {
      const auto it = std::find(assets.begin(), assets.end(), subset[j]);
      if (it == assets.end())
        throw std::invalid_argument("ReturnPanel::select: unknown asset " + subset[j]);
      out.returns.col(static_cast<Eigen::Index>(j)) =
          returns.col(it - assets.begin());
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

inline constexpr const char* kPanelCsvHeader =
    "date,asset_id,open,close,adj_factor,volume,shares_outstanding,dividend_cash,"
    "split_ratio,auction_flag,delist_flag";

struct IngestResult {
  AssetDayStore store;
  ReturnPanel panel;  // complete-history assets only
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_number(const std::string& s, const char* field, std::size_t line_no) {
  std::size_t consumed = 0;
  double v;
  try {
    v = std::stod(s, &consumed);
  } catch (const std::exception&) {
    throw std::invalid_argument("line " + std::to_string(line_no) + ": field '" + field +
                                "' is not a number: '" + s + "'");
  }
  if (consumed != s.size())
    throw std::invalid_argument("line " + std::to_string(line_no) + ": field '" + field +
                                "' has trailing characters: '" + s + "'");
  return v;
}

inline bool parse_flag(const std::string& s, const char* field, std::size_t line_no) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw std::invalid_argument("line " + std::to_string(line_no) + ": field '" + field +
                              "' must be 0/1: '" + s + "'");
}

}  // namespace detail

/// Build the complete-history return panel from a store: assets with a valid
/// close on every store date. Returns use adjusted closes; the first store
/// date seeds the series and carries no return row.
inline ReturnPanel panel_from_store(const AssetDayStore& store) {
  const auto& dates = store.dates();
  if (dates.size() < 2)
    throw std::invalid_argument("panel_from_store: need at least 2 dates");
  std::vector<std::string> complete;
  for (const auto& a : store.assets()) {
    bool ok = true;
    for (std::size_t d = 0; d < dates.size() && ok; ++d)
      ok = store.find(static_cast<int>(d), a) != nullptr;
    if (ok) complete.push_back(a);
  }
  if (complete.empty())
    throw std::invalid_argument("panel_from_store: no asset has a complete history");

  ReturnPanel panel;
  panel.assets = complete;
  panel.dates.assign(dates.begin() + 1, dates.end());
  panel.returns.resize(static_cast<Eigen::Index>(panel.dates.size()),
                       static_cast<Eigen::Index>(complete.size()));
  for (std::size_t j = 0; j < complete.size(); ++j) {
    double prev = store.find(0, complete[j])->adjusted_close();
    for (std::size_t d = 1; d < dates.size(); ++d) {
      const double cur = store.find(static_cast<int>(d), complete[j])->adjusted_close();
      const double r = cur / prev - 1.0;
      if (!std::isfinite(r) || std::abs(r) >= 1.0)
        throw std::invalid_argument("panel_from_store: return " + std::to_string(r) +
                                    " for " + complete[j] + " on " + dates[d].to_string() +
                                    " violates |r| < 1");
      panel.returns(static_cast<Eigen::Index>(d - 1), static_cast<Eigen::Index>(j)) = r;
      prev = cur;
    }
  }
  panel.validate();
  return panel;
}

/// Parse the long-format panel CSV. Dates must be non-decreasing across rows
/// and (date, asset) keys unique. Optional fields may be empty.
inline IngestResult ingest_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ingest_csv: cannot open " + path);

  IngestResult out;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line))
    throw std::invalid_argument("ingest_csv: empty file " + path);
  ++line_no;
  {
    std::string header = line;
    if (!header.empty() && header.back() == '\r') header.pop_back();
    if (header != kPanelCsvHeader)
      throw std::invalid_argument("ingest_csv: unexpected header '" + header + "'");
  }

  std::optional<Date> prev_date;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != 11)
      throw std::invalid_argument("line " + std::to_string(line_no) + ": expected 11 fields, got " +
                                  std::to_string(fields.size()));
    AssetDayRecord rec;
    try {
      rec.date = Date::parse(fields[0]);
    } catch (const std::exception& e) {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (prev_date && rec.date < *prev_date)
      throw std::invalid_argument("line " + std::to_string(line_no) +
                                  ": dates not monotone (" + rec.date.to_string() + " after " +
                                  prev_date->to_string() + ")");
    prev_date = rec.date;
    rec.asset = fields[1];
    if (rec.asset.empty())
      throw std::invalid_argument("line " + std::to_string(line_no) + ": empty asset_id");
    rec.open = fields[2].empty() ? 0.0 : detail::parse_number(fields[2], "open", line_no);
    rec.close = detail::parse_number(fields[3], "close", line_no);
    rec.adj_factor =
        fields[4].empty() ? 1.0 : detail::parse_number(fields[4], "adj_factor", line_no);
    rec.volume = fields[5].empty() ? 0.0 : detail::parse_number(fields[5], "volume", line_no);
    rec.shares_outstanding =
        fields[6].empty() ? 0.0
                          : detail::parse_number(fields[6], "shares_outstanding", line_no);
    rec.dividend_cash =
        fields[7].empty() ? 0.0 : detail::parse_number(fields[7], "dividend_cash", line_no);
    rec.split_ratio =
        fields[8].empty() ? 1.0 : detail::parse_number(fields[8], "split_ratio", line_no);
    rec.auction_flag =
        fields[9].empty() ? true : detail::parse_flag(fields[9], "auction_flag", line_no);
    rec.delist_flag =
        fields[10].empty() ? false : detail::parse_flag(fields[10], "delist_flag", line_no);
    try {
      out.store.insert(rec);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (out.store.dates().size() >= 2) out.panel = panel_from_store(out.store);
  return out;
}

/// Write a store back to the long-format CSV (fixture and synth output).
inline void write_store_csv(const AssetDayStore& store, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_store_csv: cannot open " + path);
  out << kPanelCsvHeader << "\n";
  out.precision(12);
  const auto& dates = store.dates();
  for (std::size_t d = 0; d < dates.size(); ++d) {
    for (const auto& asset : store.assets()) {
      const AssetDayRecord* r = store.find(static_cast<int>(d), asset);
      if (r == nullptr) continue;
      out << r->date.to_string() << ',' << r->asset << ',';
      if (r->open != 0.0) out << r->open;
      out << ',' << r->close << ',' << r->adj_factor << ',' << r->volume << ','
          << r->shares_outstanding << ',' << r->dividend_cash << ',' << r->split_ratio << ','
          << (r->auction_flag ? 1 : 0) << ',' << (r->delist_flag ? 1 : 0) << "\n";
    }
  }
}

}  // namespace minvar
