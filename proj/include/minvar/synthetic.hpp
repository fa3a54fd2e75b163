#pragma once

#include <cstdio>
#include <stdexcept>

#include "minvar/lag_transform.hpp"
#include "minvar/panel.hpp"
#include "minvar/rng.hpp"

namespace minvar {

/// Factor-model market generator: r = B f + eps with a closed-form population
/// covariance B B' + Diag(idio^2). Stands in for equity data in desk-scale
/// runs; volatilities are specified annualized and converted to daily.
struct SyntheticMarketSpec {
  int n_assets = 50;
  int n_days = 500;
  int n_factors = 3;
  double loading_scale = 0.2;  // annualized vol contributed by the factor block
  double idio_vol_min = 0.15;  // annualized
  double idio_vol_max = 0.45;
  enum class Law { kGaussian, kStudentT } law = Law::kGaussian;
  double student_nu = 5.0;  // unit-variance rescaled; requires nu > 2
  std::uint64_t seed = 1;

  void validate() const {
    if (n_assets < 1 || n_days < 2) throw std::invalid_argument("synthetic: size too small");
    if (n_factors < 0) throw std::invalid_argument("synthetic: negative factor count");
    if (!(idio_vol_min > 0.0) || idio_vol_max < idio_vol_min)
      throw std::invalid_argument("synthetic: bad idiosyncratic vol range");
    if (law == Law::kStudentT && !(student_nu > 2.0))
      throw std::invalid_argument("synthetic: Student-t needs nu > 2 for finite variance");
  }
};

struct SyntheticMarket {
  ReturnPanel panel;
  Eigen::MatrixXd population_covariance;  // daily return^2 units
  Eigen::MatrixXd loadings;               // n x k (daily scale)
  Eigen::VectorXd idio_vols;              // daily
  AssetDayStore store;
};

namespace detail {

inline std::string synthetic_asset_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "SYN%04d", i);
  return buf;
}

/// Trading calendar: weekdays from a fixed Monday anchor.
inline std::vector<Date> synthetic_calendar(int days) {
  std::vector<Date> out;
  out.reserve(static_cast<std::size_t>(days));
  Date d{2015, 1, 5};  // a Monday
  long long serial = d.serial();
  while (static_cast<int>(out.size()) < days) {
    const Date cur = Date::from_serial(serial);
    const int weekday = static_cast<int>(((serial % 7) + 7 + 4) % 7);  // 0=Sun
    if (weekday >= 1 && weekday <= 5) out.push_back(cur);
    ++serial;
  }
  return out;
}

}  // namespace detail

inline SyntheticMarket generate_synthetic(const SyntheticMarketSpec& spec) {
  spec.validate();
  Rng root(spec.seed);
  Rng loading_rng = root.split("loadings");
  Rng idio_rng = root.split("idio");
  Rng path_rng = root.split("path");

  SyntheticMarket out;
  const int n = spec.n_assets;
  const int k = spec.n_factors;
  const double daily = 1.0 / std::sqrt(kAnnualization);

  out.loadings.resize(n, std::max(k, 1));
  out.loadings.setZero();
  if (k > 0) {
    const double s = spec.loading_scale * daily / std::sqrt(static_cast<double>(k));
    for (int i = 0; i < n; ++i)
      for (int f = 0; f < k; ++f) out.loadings(i, f) = loading_rng.normal(0.0, s);
  }
  out.idio_vols.resize(n);
  for (int i = 0; i < n; ++i)
    out.idio_vols(i) = idio_rng.uniform(spec.idio_vol_min, spec.idio_vol_max) * daily;

  out.population_covariance = out.loadings.leftCols(std::max(k, 1)) *
                              out.loadings.leftCols(std::max(k, 1)).transpose();
  out.population_covariance += Eigen::MatrixXd(out.idio_vols.array().square().matrix().asDiagonal());

  auto draw = [&spec](Rng& rng) {
    return spec.law == SyntheticMarketSpec::Law::kGaussian
               ? rng.normal()
               : rng.student_t_unit_variance(spec.student_nu);
  };

  // n_days + 1 close prices give n_days returns.
  const auto calendar = detail::synthetic_calendar(spec.n_days + 1);
  Eigen::MatrixXd returns(spec.n_days, n);
  for (int t = 0; t < spec.n_days; ++t) {
    Eigen::VectorXd f(std::max(k, 1));
    f.setZero();
    for (int j = 0; j < k; ++j) f(j) = draw(path_rng);
    for (int i = 0; i < n; ++i) {
      double r;
      do {
        r = out.loadings.row(i).head(std::max(k, 1)).dot(f) + out.idio_vols(i) * draw(path_rng);
        // Resampling beyond the sanity bound keeps |r| < 1 intact; at daily
        // scale this branch is astronomically rare.
      } while (std::abs(r) >= 0.9);
      returns(t, i) = r;
    }
  }

  out.panel.dates.assign(calendar.begin() + 1, calendar.end());
  out.panel.assets.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.panel.assets.push_back(detail::synthetic_asset_id(i));
  out.panel.returns = returns;
  out.panel.validate();

  // Price/volume store consistent with the panel (open = previous close).
  for (int i = 0; i < n; ++i) {
    double close = 100.0;
    const double shares = 5e7 * (1.0 + static_cast<double>(i % 13));
    for (std::size_t d = 0; d < calendar.size(); ++d) {
      AssetDayRecord rec;
      rec.date = calendar[d];
      rec.asset = out.panel.assets[static_cast<std::size_t>(i)];
      rec.open = d == 0 ? 0.0 : close;
      if (d > 0) close *= 1.0 + returns(static_cast<int>(d) - 1, i);
      rec.close = close;
      rec.adj_factor = 1.0;
      rec.volume = 0.1 * shares;
      rec.shares_outstanding = shares;
      out.store.insert(rec);
    }
  }
  return out;
}

}  // namespace minvar
