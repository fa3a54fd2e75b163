#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <fstream>

#include "minvar/panel.hpp"
#include "minvar/synthetic.hpp"
#include "minvar/universe.hpp"

using namespace minvar;

namespace {

std::string write_temp(const std::string& name, const std::string& body) {
  const std::string path = "/tmp/minvar_" + name;
  std::ofstream out(path);
  out << body;
  return path;
}

/// Store fixture builder with sane defaults.
AssetDayRecord rec(const char* date, const char* asset, double close, double volume = 2e6,
                   double shares = 1e8, double open = -1.0) {
  AssetDayRecord r;
  r.date = Date::parse(date);
  r.asset = asset;
  r.close = close;
  r.open = open < 0.0 ? close : open;
  r.volume = volume;
  r.shares_outstanding = shares;
  return r;
}

}  // namespace

TEST_CASE("ingest two-day single asset") {
  const auto path = write_temp("two_day.csv",
                               std::string(kPanelCsvHeader) +
                                   "\n"
                                   "2020-01-02,AAA,,100,1,1000,5000000,,1,1,0\n"
                                   "2020-01-03,AAA,,101,1,1000,5000000,,1,1,0\n");
  auto res = ingest_csv(path);
  CHECK(res.store.record_count() == 2);
  REQUIRE(res.panel.days() == 1);
  CHECK(res.panel.returns(0, 0) == Catch::Approx(0.01).margin(1e-15));
  CHECK(res.panel.dates[0] == Date::parse("2020-01-03"));
  std::remove(path.c_str());
}

TEST_CASE("ingest rejects duplicates, bad rows and non-monotone dates") {
  SECTION("duplicate (date, asset)") {
    const auto path = write_temp("dup.csv", std::string(kPanelCsvHeader) +
                                                "\n"
                                                "2020-01-02,AAA,,100,1,,,,,,\n"
                                                "2020-01-02,AAA,,101,1,,,,,,\n");
    CHECK_THROWS_WITH(ingest_csv(path), Catch::Matchers::ContainsSubstring("duplicate"));
    std::remove(path.c_str());
  }

  SECTION("malformed row reports the line number") {
    const auto path = write_temp("bad.csv", std::string(kPanelCsvHeader) +
                                                "\n"
                                                "2020-01-02,AAA,,100,1,,,,,,\n"
                                                "2020-01-03,AAA,,oops,1,,,,,,\n");
    CHECK_THROWS_WITH(ingest_csv(path), Catch::Matchers::ContainsSubstring("line 3"));
    std::remove(path.c_str());
  }

  SECTION("non-monotone dates") {
    const auto path = write_temp("mono.csv", std::string(kPanelCsvHeader) +
                                                 "\n"
                                                 "2020-01-03,AAA,,100,1,,,,,,\n"
                                                 "2020-01-02,AAA,,101,1,,,,,,\n");
    CHECK_THROWS_WITH(ingest_csv(path), Catch::Matchers::ContainsSubstring("monotone"));
    std::remove(path.c_str());
  }

  SECTION("wrong header") {
    const auto path = write_temp("hdr.csv", "date,asset\n2020-01-02,AAA\n");
    CHECK_THROWS_WITH(ingest_csv(path), Catch::Matchers::ContainsSubstring("header"));
    std::remove(path.c_str());
  }

  SECTION("return sanity bound enforced at ingestion") {
    const auto path = write_temp("big.csv", std::string(kPanelCsvHeader) +
                                                "\n"
                                                "2020-01-02,AAA,,100,1,,,,,,\n"
                                                "2020-01-03,AAA,,210,1,,,,,,\n");
    CHECK_THROWS_WITH(ingest_csv(path), Catch::Matchers::ContainsSubstring("|r| < 1"));
    std::remove(path.c_str());
  }
}

TEST_CASE("ingest 3-asset 5-day fixture matches hand ratios") {
  // Split-adjusted closes via adj_factor on asset CCC.
  const double closes_a[5] = {100, 102, 101, 103, 104};
  const double closes_b[5] = {50, 49, 49.5, 50.5, 50};
  const double closes_c[5] = {200, 202, 101, 102, 103};  // 2:1 split on day 3
  const double adj_c[5] = {1, 1, 2, 2, 2};
  std::string body(kPanelCsvHeader);
  body += "\n";
  const char* dates[5] = {"2021-03-01", "2021-03-02", "2021-03-03", "2021-03-04",
                          "2021-03-05"};
  for (int d = 0; d < 5; ++d) {
    char row[256];
    std::snprintf(row, sizeof(row), "%s,AAA,,%g,1,,,,,,\n", dates[d], closes_a[d]);
    body += row;
    std::snprintf(row, sizeof(row), "%s,BBB,,%g,1,,,,,,\n", dates[d], closes_b[d]);
    body += row;
    std::snprintf(row, sizeof(row), "%s,CCC,,%g,%g,,,,%s,,\n", dates[d], closes_c[d], adj_c[d],
                  d == 2 ? "2" : "1");
    body += row;
  }
  const auto path = write_temp("fixture3x5.csv", body);
  auto res = ingest_csv(path);
  REQUIRE(res.panel.days() == 4);
  REQUIRE(res.panel.n_assets() == 3);
  // Independent hand arithmetic on the fixture numbers.
  for (int d = 1; d < 5; ++d) {
    CHECK(res.panel.returns(d - 1, 0) ==
          Catch::Approx(closes_a[d] / closes_a[d - 1] - 1.0).margin(1e-15));
    CHECK(res.panel.returns(d - 1, 1) ==
          Catch::Approx(closes_b[d] / closes_b[d - 1] - 1.0).margin(1e-15));
    CHECK(res.panel.returns(d - 1, 2) ==
          Catch::Approx(closes_c[d] * adj_c[d] / (closes_c[d - 1] * adj_c[d - 1]) - 1.0)
              .margin(1e-15));
  }
  // The split day's adjusted return is small even though raw close halves.
  CHECK(std::abs(res.panel.returns(1, 2)) < 0.01);
  std::remove(path.c_str());
}

TEST_CASE("panel windows") {
  ReturnPanel p;
  p.dates = {Date::parse("2020-01-02"), Date::parse("2020-01-03"), Date::parse("2020-01-06"),
             Date::parse("2020-01-07")};
  p.assets = {"A", "B"};
  p.returns.resize(4, 2);
  p.returns << 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08;
  Eigen::MatrixXd w = p.window(3, 2);  // rows 1..2
  CHECK(w(0, 0) == 0.03);
  CHECK(w(1, 0) == 0.05);
  Eigen::MatrixXd lag = p.window_lagged(3, 2);  // row 0 = most recent (row 2)
  CHECK(lag(0, 0) == 0.05);
  CHECK(lag(1, 0) == 0.03);
  CHECK_THROWS_AS(p.window(5, 2), std::out_of_range);
  CHECK_THROWS_AS(p.window(1, 2), std::out_of_range);
}

TEST_CASE("synthetic generator") {
  SECTION("zero factors with equal idiosyncratic vols gives a scaled identity") {
    SyntheticMarketSpec spec;
    spec.n_assets = 6;
    spec.n_days = 50;
    spec.n_factors = 0;
    spec.idio_vol_min = spec.idio_vol_max = 0.3;
    auto m = generate_synthetic(spec);
    const double daily_var = 0.3 * 0.3 / 252.0;
    CHECK((m.population_covariance - daily_var * Eigen::MatrixXd::Identity(6, 6))
              .cwiseAbs()
              .maxCoeff() < 1e-15);
  }

  SECTION("same seed reproduces bit-identical panels") {
    SyntheticMarketSpec spec;
    spec.n_assets = 8;
    spec.n_days = 60;
    spec.seed = 42;
    auto a = generate_synthetic(spec);
    auto b = generate_synthetic(spec);
    CHECK(a.panel.returns == b.panel.returns);
    spec.seed = 43;
    auto c = generate_synthetic(spec);
    CHECK(a.panel.returns != c.panel.returns);
  }

  SECTION("student-t innovations preserve the population covariance") {
    SyntheticMarketSpec spec;
    spec.n_assets = 4;
    spec.n_days = 60000;
    spec.n_factors = 1;
    spec.law = SyntheticMarketSpec::Law::kStudentT;
    spec.student_nu = 5.0;
    auto m = generate_synthetic(spec);
    Eigen::MatrixXd sample =
        m.panel.returns.transpose() * m.panel.returns / m.panel.days();
    CHECK((sample - m.population_covariance).norm() / m.population_covariance.norm() < 0.08);
  }

  SECTION("long Gaussian panel converges to the population covariance") {
    SyntheticMarketSpec spec;
    spec.n_assets = 100;
    spec.n_days = 10000;  // dt = 100 n
    spec.n_factors = 3;
    auto m = generate_synthetic(spec);
    Eigen::MatrixXd centered =
        m.panel.returns.rowwise() - m.panel.returns.colwise().mean();
    Eigen::MatrixXd sample = centered.transpose() * centered / m.panel.days();
    const double rel =
        (sample - m.population_covariance).norm() / m.population_covariance.norm();
    CHECK(rel < 0.05);
  }

  SECTION("store prices compound the panel returns") {
    SyntheticMarketSpec spec;
    spec.n_assets = 3;
    spec.n_days = 10;
    auto m = generate_synthetic(spec);
    const auto& dates = m.store.dates();
    REQUIRE(dates.size() == 11);
    const auto* d0 = m.store.find(0, "SYN0001");
    const auto* d1 = m.store.find(1, "SYN0001");
    CHECK(d1->close / d0->close - 1.0 == Catch::Approx(m.panel.returns(0, 1)).margin(1e-12));
    CHECK(d1->open == d0->close);  // gapless synthetic opens
    CHECK(d0->open == 0.0);        // first day has no prior close
  }

  SECTION("invalid specs rejected") {
    SyntheticMarketSpec bad;
    bad.law = SyntheticMarketSpec::Law::kStudentT;
    bad.student_nu = 2.0;
    CHECK_THROWS_AS(generate_synthetic(bad), std::invalid_argument);
  }
}

TEST_CASE("low variance outlier mask") {
  SECTION("all equal volatilities exclude nothing") {
    std::vector<double> v(6, std::log(0.3));
    auto mask = low_variance_outlier_mask(v, v);
    for (bool b : mask) CHECK_FALSE(b);
  }

  SECTION("single tiny-vol asset excluded when tiny in both windows") {
    std::vector<double> s = {std::log(0.28), std::log(0.31), std::log(0.29), std::log(0.33),
                             std::log(1e-6)};
    auto mask = low_variance_outlier_mask(s, s);
    CHECK_FALSE(mask[0]);
    CHECK_FALSE(mask[3]);
    CHECK(mask[4]);
  }

  SECTION("below the fence in only one window is retained") {
    std::vector<double> shortw = {std::log(0.28), std::log(0.31), std::log(0.29),
                                  std::log(0.33), std::log(1e-6)};
    std::vector<double> longw(5, std::log(0.3));
    auto mask = low_variance_outlier_mask(shortw, longw);
    for (bool b : mask) CHECK_FALSE(b);
  }

  SECTION("degenerate windows abstain with a warning") {
    std::vector<double> v(5, -std::numeric_limits<double>::infinity());
    bool warn = false;
    auto mask = low_variance_outlier_mask(v, v, 1.5, &warn);
    CHECK(warn);
    for (bool b : mask) CHECK_FALSE(b);
  }

  SECTION("fewer than 4 assets rejected") {
    std::vector<double> v(3, 0.0);
    CHECK_THROWS_AS(low_variance_outlier_mask(v, v), std::invalid_argument);
  }
}

namespace {

/// 40-day, 6-asset compliant store fixture; callers then perturb it.
AssetDayStore compliant_store(int days = 40) {
  AssetDayStore store;
  Date d{2020, 1, 1};
  int added = 0;
  long long serial = d.serial();
  std::vector<double> base = {100, 95, 110, 90, 105, 102};
  int step = 0;
  while (added < days) {
    const Date cur = Date::from_serial(serial++);
    const int wd = static_cast<int>(((cur.serial() % 7) + 11) % 7);
    if (wd == 0 || wd == 6) continue;
    ++added;
    ++step;
    for (int a = 0; a < 6; ++a) {
      AssetDayRecord r;
      r.date = cur;
      r.asset = std::string("AST") + static_cast<char>('A' + a);
      // Deterministic wiggle keeps variances alive and distinct.
      r.close = base[static_cast<std::size_t>(a)] *
                (1.0 + 0.01 * std::sin(0.7 * step + a) + 0.002 * a * std::cos(0.3 * step));
      r.open = r.close * 0.999;
      r.shares_outstanding = 1e8 * (1 + a);
      r.volume = 0.02 * r.shares_outstanding;
      store.insert(r);
    }
  }
  return store;
}

FilterConfig desk_config() {
  FilterConfig cfg;
  cfg.history_days = 30;
  cfg.rolling_window = 10;
  cfg.recent_days = 3;
  cfg.outlier_window_short = 5;
  cfg.outlier_window_long = 10;
  cfg.min_corr_overlap = 10;
  return cfg;
}

}  // namespace

TEST_CASE("universe filter") {
  const FilterConfig cfg = desk_config();

  SECTION("compliant universe is fully retained") {
    AssetDayStore store = compliant_store();
    const Date decision = store.dates()[35];
    auto res = filter_universe(store, decision, 6, cfg);
    CHECK(res.assets.size() == 6);
    CHECK_FALSE(res.shortfall);
    // Descending market cap: AST F has the largest shares count.
    CHECK(res.assets.front() == "ASTF");
  }

  SECTION("a low-priced day inside the recent window excludes the asset") {
    AssetDayStore store = compliant_store();
    const Date decision = store.dates()[35];
    // Rebuild one asset's day-34 record at price 5.
    AssetDayStore poked;
    for (std::size_t d = 0; d < store.dates().size(); ++d)
      for (const auto& a : store.assets()) {
        auto r = *store.find(static_cast<int>(d), a);
        if (d == 34 && a == "ASTC") r.close = 5.0;
        poked.insert(r);
      }
    auto res = filter_universe(poked, decision, 6, cfg);
    CHECK(std::find(res.assets.begin(), res.assets.end(), "ASTC") == res.assets.end());
    CHECK(res.shortfall);
  }

  SECTION("share classes collapse to the larger cap") {
    AssetDayStore store = compliant_store();
    // Add a second class of ASTA with smaller cap.
    for (std::size_t d = 0; d < store.dates().size(); ++d) {
      auto r = *store.find(static_cast<int>(d), "ASTA");
      r.asset = "ASTA.B";
      r.shares_outstanding = 4e7;
      r.close *= 1.001;  // decorrelate slightly from the primary class
      store.insert(r);
    }
    const Date decision = store.dates()[35];
    auto res = filter_universe(store, decision, 10, cfg);
    CHECK(std::find(res.assets.begin(), res.assets.end(), "ASTA") != res.assets.end());
    CHECK(std::find(res.assets.begin(), res.assets.end(), "ASTA.B") == res.assets.end());
  }

  SECTION("imminent delisting excluded via the documented look-ahead") {
    AssetDayStore store = compliant_store();
    AssetDayStore poked;
    for (std::size_t d = 0; d < store.dates().size(); ++d)
      for (const auto& a : store.assets()) {
        auto r = *store.find(static_cast<int>(d), a);
        if (d == 37 && a == "ASTB") r.delist_flag = true;
        poked.insert(r);
      }
    const Date decision = poked.dates()[35];
    auto res = filter_universe(poked, decision, 6, cfg);
    CHECK(std::find(res.assets.begin(), res.assets.end(), "ASTB") == res.assets.end());
  }

  SECTION("no look-ahead: future prices do not change the selection") {
    AssetDayStore store = compliant_store();
    const Date decision = store.dates()[35];
    auto base = filter_universe(store, decision, 6, cfg);

    AssetDayStore poked;
    for (std::size_t d = 0; d < store.dates().size(); ++d)
      for (const auto& a : store.assets()) {
        auto r = *store.find(static_cast<int>(d), a);
        if (static_cast<int>(d) >= 35) {
          r.close = 3.0;  // absurd future values
          r.open = 3.0;
          r.volume = 0.0;
        }
        poked.insert(r);
      }
    auto res = filter_universe(poked, decision, 6, cfg);
    CHECK(res.assets == base.assets);
  }

  SECTION("idempotence") {
    AssetDayStore store = compliant_store();
    const Date decision = store.dates()[35];
    auto once = filter_universe(store, decision, 4, cfg);
    auto twice = filter_universe(store, decision, 4, cfg, &once.assets);
    CHECK(once.assets == twice.assets);
  }

  SECTION("near-duplicate series drop the smaller cap") {
    AssetDayStore store = compliant_store();
    // Clone ASTA's returns onto a new smaller-cap asset (different issuer id).
    for (std::size_t d = 0; d < store.dates().size(); ++d) {
      auto r = *store.find(static_cast<int>(d), "ASTA");
      r.asset = "CLONE";
      r.shares_outstanding = 2e7;
      r.close *= 0.5;  // perfectly correlated returns, different level
      store.insert(r);
    }
    const Date decision = store.dates()[35];
    auto res = filter_universe(store, decision, 10, cfg);
    CHECK(std::find(res.assets.begin(), res.assets.end(), "ASTA") != res.assets.end());
    CHECK(std::find(res.assets.begin(), res.assets.end(), "CLONE") == res.assets.end());
  }
}
