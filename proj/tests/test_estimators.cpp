#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "minvar/estimators.hpp"
#include "minvar/qp.hpp"
#include "minvar/rng.hpp"

using namespace minvar;

namespace {

Eigen::MatrixXd gaussian_window(Rng& rng, int dt, int n, double scale = 0.01) {
  Eigen::MatrixXd x(dt, n);
  for (int t = 0; t < dt; ++t)
    for (int j = 0; j < n; ++j) x(t, j) = scale * rng.normal();
  return x;
}

Eigen::MatrixXd random_orthogonal(Rng& rng, int n) {
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n * n; ++i) a.data()[i] = rng.normal();
  return Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
}

}  // namespace

TEST_CASE("mle is the identity cleaner with frozen downstream weights") {
  Rng rng(1);
  Eigen::MatrixXd window = gaussian_window(rng, 60, 4);
  auto cleaned = estimate_covariance(window, {EstimatorKind::kMle});
  auto raw = sample_correlation_eval(window);
  CHECK((cleaned.correlation - raw.correlation).cwiseAbs().maxCoeff() == 0.0);

  // Hand-solved 3-asset fixture: Sigma = [[1,.5,0],[.5,1,0],[0,0,2]].
  // Block inverse gives Sigma^-1 1 = (2/3, 2/3, 1/2); w = (4/11, 4/11, 3/11).
  Eigen::MatrixXd sigma(3, 3);
  sigma << 1.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 2.0;
  Eigen::VectorXd w = gmv_weights_eval(sigma.inverse());
  CHECK(w(0) == Catch::Approx(4.0 / 11.0).margin(1e-12));
  CHECK(w(1) == Catch::Approx(4.0 / 11.0).margin(1e-12));
  CHECK(w(2) == Catch::Approx(3.0 / 11.0).margin(1e-12));

  // Identity fixture.
  Eigen::VectorXd wi = gmv_weights_eval(Eigen::MatrixXd::Identity(5, 5));
  for (int i = 0; i < 5; ++i) CHECK(wi(i) == Catch::Approx(0.2).margin(1e-14));
}

TEST_CASE("linear shrinkage") {
  Rng rng(2);
  Eigen::MatrixXd window = gaussian_window(rng, 40, 6);
  Eigen::MatrixXd x = window.rowwise() - window.colwise().mean();
  Eigen::MatrixXd s = x.transpose() * x / 40.0;

  SECTION("forced intensities") {
    Eigen::MatrixXd full = clean_ls_with_intensity(s, 1.0);
    const double mu = s.trace() / 6.0;
    CHECK((full - mu * Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-15);
    Eigen::MatrixXd none = clean_ls_with_intensity(s, 0.0);
    CHECK((none - s).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("estimated intensity lies in [0,1] and helps under an identity population") {
    int wins = 0;
    const int seeds = 200;
    for (int seed = 0; seed < seeds; ++seed) {
      Rng r(1000 + static_cast<std::uint64_t>(seed));
      Eigen::MatrixXd w = gaussian_window(r, 100, 50, 1.0);
      auto ls = clean_ls(w);
      REQUIRE(ls.intensity >= 0.0);
      REQUIRE(ls.intensity <= 1.0);
      Eigen::MatrixXd xs = w.rowwise() - w.colwise().mean();
      Eigen::MatrixXd sample = xs.transpose() * xs / 100.0;
      const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(50, 50);
      if ((ls.covariance - eye).norm() < (sample - eye).norm()) ++wins;
    }
    CHECK(wins >= static_cast<int>(0.95 * seeds));
  }
}

TEST_CASE("power mapping") {
  SECTION("gamma = 1 is the identity") {
    Rng rng(3);
    auto cr = sample_correlation_eval(gaussian_window(rng, 50, 5));
    Eigen::MatrixXd mapped = clean_pm(cr.correlation, 1.0);
    CHECK((mapped - cr.correlation).cwiseAbs().maxCoeff() < 1e-14);
  }

  SECTION("entry arithmetic") {
    Eigen::MatrixXd c(2, 2);
    c << 1.0, 0.5, 0.5, 1.0;
    Eigen::MatrixXd mapped = clean_pm(c, 2.0);
    CHECK(mapped(0, 1) == Catch::Approx(0.25).margin(1e-15));
    Eigen::MatrixXd cn(2, 2);
    cn << 1.0, -0.5, -0.5, 1.0;
    CHECK(clean_pm(cn, 2.0)(0, 1) == Catch::Approx(-0.25).margin(1e-15));
  }

  SECTION("noise-only correlation shrinks by the square map") {
    Rng rng(4);
    auto cr = sample_correlation_eval(gaussian_window(rng, 2000, 20));
    Eigen::MatrixXd mapped = clean_pm(cr.correlation, 2.0);
    double before = 0.0, after = 0.0, squares = 0.0;
    int cnt = 0;
    for (int i = 0; i < 20; ++i)
      for (int j = i + 1; j < 20; ++j) {
        before += std::abs(cr.correlation(i, j));
        after += std::abs(mapped(i, j));
        squares += cr.correlation(i, j) * cr.correlation(i, j);
        ++cnt;
      }
    // With no PSD floor triggered the map is exactly elementwise.
    CHECK(after == Catch::Approx(squares).margin(1e-12));
    CHECK(after / cnt < 0.1 * before / cnt);  // strong noise suppression
  }
}

TEST_CASE("quadratic-inverse shrinkage") {
  SECTION("identity population: shrunk spectrum closer to one") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(100 + seed);
      auto cr = sample_correlation_eval(gaussian_window(rng, 400, 100));
      SpectralDecomp d = spectral_decomp(cr.correlation);
      Eigen::VectorXd shrunk = clean_qis(d.eigenvalues, 100.0 / 400.0);
      const double mad_raw = (d.eigenvalues.array() - 1.0).abs().mean();
      const double mad_shrunk = (shrunk.array() - 1.0).abs().mean();
      CHECK(mad_shrunk < mad_raw);
    }
  }

  SECTION("consistency: huge windows leave the spectrum nearly unchanged") {
    // Needs a disperse population spectrum: when sampling noise is small
    // relative to eigenvalue spacing the shrinkage must become the identity.
    // (With a flat population the estimator still compresses the +-2 sqrt(q)
    // sampling dispersion, which is correct behaviour, not inconsistency.)
    Rng rng(7);
    const int n = 12, dt = 500 * n;
    Eigen::MatrixXd pop(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) pop(i, j) = std::pow(0.6, std::abs(i - j));
    Eigen::LLT<Eigen::MatrixXd> chol(pop);
    Eigen::MatrixXd window = gaussian_window(rng, dt, n, 1.0) *
                             Eigen::MatrixXd(chol.matrixL()).transpose();
    auto cr = sample_correlation_eval(window);
    SpectralDecomp d = spectral_decomp(cr.correlation);
    Eigen::VectorXd shrunk = clean_qis(d.eigenvalues, static_cast<double>(n) / dt);
    for (int k = 0; k < n; ++k)
      CHECK(std::abs(shrunk(k) / d.eigenvalues(k) - 1.0) < 0.02);
  }

  SECTION("output is rank-monotone and trace preserving for any input") {
    Rng rng(8);
    for (int rep = 0; rep < 10; ++rep) {
      const int n = 6 + rep;
      Eigen::VectorXd lam(n);
      for (int i = 0; i < n; ++i) lam(i) = rng.uniform(0.05, 4.0);
      Eigen::VectorXd shrunk = clean_qis(lam, 0.4);
      CHECK(shrunk.sum() == Catch::Approx(lam.sum()).epsilon(1e-6));
      // Sort inputs; the matched outputs must be nondecreasing.
      std::vector<int> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      std::sort(idx.begin(), idx.end(), [&](int a, int b) { return lam(a) < lam(b); });
      for (int k = 1; k < n; ++k)
        CHECK(shrunk(idx[k]) >= shrunk(idx[k - 1]) - 1e-12);
      for (int k = 0; k < n; ++k) CHECK(shrunk(k) > 0.0);
    }
  }

  SECTION("q >= 1 unsupported") {
    Eigen::VectorXd lam = Eigen::VectorXd::Ones(4);
    CHECK_THROWS_AS(clean_qis(lam, 1.0), std::invalid_argument);
  }
}

TEST_CASE("eigenvalue clipping at the MP edge") {
  Eigen::VectorXd lam(5);
  lam << 0.2, 0.5, 0.9, 1.4, 6.0;
  const double q = 0.25;  // edge = 2.25
  Eigen::VectorXd out = clean_clip(lam, q);
  const double bulk_avg = (0.2 + 0.5 + 0.9 + 1.4) / 4.0;
  for (int i = 0; i < 4; ++i) CHECK(out(i) == Catch::Approx(bulk_avg));
  CHECK(out(4) == 6.0);
  CHECK(out.sum() == Catch::Approx(lam.sum()).margin(1e-12));
}

TEST_CASE("oracle eigenvalues") {
  SECTION("exact eigenvectors recover the reference spectrum") {
    Rng rng(9);
    auto cr = sample_correlation_eval(gaussian_window(rng, 80, 6));
    SpectralDecomp d = spectral_decomp(cr.correlation);
    auto oracle = oracle_eigenvalues(d.eigenvectors, cr.correlation);
    CHECK((oracle.eigenvalues - d.eigenvalues).cwiseAbs().maxCoeff() < 1e-10);
  }

  SECTION("identity reference gives all ones for any orthonormal frame") {
    Rng rng(10);
    Eigen::MatrixXd v = random_orthogonal(rng, 7);
    auto oracle = oracle_eigenvalues(v, Eigen::MatrixXd::Identity(7, 7));
    for (int k = 0; k < 7; ++k)
      CHECK(oracle.eigenvalues(k) == Catch::Approx(1.0).margin(1e-12));
  }

  SECTION("overlap route equals the quadratic-form route") {
    Rng rng(11);
    for (int rep = 0; rep < 10; ++rep) {
      Rng r = rng.split(static_cast<std::uint64_t>(rep));
      auto cr = sample_correlation_eval(gaussian_window(r, 70, 6));
      Eigen::MatrixXd v = random_orthogonal(r, 6);
      auto oracle = oracle_eigenvalues(v, cr.correlation);
      Eigen::VectorXd quad = oracle_eigenvalues_quadratic(v, cr.correlation);
      CHECK((oracle.eigenvalues - quad).cwiseAbs().maxCoeff() < 1e-12);
      CHECK(oracle.max_row_error < 1e-10);
      CHECK(oracle.max_col_error < 1e-10);
    }
  }

  SECTION("non-orthonormal eigenvectors rejected") {
    Eigen::MatrixXd v = Eigen::MatrixXd::Identity(4, 4);
    v(0, 0) = 1.5;
    CHECK_THROWS_AS(oracle_eigenvalues(v, Eigen::MatrixXd::Identity(4, 4)),
                    std::invalid_argument);
  }

  SECTION("any perturbation increases the Frobenius distance") {
    Rng rng(12);
    for (int inst = 0; inst < 10; ++inst) {
      Rng r = rng.split(static_cast<std::uint64_t>(inst));
      auto cr = sample_correlation_eval(gaussian_window(r, 50, 8));
      Eigen::MatrixXd vhat =
          spectral_decomp(sample_correlation_eval(gaussian_window(r, 50, 8)).correlation)
              .eigenvectors;
      auto oracle = oracle_eigenvalues(vhat, cr.correlation);
      const double base =
          (cr.correlation -
           vhat * oracle.eigenvalues.asDiagonal() * vhat.transpose())
              .norm();
      for (int pert = 0; pert < 20; ++pert) {
        Eigen::VectorXd noise(8);
        for (int i = 0; i < 8; ++i) noise(i) = r.uniform(-0.05, 0.05);
        if (noise.cwiseAbs().maxCoeff() < 1e-12) continue;
        const double moved =
            (cr.correlation - vhat * (oracle.eigenvalues + noise).asDiagonal() *
                                  vhat.transpose())
                .norm();
        CHECK(moved > base);
      }
    }
  }
}

TEST_CASE("average oracle") {
  Rng panel_rng(13);
  // Stationary Gaussian panel with a one-factor structure.
  const int assets = 12, days = 400;
  Eigen::MatrixXd panel(days, assets);
  for (int t = 0; t < days; ++t) {
    const double f = panel_rng.normal();
    for (int j = 0; j < assets; ++j)
      panel(t, j) = 0.01 * (0.6 * f + 0.8 * panel_rng.normal());
  }

  SECTION("single-sample table equals that sample's oracle") {
    const int n = assets, dt_in = 30, dt_out = 5;
    // Panel trimmed to exactly one feasible window pair: the draw is forced.
    Eigen::MatrixXd tiny = panel.topRows(dt_in + 1 + dt_out);
    Rng rng(14);
    AoTable table = calibrate_ao(tiny, n, dt_in, dt_out, 1, rng);

    auto cin = sample_correlation_eval(tiny.topRows(dt_in));
    auto cout_r = sample_correlation_eval(tiny.bottomRows(dt_out));
    Eigen::VectorXd expected = oracle_eigenvalues_quadratic(
        spectral_decomp(cin.correlation).eigenvectors, cout_r.correlation);
    CHECK((table.eigenvalues - expected).cwiseAbs().maxCoeff() < 1e-12);
  }

  SECTION("cleaning ignores the input spectrum") {
    Rng rng(15);
    AoTable table = calibrate_ao(panel, 6, 40, 5, 20, rng);
    Eigen::VectorXd a = Eigen::VectorXd::LinSpaced(6, 0.1, 3.0);
    Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(6, 5.0, 9.0);
    CHECK((clean_ao(a, table) - clean_ao(b, table)).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(clean_ao(Eigen::VectorXd::Ones(7), table), std::invalid_argument);
  }

  SECTION("table converges with the sample count") {
    Rng r1(16), r2(17);
    AoTable small_a = calibrate_ao(panel, 6, 40, 10, 40, r1);
    AoTable big_a = calibrate_ao(panel, 6, 40, 10, 400, r2);
    Rng r3(18);
    AoTable big_b = calibrate_ao(panel, 6, 40, 10, 400, r3);
    // Independent large calibrations agree much better than small vs large.
    const double large_gap = (big_a.eigenvalues - big_b.eigenvalues).norm();
    const double small_gap = (small_a.eigenvalues - big_a.eigenvalues).norm();
    CHECK(large_gap < small_gap);
    CHECK(large_gap / big_a.eigenvalues.norm() < 0.05);
  }

  SECTION("csv round trip") {
    Rng rng(19);
    AoTable table = calibrate_ao(panel, 5, 30, 5, 10, rng, "fixture");
    const std::string path = "/tmp/minvar_test_ao.csv";
    save_ao_table(table, path);
    AoTable loaded = load_ao_table(path);
    CHECK(loaded.n == table.n);
    CHECK(loaded.dt_in == table.dt_in);
    CHECK(loaded.span == table.span);
    CHECK((loaded.eigenvalues - table.eigenvalues).cwiseAbs().maxCoeff() < 1e-15);
    std::remove(path.c_str());
  }
}

TEST_CASE("univariate weight rules") {
  SECTION("equal variances give equal weights") {
    auto w = erb_weights(Eigen::VectorXd::Constant(5, 0.04));
    for (int i = 0; i < 5; ++i) CHECK(w.w(i) == Catch::Approx(0.2).margin(1e-15));
  }

  SECTION("inverse-variance arithmetic") {
    Eigen::VectorXd v(2);
    v << 1.0, 4.0;
    auto w = erb_weights(v);
    CHECK(w.w(0) == Catch::Approx(0.8).margin(1e-15));
    CHECK(w.w(1) == Catch::Approx(0.2).margin(1e-15));
    CHECK(w.constraint == PortfolioWeights::Constraint::kLongOnly);
  }

  SECTION("cap proportionality") {
    Eigen::VectorXd caps(2);
    caps << 3.0, 1.0;
    auto w = mcw_weights(caps);
    CHECK(w.w(0) == Catch::Approx(0.75).margin(1e-15));
    CHECK(w.w(1) == Catch::Approx(0.25).margin(1e-15));
  }

  SECTION("non-positive inputs rejected") {
    Eigen::VectorXd bad(2);
    bad << 1.0, 0.0;
    CHECK_THROWS_AS(erb_weights(bad), std::invalid_argument);
    CHECK_THROWS_AS(mcw_weights(bad), std::invalid_argument);
  }
}

TEST_CASE("every cleaner yields a positive-semidefinite reassembled covariance") {
  Rng rng(20);
  Eigen::MatrixXd window = gaussian_window(rng, 80, 10);
  AoTable table = calibrate_ao(gaussian_window(rng, 300, 10), 10, 60, 5, 15, rng);
  Eigen::MatrixXd pop = Eigen::MatrixXd::Identity(10, 10);

  for (EstimatorKind kind :
       {EstimatorKind::kMle, EstimatorKind::kLs, EstimatorKind::kPm, EstimatorKind::kQis,
        EstimatorKind::kAo, EstimatorKind::kClip, EstimatorKind::kOracle}) {
    EstimatorConfig cfg;
    cfg.kind = kind;
    cfg.ao_table = &table;
    cfg.reference_correlation = &pop;
    auto cleaned = estimate_covariance(window, cfg);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cleaned.covariance,
                                                      Eigen::EigenvaluesOnly);
    INFO(estimator_name(kind));
    CHECK(es.eigenvalues()(0) > -1e-12);
    // Cleaned correlation keeps a unit diagonal after reassembly.
    for (int i = 0; i < 10; ++i)
      CHECK(cleaned.correlation(i, i) == Catch::Approx(1.0).margin(1e-10));
    for (int i = 0; i < 10; ++i) CHECK(cleaned.cleaned_spectrum(i) > 0.0);
  }
}
