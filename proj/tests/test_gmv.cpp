#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "minvar/gmv.hpp"
#include "minvar/gradcheck.hpp"
#include "minvar/qp.hpp"
#include "minvar/rng.hpp"

using namespace minvar;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

Eigen::MatrixXd random_spd(Rng& rng, int n, double diag_boost = 0.5) {
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = rng.uniform(-1.0, 1.0);
  return a * a.transpose() / n + diag_boost * Eigen::MatrixXd::Identity(n, n);
}

}  // namespace

TEST_CASE("sample correlation basics") {
  SECTION("perfectly correlated columns") {
    Tape t;
    Tensor w({6, 2});
    for (int i = 0; i < 6; ++i) {
      w.at(i, 0) = 0.01 * (i - 2.5);
      w.at(i, 1) = 0.03 * (i - 2.5);  // exact multiple
    }
    auto cg = sample_correlation(t.leaf(w, false));
    CHECK(t.val(cg.correlation).at(0, 1) == Catch::Approx(1.0).margin(1e-12));
    SpectralDecomp d = spectral_decomp(t.val(cg.correlation).mat());
    CHECK(d.eigenvalues(0) == Catch::Approx(0.0).margin(1e-12));
  }

  SECTION("independent long Gaussian columns give near-identity") {
    Rng rng(3);
    const int dt = 100000, n = 4;
    Tensor w({dt, n});
    for (Tensor::Index i = 0; i < w.size(); ++i) w.at(i) = rng.normal() * 0.01;
    Tape t;
    auto cg = sample_correlation(t.leaf(w, false));
    const auto& c = t.val(cg.correlation);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) CHECK(std::abs(c.at(i, j)) < 0.02);  // O(dt^-1/2)
  }

  SECTION("unit diagonal exactly") {
    Rng rng(5);
    Tensor w({40, 5});
    for (Tensor::Index i = 0; i < w.size(); ++i) w.at(i) = rng.uniform(-0.05, 0.05);
    Tape t;
    auto cg = sample_correlation(t.leaf(w, false));
    for (int i = 0; i < 5; ++i) CHECK(t.val(cg.correlation).at(i, i) == 1.0);
  }
}

TEST_CASE("project_eigvecs") {
  SECTION("identity eigenvalues with orthonormal vectors are unchanged") {
    Rng rng(7);
    Eigen::MatrixXd a = random_spd(rng, 5);
    SpectralDecomp d = spectral_decomp(a);
    Tape t;
    Var v = t.leaf(Tensor::from_eigen_mat(d.eigenvectors), false);
    Var lam = t.constant(Tensor({5}, 1.0));
    Var vnn = project_eigvecs(v, lam);
    CHECK((t.val(vnn).mat() - d.eigenvectors).cwiseAbs().maxCoeff() < 1e-12);
  }

  SECTION("reconstruction has unit diagonal") {
    Rng rng(11);
    Eigen::MatrixXd a = random_spd(rng, 6);
    SpectralDecomp d = spectral_decomp(a);
    Eigen::VectorXd lam(6);
    for (int i = 0; i < 6; ++i) lam(i) = rng.uniform(0.2, 3.0);
    Tape t;
    Var vnn = project_eigvecs(t.leaf(Tensor::from_eigen_mat(d.eigenvectors), false),
                              t.constant(Tensor::from_eigen_vec(lam)));
    Eigen::MatrixXd rec =
        t.val(vnn).mat() * lam.asDiagonal() * t.val(vnn).mat().transpose();
    for (int i = 0; i < 6; ++i) CHECK(rec(i, i) == Catch::Approx(1.0).margin(1e-10));
  }

  SECTION("matches independent elementwise formula on a random instance") {
    Rng rng(13);
    Eigen::MatrixXd v(5, 5);
    for (int i = 0; i < 25; ++i) v.data()[i] = rng.uniform(-1.0, 1.0);
    Eigen::VectorXd lam(5);
    for (int i = 0; i < 5; ++i) lam(i) = rng.uniform(0.3, 2.0);
    Tape t;
    Var vnn = project_eigvecs(t.leaf(Tensor::from_eigen_mat(v), false),
                              t.constant(Tensor::from_eigen_vec(lam)));
    // Straight-line oracle.
    for (int i = 0; i < 5; ++i) {
      double di = 0.0;
      for (int k = 0; k < 5; ++k) di += v(i, k) * v(i, k) * lam(k);
      for (int k = 0; k < 5; ++k)
        CHECK(t.val(vnn).at(i, k) == Catch::Approx(v(i, k) / std::sqrt(di)).margin(1e-13));
    }
  }
}

TEST_CASE("assemble_precision") {
  SECTION("identity blocks give the identity") {
    Tape t;
    Var p = assemble_precision(t.constant(Tensor({4}, 1.0)),
                               t.constant(Tensor::from_eigen_mat(
                                   Eigen::MatrixXd::Identity(4, 4))),
                               t.constant(Tensor({4}, 1.0)));
    CHECK((t.val(p).mat() - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("diagonal case") {
    // V = I: precision_ii = inv_lambda_i * inv_vol_i^2.
    Tape t;
    Eigen::VectorXd invvol(3), invlam(3);
    invvol << 2.0, 0.5, 1.5;
    invlam << 0.7, 1.3, 0.4;
    Var p = assemble_precision(t.constant(Tensor::from_eigen_vec(invvol)),
                               t.constant(Tensor::from_eigen_mat(
                                   Eigen::MatrixXd::Identity(3, 3))),
                               t.constant(Tensor::from_eigen_vec(invlam)));
    for (int i = 0; i < 3; ++i)
      CHECK(t.val(p).at(i, i) ==
            Catch::Approx(invlam(i) * invvol(i) * invvol(i)).margin(1e-14));
  }

  SECTION("random valid blocks invert correctly") {
    Rng rng(17);
    const int n = 6;
    Eigen::MatrixXd base = random_spd(rng, n);
    SpectralDecomp d = spectral_decomp(sample_correlation_eval(
        [&] {
          Eigen::MatrixXd x(60, n);
          for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.normal() * 0.01;
          return x;
        }()).correlation);
    Eigen::VectorXd invlam(n), invvol(n);
    for (int i = 0; i < n; ++i) {
      invlam(i) = rng.uniform(0.3, 3.0);
      invvol(i) = rng.uniform(0.5, 2.0);
    }
    Eigen::VectorXd lam = invlam.cwiseInverse();
    Tape t;
    Var vnn = project_eigvecs(t.leaf(Tensor::from_eigen_mat(d.eigenvectors), false),
                              t.constant(Tensor::from_eigen_vec(lam)));
    Var p = assemble_precision(t.constant(Tensor::from_eigen_vec(invvol)), vnn,
                               t.constant(Tensor::from_eigen_vec(invlam)));
    Eigen::MatrixXd prec = t.val(p).mat();
    Eigen::MatrixXd prod = prec * prec.inverse();
    CHECK((prod - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() < 1e-8);
    // Symmetry of the assembled precision.
    CHECK((prec - prec.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("gmv weights") {
  SECTION("identity precision gives equal weights") {
    Tape t;
    Var w = gmv_weights(t.constant(Tensor::from_eigen_mat(Eigen::MatrixXd::Identity(4, 4))));
    for (int i = 0; i < 4; ++i) CHECK(t.val(w).at(i) == Catch::Approx(0.25).margin(1e-15));
  }

  SECTION("diagonal covariance weights by inverse variance") {
    Tape t;
    Eigen::MatrixXd prec = Eigen::Vector2d(1.0, 0.25).asDiagonal();  // vars (1,4)
    Var w = gmv_weights(t.constant(Tensor::from_eigen_mat(prec)));
    CHECK(t.val(w).at(0) == Catch::Approx(0.8).margin(1e-14));
    CHECK(t.val(w).at(1) == Catch::Approx(0.2).margin(1e-14));
  }

  SECTION("scaling the precision leaves weights unchanged") {
    Rng rng(19);
    Eigen::MatrixXd prec = random_spd(rng, 5).inverse();
    prec = 0.5 * (prec + prec.transpose());
    Tape t;
    Var w1 = gmv_weights(t.constant(Tensor::from_eigen_mat(prec)));
    Var w2 = gmv_weights(t.constant(Tensor::from_eigen_mat(Eigen::MatrixXd(7.3 * prec))));
    CHECK((t.val(w1).vec() - t.val(w2).vec()).cwiseAbs().maxCoeff() < 1e-10);
  }

  SECTION("non-positive normalizer rejected") {
    Tape t;
    Eigen::MatrixXd bad = -Eigen::MatrixXd::Identity(3, 3);
    CHECK_THROWS_AS(gmv_weights(t.constant(Tensor::from_eigen_mat(bad))), std::domain_error);
  }
}

TEST_CASE("gmv loss") {
  SECTION("zero OOS returns give zero loss") {
    Tape t;
    Var w = t.constant(Tensor::from_vector({0.5, 0.5}));
    Var r = t.constant(Tensor({5, 2}, 0.0));
    CHECK(t.val(gmv_loss(w, r)).scalar_value() == 0.0);
  }

  SECTION("single-asset weight on one day") {
    const int n = 7;
    Tape t;
    Tensor wt({n}, 0.0);
    wt.at(0) = 1.0;
    Tensor rt({1, n}, 0.0);
    rt.at(0, 0) = 0.01;
    rt.at(0, 3) = -0.5;  // irrelevant, w picks asset 0
    Var loss = gmv_loss(t.constant(wt), t.constant(rt));
    CHECK(t.val(loss).scalar_value() == Catch::Approx(n * 1e-4).epsilon(1e-12));
  }

  SECTION("never materializing the covariance matches the materialized form") {
    Rng rng(23);
    const int n = 6, dt = 5;
    Eigen::VectorXd w(n);
    for (int i = 0; i < n; ++i) w(i) = rng.uniform(-1.0, 1.0);
    w /= w.sum();
    Eigen::MatrixXd r(dt, n);
    for (int i = 0; i < r.size(); ++i) r.data()[i] = rng.uniform(-0.05, 0.05);

    Tape t;
    const double direct =
        t.val(gmv_loss(t.constant(Tensor::from_eigen_vec(w)),
                       t.constant(Tensor::from_eigen_mat(r))))
            .scalar_value();
    // Materialized oracle: Sigma_out = R'R/dt, loss = n w' Sigma_out w.
    Eigen::MatrixXd sig = r.transpose() * r / dt;
    const double materialized = n * w.dot(sig * w);
    CHECK(direct == Catch::Approx(materialized).margin(1e-12 * std::abs(materialized) + 1e-15));
    CHECK(gmv_loss_eval(w, r) == Catch::Approx(direct).margin(1e-15));
  }
}

TEST_CASE("long-only qp") {
  SECTION("interior optimum matches the closed form") {
    Rng rng(29);
    for (int rep = 0; rep < 10; ++rep) {
      Rng r2 = rng.split(static_cast<std::uint64_t>(rep));
      // Diagonal-dominant covariances keep the unconstrained GMV positive.
      Eigen::MatrixXd sigma = random_spd(r2, 4, 3.0);
      Eigen::VectorXd closed = gmv_weights_eval(sigma.inverse());
      if (closed.minCoeff() < 0.0) continue;
      QpResult q = solve_longonly_gmv(sigma);
      CHECK((q.weights - closed).cwiseAbs().maxCoeff() < 1e-8);
      CHECK(q.kkt.worst() < 1e-8);
    }
  }

  SECTION("two assets, equal variance, high correlation") {
    Eigen::MatrixXd sigma(2, 2);
    sigma << 1.0, 0.99, 0.99, 1.0;
    QpResult q = solve_longonly_gmv(sigma);
    CHECK(q.weights(0) == Catch::Approx(0.5).margin(1e-10));
    CHECK(q.weights(1) == Catch::Approx(0.5).margin(1e-10));
  }

  SECTION("boundary solution when unconstrained weights go short") {
    // Sigma chosen so unconstrained w = (2, -1): long-only pins to (1, 0).
    Eigen::MatrixXd sigma(2, 2);
    sigma << 1.0, 2.0, 2.0, 4.0 + 1e-6;  // near-singular but PD
    Eigen::VectorXd unc = gmv_weights_eval(sigma.inverse());
    CHECK(unc(1) < 0.0);
    QpResult q = solve_longonly_gmv(sigma);
    CHECK(q.weights(0) == Catch::Approx(1.0).margin(1e-9));
    CHECK(q.weights(1) == Catch::Approx(0.0).margin(1e-12));
    CHECK(q.kkt.worst() < 1e-8);
  }

  SECTION("matches brute-force grid search on 2- and 3-asset fixtures") {
    Rng rng(31);
    for (int rep = 0; rep < 12; ++rep) {
      Rng r2 = rng.split(static_cast<std::uint64_t>(100 + rep));
      const int n = 2 + rep % 2;
      Eigen::MatrixXd sigma = random_spd(r2, n, 0.2);
      QpResult q = solve_longonly_gmv(sigma);
      CHECK(q.kkt.worst() < 1e-8);

      // Grid oracle at 1e-3 resolution over the simplex.
      double best = 1e300;
      const int steps = 1000;
      if (n == 2) {
        for (int a = 0; a <= steps; ++a) {
          Eigen::VectorXd w(2);
          w << a / 1000.0, 1.0 - a / 1000.0;
          best = std::min(best, w.dot(sigma * w));
        }
      } else {
        for (int a = 0; a <= steps; ++a)
          for (int b = 0; b <= steps - a; ++b) {
            Eigen::VectorXd w(3);
            w << a / 1000.0, b / 1000.0, 1.0 - (a + b) / 1000.0;
            best = std::min(best, w.dot(sigma * w));
          }
      }
      CHECK(q.variance <= best + 1e-9);
      CHECK(q.variance >= best - 2e-3 * std::abs(best) - 1e-9);
    }
  }

  SECTION("long-only variance dominates unconstrained variance") {
    Rng rng(37);
    for (int rep = 0; rep < 10; ++rep) {
      Rng r2 = rng.split(static_cast<std::uint64_t>(rep));
      Eigen::MatrixXd sigma = random_spd(r2, 6, 0.1);
      const Eigen::VectorXd unc = gmv_weights_eval(sigma.inverse());
      QpResult q = solve_longonly_gmv(sigma);
      CHECK(q.variance >= unc.dot(sigma * unc) - 1e-12);
      CHECK(q.weights.minCoeff() >= -1e-12);
      CHECK(q.weights.sum() == Catch::Approx(1.0).margin(1e-10));
    }
  }
}

TEST_CASE("eigen weight decomposition") {
  SECTION("identity covariance reconstructs equal weights") {
    auto d = eigen_weight_decomposition(Eigen::MatrixXd::Identity(5, 5));
    for (int i = 0; i < 5; ++i)
      CHECK(d.reconstructed_weights(i) == Catch::Approx(0.2).margin(1e-14));
  }

  SECTION("mode orthogonal to the budget line contributes nothing") {
    // 2x2 with eigenvectors (1,1)/sqrt2 and (1,-1)/sqrt2: the latter has c=0.
    Eigen::MatrixXd sigma(2, 2);
    sigma << 1.0, 0.3, 0.3, 1.0;
    auto d = eigen_weight_decomposition(sigma);
    bool found_orthogonal = false;
    for (const auto& m : d.modes) {
      if (m.alignment < 1e-12) {
        found_orthogonal = true;
        CHECK(std::abs(m.ratio) < 1e-12);
      }
    }
    CHECK(found_orthogonal);
    CHECK(d.reconstructed_weights(0) == Catch::Approx(0.5).margin(1e-12));
  }

  SECTION("random SPD reconstruction matches the closed form") {
    Rng rng(41);
    Eigen::MatrixXd sigma = random_spd(rng, 6, 0.4);
    auto d = eigen_weight_decomposition(sigma);
    Eigen::VectorXd closed = gmv_weights_eval(sigma.inverse());
    CHECK((d.reconstructed_weights - closed).cwiseAbs().maxCoeff() < 1e-10);
    for (const auto& m : d.modes) CHECK(m.alignment >= 0.0);
  }

  SECTION("correlation-basis variant agrees with the covariance route") {
    Rng rng(43);
    const int n = 5;
    Eigen::MatrixXd x(80, n);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.normal() * 0.02;
    auto cr = sample_correlation_eval(x);
    Eigen::MatrixXd sigma = cr.sigma.asDiagonal() * cr.correlation * cr.sigma.asDiagonal();
    auto dc = eigen_weight_decomposition(cr.correlation, cr.sigma);
    Eigen::VectorXd closed = gmv_weights_eval(Eigen::MatrixXd(sigma.inverse()));
    CHECK((dc.reconstructed_weights - closed).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("variance inflation") {
  SECTION("closed-form values") {
    CHECK(predicted_inflation(20, 40) == Catch::Approx(2.0));          // q = 0.5
    CHECK(predicted_inflation(20, 80) == Catch::Approx(4.0 / 3.0));    // q = 0.25
    CHECK(predicted_inflation(10, 10000) == Catch::Approx(1.001).epsilon(1e-5));
  }

  SECTION("monte carlo matches the law at q = 0.25") {
    Rng rng(47);
    auto r = variance_inflation_mc(20, 80, 2000, rng);
    CHECK(r.predicted == Catch::Approx(4.0 / 3.0));
    CHECK(std::abs(r.mc_ratio / r.predicted - 1.0) < 0.05);
  }

  SECTION("vanishing inflation in the q -> 0 limit") {
    Rng rng(53);
    auto r = variance_inflation_mc(10, 10000, 60, rng);
    CHECK(std::abs(r.mc_ratio - 1.001) < 0.02);
  }
}

TEST_CASE("gradients flow through the assembly chain") {
  Rng rng(59);
  const int n = 5, dt = 30;
  Tensor win({dt, n});
  for (Tensor::Index i = 0; i < win.size(); ++i) win.at(i) = rng.uniform(-0.03, 0.03);
  Tensor invlam({n});
  for (int i = 0; i < n; ++i) invlam.at(i) = rng.uniform(0.4, 2.0);
  Tensor invvol({n});
  for (int i = 0; i < n; ++i) invvol.at(i) = rng.uniform(0.6, 1.5);
  Tensor rout({5, n});
  for (Tensor::Index i = 0; i < rout.size(); ++i) rout.at(i) = rng.uniform(-0.04, 0.04);

  auto f = [&](Tape& tp, const std::vector<Var>& vs) {
    auto cg = sample_correlation(vs[0]);
    auto eg = ad::eigh_sym(cg.correlation);
    Var lam_clean_inv = vs[1];
    Var lam_clean = ad::reciprocal(lam_clean_inv);
    Var vnn = project_eigvecs(eg.eigenvectors, lam_clean);
    Var prec = assemble_precision(vs[2], vnn, lam_clean_inv);
    Var w = gmv_weights(prec);
    return gmv_loss(w, tp.constant(rout));
  };
  auto rep = ad::grad_check(
      f, {{"window", &win}, {"inv_lambda", &invlam}, {"inv_vol", &invvol}}, 1e-6, 3);
  CHECK(rep.max_rel_err < 1e-5);
}
