#include <catch_amalgamated.hpp>

#include "gvb/spd.hpp"

#include "support.hpp"

using gvb::Mat;
using gvb::Vec;
using Catch::Approx;

TEST_CASE("symmetrize") {
  Mat m(2, 2);
  m << 1, 2, 0, 1;
  Mat s = gvb::symmetrize(m);
  CHECK(s(0, 1) == Approx(1.0));
  CHECK(s(1, 0) == Approx(1.0));
  CHECK(s(0, 0) == Approx(1.0));

  gvb::RngStream rng(11);
  Mat sym = testsupport::random_symmetric(4, rng);
  CHECK((gvb::symmetrize(sym) - sym).cwiseAbs().maxCoeff() == 0.0);

  CHECK(gvb::symmetrize(Mat::Zero(3, 3)).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(gvb::symmetrize(Mat::Zero(2, 3)), gvb::DimensionError);
}

TEST_CASE("cholesky basics") {
  CHECK((gvb::cholesky(Mat::Identity(3, 3)) - Mat::Identity(3, 3))
            .cwiseAbs()
            .maxCoeff() == Approx(0.0).margin(1e-15));

  Mat a(2, 2);
  a << 4, 2, 2, 5;
  Mat l = gvb::cholesky(a);
  CHECK(l(0, 0) == Approx(2.0));
  CHECK(l(1, 0) == Approx(1.0));
  CHECK(l(1, 1) == Approx(2.0));
  CHECK(l(0, 1) == 0.0);
  CHECK(((l * l.transpose()) - a).norm() / a.norm() < 1e-10);

  Mat bad(2, 2);
  bad << 1, 2, 2, 1;  // eigenvalues 3, -1
  CHECK_THROWS_AS(gvb::cholesky(bad), gvb::NotPositiveDefiniteError);
  try {
    gvb::cholesky(bad);
  } catch (const gvb::NotPositiveDefiniteError& e) {
    CHECK(e.pivot == 1);
  }
}

TEST_CASE("tri_inverse") {
  CHECK((gvb::tri_inverse(Mat::Identity(3, 3)) - Mat::Identity(3, 3))
            .cwiseAbs()
            .maxCoeff() == 0.0);

  Mat l(2, 2);
  l << 2, 0, 1, 2;
  Mat inv = gvb::tri_inverse(l);
  CHECK(inv(0, 0) == Approx(0.5));
  CHECK(inv(1, 0) == Approx(-0.25));
  CHECK(inv(1, 1) == Approx(0.5));
  CHECK(((l * inv) - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-10);

  Mat d = Mat::Zero(2, 2);
  d(0, 0) = 3.0;
  d(1, 1) = 8.0;
  Mat dinv = gvb::tri_inverse(d);
  CHECK(dinv(0, 0) == Approx(1.0 / 3.0));
  CHECK(dinv(1, 1) == Approx(0.125));

  Mat sing = Mat::Zero(2, 2);
  sing(0, 0) = 1.0;
  CHECK_THROWS_AS(gvb::tri_inverse(sing), gvb::SingularTriangularError);
}

TEST_CASE("spd_inverse") {
  auto id = gvb::spd_inverse(Mat::Identity(3, 3));
  CHECK((id.inverse - Mat::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-14);

  Mat d = Mat::Zero(2, 2);
  d(0, 0) = 2.0;
  d(1, 1) = 4.0;
  auto dres = gvb::spd_inverse(d);
  CHECK(dres.inverse(0, 0) == Approx(0.5));
  CHECK(dres.inverse(1, 1) == Approx(0.25));

  Mat a(2, 2);
  a << 4, 2, 2, 5;
  auto res = gvb::spd_inverse(a);
  CHECK(res.inverse(0, 0) == Approx(0.3125));
  CHECK(res.inverse(0, 1) == Approx(-0.125));
  CHECK(res.inverse(1, 1) == Approx(0.25));
  CHECK(((a * res.inverse) - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("spd_inverse round trip on random SPD up to d=50") {
  gvb::RngStream rng(17);
  for (int d : {2, 5, 17, 50}) {
    Mat a = testsupport::random_spd(d, rng);
    auto res = gvb::spd_inverse(a);
    CHECK(((a * res.inverse) - Mat::Identity(d, d)).cwiseAbs().maxCoeff() < 1e-9);
    Mat linv = gvb::tri_inverse(res.chol_lower);
    Mat rebuilt = linv.transpose() * linv;
    CHECK((rebuilt - res.inverse).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("spd_sqrt_product") {
  gvb::RngStream rng(23);
  Mat a = testsupport::random_spd(4, rng);
  auto ainv = gvb::spd_inverse(a).inverse;

  SECTION("B = A^{-1} gives the identity") {
    Mat e = gvb::spd_sqrt_product(ainv, a);
    CHECK((e - Mat::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-8);
  }

  SECTION("scalars") {
    Mat b = Mat::Constant(1, 1, 4.0);
    Mat one = Mat::Constant(1, 1, 1.0);
    CHECK(gvb::spd_sqrt_product(b, one)(0, 0) == Approx(2.0));
  }

  SECTION("B = I gives A^{1/2}") {
    Mat e = gvb::spd_sqrt_product(Mat::Identity(4, 4), a);
    Mat ah = gvb::spd_sqrt(a);
    CHECK((e - ah).cwiseAbs().maxCoeff() < 1e-8);
  }

  SECTION("E * E = B * A within 1e-8 relative") {
    Mat b = testsupport::random_spd(4, rng);
    Mat e = gvb::spd_sqrt_product(b, a);
    Mat prod = b * a;
    CHECK((e * e - prod).norm() / prod.norm() < 1e-8);
  }

  SECTION("non-positive eigenvalue raises ComplexRoot") {
    Mat neg = -Mat::Identity(2, 2);
    CHECK_THROWS_AS(gvb::spd_sqrt_product(neg, Mat::Identity(2, 2)),
                    gvb::ComplexRootError);
  }
}

TEST_CASE("retract examples") {
  SECTION("zero tangent is a fixed point") {
    gvb::RngStream rng(5);
    Mat p = testsupport::random_spd(3, rng);
    Mat cov = gvb::spd_inverse(p).inverse;
    Mat r = gvb::retract(p, cov, Mat::Zero(3, 3));
    CHECK((r - p).cwiseAbs().maxCoeff() < 1e-14);
  }

  SECTION("scalar case: 2 + 0.4 + 0.5*0.4*0.5*0.4 = 2.44") {
    Mat p = Mat::Constant(1, 1, 2.0);
    Mat cov = Mat::Constant(1, 1, 0.5);
    Mat xi = Mat::Constant(1, 1, 0.4);
    CHECK(gvb::retract(p, cov, xi)(0, 0) == Approx(2.44));
  }

  SECTION("isotropic case follows the scalar formula per diagonal entry") {
    Mat p = Mat::Identity(3, 3);
    Mat xi = -0.5 * Mat::Identity(3, 3);
    Mat r = gvb::retract(p, p, xi);
    CHECK((r - 0.625 * Mat::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-14);
  }

  SECTION("check flag rejects a wrong inverse") {
    Mat p = 2.0 * Mat::Identity(2, 2);
    CHECK_THROWS_AS(gvb::retract(p, p, Mat::Zero(2, 2), true),
                    std::invalid_argument);
    Mat cov = 0.5 * Mat::Identity(2, 2);
    CHECK_NOTHROW(gvb::retract(p, cov, Mat::Zero(2, 2), true));
  }
}

TEST_CASE("retract stays SPD over random trials") {
  gvb::RngStream rng(29);
  int failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    int d = 1 + static_cast<int>(rng.uniform() * 20);
    Mat p = testsupport::random_spd(d, rng);
    Mat cov = gvb::spd_inverse(p).inverse;
    Mat xi = testsupport::random_symmetric(d, rng);
    double cap = 0.1 * p.norm();
    if (xi.norm() > cap) xi *= cap / xi.norm();
    try {
      Mat r = gvb::retract(p, cov, xi);
      gvb::cholesky(r);
    } catch (const std::exception&) {
      ++failures;
    }
  }
  CHECK(failures == 0);
}

TEST_CASE("retract first-order consistency: deviation shrinks as t^2") {
  gvb::RngStream rng(31);
  Mat p = testsupport::random_spd(4, rng);
  Mat cov = gvb::spd_inverse(p).inverse;
  Mat xi = testsupport::random_symmetric(4, rng);
  xi *= 0.5 * p.norm() / xi.norm();

  auto deviation = [&](double t) {
    Mat r = gvb::retract(p, cov, Mat(t * xi));
    return (r - (p + t * xi)).norm();
  };
  double t = 0.1;
  double ratio = deviation(t) / deviation(t / 2);
  CHECK(ratio == Approx(4.0).epsilon(0.2));
}

TEST_CASE("retract scaling equivalence under doubled precision") {
  gvb::RngStream rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    Mat p = testsupport::random_spd(3, rng);
    Mat cov = gvb::spd_inverse(p).inverse;
    Mat xi = testsupport::random_symmetric(3, rng);
    double beta = 0.2;
    Mat lhs = gvb::retract(Mat(2.0 * p), Mat(0.5 * cov), Mat(2.0 * beta * xi));
    Mat rhs = 2.0 * gvb::retract(p, cov, Mat(beta * xi));
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("transport") {
  gvb::RngStream rng(41);
  Mat p = testsupport::random_spd(3, rng);
  Mat cov = gvb::spd_inverse(p).inverse;
  Mat xi = testsupport::random_symmetric(3, rng);

  SECTION("same endpoints leave the tangent unchanged") {
    Mat out = gvb::transport(p, cov, p, xi);
    CHECK((out - xi).cwiseAbs().maxCoeff() < 1e-8);
  }

  SECTION("scalar case multiplies by prec_new/prec_old") {
    Mat pold = Mat::Constant(1, 1, 1.0);
    Mat covold = Mat::Constant(1, 1, 1.0);
    Mat pnew = Mat::Constant(1, 1, 4.0);
    Mat x = Mat::Constant(1, 1, 0.3);
    CHECK(gvb::transport(pold, covold, pnew, x)(0, 0) == Approx(1.2));
  }

  SECTION("zero transports to zero") {
    Mat pnew = testsupport::random_spd(3, rng);
    Mat out = gvb::transport(p, cov, pnew, Mat::Zero(3, 3));
    CHECK(out.cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("output stays symmetric") {
    Mat pnew = testsupport::random_spd(3, rng);
    Mat out = gvb::transport(p, cov, pnew, xi);
    CHECK((out - out.transpose()).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("sample_gaussian") {
  SECTION("identity factor recovers mu + eps") {
    Vec mu(2);
    mu << 3.0, -1.0;
    gvb::RngStream rec(99);
    Vec eps(2);
    eps << rec.normal(), rec.normal();
    gvb::RngStream rng(99);
    Mat draws = gvb::sample_gaussian(mu, Mat::Identity(2, 2), 1, rng);
    CHECK(draws(0, 0) == Approx(mu(0) + eps(0)));
    CHECK(draws(0, 1) == Approx(mu(1) + eps(1)));
  }

  SECTION("moments of many draws match mu and prec^{-1}") {
    const int n = 1000000;
    Vec mu(1);
    mu << 0.7;
    Mat lprec = Mat::Constant(1, 1, 2.0);  // prec = 4, variance 0.25
    gvb::RngStream rng(123);
    Mat draws = gvb::sample_gaussian(mu, lprec, n, rng);
    double mean = draws.col(0).mean();
    double sd_bound = 4.0 * 0.5 / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(mean - 0.7) < sd_bound);
    double var = (draws.col(0).array() - mean).square().sum() / (n - 1);
    CHECK(var == Approx(0.25).epsilon(0.05));
  }

  SECTION("count below one is rejected") {
    gvb::RngStream rng(1);
    CHECK_THROWS_AS(gvb::sample_gaussian(Vec::Zero(1), Mat::Identity(1, 1), 0, rng),
                    gvb::DimensionError);
  }
}
