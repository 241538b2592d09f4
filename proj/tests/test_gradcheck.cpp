#include <cmath>
#include <numbers>

#include "dear/errors.hpp"
#include "dear/gradcheck.hpp"
#include "doctest.h"

using namespace dear;
using namespace dear::gradcheck;

namespace {

GaussianJoint gauss1(double mean, double var) {
  return {Eigen::VectorXd::Constant(1, mean), Eigen::MatrixXd::Constant(1, 1, var)};
}

}  // namespace

TEST_CASE("joint moments") {
  LinGaussSpec s;
  s.w_e.setZero();
  s.sigma_e = 1e3;
  const auto q = joint_q(s);
  CHECK(q.cov.bottomRightCorner(2, 2).isApprox(1e6 * Eigen::Matrix2d::Identity()));
  CHECK(q.cov.topRightCorner(2, 2).isZero(0.0));

  LinGaussSpec p0;
  p0.a = 0.0;
  CHECK(joint_p(p0).cov.bottomRightCorner(2, 2).isApprox(Eigen::Matrix2d::Identity()));
  CHECK(joint_p(p0).mean.tail(2).isZero(0.0));

  LinGaussSpec p5;
  p5.a = 0.5;
  Eigen::Matrix2d expect;
  expect << 1.0, 0.5, 0.5, 1.25;
  CHECK(joint_p(p5).cov.bottomRightCorner(2, 2).isApprox(expect, 1e-15));

  LinGaussSpec bad;
  bad.sigma_g = 0.0;
  CHECK_THROWS_AS(joint_p(bad), DomainError);
  bad = LinGaussSpec{};
  bad.sigma_x << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(joint_q(bad), DomainError);
}

TEST_CASE("kl_gauss") {
  const auto s = LinGaussSpec::reference();
  CHECK(kl_gauss(joint_q(s), joint_q(s)) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(kl_gauss(gauss1(0, 1), gauss1(1, 1)) == doctest::Approx(0.5));
  CHECK(kl_gauss(gauss1(0, 4), gauss1(0, 1)) == doctest::Approx((4.0 - 1.0 - std::log(4.0)) / 2.0));
  CHECK(kl_gauss(gauss1(0, 4), gauss1(0, 1)) == doctest::Approx(0.8069).epsilon(1e-4));
  CHECK(kl_of(s) > 0.0);
  CHECK_THROWS_AS(kl_gauss(gauss1(0, 1), gauss1(0, 0)), DomainError);
  CHECK_THROWS_AS(kl_gauss(gauss1(0, 1), joint_q(s)), ShapeError);
}

TEST_CASE("optimal_disc") {
  const auto s = LinGaussSpec::reference();
  const auto q = joint_q(s);
  const QuadraticDisc same(q, q);
  const Eigen::Vector4d v(0.3, -1.0, 2.0, 0.5);
  CHECK(same.value(v) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(same.gradient(v).cwiseAbs().maxCoeff() < 1e-12);

  GaussianJoint shifted = q;
  shifted.mean += Eigen::Vector4d(0.1, -0.2, 0.3, 0.05);
  const QuadraticDisc d(q, shifted);
  const Eigen::Vector4d expect = q.cov.ldlt().solve(q.mean - shifted.mean);
  for (const Eigen::Vector4d& at : {Eigen::Vector4d::Zero().eval(), v, Eigen::Vector4d(4, -3, 2, 1)})
    CHECK((d.gradient(at) - expect).cwiseAbs().maxCoeff() < 1e-12);

  // gradient against differences of the value
  const auto disc = optimal_disc(s);
  for (int i = 0; i < 4; ++i) {
    const double fd = fd_grad(
        [&](double t) {
          Eigen::Vector4d w = v;
          w[i] = t;
          return disc.value(w);
        },
        v[i]);
    CHECK(disc.gradient(v)[i] == doctest::Approx(fd).epsilon(1e-7));
  }

  // density-ratio normalization E_q[exp(-D*)] = 1
  Rng rng(3, 0);
  const Eigen::Matrix2d lx = s.sigma_x.llt().matrixL();
  double acc = 0.0;
  const int n = 1000000;
  for (int k = 0; k < n; ++k) {
    const Eigen::Vector2d x = s.mu_x + lx * Eigen::Vector2d(rng.normal(), rng.normal());
    const Eigen::Vector2d z = s.w_e * x + s.b_e + s.sigma_e * Eigen::Vector2d(rng.normal(), rng.normal());
    Eigen::Vector4d w;
    w << x, z;
    acc += std::exp(-disc.value(w));
  }
  CHECK(std::abs(acc / n - 1.0) < 0.01);
}

TEST_CASE("exp(D*) has a finite fourth moment under p at the reference spec") {
  // E_p[(q/p)^4] is finite iff 4 P_q - 3 P_p is positive definite (P = precision)
  const auto s = LinGaussSpec::reference();
  const Eigen::MatrixXd pq = joint_q(s).cov.inverse(), pp = joint_p(s).cov.inverse();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(4.0 * pq - 3.0 * pp);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("fd_grad") {
  CHECK(fd_grad([](double p) { return p * p; }, 3.0) == doctest::Approx(6.0).epsilon(1e-8));
  CHECK(fd_grad([](double) { return 4.2; }, 1.0) == 0.0);
  CHECK(std::abs(fd_grad([](double p) { return std::sin(p); }, 0.0) - 1.0) < 1e-9);
  CHECK_THROWS_AS(fd_grad([](double p) { return p > 0 ? std::numeric_limits<double>::infinity() : 0.0; }, 0.0),
                  NonFiniteError);
}

TEST_CASE("pack and unpack") {
  const auto s = LinGaussSpec::reference();
  const auto p = pack(s);
  CHECK(p.size() == kParamCount);
  CHECK(pack(unpack(s, p)) == p);
  CHECK(parameter_names().size() == static_cast<std::size_t>(kParamCount));
  CHECK(p[12] == s.a);
  CHECK(p[1] == s.w_g(0, 1));
}

TEST_CASE("mc_lemma1") {
  LinGaussSpec s;  // q = p: x ~ N(0, 2I) from both sides
  s.sigma_x = 2.0 * Eigen::Matrix2d::Identity();
  s.w_e = 0.5 * Eigen::Matrix2d::Identity();
  s.sigma_e = std::sqrt(0.5);
  s.w_g = Eigen::Matrix2d::Identity();
  s.sigma_g = 1.0;
  REQUIRE(kl_of(s) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  const Eigen::VectorXd zero = mc_lemma1(s, 10000, 1);
  CHECK(zero.cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(mc_lemma1(s, 9999, 1), ArityError);

  const auto ref = LinGaussSpec::reference();
  const Eigen::VectorXd fd = fd_kl_grad(ref);
  const Eigen::VectorXd mc = mc_lemma1(ref, 1000000, 0);
  CHECK(within_tolerance(mc[12], fd[12]));

  // variance halves when n doubles
  auto variance = [&](long n) {
    const int reps = 300;
    Eigen::VectorXd est(reps);
    for (int r = 0; r < reps; ++r) est[r] = mc_lemma1(ref, n, 1000 + r + n)[12];
    return (est.array() - est.mean()).square().sum() / (reps - 1);
  };
  const double v1 = variance(10000), v2 = variance(20000);
  CHECK(std::abs(v1 / v2 - 2.0) <= 0.6);
}

TEST_CASE("model conversion roundtrip") {
  const auto s = LinGaussSpec::reference();
  const LinGaussModel model = to_model(s);
  CHECK(from_model(s, model).w_e == s.w_e);
  CHECK(from_model(s, model).a == s.a);
  CHECK(pack(from_model(s, model)) == pack(s));
}

TEST_CASE("gradcheck table") {
  const auto rows = gradcheck_table(LinGaussSpec::reference(), 20000, {0});
  REQUIRE(rows.size() == 13);
  std::ostringstream out;
  write_csv(out, rows);
  CHECK(out.str().rfind("parameter,mc_estimate,fd_reference,abs_error,rel_error,pass\n", 0) == 0);
  CHECK_THROWS_AS(gradcheck_table(LinGaussSpec::reference(), 20000, {}), ArityError);
}
