#include <random>

#include "dear/errors.hpp"
#include "dear/scm_prior.hpp"
#include "doctest.h"

using namespace dear;

namespace {

ScmPrior chain_prior(double a) {
  GraphMask m(2);
  m.set_edge(0, 1);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, 2);
  w(0, 1) = a;
  return ScmPrior(2, apply_mask(w, m), ElementwiseTransform::identity(2));
}

// Random k=8, m=4 prior over a random DAG with a linear or piecewise f.
ScmPrior random_prior(std::mt19937& gen, bool piecewise) {
  const int k = 8, m = 4;
  std::uniform_real_distribution<double> u(-1.5, 1.5), slope(0.2, 2.0);
  std::bernoulli_distribution coin(0.5);
  std::vector<int> perm{0, 1, 2, 3};
  std::shuffle(perm.begin(), perm.end(), gen);
  GraphMask mask(m);
  for (int a = 0; a < m; ++a)
    for (int b = a + 1; b < m; ++b)
      if (coin(gen)) mask.set_edge(perm[a], perm[b]);
  Eigen::MatrixXd w(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) w(i, j) = u(gen);

  if (!piecewise) {
    Eigen::VectorXd s(m), b(m);
    for (int i = 0; i < m; ++i) {
      s[i] = coin(gen) ? slope(gen) : -slope(gen);
      b[i] = u(gen);
    }
    return ScmPrior(k, apply_mask(w, mask), ElementwiseTransform(LinearTransform{s, b}));
  }
  auto f = ElementwiseTransform::piecewise_identity(m, 6);
  Eigen::VectorXd p = f.parameters();
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = slope(gen) * (i % 7 == 0 ? 1.0 : 0.3);
  f.set_parameters(p);
  f.project();
  return ScmPrior(k, apply_mask(w, mask), f);
}

Eigen::VectorXd normal_vector(int n, std::mt19937& gen) {
  std::normal_distribution<double> d;
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = d(gen);
  return v;
}

}  // namespace

TEST_CASE("sample") {
  const Eigen::Vector3d eps(0.3, -1.0, 2.0);
  const ScmPrior empty(3, apply_mask(Eigen::MatrixXd::Zero(3, 3), GraphMask(3)), ElementwiseTransform::identity(3));
  CHECK(empty.sample(eps) == eps);

  const auto p = chain_prior(0.5);
  const Eigen::Vector2d e(0.8, -0.2);
  const Eigen::VectorXd z = p.sample(e);
  CHECK(z[0] == 0.8);
  CHECK(z[1] == doctest::Approx(0.5 * 0.8 - 0.2).epsilon(1e-15));
  CHECK_THROWS_AS(p.sample(Eigen::VectorXd::Zero(3)), ShapeError);
}

TEST_CASE("invert") {
  const Eigen::Vector3d z(0.3, -1.0, 2.0);
  const ScmPrior empty(3, apply_mask(Eigen::MatrixXd::Zero(3, 3), GraphMask(3)), ElementwiseTransform::identity(3));
  CHECK(empty.invert(z) == z);

  const auto p = chain_prior(0.5);
  const Eigen::VectorXd eps = p.invert(Eigen::Vector2d(0.8, 0.5 * 0.8 - 0.2));
  CHECK(eps[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(eps[1] == doctest::Approx(-0.2).epsilon(1e-14));
}

TEST_CASE("roundtrip and residual over random priors") {
  std::mt19937 gen(21);
  double roundtrip = 0.0, residual = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto p = random_prior(gen, trial % 2 == 1);
    const Eigen::VectorXd z = normal_vector(8, gen) * 2.0;
    const Eigen::VectorXd back = p.sample(p.invert(z));
    roundtrip = std::max(roundtrip, (back - z).cwiseAbs().maxCoeff());
    CHECK(back.tail(4) == z.tail(4));

    const Eigen::VectorXd eps = normal_vector(8, gen);
    residual = std::max(residual, p.structural_residual(p.sample(eps), eps).cwiseAbs().maxCoeff());
  }
  CHECK(roundtrip < 1e-9);
  CHECK(residual < 1e-9);
}

TEST_CASE("batch sampling matches per-sample sampling") {
  std::mt19937 gen(4);
  const auto p = random_prior(gen, true);
  Eigen::MatrixXd eps(8, 5);
  for (int c = 0; c < 5; ++c) eps.col(c) = normal_vector(8, gen);
  const Eigen::MatrixXd z = p.sample_batch(eps);
  for (int c = 0; c < 5; ++c) CHECK((z.col(c) - p.sample(eps.col(c))).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("intervene") {
  const Eigen::Vector3d z(0.3, -1.0, 2.0);
  const ScmPrior empty(3, apply_mask(Eigen::MatrixXd::Zero(3, 3), GraphMask(3)), ElementwiseTransform::identity(3));
  const Eigen::VectorXd zi = empty.intervene(z, {{0, 4.0}});
  CHECK(zi == Eigen::Vector3d(4.0, -1.0, 2.0));

  const double a = 0.7, c = 1.3;
  const auto p = chain_prior(a);
  const Eigen::Vector2d z2(0.4, -0.9);
  const Eigen::VectorXd d1 = p.intervene(z2, {{0, c}});
  CHECK(d1[0] == c);
  CHECK(d1[1] == doctest::Approx(a * c + (z2[1] - a * z2[0])).epsilon(1e-14));
  const Eigen::VectorXd d2 = p.intervene(z2, {{1, c}});
  CHECK(d2[0] == z2[0]);
  CHECK(d2[1] == c);

  CHECK_THROWS_AS(p.intervene(z2, {{2, 0.0}}), OutOfRangeError);
}

TEST_CASE("intervention locality over random DAGs") {
  std::mt19937 gen(9);
  for (int trial = 0; trial < 300; ++trial) {
    const auto p = random_prior(gen, trial % 2 == 0);
    const Eigen::VectorXd z = p.sample(normal_vector(8, gen));
    const int dim = trial % 4;
    const Eigen::VectorXd out = p.intervene(z, {{dim, 0.25}});
    const auto desc = descendants(p.mask(), dim);
    for (int j = 0; j < 8; ++j) {
      const bool affected = j == dim || std::find(desc.begin(), desc.end(), j) != desc.end();
      if (!affected) CHECK(out[j] == z[j]);
    }
    CHECK(out[dim] == 0.25);
    // the intervened state still satisfies the structural equations below dim
    CHECK(out.tail(4) == z.tail(4));
  }
}

TEST_CASE("traverse") {
  const Eigen::Vector2d z(0.0, 0.0);
  const std::vector<double> grid{-1.0, 0.0, 1.0};
  const auto rows = traverse(z, 0, grid);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == Eigen::Vector2d(-1.0, 0.0));
  CHECK(rows[1] == z);
  CHECK(rows[2] == Eigen::Vector2d(1.0, 0.0));
  CHECK(traverse(z, 1, std::vector<double>{}).empty());

  std::mt19937 gen(2);
  const Eigen::VectorXd v = normal_vector(6, gen);
  const std::vector<double> g2{v[3], -5.0, 5.0};
  const auto t = traverse(v, 3, g2);
  CHECK(t[0] == v);
  for (std::size_t i = 1; i < t.size(); ++i) CHECK((t[i].array() != v.array()).count() == 1);
}

TEST_CASE("traverse equals intervene when A = 0") {
  std::mt19937 gen(6);
  auto f = ElementwiseTransform::piecewise_identity(4, 5);
  const ScmPrior p(8, apply_mask(Eigen::MatrixXd::Zero(4, 4), GraphMask(4)), f);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd z = p.sample(normal_vector(8, gen));
    const std::vector<double> grid{-1.0, 0.5, 2.0};
    const int dim = trial % 4;
    const auto tr = traverse(z, dim, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) CHECK(p.intervene(z, {{dim, grid[i]}}) == tr[i]);
  }
}

TEST_CASE("backward matches finite differences") {
  std::mt19937 gen(12);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = random_prior(gen, trial % 2 == 0);
    const Eigen::VectorXd eps = normal_vector(8, gen);
    const Eigen::VectorXd w = normal_vector(8, gen);  // L = w . z
    Eigen::MatrixXd u;
    p.sample_batch(eps, &u);
    const PriorGrads g = p.backward(u, w);

    const Eigen::MatrixXd a0 = p.adjacency().weights;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        if (!p.mask().edge(i, j)) {
          CHECK(g.adjacency(i, j) == 0.0);
          continue;
        }
        auto probe = p;
        Eigen::MatrixXd a = a0;
        a(i, j) += 1e-6;
        probe.set_weights(a);
        const double hi = w.dot(probe.sample(eps));
        a(i, j) -= 2e-6;
        probe.set_weights(a);
        const double lo = w.dot(probe.sample(eps));
        CHECK(g.adjacency(i, j) == doctest::Approx((hi - lo) / 2e-6).epsilon(1e-6).scale(1.0));
      }
    }
    const Eigen::VectorXd f0 = p.transform().parameters();
    for (Eigen::Index t = 0; t < f0.size(); ++t) {
      auto fp = p.transform();
      Eigen::VectorXd q = f0;
      q[t] += 1e-6;
      fp.set_parameters(q);
      const double hi = w.dot(ScmPrior(8, p.adjacency(), fp).sample(eps));
      q[t] -= 2e-6;
      fp.set_parameters(q);
      const double lo = w.dot(ScmPrior(8, p.adjacency(), fp).sample(eps));
      CHECK(g.transform[t] == doctest::Approx((hi - lo) / 2e-6).epsilon(1e-6).scale(1.0));
    }
  }
}

TEST_CASE("weights stay masked after updates") {
  auto p = chain_prior(0.2);
  p.set_weights(Eigen::MatrixXd::Constant(2, 2, 3.0));
  CHECK(p.adjacency().weights(0, 1) == 3.0);
  CHECK(p.adjacency().weights(1, 0) == 0.0);
  CHECK(p.adjacency().weights(0, 0) == 0.0);
}
