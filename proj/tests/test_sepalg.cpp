#include "doctest.h"

#include "support.hpp"

#include <random>

using namespace hdgpgd;
using hdgpgd::testing::fd_jacobian;
using hdgpgd::testing::random_mapping;

namespace {

template <int Dim>
void check_identities(std::uint64_t seed, int n_terms, int n_params, int samples) {
  using M = Eigen::Matrix<double, Dim, Dim>;
  std::mt19937_64 rng(seed);
  const auto f = random_mapping<Dim>(rng, n_terms, n_params);
  const auto J = sep_jacobian(f);
  const auto D = sep_det(J);
  const auto A = sep_adj(J);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int s = 0; s < samples; ++s) {
    Point<Dim> x;
    for (int a = 0; a < Dim; ++a) x[a] = U(rng);
    Eigen::VectorXd mu(n_params);
    for (int j = 0; j < n_params; ++j) mu[j] = U(rng);
    const M Jx = sep_eval(J, x, mu);
    const M Jfd = fd_jacobian(f, x, mu);
    CHECK((Jx - Jfd).cwiseAbs().maxCoeff() <= 1e-6 * std::max(1.0, Jx.cwiseAbs().maxCoeff()));
    const double det = Jx.determinant();
    const double scale = std::max(1.0, std::pow(Jx.cwiseAbs().maxCoeff(), Dim));
    CHECK(std::abs(sep_eval(D, x, mu) - det) <= 1e-12 * scale);
    const M adj = sep_eval(A, x, mu);
    M direct;
    if constexpr (Dim == 2) {
      direct << Jx(1, 1), -Jx(0, 1), -Jx(1, 0), Jx(0, 0);
    } else {
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          const int r0 = (j + 1) % 3, r1 = (j + 2) % 3, c0 = (i + 1) % 3, c1 = (i + 2) % 3;
          direct(i, j) = Jx(r0, c0) * Jx(r1, c1) - Jx(r0, c1) * Jx(r1, c0);
        }
    }
    const double ascale = std::max(1.0, std::pow(Jx.cwiseAbs().maxCoeff(), Dim - 1));
    CHECK((adj - direct).cwiseAbs().maxCoeff() <= 1e-12 * ascale);
    CHECK((adj * Jx - det * M::Identity()).cwiseAbs().maxCoeff() <= 1e-12 * scale);
  }
}

}  // namespace

TEST_CASE("separated det, adj and Jacobian match pointwise values in 2D") {
  check_identities<2>(7, 3, 2, 100);
  check_identities<2>(11, 1, 1, 100);
}

TEST_CASE("separated det, adj and Jacobian match pointwise values in 3D") {
  check_identities<3>(13, 2, 2, 50);
}

TEST_CASE("det of a single-term mapping has a single term") {
  std::mt19937_64 rng(3);
  const auto f = random_mapping<2>(rng, 1, 1);
  CHECK(sep_det(sep_jacobian(f)).rank() == 1);
  CHECK(sep_adj(sep_jacobian(f)).rank() == 1);
}

TEST_CASE("pruning merges terms with identical parametric factors") {
  const ParamFactor phi = param_function("phi", [](double m) { return 1.0 + m; });
  const SpatialFactor<double> a([](const SpatialPoint<2>& p) { return p.x.x(); });
  const SpatialFactor<double> b([](const SpatialPoint<2>& p) { return 2.0 * p.x.y(); });
  const ScalarField f = sep_build<double, 2>({{a, {phi}}, {b, {phi}}, {a, {ParamFactor()}}}, 1, {{"mu1"}, {0.0}, {1.0}});
  const ScalarField g = sep_prune(f);
  CHECK(g.rank() == 2);
  const Eigen::VectorXd mu = Eigen::VectorXd::Constant(1, 0.4);
  const Vec2 x(0.3, -0.7);
  CHECK(sep_eval(g, x, mu) == doctest::Approx(sep_eval(f, x, mu)).epsilon(1e-14));
}

TEST_CASE("parametric factor products commute") {
  const ParamFactor a = param_function("a", [](double m) { return m; });
  const ParamFactor b = param_function("b", [](double m) { return 2 - m; });
  CHECK((a * b).same_as(b * a));
  CHECK_FALSE((a * a).same_as(a * b));
  CHECK((a * b)(0.5) == doctest::Approx(0.75));
  CHECK(ParamFactor()(3.0) == 1.0);
}

TEST_CASE("evaluation outside the box or with the wrong dimension throws") {
  std::mt19937_64 rng(5);
  const auto f = random_mapping<2>(rng, 2, 1);
  CHECK_THROWS_AS(sep_eval(f, Vec2(0, 0), Eigen::VectorXd::Constant(1, 1.5)), std::out_of_range);
  CHECK_THROWS_AS(sep_eval(f, Vec2(0, 0), Eigen::VectorXd::Zero(2)), std::invalid_argument);
  auto wrong_arity = [] { return sep_build<double, 2>({{SpatialFactor<double>(), {}}}, 1); };
  CHECK_THROWS_AS(wrong_arity(), std::invalid_argument);
}

TEST_CASE("Jacobian needs spatial gradients") {
  const VectorField f = sep_build<Vec2, 2>(
      {{SpatialFactor<Vec2>([](const SpatialPoint<2>& p) { return Vec2(p.x); }), {ParamFactor()}}}, 1);
  CHECK_THROWS_AS(sep_jacobian(f), std::invalid_argument);
}
