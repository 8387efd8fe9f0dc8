#include "doctest.h"

#include "support.hpp"

#include "hdgpgd/pgd.hpp"

#include <cmath>

using namespace hdgpgd;
using hdgpgd::testing::manufactured_problem;

namespace {

Eigen::VectorXd one() { return Eigen::VectorXd::Constant(1, 1.0); }

// Relative errors with the exact pressure shifted by the discrete offset.
FieldErrors shifted_errors(const HdgDiscretisation& disc, const Eigen::VectorXd& x, ExactSolution ex, bool shift) {
  const double c = shift ? hdgpgd::testing::pressure_offset(disc, x, ex, one()) : 0.0;
  auto p = ex.p;
  ex.p = [p, c](const Vec2& y, const Eigen::VectorXd& mu) { return p(y, mu) + c; };
  return disc.errors(x, one(), ex);
}

}  // namespace

TEST_CASE("polynomial solutions of degree k are reproduced") {
  for (int k = 1; k <= 4; ++k) {
    CAPTURE(k);
    const auto def = manufactured_problem(k, 0.7, 2);
    const HdgDiscretisation disc(def.problem);
    const Eigen::VectorXd x = solve_full_order(disc, one());
    const FieldErrors e = shifted_errors(disc, x, *def.exact, true);
    for (int v = 0; v < 4; ++v) CHECK(e.relative(v) < 1e-10);
  }
}

TEST_CASE("Neumann boundary reproduces polynomials without a pressure shift") {
  for (int k = 1; k <= 3; ++k) {
    CAPTURE(k);
    const auto def = manufactured_problem(k, 1.3, 2, true);
    const HdgDiscretisation disc(def.problem);
    CHECK_FALSE(disc.layout().kappa);
    const Eigen::VectorXd x = solve_full_order(disc, one());
    const FieldErrors e = shifted_errors(disc, x, *def.exact, false);
    // Pressure fixed by traction data alone is less well conditioned.
    for (int v = 0; v < 4; ++v) CHECK(e.relative(v) < (v == VarP ? 1e-8 : 1e-10));
  }
}

TEST_CASE("boundary force and mean pressure match exact boundary integrals") {
  const int k = 3;
  const double nu = 0.7;
  const auto def = manufactured_problem(k, nu, 2, true);
  const HdgDiscretisation disc(def.problem);
  const Eigen::VectorXd x = solve_full_order(disc, one());
  const hdgpgd::testing::Manufactured ms{k, nu};
  // Right side x = 1, outward normal (1, 0), 20-point Gauss-Legendre in y.
  const QuadRule1D g = gauss_legendre(20);
  Vec2 F(0, 0);
  double pbar = 0.0;
  for (int q = 0; q < g.points.size(); ++q) {
    const Vec2 y(1.0, 0.5 * (g.points[q] + 1.0));
    const Mat2 S = -nu * ms.grad(y).transpose() + ms.p(y) * Mat2::Identity();
    F -= 0.5 * g.weights[q] * S * Vec2(1, 0);
    pbar += 0.5 * g.weights[q] * ms.p(y);
  }
  const int tag = disc.mesh().tag_index("right");
  CHECK((disc.boundary_force(x, one(), tag) - F).norm() < 1e-10 * F.norm());
  CHECK(disc.boundary_mean_pressure(x, one(), tag) == doctest::Approx(pbar).epsilon(1e-10));
}

TEST_CASE("condensed global matrix is symmetric without slip faces") {
  CouetteOptions o;
  o.mesh_level = 1;
  o.k = 2;
  const auto def = couette_case(o);
  const HdgDiscretisation disc(def.problem);
  CondensedSolver s(disc);
  s.factorize(disc.term_weights(Eigen::VectorXd::Constant(1, 2.0)));
  const Eigen::SparseMatrix<double> K = s.global_matrix();
  const Eigen::SparseMatrix<double> Kt = K.transpose();
  CHECK((K - Kt).norm() <= 1e-12 * K.norm());
}

TEST_CASE("full-order solve satisfies the uncondensed system") {
  CouetteOptions o;
  o.mesh_level = 1;
  o.k = 3;
  const auto def = couette_case(o);
  const HdgDiscretisation disc(def.problem);
  const Eigen::VectorXd mu = Eigen::VectorXd::Constant(1, 2.5);
  const Eigen::VectorXd x = solve_full_order(disc, mu);
  const Eigen::VectorXd w = disc.term_weights(mu);
  const Eigen::VectorXd b = disc.rhs(w, disc.data_coefficients(mu));
  CHECK((disc.apply(w, x) - b).norm() <= 1e-10 * b.norm());
}

TEST_CASE("Couette errors converge at order k + 1 on the deformed annulus") {
  for (int k = 1; k <= 2; ++k) {
    CAPTURE(k);
    double prev[4] = {0, 0, 0, 0};
    for (int level = 1; level <= 2; ++level) {
      CouetteOptions o;
      o.mesh_level = level;
      o.k = k;
      const auto def = couette_case(o);
      const HdgDiscretisation disc(def.problem);
      const Eigen::VectorXd mu = Eigen::VectorXd::Constant(1, 2.0);
      const FieldErrors e = disc.errors(solve_full_order(disc, mu), mu, *def.exact);
      if (level == 2)
        for (int v : {VarL, VarU, VarUhat}) CHECK(std::log2(prev[v] / e.relative(v)) > k + 0.7);
      for (int v = 0; v < 4; ++v) prev[v] = e.relative(v);
    }
  }
}

TEST_CASE("mapping at mu = 1 is the identity for Couette") {
  CouetteOptions o;
  o.mesh_level = 1;
  const auto def = couette_case(o);
  const HdgDiscretisation disc(def.problem);
  const Eigen::VectorXd mu = Eigen::VectorXd::Constant(1, 1.0);
  const Eigen::Matrix2Xd xi = simplex_nodes(disc.mesh().k);
  for (int e = 0; e < disc.mesh().n_elements(); e += 7)
    for (int a = 0; a < xi.cols(); ++a)
      CHECK((disc.deformed_point(e, xi.col(a), mu) - disc.mesh().element_nodes[e].col(a)).norm() < 1e-13);
}

TEST_CASE("term weights have a unit term and a positive determinant") {
  CouetteOptions o;
  o.mesh_level = 1;
  const auto def = couette_case(o);
  const HdgDiscretisation disc(def.problem);
  const Eigen::VectorXd mu = Eigen::VectorXd::Constant(1, 2.3);
  CHECK(disc.n_terms() == disc.n_det() + disc.n_cof() + 1);
  CHECK(disc.term_weights(mu)[disc.unit_term()] == 1.0);
  CHECK(disc.min_volume_det(disc.term_weights(mu)) > 0.0);
}
