#pragma once

#include "hdgpgd/cases.hpp"
#include "hdgpgd/hdg.hpp"

#include <cmath>
#include <memory>
#include <random>
#include <string>

namespace hdgpgd::testing {

// [0, a] x [0, b] split into 2 n_x n_y triangles. Every side gets its own
// tag "<kind>:<side>" with side in bottom, right, top, left.
inline ReferenceMesh rectangle_mesh(int nx, int ny, double a, double b, int k, const std::string& kind = "DIRICHLET",
                                    const std::string& left_kind = "") {
  Eigen::Matrix2Xd v(2, (nx + 1) * (ny + 1));
  auto id = [nx](int i, int j) { return j * (nx + 1) + i; };
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) v.col(id(i, j)) = Vec2(a * i / nx, b * j / ny);
  std::vector<std::array<int, 3>> el;
  std::vector<BoundaryFaceSpec> bnd;
  const std::string lk = left_kind.empty() ? kind : left_kind;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int e = static_cast<int>(el.size());
      el.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      el.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
      if (j == 0) bnd.push_back({e, 0, kind + ":bottom"});
      if (i == nx - 1) bnd.push_back({e, 1, kind + ":right"});
      if (j == ny - 1) bnd.push_back({e + 1, 1, kind + ":top"});
      if (i == 0) bnd.push_back({e + 1, 2, lk + ":left"});
    }
  return make_mesh(v, el, bnd, k);
}

inline SpatialFactor<Vec2> identity_factor_map() {
  return SpatialFactor<Vec2>([](const SpatialPoint<2>& p) { return Vec2(p.x); },
                             [](const SpatialPoint<2>&) { return Mat2(Mat2::Identity()); });
}

// Divergence-free degree-k velocity from the stream function
// psi = ((x + 2y)^(k+1) + (x - y)^(k+1)) / (k + 1) and a degree-k pressure.
struct Manufactured {
  int k;
  double nu;
  Vec2 u(const Vec2& x) const {
    const double s1 = x.x() + 2 * x.y(), s2 = x.x() - x.y();
    return Vec2(2 * std::pow(s1, k) - std::pow(s2, k), -std::pow(s1, k) - std::pow(s2, k));
  }
  Mat2 grad(const Vec2& x) const {  // G(i, j) = d_i u_j
    const double a = k * std::pow(x.x() + 2 * x.y(), k - 1), b = k * std::pow(x.x() - x.y(), k - 1);
    Mat2 G;
    G << 2 * a - b, -a - b, 4 * a + b, -2 * a + b;
    return G;
  }
  double p(const Vec2& x) const { return std::pow(x.x(), k) + 0.5 * x.y() - 0.3; }
  Vec2 source(const Vec2& x) const {
    Vec2 lap(0, 0);
    if (k >= 2) {
      const double c = k * (k - 1.0);
      const double a = c * std::pow(x.x() + 2 * x.y(), k - 2), b = c * std::pow(x.x() - x.y(), k - 2);
      lap = Vec2(10 * a - 2 * b, -5 * a - 2 * b);
    }
    const Vec2 gp(k * std::pow(x.x(), k - 1), 0.5);
    return -nu * lap + gp;
  }
};

// Manufactured Stokes problem on a rectangle with the identity mapping and a
// point parameter interval. Dirichlet data everywhere, or a Neumann left side.
inline ProblemDefinition manufactured_problem(int k, double nu, int n, bool neumann_left = false) {
  const Manufactured ms{k, nu};
  auto P = std::make_shared<StokesProblem>();
  P->mesh = rectangle_mesh(n, n, 1.0, 1.0, k, "DIRICHLET", neumann_left ? "NEUMANN" : "");
  P->box = {{"mu1"}, {1.0}, {1.0}};
  P->nu = nu;
  P->mapping = sep_build<Vec2, 2>({{identity_factor_map(), {ParamFactor()}}}, 1, P->box);
  finalize_mapping(*P);
  for (const auto& tag : P->mesh.tags) {
    DataTerm d;
    d.tag = P->mesh.tag_index(tag.name);
    d.parametric = {ParamFactor()};
    if (tag.kind == BoundaryKind::Dirichlet) {
      d.kind = DataTerm::Kind::Dirichlet;
      d.value = SpatialFactor<Vec2>([ms](const SpatialPoint<2>& p) { return ms.u(p.x); });
    } else {
      // Pseudo-traction -(L^T + p I) n = nu du/dn - p n on the left side.
      d.kind = DataTerm::Kind::Neumann;
      d.value = SpatialFactor<Vec2>([ms](const SpatialPoint<2>& p) {
        const Mat2 S = ms.nu * ms.grad(p.x).transpose() - ms.p(p.x) * Mat2::Identity();
        return Vec2(S * Vec2(-1, 0));
      });
    }
    P->data.push_back(d);
  }
  DataTerm f;
  f.kind = DataTerm::Kind::Source;
  f.value = SpatialFactor<Vec2>([ms](const SpatialPoint<2>& p) { return ms.source(p.x); });
  f.parametric = {ParamFactor()};
  P->data.push_back(f);

  ExactSolution ex;
  ex.u = [ms](const Vec2& x, const Eigen::VectorXd&) { return ms.u(x); };
  ex.p = [ms](const Vec2& x, const Eigen::VectorXd&) { return ms.p(x); };
  ex.L = [ms](const Vec2& x, const Eigen::VectorXd&) { return Mat2(-ms.nu * ms.grad(x)); };
  ProblemDefinition def;
  def.name = "manufactured";
  def.problem = P;
  def.exact = ex;
  return def;
}

// Mean nodal offset p_h - p; removes the constant fixed by the pressure
// normalisation when comparing against an arbitrary exact pressure.
inline double pressure_offset(const HdgDiscretisation& disc, const Eigen::VectorXd& x, const ExactSolution& ex,
                              const Eigen::VectorXd& mu) {
  const Layout& L = disc.layout();
  double s = 0.0;
  for (int e = 0; e < L.n_el; ++e)
    for (int a = 0; a < L.nloc; ++a) s += x[L.p(e) + a] - ex.p(disc.mesh().element_nodes[e].col(a), mu);
  return s / (L.n_el * L.nloc);
}

// Random quadratic spatial map x -> c + B x + (x^T Q_i x)_i with its exact
// gradient, scaled by a random quadratic in each parameter.
template <int Dim>
SeparatedField<Point<Dim>, Dim> random_mapping(std::mt19937_64& rng, int n_terms, int n_params) {
  using P = Point<Dim>;
  using M = Eigen::Matrix<double, Dim, Dim>;
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  ParameterBox box;
  for (int j = 0; j < n_params; ++j) {
    box.names.push_back("mu" + std::to_string(j + 1));
    box.lower.push_back(-1.0);
    box.upper.push_back(1.0);
  }
  SeparatedField<P, Dim> f(n_params, box);
  for (int t = 0; t < n_terms; ++t) {
    P c;
    M B;
    std::vector<M> Q(Dim);
    for (int i = 0; i < Dim; ++i) c[i] = U(rng);
    for (int i = 0; i < Dim; ++i)
      for (int a = 0; a < Dim; ++a) B(i, a) = U(rng) + (i == a && t == 0 ? 2.0 : 0.0);
    for (auto& q : Q)
      for (int i = 0; i < Dim; ++i)
        for (int a = 0; a < Dim; ++a) q(i, a) = 0.3 * U(rng);
    SepTerm<P, Dim> term;
    term.spatial = SpatialFactor<P, Dim>(
        [c, B, Q](const SpatialPoint<Dim>& p) {
          P v = c + B * p.x;
          for (int i = 0; i < Dim; ++i) v[i] += p.x.dot(Q[i] * p.x);
          return v;
        },
        [B, Q](const SpatialPoint<Dim>& p) {
          M G = B;
          for (int i = 0; i < Dim; ++i) G.row(i) += ((Q[i] + Q[i].transpose()) * p.x).transpose();
          return G;
        });
    for (int j = 0; j < n_params; ++j) {
      const double a0 = 1.0 + 0.5 * U(rng), a1 = U(rng), a2 = U(rng);
      term.parametric.push_back(param_function("q" + std::to_string(t) + std::to_string(j),
                                               [a0, a1, a2](double m) { return a0 + m * (a1 + m * a2); }));
    }
    f.push_back(term);
  }
  return f;
}

// Central-difference Jacobian of the mapping in x at mu.
template <int Dim>
Eigen::Matrix<double, Dim, Dim> fd_jacobian(const SeparatedField<Point<Dim>, Dim>& f, const Point<Dim>& x,
                                            const Eigen::VectorXd& mu, double h = 1e-5) {
  Eigen::Matrix<double, Dim, Dim> J;
  for (int a = 0; a < Dim; ++a) {
    Point<Dim> xp = x, xm = x;
    xp[a] += h;
    xm[a] -= h;
    J.col(a) = (sep_eval(f, xp, mu) - sep_eval(f, xm, mu)) / (2 * h);
  }
  return J;
}

}  // namespace hdgpgd::testing
