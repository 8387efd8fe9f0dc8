#include "hdgpgd/shape.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

namespace hdgpgd {

QuadRule1D gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("Gauss-Legendre rule needs at least one point");
  QuadRule1D r;
  r.points.resize(n);
  r.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double dp = 1.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int j = 2; j <= n; ++j) {
        const double p2 = ((2 * j - 1) * x * p1 - (j - 1) * p0) / j;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p1 = x, p0 = 1.0;
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    double p0 = 1.0, p1 = x;
    for (int j = 2; j <= n; ++j) {
      const double p2 = ((2 * j - 1) * x * p1 - (j - 1) * p0) / j;
      p0 = p1;
      p1 = p2;
    }
    dp = n * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    r.points[i] = -x;
    r.points[n - 1 - i] = x;
    r.weights[i] = w;
    r.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) r.points[n / 2] = 0.0;
  return r;
}

QuadRule1D quad_rule_segment(int order) {
  if (order < 0) throw std::invalid_argument("quadrature order must be nonnegative");
  return gauss_legendre(order / 2 + 1);
}

QuadRule1D quad_rule_unit_segment(int order) {
  QuadRule1D r = quad_rule_segment(order);
  r.points = (r.points.array() + 1.0) * 0.5;
  r.weights *= 0.5;
  return r;
}

namespace {

void add_orbit(std::vector<Eigen::Vector2d>& pts, std::vector<double>& w, double a, double b, double weight) {
  // Barycentric orbit (a, a, b) and permutations; weight refers to area 1.
  const double c = 1.0 - a - b;
  const double bary[3][3] = {{a, b, c}, {b, c, a}, {c, a, b}};
  for (const auto& l : bary) {
    pts.emplace_back(l[1], l[2]);
    w.push_back(0.5 * weight);
  }
}

QuadRule2D collapsed_rule(int order) {
  const QuadRule1D gu = quad_rule_unit_segment(order);
  const QuadRule1D gv = quad_rule_unit_segment(order + 1);
  QuadRule2D r;
  const int n = static_cast<int>(gu.points.size() * gv.points.size());
  r.points.resize(2, n);
  r.weights.resize(n);
  int q = 0;
  for (int j = 0; j < gv.points.size(); ++j) {
    for (int i = 0; i < gu.points.size(); ++i) {
      const double v = gv.points[j];
      r.points(0, q) = gu.points[i] * (1.0 - v);
      r.points(1, q) = v;
      r.weights[q] = gu.weights[i] * gv.weights[j] * (1.0 - v);
      ++q;
    }
  }
  return r;
}

}  // namespace

QuadRule2D quad_rule_triangle(int order) {
  if (order < 0) throw std::invalid_argument("quadrature order must be nonnegative");
  std::vector<Eigen::Vector2d> pts;
  std::vector<double> w;
  if (order <= 1) {
    pts.emplace_back(1.0 / 3.0, 1.0 / 3.0);
    w.push_back(0.5);
  } else if (order == 2) {
    add_orbit(pts, w, 1.0 / 6.0, 2.0 / 3.0, 1.0 / 3.0);
  } else if (order <= 4) {
    add_orbit(pts, w, 0.445948490915965, 0.108103018168070, 0.223381589678011);
    add_orbit(pts, w, 0.091576213509771, 0.816847572980459, 0.109951743655322);
  } else if (order == 5) {
    pts.emplace_back(1.0 / 3.0, 1.0 / 3.0);
    w.push_back(0.5 * 0.225);
    const double s15 = std::sqrt(15.0);
    const double a1 = (6.0 - s15) / 21.0, a2 = (6.0 + s15) / 21.0;
    add_orbit(pts, w, a1, 1.0 - 2.0 * a1, (155.0 - s15) / 1200.0);
    add_orbit(pts, w, a2, 1.0 - 2.0 * a2, (155.0 + s15) / 1200.0);
  } else {
    return collapsed_rule(order);
  }
  QuadRule2D r;
  r.points.resize(2, pts.size());
  r.weights.resize(pts.size());
  for (std::size_t q = 0; q < pts.size(); ++q) {
    r.points.col(q) = pts[q];
    r.weights[q] = w[q];
  }
  return r;
}

int simplex_ndofs(int k) { return (k + 1) * (k + 2) / 2; }

namespace {

// Lattice multi-indices (a0, a1, a2), a0 + a1 + a2 = k, in node order.
std::vector<std::array<int, 3>> lattice(int k) {
  std::vector<std::array<int, 3>> idx;
  idx.push_back({k, 0, 0});
  if (k == 0) return idx;
  idx.push_back({0, k, 0});
  idx.push_back({0, 0, k});
  for (int f = 0; f < 3; ++f) {
    const int a = f, b = (f + 1) % 3;
    for (int s = 1; s < k; ++s) {
      std::array<int, 3> m{0, 0, 0};
      m[a] = k - s;
      m[b] = s;
      idx.push_back(m);
    }
  }
  for (int j = 1; j < k; ++j)
    for (int i = 1; i + j < k; ++i) idx.push_back({k - i - j, i, j});
  return idx;
}

// Silvester auxiliary polynomial P_a(l) = prod_{s<a} (k l - s) / (s + 1) and its derivative.
void silvester(int k, int a, double l, double& v, double& dv) {
  v = 1.0;
  dv = 0.0;
  for (int s = 0; s < a; ++s) {
    const double f = (k * l - s) / (s + 1.0);
    const double df = k / (s + 1.0);
    dv = dv * f + v * df;
    v *= f;
  }
}

void check_degree(int k) {
  if (k < 1 || k > 8) throw std::invalid_argument("polynomial degree " + std::to_string(k) + " out of range [1, 8]");
}

}  // namespace

Eigen::Matrix2Xd simplex_nodes(int k) {
  check_degree(k);
  const auto idx = lattice(k);
  Eigen::Matrix2Xd x(2, idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) x.col(i) << double(idx[i][1]) / k, double(idx[i][2]) / k;
  return x;
}

std::vector<std::array<int, 3>> lattice_subtriangles(int k) {
  const Eigen::Matrix2Xd xi = simplex_nodes(k);
  std::map<std::pair<int, int>, int> at;
  for (int a = 0; a < xi.cols(); ++a)
    at[{static_cast<int>(std::lround(xi(0, a) * k)), static_cast<int>(std::lround(xi(1, a) * k))}] = a;
  std::vector<std::array<int, 3>> sub;
  for (int j = 0; j < k; ++j)
    for (int i = 0; i + j < k; ++i) {
      sub.push_back({at.at({i, j}), at.at({i + 1, j}), at.at({i, j + 1})});
      if (i + j + 1 < k) sub.push_back({at.at({i + 1, j}), at.at({i + 1, j + 1}), at.at({i, j + 1})});
    }
  return sub;
}

std::vector<int> simplex_face_nodes(int k, int f) {
  check_degree(k);
  std::vector<int> n;
  n.push_back(f);
  for (int s = 1; s < k; ++s) n.push_back(3 + f * (k - 1) + (s - 1));
  n.push_back((f + 1) % 3);
  return n;
}

Eigen::Vector2d simplex_face_point(int f, double s) {
  static const Eigen::Vector2d V[3] = {{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}};
  return V[f] + s * (V[(f + 1) % 3] - V[f]);
}

BasisTabulation simplex_basis(int k, const Eigen::Matrix2Xd& points) {
  check_degree(k);
  const auto idx = lattice(k);
  const int nloc = static_cast<int>(idx.size());
  const int nq = static_cast<int>(points.cols());
  BasisTabulation t;
  t.points = points;
  t.values.resize(nq, nloc);
  t.dxi.resize(nq, nloc);
  t.deta.resize(nq, nloc);
  for (int q = 0; q < nq; ++q) {
    const double l[3] = {1.0 - points(0, q) - points(1, q), points(0, q), points(1, q)};
    for (int i = 0; i < nloc; ++i) {
      double v[3], dv[3];
      for (int m = 0; m < 3; ++m) silvester(k, idx[i][m], l[m], v[m], dv[m]);
      // dl0/dxi = -1, dl1/dxi = 1; dl0/deta = -1, dl2/deta = 1
      t.values(q, i) = v[0] * v[1] * v[2];
      t.dxi(q, i) = -dv[0] * v[1] * v[2] + v[0] * dv[1] * v[2];
      t.deta(q, i) = -dv[0] * v[1] * v[2] + v[0] * v[1] * dv[2];
    }
  }
  return t;
}

BasisTabulation simplex_basis(int k, const QuadRule2D& rule) {
  BasisTabulation t = simplex_basis(k, rule.points);
  t.weights = rule.weights;
  return t;
}

Eigen::VectorXd lagrange_1d(int k, double s) {
  Eigen::VectorXd v(k + 1);
  for (int i = 0; i <= k; ++i) {
    double p = 1.0;
    for (int j = 0; j <= k; ++j)
      if (j != i) p *= (s * k - j) / double(i - j);
    v[i] = p;
  }
  return v;
}

Eigen::VectorXd lagrange_1d_derivative(int k, double s) {
  Eigen::VectorXd d = Eigen::VectorXd::Zero(k + 1);
  for (int i = 0; i <= k; ++i) {
    for (int m = 0; m <= k; ++m) {
      if (m == i) continue;
      double p = double(k) / double(i - m);
      for (int j = 0; j <= k; ++j)
        if (j != i && j != m) p *= (s * k - j) / double(i - j);
      d[i] += p;
    }
  }
  return d;
}

ParametricMesh::ParametricMesh(double lower, double upper, int n_el, int k)
    : lower_(lower), upper_(upper), n_el_(n_el), k_(k) {
  if (!(upper >= lower)) throw std::invalid_argument("empty parameter interval");
  if (n_el < 1 || k < 1) throw std::invalid_argument("parametric mesh needs n_el >= 1 and k >= 1");
  std::vector<Eigen::Triplet<double>> trip;
  if (is_point()) {
    n_el_ = 1;
    nodes_ = Eigen::VectorXd::Constant(1, lower);
    qp_ = Eigen::VectorXd::Constant(1, lower);
    qw_ = Eigen::VectorXd::Ones(1);
    trip.emplace_back(0, 0, 1.0);
    B_.resize(1, 1);
  } else {
    const int nd = n_el * k + 1;
    const double h = (upper - lower) / n_el;
    nodes_.resize(nd);
    for (int i = 0; i < nd; ++i) nodes_[i] = lower + (upper - lower) * double(i) / (nd - 1);
    const QuadRule1D rule = quad_rule_unit_segment(2 * k + 2);
    const int nq = static_cast<int>(rule.points.size());
    qp_.resize(n_el * nq);
    qw_.resize(n_el * nq);
    for (int e = 0; e < n_el; ++e) {
      for (int q = 0; q < nq; ++q) {
        const int g = e * nq + q;
        qp_[g] = lower + h * (e + rule.points[q]);
        qw_[g] = h * rule.weights[q];
        const Eigen::VectorXd N = lagrange_1d(k, rule.points[q]);
        for (int i = 0; i <= k; ++i) trip.emplace_back(g, e * k + i, N[i]);
      }
    }
    B_.resize(n_el * nq, nd);
  }
  B_.setFromTriplets(trip.begin(), trip.end());
}

double ParametricMesh::evaluate(const Eigen::VectorXd& c, double mu) const {
  if (is_point()) return c[0];
  const double h = (upper_ - lower_) / n_el_;
  int e = static_cast<int>(std::floor((mu - lower_) / h));
  e = std::clamp(e, 0, n_el_ - 1);
  const double s = (mu - lower_) / h - e;
  const Eigen::VectorXd N = lagrange_1d(k_, s);
  return N.dot(c.segment(e * k_, k_ + 1));
}

Eigen::VectorXd ParametricMesh::interpolate(const std::function<double(double)>& f) const {
  Eigen::VectorXd v(n_dofs());
  for (int i = 0; i < n_dofs(); ++i) v[i] = f(nodes_[i]);
  return v;
}

Eigen::SparseMatrix<double> ParametricMesh::weighted_mass(const Eigen::VectorXd& c) const {
  Eigen::SparseMatrix<double> M = B_.transpose() * (qw_.cwiseProduct(c)).asDiagonal() * B_;
  M.makeCompressed();
  return M;
}

Eigen::SparseMatrix<double> ParametricMesh::mass() const { return weighted_mass(Eigen::VectorXd::Ones(qp_.size())); }

Eigen::VectorXd ParametricMesh::load(const Eigen::VectorXd& f) const { return B_.transpose() * qw_.cwiseProduct(f); }

ParametricMesh interval_mesh(double lower, double upper, int n_el, int k) { return ParametricMesh(lower, upper, n_el, k); }

}  // namespace hdgpgd
