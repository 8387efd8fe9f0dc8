#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <functional>
#include <vector>

namespace hdgpgd {

struct QuadRule1D {
  Eigen::VectorXd points;
  Eigen::VectorXd weights;
};

struct QuadRule2D {
  Eigen::Matrix2Xd points;
  Eigen::VectorXd weights;
};

// n-point Gauss-Legendre rule on [-1, 1].
QuadRule1D gauss_legendre(int n);

// Rule on [-1, 1] exact up to the given polynomial order.
QuadRule1D quad_rule_segment(int order);

// Same rule mapped to [0, 1].
QuadRule1D quad_rule_unit_segment(int order);

// Rule on the reference triangle (0,0), (1,0), (0,1), exact up to order.
// Orders <= 5 use symmetric tables; higher orders a collapsed Gauss product.
QuadRule2D quad_rule_triangle(int order);

// Degree-k Lagrange nodes on the reference triangle. Ordering: the three
// vertices, then edge f (vertex f -> vertex f+1) interior nodes for f = 0..2,
// then interior nodes.
int simplex_ndofs(int k);
Eigen::Matrix2Xd simplex_nodes(int k);

// k^2 linear subtriangles of the degree-k node lattice, counterclockwise,
// as local node indices.
std::vector<std::array<int, 3>> lattice_subtriangles(int k);

// Local node indices of face f, ordered from vertex f to vertex f+1.
std::vector<int> simplex_face_nodes(int k, int f);

// Reference point on face f at parameter s in [0, 1].
Eigen::Vector2d simplex_face_point(int f, double s);

struct BasisTabulation {
  Eigen::Matrix2Xd points;
  Eigen::VectorXd weights;
  Eigen::MatrixXd values;  // nq x nloc
  Eigen::MatrixXd dxi;     // nq x nloc
  Eigen::MatrixXd deta;    // nq x nloc
};

BasisTabulation simplex_basis(int k, const Eigen::Matrix2Xd& points);
BasisTabulation simplex_basis(int k, const QuadRule2D& rule);

// Degree-k Lagrange basis on uniform nodes of [0, 1].
Eigen::VectorXd lagrange_1d(int k, double s);
Eigen::VectorXd lagrange_1d_derivative(int k, double s);

// Uniform 1D finite element mesh of a parameter interval. A point interval
// (lower == upper) carries a single dof with a unit Dirac measure.
class ParametricMesh {
 public:
  ParametricMesh() = default;
  ParametricMesh(double lower, double upper, int n_el, int k);

  double lower() const { return lower_; }
  double upper() const { return upper_; }
  int n_elements() const { return n_el_; }
  int degree() const { return k_; }
  int n_dofs() const { return static_cast<int>(nodes_.size()); }
  bool is_point() const { return lower_ == upper_; }
  const Eigen::VectorXd& nodes() const { return nodes_; }

  // Global quadrature over the interval and the basis evaluated there.
  const Eigen::VectorXd& qp() const { return qp_; }
  const Eigen::VectorXd& qw() const { return qw_; }
  const Eigen::SparseMatrix<double>& basis_at_qp() const { return B_; }

  double evaluate(const Eigen::VectorXd& coeffs, double mu) const;
  Eigen::VectorXd interpolate(const std::function<double(double)>& f) const;

  // Galerkin matrix with weight sampled at qp(): sum_q w_q c_q N_I N_J.
  Eigen::SparseMatrix<double> weighted_mass(const Eigen::VectorXd& weight_at_qp) const;
  Eigen::SparseMatrix<double> mass() const;

  // Load vector sum_q w_q f(x_q) N_I.
  Eigen::VectorXd load(const Eigen::VectorXd& f_at_qp) const;

 private:
  double lower_ = 0, upper_ = 0;
  int n_el_ = 0, k_ = 0;
  Eigen::VectorXd nodes_;
  Eigen::VectorXd qp_, qw_;
  Eigen::SparseMatrix<double> B_;
};

ParametricMesh interval_mesh(double lower, double upper, int n_el, int k);

}  // namespace hdgpgd
