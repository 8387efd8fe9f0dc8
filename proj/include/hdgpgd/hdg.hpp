#pragma once

#include "hdgpgd/mesh.hpp"
#include "hdgpgd/sepalg.hpp"
#include "hdgpgd/shape.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace hdgpgd {

// One separated data term: spatial vector field times one factor per axis.
struct DataTerm {
  enum class Kind { Dirichlet, Neumann, Source };
  Kind kind = Kind::Dirichlet;
  int tag = -1;  // boundary tag index for Dirichlet / Neumann terms
  SpatialFactor<Vec2, 2> value;
  std::vector<ParamFactor> parametric;
};

// Stokes problem on the reference domain with a separated mapping.
struct StokesProblem {
  ReferenceMesh mesh;
  ParameterBox box;
  VectorField mapping;  // x^mu = sum_k M^k(x) phi^k(mu)
  ScalarField det;      // det(J), separated
  MatrixField cof;      // adj(J)^T, separated
  std::vector<DataTerm> data;
  double nu = 1.0;
  double tau = 10.0;
  double ell = 0.0;  // <= 0 selects the bounding-box diagonal
  int quad_increment = 4;
  // Optional pointwise factor on every tau term, f(x, n) at face points.
  std::function<double(const Vec2&, const Vec2&)> tau_scale;

  int n_params() const { return mapping.n_params(); }
};

// Builds det and cof from the mapping through the separated algebra.
void finalize_mapping(StokesProblem& problem, double prune_tol = 1e-13);

// Exact fields at a deformed point x^mu. L = -nu grad u with L(i, j) = d_i u_j.
struct ExactSolution {
  std::function<Vec2(const Vec2&, const Eigen::VectorXd&)> u;
  std::function<double(const Vec2&, const Eigen::VectorXd&)> p;
  std::function<Mat2(const Vec2&, const Eigen::VectorXd&)> L;
};

// Dof layout of the full HDG vector:
//   [element blocks (L, u, p, zeta)] [hybrid] [rho_e] [kappa]
// Element block: L(i, j) at (2i + j) * nloc, u_j at (4 + j) * nloc,
// p at 6 * nloc, zeta at 7 * nloc.
struct Layout {
  int nloc = 0;
  int n_el = 0;
  int block = 0;
  int hyb0 = 0, n_hyb = 0;
  int rho0 = 0;
  bool kappa = false;
  int size = 0;

  int L(int e, int i, int j) const { return e * block + (2 * i + j) * nloc; }
  int u(int e, int j) const { return e * block + (4 + j) * nloc; }
  int p(int e) const { return e * block + 6 * nloc; }
  int zeta(int e) const { return e * block + 7 * nloc; }
  int rho(int e) const { return rho0 + e; }
  int kappa_index() const { return rho0 + n_el; }
  int n_rho() const { return n_el + (kappa ? 1 : 0); }
};

// Per-element HDG matrices for a given set of term weights.
//   local rows:      A X - B uhat - unit e_zeta rho = R_loc
//   hybrid rows:     C X + H uhat                  = R_hyb
//   constraint row:  g . uhat + unit w_e kappa     = R_rho
struct ElementBlocks {
  Eigen::MatrixXd A, B, C, H;
  Eigen::VectorXd g;
  double unit = 0.0;
  std::vector<int> hybrid_dofs;  // global indices of the element's hybrid dofs
};

struct FieldErrors {
  // Squared absolute errors and squared exact norms per variable.
  double L2[4] = {0, 0, 0, 0};
  double ref2[4] = {0, 0, 0, 0};
  // Relative errors (absolute when the exact norm vanishes): L, u, p, uhat.
  double relative(int v) const;
};

enum Variable { VarL = 0, VarU = 1, VarP = 2, VarUhat = 3 };

class HdgDiscretisation {
 public:
  explicit HdgDiscretisation(std::shared_ptr<const StokesProblem> problem);

  const StokesProblem& problem() const { return *problem_; }
  const ReferenceMesh& mesh() const { return problem_->mesh; }
  const Skeleton& skeleton() const { return skeleton_; }
  const Layout& layout() const { return layout_; }
  int size() const { return layout_.size; }
  double tau_ref() const { return tau_ref_; }

  // Operator terms: det terms, then cof terms, then the unit term.
  int n_det() const { return n_det_; }
  int n_cof() const { return n_cof_; }
  int n_terms() const { return n_det_ + n_cof_ + 1; }
  int unit_term() const { return n_det_ + n_cof_; }
  int n_data() const { return static_cast<int>(problem_->data.size()); }
  const std::vector<ParamFactor>& term_factors(int t) const;

  Eigen::VectorXd term_weights(const Eigen::VectorXd& mu) const;
  Eigen::VectorXd data_coefficients(const Eigen::VectorXd& mu) const;

  ElementBlocks element_blocks(int e, const Eigen::VectorXd& w) const;

  // K(w) x in the full layout.
  Eigen::VectorXd apply(const Eigen::VectorXd& w, const Eigen::VectorXd& x) const;
  // b(w, c) = sum_{t,l} w_t c_l b_{t,l}.
  Eigen::VectorXd rhs(const Eigen::VectorXd& w, const Eigen::VectorXd& c) const;

  // Pointwise combined mapping quantities at volume / face quadrature points.
  int n_volume_qp() const { return nqv_; }
  int n_face_qp() const { return nqf_; }

  // Field errors at mu for a full-layout vector x.
  FieldErrors errors(const Eigen::VectorXd& x, const Eigen::VectorXd& mu, const ExactSolution& exact) const;
  // Max |u_h - u| over volume quadrature points at mu.
  double max_velocity_error(const Eigen::VectorXd& x, const Eigen::VectorXd& mu, const ExactSolution& exact) const;

  // Integrated pseudo-traction -int (L + p I) . n^mu ds^mu over a tag.
  Vec2 boundary_force(const Eigen::VectorXd& x, const Eigen::VectorXd& mu, int tag) const;
  // Mean pressure over a tag, weighted by deformed length.
  double boundary_mean_pressure(const Eigen::VectorXd& x, const Eigen::VectorXd& mu, int tag) const;

  // Values (u0, u1, p) at reference coordinates xi of element e.
  Eigen::Vector3d point_values(const Eigen::VectorXd& x, int e, const Vec2& xi) const;
  // Deformed position of reference coordinates xi of element e.
  Vec2 deformed_point(int e, const Vec2& xi, const Eigen::VectorXd& mu) const;

  // Reference boundary measure weight of each element used by the global
  // pressure-mean multiplier.
  const Eigen::VectorXd& kappa_weights() const { return kappa_w_; }

  // Minimum of the combined det(J) over volume quadrature points.
  double min_volume_det(const Eigen::VectorXd& w) const;

 private:
  friend class CondensedSolver;

  struct FaceCache {
    int face = -1;
    int tag = -1;
    BoundaryKind kind = BoundaryKind::Dirichlet;
    bool boundary = false;
    bool hybrid = false;
    bool reversed = false;
    int hyb_offset = -1;  // offset into the element's hybrid dof list
    Eigen::Matrix2Xd x, n;
    Eigen::VectorXd ds, tau_s;
    std::vector<Mat2> cof;  // [term * nq + q]
    std::vector<Vec2> map;  // [term * nq + q]
  };
  struct ElementCache {
    Eigen::VectorXd dV;
    Eigen::MatrixXd dNdx, dNdy;
    Eigen::Matrix2Xd x;
    Eigen::VectorXd det;    // [term * nq + q]
    std::vector<Mat2> cof;  // [term * nq + q]
    std::vector<Vec2> map;  // [term * nq + q]
    FaceCache faces[3];
    std::vector<int> hybrid_dofs;
    double boundary_measure = 0.0;
  };

  void combine_volume(const ElementCache& ec, const Eigen::VectorXd& w, Eigen::VectorXd& d,
                      std::vector<Mat2>& C) const;
  void combine_face(const FaceCache& fc, const Eigen::VectorXd& w, std::vector<Mat2>& C) const;
  const Eigen::MatrixXd& face_phi(const FaceCache& fc) const { return fc.reversed ? phi_rev_ : phi_fwd_; }

  std::shared_ptr<const StokesProblem> problem_;
  Skeleton skeleton_;
  Layout layout_;
  int n_det_ = 0, n_cof_ = 0, n_map_ = 0;
  int nqv_ = 0, nqf_ = 0;
  double tau_ref_ = 0.0;
  BasisTabulation vol_;
  BasisTabulation face_tab_[3];
  Eigen::MatrixXd phi_fwd_, phi_rev_;  // nqf x (k+1)
  std::vector<ElementCache> cache_;
  Eigen::VectorXd kappa_w_;
};

// Static condensation and global solve for a fixed weight vector. Symmetric
// global systems use a sparse LDLT of the quasi-definite matrix obtained by a
// small positive shift on the multiplier rows, followed by iterative
// refinement against the unshifted matrix. Other systems use sparse LU.
class CondensedSolver {
 public:
  explicit CondensedSolver(const HdgDiscretisation& disc);
  void factorize(const Eigen::VectorXd& w);
  // Solves K(w) x = R in the full layout.
  Eigen::VectorXd solve(const Eigen::VectorXd& R) const;
  double last_global_residual() const { return last_residual_; }
  const Eigen::SparseMatrix<double>& global_matrix() const { return K_; }

 private:
  struct Condensed {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu;
    Eigen::MatrixXd Z;   // A^{-1} B
    Eigen::VectorXd zr;  // A^{-1} unit e_zeta
    Eigen::MatrixXd C;
    std::vector<int> hybrid_dofs;
  };
  const HdgDiscretisation& disc_;
  std::vector<Condensed> cond_;
  Eigen::SparseMatrix<double> K_;
  Eigen::SparseMatrix<double> Ks_;  // shifted copy factorized by ldlt_
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
  bool analysed_ = false;
  bool symmetric_ = false;

  void use_lu();
  Eigen::VectorXd global_solve(const Eigen::VectorXd& g) const;
  double unit_ = 0.0;
  mutable double last_residual_ = 0.0;
};

// Full-order solve at a fixed parameter point.
Eigen::VectorXd solve_full_order(const HdgDiscretisation& disc, const Eigen::VectorXd& mu);

}  // namespace hdgpgd
