#pragma once

#include "hdgpgd/hdg.hpp"
#include "hdgpgd/shape.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace hdgpgd {

struct PgdOptions {
  int max_modes = 20;
  int max_sweeps = 25;
  double eta_star = 1e-4;  // greedy stop: sigma_uhat^m <= eta_star sigma_uhat^1
  double eta_uhat = 1e-3;  // alternating stop on the hybrid update
  double eta_r = 1e-3;     // alternating stop on the relative residuals
  bool update_factors = true;  // joint re-solve of all parametric factors after each mode
  int refine_passes = 2;       // Gauss-Seidel passes re-solving every spatial mode after each new mode
  int compress_every = 5;  // 0 disables compression
  double compress_tol = 1e-9;
  std::function<void(const std::string&)> log;
};

// One separated term: a full-layout spatial vector carrying the amplitudes
// and one nodal factor per parameter axis with unit max norm.
struct PgdMode {
  Eigen::VectorXd spatial;
  std::vector<Eigen::VectorXd> psi;
  int sweeps = 0;
  bool converged = true;
  double eps_uhat = 0.0, eps_r = 0.0;
};

enum class PgdVariable { L = 0, U = 1, P = 2, Uhat = 3, Rho = 4, Zeta = 5 };
inline constexpr int kPgdVariables = 6;
const char* variable_name(PgdVariable v);

struct PgdSolution {
  std::vector<ParametricMesh> pmeshes;
  std::vector<PgdMode> modes;
  std::uint64_t fingerprint = 0;

  int n_params() const { return static_cast<int>(pmeshes.size()); }
  int n_modes() const { return static_cast<int>(modes.size()); }
  bool contains(const Eigen::VectorXd& mu, double tol = 1e-12) const;
  // Product of the mode's parametric factors at mu.
  double factor(int mode, const Eigen::VectorXd& mu) const;
  // Sum over the first n_modes modes (all when negative). Throws out_of_range
  // outside the parametric meshes.
  Eigen::VectorXd evaluate(const Eigen::VectorXd& mu, int n_modes = -1) const;
};

// Max-norm of one variable's entries of a full-layout vector.
double variable_norm(const Layout& layout, const Eigen::VectorXd& x, PgdVariable v);
// Scales one variable's entries in place.
void scale_variable(const Layout& layout, Eigen::VectorXd& x, PgdVariable v, double s);

// sigma^m / sigma^1 per mode for one variable.
std::vector<double> mode_amplitudes(const PgdSolution& sol, const Layout& layout, PgdVariable v);

// Greedy rank-1 least-squares recompression of sum_i S^i prod_j psi^i_j.
// Inner products: spatial Gram matrix (m x m) and parametric mass matrices.
// Terms are added until the next term's norm drops below tol times the input
// norm. Returns the new spatial vectors as coefficients over the input ones.
struct CompressionResult {
  Eigen::MatrixXd coefficients;               // new term k = sum_i coefficients(k, i) S^i
  std::vector<std::vector<Eigen::VectorXd>> psi;  // [term][axis], unit max norm
  bool compressed = false;                    // false when the input was returned unchanged
};
CompressionResult compress_separated(const Eigen::MatrixXd& spatial_gram,
                                     const std::vector<std::vector<Eigen::VectorXd>>& psi,
                                     const std::vector<ParametricMesh>& pmeshes, double tol);

// Compresses a solution with a per-variable scaled Euclidean spatial product.
PgdSolution pgd_compress(const PgdSolution& sol, const Layout& layout, double tol);

// Integrals of the separated operator and data over the parameter domain for
// a fixed set of parametric factors psi (one nodal vector per axis).
struct SpatialWeights {
  Eigen::VectorXd beta;        // beta_t = int w_t psi^2
  Eigen::MatrixXd beta_data;   // beta_{t,l} = int w_t lambda_l psi
  Eigen::MatrixXd beta_modes;  // beta_{t,i} = int w_t psi^i psi
};

class PgdEngine {
 public:
  PgdEngine(const HdgDiscretisation& disc, std::vector<ParametricMesh> pmeshes, PgdOptions opt = {});

  const HdgDiscretisation& discretisation() const { return disc_; }
  const PgdSolution& solution() const { return sol_; }
  const std::vector<ParametricMesh>& pmeshes() const { return pm_; }

  // Runs the greedy enrichment from the current state, adding at most
  // max_new modes (opt.max_modes when negative).
  const PgdSolution& run(int max_new = -1);
  // True once the amplitude criterion or a zero mode stopped the greedy loop.
  bool finished() const { return finished_; }
  int enriched() const { return enriched_; }

  // Building blocks.
  SpatialWeights spatial_weights(const std::vector<Eigen::VectorXd>& psi) const;
  // Right-hand side of the spatial problem: data minus accumulated modes.
  Eigen::VectorXd spatial_rhs(const std::vector<Eigen::VectorXd>& psi) const;
  // Weighted HDG solve for the spatial mode given psi.
  Eigen::VectorXd spatial_solve(const std::vector<Eigen::VectorXd>& psi);
  // K_t x for every operator term.
  std::vector<Eigen::VectorXd> term_products(const Eigen::VectorXd& x) const;
  // Test vector of the parametric problem for spatial mode S.
  Eigen::VectorXd parametric_test(const Eigen::VectorXd& S) const;
  // 1D system for axis j with the other axes frozen.
  void parametric_system(int axis, const Eigen::VectorXd& S, const std::vector<Eigen::VectorXd>& KS,
                         const std::vector<Eigen::VectorXd>& psi, Eigen::SparseMatrix<double>& A,
                         Eigen::VectorXd& rhs) const;
  // Appends a mode and caches its operator products.
  void push_mode(PgdMode mode);
  void push_mode(PgdMode mode, std::vector<Eigen::VectorXd> KS);

 private:
  double axis_integral(int axis, const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& c) const;
  Eigen::VectorXd at_qp(int axis, const Eigen::VectorXd& psi) const;
  void compress();
  void update_factors();
  void refine_modes();
  void log(const std::string& s) const;

  const HdgDiscretisation& disc_;
  std::vector<ParametricMesh> pm_;
  PgdOptions opt_;
  CondensedSolver solver_;
  int n_terms_ = 0, n_data_ = 0;
  // phi_[j][t], lambda_[j][l]: factor values at the quadrature points of axis j.
  std::vector<std::vector<Eigen::VectorXd>> phi_, lambda_;
  std::vector<std::vector<Eigen::SparseMatrix<double>>> mass_t_;  // [j][t]
  std::vector<std::vector<Eigen::VectorXd>> data_b_;              // b_{t,l}, empty when zero
  std::vector<std::vector<Eigen::VectorXd>> mode_KS_;             // [mode][t]
  PgdSolution sol_;
  double sigma1_ = 0.0;
  bool finished_ = false;
  int enriched_ = 0;  // modes computed by the greedy loop, before compression
};

// Relative L2(Omega x I) errors of the PGD solution with the first n_modes
// modes, integrated with the parametric meshes' quadrature.
FieldErrors pgd_l2_error(const PgdSolution& sol, const HdgDiscretisation& disc, const ExactSolution& exact,
                         int n_modes = -1);
// Same for a full-order solution, integrated with Gauss-Legendre points per axis.
FieldErrors hdg_l2_error(const HdgDiscretisation& disc, const ExactSolution& exact, int n_points);

}  // namespace hdgpgd
