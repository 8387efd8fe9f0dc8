#include "hdgpgd/pgd.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace hdgpgd {

const char* variable_name(PgdVariable v) {
  switch (v) {
    case PgdVariable::L: return "L";
    case PgdVariable::U: return "u";
    case PgdVariable::P: return "p";
    case PgdVariable::Uhat: return "uhat";
    case PgdVariable::Rho: return "rho";
    case PgdVariable::Zeta: return "zeta";
  }
  return "?";
}

namespace {

// Calls f(offset, length) for every contiguous segment of a variable.
template <class F>
void for_each_segment(const Layout& L, PgdVariable v, F&& f) {
  switch (v) {
    case PgdVariable::L:
      for (int e = 0; e < L.n_el; ++e) f(L.L(e, 0, 0), 4 * L.nloc);
      break;
    case PgdVariable::U:
      for (int e = 0; e < L.n_el; ++e) f(L.u(e, 0), 2 * L.nloc);
      break;
    case PgdVariable::P:
      for (int e = 0; e < L.n_el; ++e) f(L.p(e), L.nloc);
      break;
    case PgdVariable::Zeta:
      for (int e = 0; e < L.n_el; ++e) f(L.zeta(e), 1);
      break;
    case PgdVariable::Uhat:
      f(L.hyb0, L.n_hyb);
      break;
    case PgdVariable::Rho:
      f(L.rho0, L.n_rho());
      break;
  }
}

// Signed max-abs entry, so that dividing by it leaves a unit positive peak.
double signed_peak(const Eigen::VectorXd& v) {
  if (v.size() == 0) return 0.0;
  Eigen::Index i = 0;
  v.cwiseAbs().maxCoeff(&i);
  return v[i];
}

double max_abs(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

double variable_norm(const Layout& layout, const Eigen::VectorXd& x, PgdVariable v) {
  double m = 0.0;
  for_each_segment(layout, v, [&](int o, int n) {
    if (n > 0) m = std::max(m, x.segment(o, n).cwiseAbs().maxCoeff());
  });
  return m;
}

void scale_variable(const Layout& layout, Eigen::VectorXd& x, PgdVariable v, double s) {
  for_each_segment(layout, v, [&](int o, int n) { x.segment(o, n) *= s; });
}

bool PgdSolution::contains(const Eigen::VectorXd& mu, double tol) const {
  if (mu.size() != n_params()) return false;
  for (int j = 0; j < n_params(); ++j) {
    const double slack = tol * std::max(1.0, pmeshes[j].upper() - pmeshes[j].lower());
    if (!(mu[j] >= pmeshes[j].lower() - slack && mu[j] <= pmeshes[j].upper() + slack)) return false;
  }
  return true;
}

double PgdSolution::factor(int mode, const Eigen::VectorXd& mu) const {
  double v = 1.0;
  for (int j = 0; j < n_params(); ++j) v *= pmeshes[j].evaluate(modes[mode].psi[j], mu[j]);
  return v;
}

Eigen::VectorXd PgdSolution::evaluate(const Eigen::VectorXd& mu, int n) const {
  if (modes.empty()) throw std::logic_error("PGD solution has no modes");
  if (!contains(mu)) throw std::out_of_range("parameter point outside the parameter box");
  const int m = n < 0 ? n_modes() : std::min(n, n_modes());
  Eigen::VectorXd x = Eigen::VectorXd::Zero(modes[0].spatial.size());
  for (int i = 0; i < m; ++i) x += factor(i, mu) * modes[i].spatial;
  return x;
}

std::vector<double> mode_amplitudes(const PgdSolution& sol, const Layout& layout, PgdVariable v) {
  std::vector<double> a;
  if (sol.modes.empty()) return a;
  const double s1 = variable_norm(layout, sol.modes[0].spatial, v);
  for (const auto& m : sol.modes) {
    const double s = variable_norm(layout, m.spatial, v);
    a.push_back(s1 > 0.0 ? s / s1 : 0.0);
  }
  return a;
}

namespace {

CompressionResult greedy_compress(const Eigen::MatrixXd& G, const std::vector<std::vector<Eigen::VectorXd>>& psi,
                                  const std::vector<ParametricMesh>& pm, double tol) {
  const int m = static_cast<int>(psi.size());
  const int np = static_cast<int>(pm.size());
  CompressionResult out;
  out.coefficients = Eigen::MatrixXd::Identity(m, m);
  out.psi = psi;
  if (m == 0) return out;

  std::vector<Eigen::SparseMatrix<double>> M(np);
  for (int j = 0; j < np; ++j) M[j] = pm[j].mass();
  auto dot = [&](int j, const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a.dot(M[j] * b); };

  double x2 = 0.0;
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < m; ++k) {
      double p = G(i, k);
      for (int j = 0; j < np; ++j) p *= dot(j, psi[i][j], psi[k][j]);
      x2 += p;
    }
  const double xnorm = std::sqrt(std::max(x2, 0.0));
  if (!(xnorm > 0.0)) {
    out.coefficients.resize(0, m);
    out.psi.clear();
    out.compressed = true;
    return out;
  }

  std::vector<Eigen::VectorXd> A;                  // coefficients of accepted terms
  std::vector<std::vector<Eigen::VectorXd>> Psi;  // factors of accepted terms
  // prod over axes except `skip` of <u_j, v_j>
  auto prod = [&](const std::vector<Eigen::VectorXd>& u, const std::vector<Eigen::VectorXd>& v, int skip) {
    double p = 1.0;
    for (int j = 0; j < np; ++j)
      if (j != skip) p *= dot(j, u[j], v[j]);
    return p;
  };
  auto spatial_coeffs = [&](const std::vector<Eigen::VectorXd>& f) {
    Eigen::VectorXd a(m);
    for (int i = 0; i < m; ++i) a[i] = prod(psi[i], f, -1);
    for (std::size_t k = 0; k < A.size(); ++k) a -= prod(Psi[k], f, -1) * A[k];
    return Eigen::VectorXd(a / prod(f, f, -1));
  };

  for (int K = 0; K <= m; ++K) {
    std::vector<Eigen::VectorXd> f = psi[K % m];
    for (auto& v : f) {
      const double s = signed_peak(v);
      if (s == 0.0)
        v.setOnes();
      else
        v /= s;
    }
    Eigen::VectorXd a = spatial_coeffs(f);
    for (int it = 0; it < 200; ++it) {
      double change = 0.0;
      for (int j = 0; j < np; ++j) {
        const Eigen::VectorXd ga = G * a;
        const double aga = a.dot(ga);
        if (!(aga > 0.0)) break;
        Eigen::VectorXd next = Eigen::VectorXd::Zero(f[j].size());
        for (int i = 0; i < m; ++i) next += ga[i] * prod(psi[i], f, j) * psi[i][j];
        for (std::size_t k = 0; k < A.size(); ++k) next -= A[k].dot(ga) * prod(Psi[k], f, j) * Psi[k][j];
        next /= aga * prod(f, f, j);
        const double s = signed_peak(next);
        if (s == 0.0) break;
        next /= s;
        change = std::max(change, max_abs(next - f[j]));
        f[j] = next;
        a = spatial_coeffs(f);
      }
      if (change < 1e-14) break;
    }
    const double term2 = a.dot(G * a) * prod(f, f, -1);
    if (std::sqrt(std::max(term2, 0.0)) <= tol * xnorm) break;
    if (K == m) return out;  // no rank reduction achieved
    A.push_back(a);
    Psi.push_back(f);
    // Joint re-projection of the spatial coefficients on the accepted factors.
    const int n = static_cast<int>(Psi.size());
    Eigen::MatrixXd H(n, n), P(n, m);
    for (int k = 0; k < n; ++k) {
      for (int l = 0; l < n; ++l) H(k, l) = prod(Psi[k], Psi[l], -1);
      for (int i = 0; i < m; ++i) P(k, i) = prod(psi[i], Psi[k], -1);
    }
    const Eigen::MatrixXd C = H.completeOrthogonalDecomposition().solve(P);
    for (int k = 0; k < n; ++k) A[k] = C.row(k).transpose();
  }
  const int n = static_cast<int>(A.size());
  out.coefficients.resize(n, m);
  for (int k = 0; k < n; ++k) out.coefficients.row(k) = A[k].transpose();
  out.psi = Psi;
  out.compressed = true;
  return out;
}

}  // namespace

CompressionResult compress_separated(const Eigen::MatrixXd& G, const std::vector<std::vector<Eigen::VectorXd>>& psi,
                                     const std::vector<ParametricMesh>& pm, double tol) {
  const int m = static_cast<int>(psi.size());
  const int np = static_cast<int>(pm.size());
  std::vector<Eigen::SparseMatrix<double>> M(np);
  for (int j = 0; j < np; ++j) M[j] = pm[j].mass();

  // Exact merge of terms whose factors are parallel on every axis: T(r, i) is the
  // scale of term i against representative r.
  std::vector<std::vector<Eigen::VectorXd>> reps;
  std::vector<std::pair<int, double>> owner(m, {-1, 0.0});
  for (int i = 0; i < m; ++i) {
    bool null = false;
    for (int j = 0; j < np; ++j) null = null || !(psi[i][j].dot(M[j] * psi[i][j]) > 0.0);
    if (null) continue;
    for (int r = 0; r < static_cast<int>(reps.size()) && owner[i].first < 0; ++r) {
      double s = 1.0;
      bool parallel = true;
      for (int j = 0; j < np && parallel; ++j) {
        const Eigen::VectorXd& u = reps[r][j];
        const double c = psi[i][j].dot(M[j] * u) / u.dot(M[j] * u);
        const Eigen::VectorXd d = psi[i][j] - c * u;
        parallel = d.dot(M[j] * d) <= 1e-24 * psi[i][j].dot(M[j] * psi[i][j]);
        s *= c;
      }
      if (parallel) owner[i] = {r, s};
    }
    if (owner[i].first < 0) {
      owner[i] = {static_cast<int>(reps.size()), 1.0};
      reps.push_back(psi[i]);
    }
  }
  const int nr = static_cast<int>(reps.size());
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(nr, m);
  for (int i = 0; i < m; ++i)
    if (owner[i].first >= 0) T(owner[i].first, i) = owner[i].second;
  if (nr == m && T.isIdentity(0.0)) return greedy_compress(G, psi, pm, tol);

  CompressionResult out;
  if (nr == 0) {
    out.coefficients.resize(0, m);
    out.compressed = true;
    return out;
  }
  const CompressionResult c = greedy_compress(T * G * T.transpose(), reps, pm, tol);
  out.coefficients = c.coefficients * T;
  out.psi = c.psi;
  out.compressed = true;
  return out;
}

namespace {

Eigen::VectorXd spatial_scaling(const Layout& layout, const Eigen::VectorXd& S) {
  Eigen::VectorXd w = Eigen::VectorXd::Ones(S.size());
  for (int v = 0; v < kPgdVariables; ++v) {
    const double s = variable_norm(layout, S, static_cast<PgdVariable>(v));
    if (s > 0.0) scale_variable(layout, w, static_cast<PgdVariable>(v), 1.0 / s);
  }
  return w;
}

CompressionResult compress_modes(const std::vector<PgdMode>& modes, const std::vector<ParametricMesh>& pm,
                                 const Layout& layout, double tol) {
  const int m = static_cast<int>(modes.size());
  const Eigen::VectorXd w = spatial_scaling(layout, modes[0].spatial);
  Eigen::MatrixXd S(w.size(), m);
  for (int i = 0; i < m; ++i) S.col(i) = w.cwiseProduct(modes[i].spatial);
  const Eigen::MatrixXd G = S.transpose() * S;
  std::vector<std::vector<Eigen::VectorXd>> psi;
  for (const auto& md : modes) psi.push_back(md.psi);
  return compress_separated(G, psi, pm, tol);
}

}  // namespace

PgdSolution pgd_compress(const PgdSolution& sol, const Layout& layout, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("compression tolerance must be positive");
  if (sol.modes.empty()) return sol;
  const CompressionResult c = compress_modes(sol.modes, sol.pmeshes, layout, tol);
  if (!c.compressed) return sol;
  PgdSolution out;
  out.pmeshes = sol.pmeshes;
  out.fingerprint = sol.fingerprint;
  for (int k = 0; k < c.coefficients.rows(); ++k) {
    PgdMode md;
    md.spatial = Eigen::VectorXd::Zero(sol.modes[0].spatial.size());
    for (int i = 0; i < sol.n_modes(); ++i) md.spatial += c.coefficients(k, i) * sol.modes[i].spatial;
    md.psi = c.psi[k];
    out.modes.push_back(std::move(md));
  }
  return out;
}

PgdEngine::PgdEngine(const HdgDiscretisation& disc, std::vector<ParametricMesh> pmeshes, PgdOptions opt)
    : disc_(disc), pm_(std::move(pmeshes)), opt_(std::move(opt)), solver_(disc) {
  const int np = disc.problem().n_params();
  if (static_cast<int>(pm_.size()) != np)
    throw std::invalid_argument("expected " + std::to_string(np) + " parametric meshes");
  const ParameterBox& box = disc.problem().box;
  for (int j = 0; j < np && !box.empty(); ++j)
    if (pm_[j].lower() < box.lower[j] - 1e-12 || pm_[j].upper() > box.upper[j] + 1e-12)
      throw std::invalid_argument("parametric mesh exceeds the parameter box on axis " + std::to_string(j));
  if (!(opt_.eta_star > 0.0 && opt_.eta_uhat > 0.0 && opt_.eta_r > 0.0) || opt_.max_sweeps < 1 || opt_.max_modes < 1 ||
      opt_.refine_passes < 0)
    throw std::invalid_argument("PGD tolerances must be positive");
  n_terms_ = disc.n_terms();
  n_data_ = disc.n_data();
  sol_.pmeshes = pm_;

  phi_.assign(np, {});
  lambda_.assign(np, {});
  mass_t_.assign(np, {});
  for (int j = 0; j < np; ++j) {
    const Eigen::VectorXd& qp = pm_[j].qp();
    auto sample = [&](const ParamFactor& f) {
      Eigen::VectorXd v(qp.size());
      for (int q = 0; q < qp.size(); ++q) v[q] = f(qp[q]);
      return v;
    };
    for (int t = 0; t < n_terms_; ++t) {
      const auto& fs = disc.term_factors(t);
      phi_[j].push_back(fs.empty() ? Eigen::VectorXd::Ones(qp.size()).eval() : sample(fs[j]));
      mass_t_[j].push_back(pm_[j].weighted_mass(phi_[j][t]));
    }
    for (int l = 0; l < n_data_; ++l) lambda_[j].push_back(sample(disc.problem().data[l].parametric[j]));
  }
  data_b_.assign(n_terms_, std::vector<Eigen::VectorXd>(n_data_));
  for (int t = 0; t < n_terms_; ++t)
    for (int l = 0; l < n_data_; ++l) {
      Eigen::VectorXd w = Eigen::VectorXd::Zero(n_terms_), c = Eigen::VectorXd::Zero(n_data_);
      w[t] = 1.0;
      c[l] = 1.0;
      Eigen::VectorXd b = disc.rhs(w, c);
      if (b.cwiseAbs().maxCoeff() > 0.0) data_b_[t][l] = std::move(b);
    }
}

void PgdEngine::log(const std::string& s) const {
  if (opt_.log) opt_.log(s);
}

Eigen::VectorXd PgdEngine::at_qp(int axis, const Eigen::VectorXd& psi) const { return pm_[axis].basis_at_qp() * psi; }

double PgdEngine::axis_integral(int axis, const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                                const Eigen::VectorXd& c) const {
  return (pm_[axis].qw().array() * a.array() * b.array() * c.array()).sum();
}

SpatialWeights PgdEngine::spatial_weights(const std::vector<Eigen::VectorXd>& psi) const {
  const int np = static_cast<int>(pm_.size());
  const int nm = sol_.n_modes();
  std::vector<Eigen::VectorXd> pq(np);
  for (int j = 0; j < np; ++j) pq[j] = at_qp(j, psi[j]);
  SpatialWeights sw;
  sw.beta = Eigen::VectorXd::Ones(n_terms_);
  sw.beta_data = Eigen::MatrixXd::Ones(n_terms_, n_data_);
  sw.beta_modes = Eigen::MatrixXd::Ones(n_terms_, nm);
  for (int j = 0; j < np; ++j) {
    std::vector<Eigen::VectorXd> mq(nm);
    for (int i = 0; i < nm; ++i) mq[i] = at_qp(j, sol_.modes[i].psi[j]);
    for (int t = 0; t < n_terms_; ++t) {
      sw.beta[t] *= axis_integral(j, phi_[j][t], pq[j], pq[j]);
      for (int l = 0; l < n_data_; ++l) sw.beta_data(t, l) *= axis_integral(j, phi_[j][t], lambda_[j][l], pq[j]);
      for (int i = 0; i < nm; ++i) sw.beta_modes(t, i) *= axis_integral(j, phi_[j][t], mq[i], pq[j]);
    }
  }
  return sw;
}

Eigen::VectorXd PgdEngine::spatial_rhs(const std::vector<Eigen::VectorXd>& psi) const {
  const SpatialWeights sw = spatial_weights(psi);
  Eigen::VectorXd R = Eigen::VectorXd::Zero(disc_.size());
  for (int t = 0; t < n_terms_; ++t) {
    for (int l = 0; l < n_data_; ++l)
      if (data_b_[t][l].size()) R += sw.beta_data(t, l) * data_b_[t][l];
    for (int i = 0; i < sol_.n_modes(); ++i) R -= sw.beta_modes(t, i) * mode_KS_[i][t];
  }
  return R;
}

Eigen::VectorXd PgdEngine::spatial_solve(const std::vector<Eigen::VectorXd>& psi) {
  const SpatialWeights sw = spatial_weights(psi);
  solver_.factorize(sw.beta);
  return solver_.solve(spatial_rhs(psi));
}

std::vector<Eigen::VectorXd> PgdEngine::term_products(const Eigen::VectorXd& x) const {
  std::vector<Eigen::VectorXd> out;
  for (int t = 0; t < n_terms_; ++t) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n_terms_);
    w[t] = 1.0;
    out.push_back(disc_.apply(w, x));
  }
  return out;
}

Eigen::VectorXd PgdEngine::parametric_test(const Eigen::VectorXd& S) const {
  const Layout& L = disc_.layout();
  // Signs that cancel every off-diagonal coupling of the condensable
  // system, leaving nu^-1 |L|^2 + tau |u - uhat|^2 when testing with S.
  Eigen::VectorXd T = S;
  scale_variable(L, T, PgdVariable::L, -1.0);
  scale_variable(L, T, PgdVariable::P, -1.0);
  scale_variable(L, T, PgdVariable::Uhat, -1.0);
  scale_variable(L, T, PgdVariable::Rho, 0.0);
  return T;
}

void PgdEngine::parametric_system(int axis, const Eigen::VectorXd& S, const std::vector<Eigen::VectorXd>& KS,
                                  const std::vector<Eigen::VectorXd>& psi, Eigen::SparseMatrix<double>& A,
                                  Eigen::VectorXd& rhs) const {
  const int np = static_cast<int>(pm_.size());
  const int nm = sol_.n_modes();
  const Eigen::VectorXd T = parametric_test(S);
  std::vector<Eigen::VectorXd> pq(np);
  for (int j = 0; j < np; ++j) pq[j] = at_qp(j, psi[j]);

  const int n = pm_[axis].n_dofs();
  A.resize(n, n);
  A.setZero();
  rhs = Eigen::VectorXd::Zero(n);
  for (int t = 0; t < n_terms_; ++t) {
    double c = T.dot(KS[t]);
    for (int j = 0; j < np; ++j)
      if (j != axis) c *= axis_integral(j, phi_[j][t], pq[j], pq[j]);
    A += c * mass_t_[axis][t];
    for (int l = 0; l < n_data_; ++l) {
      if (!data_b_[t][l].size()) continue;
      double d = T.dot(data_b_[t][l]);
      for (int j = 0; j < np; ++j)
        if (j != axis) d *= axis_integral(j, phi_[j][t], lambda_[j][l], pq[j]);
      rhs += d * pm_[axis].load(phi_[axis][t].cwiseProduct(lambda_[axis][l]));
    }
    for (int i = 0; i < nm; ++i) {
      double d = T.dot(mode_KS_[i][t]);
      for (int j = 0; j < np; ++j)
        if (j != axis) d *= axis_integral(j, phi_[j][t], at_qp(j, sol_.modes[i].psi[j]), pq[j]);
      rhs -= d * (mass_t_[axis][t] * sol_.modes[i].psi[axis]);
    }
  }
}

void PgdEngine::push_mode(PgdMode mode) {
  std::vector<Eigen::VectorXd> KS = term_products(mode.spatial);
  push_mode(std::move(mode), std::move(KS));
}

void PgdEngine::push_mode(PgdMode mode, std::vector<Eigen::VectorXd> KS) {
  if (sol_.modes.empty()) sigma1_ = variable_norm(disc_.layout(), mode.spatial, PgdVariable::Uhat);
  sol_.modes.push_back(std::move(mode));
  mode_KS_.push_back(std::move(KS));
}

void PgdEngine::update_factors() {
  const int np = static_cast<int>(pm_.size());
  const int m = sol_.n_modes();
  std::vector<Eigen::VectorXd> T(m);
  for (int i = 0; i < m; ++i) T[i] = parametric_test(sol_.modes[i].spatial);
  // tk(i, k) per term: T_i . K_t S_k; td(i, l) per term: T_i . b_{t,l}.
  std::vector<Eigen::MatrixXd> tk(n_terms_, Eigen::MatrixXd::Zero(m, m)), td(n_terms_, Eigen::MatrixXd::Zero(m, n_data_));
  for (int t = 0; t < n_terms_; ++t)
    for (int i = 0; i < m; ++i) {
      for (int k = 0; k < m; ++k) tk[t](i, k) = T[i].dot(mode_KS_[k][t]);
      for (int l = 0; l < n_data_; ++l)
        if (data_b_[t][l].size()) td[t](i, l) = T[i].dot(data_b_[t][l]);
    }
  for (int j = 0; j < np; ++j) {
    const int n = pm_[j].n_dofs();
    std::vector<std::vector<Eigen::VectorXd>> mq(m, std::vector<Eigen::VectorXd>(np));
    for (int i = 0; i < m; ++i)
      for (int a = 0; a < np; ++a) mq[i][a] = at_qp(a, sol_.modes[i].psi[a]);
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m * n);
    for (int t = 0; t < n_terms_; ++t) {
      for (int i = 0; i < m; ++i) {
        for (int k = 0; k < m; ++k) {
          double c = tk[t](i, k);
          for (int a = 0; a < np && c != 0.0; ++a)
            if (a != j) c *= axis_integral(a, phi_[a][t], mq[k][a], mq[i][a]);
          if (c == 0.0) continue;
          const Eigen::SparseMatrix<double>& M = mass_t_[j][t];
          for (int o = 0; o < M.outerSize(); ++o)
            for (Eigen::SparseMatrix<double>::InnerIterator it(M, o); it; ++it)
              trip.emplace_back(i * n + it.row(), k * n + it.col(), c * it.value());
        }
        for (int l = 0; l < n_data_; ++l) {
          double d = td[t](i, l);
          for (int a = 0; a < np && d != 0.0; ++a)
            if (a != j) d *= axis_integral(a, phi_[a][t], lambda_[a][l], mq[i][a]);
          if (d != 0.0) rhs.segment(i * n, n) += d * pm_[j].load(phi_[j][t].cwiseProduct(lambda_[j][l]));
        }
      }
    }
    Eigen::SparseMatrix<double> A(m * n, m * n);
    A.setFromTriplets(trip.begin(), trip.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(A);
    if (lu.info() != Eigen::Success) throw std::runtime_error("singular parametric update operator");
    const Eigen::VectorXd x = lu.solve(rhs);
    for (int i = 0; i < m; ++i) {
      Eigen::VectorXd next = x.segment(i * n, n);
      double s = signed_peak(next);
      if (s == 0.0 || !std::isfinite(s)) s = 1.0, next.setZero();
      sol_.modes[i].psi[j] = next / s;
      sol_.modes[i].spatial *= s;
      for (auto& v : mode_KS_[i]) v *= s;
      for (int t = 0; t < n_terms_; ++t) tk[t].col(i) *= s;
    }
  }
}

void PgdEngine::refine_modes() {
  for (int i = 0; i < sol_.n_modes(); ++i) {
    const SpatialWeights sw = spatial_weights(sol_.modes[i].psi);
    Eigen::VectorXd R = spatial_rhs(sol_.modes[i].psi);
    for (int t = 0; t < n_terms_; ++t) R += sw.beta_modes(t, i) * mode_KS_[i][t];
    solver_.factorize(sw.beta);
    sol_.modes[i].spatial = solver_.solve(R);
    mode_KS_[i] = term_products(sol_.modes[i].spatial);
  }
}

void PgdEngine::compress() {
  const int m = sol_.n_modes();
  const CompressionResult c = compress_modes(sol_.modes, pm_, disc_.layout(), opt_.compress_tol);
  if (!c.compressed || c.coefficients.rows() >= m) return;
  std::vector<PgdMode> modes;
  std::vector<std::vector<Eigen::VectorXd>> KS;
  for (int k = 0; k < c.coefficients.rows(); ++k) {
    PgdMode md;
    md.spatial = Eigen::VectorXd::Zero(disc_.size());
    std::vector<Eigen::VectorXd> ks(n_terms_, Eigen::VectorXd::Zero(disc_.size()));
    for (int i = 0; i < m; ++i) {
      const double a = c.coefficients(k, i);
      if (a == 0.0) continue;
      md.spatial += a * sol_.modes[i].spatial;
      for (int t = 0; t < n_terms_; ++t) ks[t] += a * mode_KS_[i][t];
    }
    md.psi = c.psi[k];
    modes.push_back(std::move(md));
    KS.push_back(std::move(ks));
  }
  std::ostringstream s;
  s << "compression: " << m << " -> " << modes.size() << " modes";
  log(s.str());
  sol_.modes = std::move(modes);
  mode_KS_ = std::move(KS);
}

const PgdSolution& PgdEngine::run(int max_new) {
  const Layout& L = disc_.layout();
  const int np = static_cast<int>(pm_.size());
  const PgdVariable amp_var = L.n_hyb > 0 ? PgdVariable::Uhat : PgdVariable::U;
  const int limit = max_new < 0 ? opt_.max_modes : max_new;
  int computed = 0;
  while (!finished_ && computed < limit && enriched_ < opt_.max_modes) {
    std::vector<Eigen::VectorXd> psi(np);
    for (int j = 0; j < np; ++j) psi[j] = Eigen::VectorXd::Ones(pm_[j].n_dofs());
    Eigen::VectorXd S = spatial_solve(psi);
    std::vector<Eigen::VectorXd> KS = term_products(S);
    PgdMode mode;
    mode.converged = false;
    bool zero = variable_norm(L, S, amp_var) == 0.0;
    for (int q = 1; q <= opt_.max_sweeps && !zero; ++q) {
      double r_psi = 0.0;
      for (int j = 0; j < np && !zero; ++j) {
        Eigen::SparseMatrix<double> A;
        Eigen::VectorXd b;
        parametric_system(j, S, KS, psi, A, b);
        const double bn = b.norm();
        r_psi = std::max(r_psi, bn > 0.0 ? (A * psi[j] - b).norm() / bn : 0.0);
        A.makeCompressed();
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(A);
        if (lu.info() != Eigen::Success) {
          std::ostringstream s;
          s << "singular parametric operator on axis " << j << " in mode " << sol_.n_modes() + 1;
          throw std::runtime_error(s.str());
        }
        Eigen::VectorXd next = lu.solve(b);
        const double s = signed_peak(next);
        if (s == 0.0 || !std::isfinite(s)) {
          zero = true;
          break;
        }
        psi[j] = next / s;
        S *= s;
        for (auto& v : KS) v *= s;
      }
      if (zero) break;
      const SpatialWeights sw = spatial_weights(psi);
      const Eigen::VectorXd R = spatial_rhs(psi);
      Eigen::VectorXd KSb = Eigen::VectorXd::Zero(S.size());
      for (int t = 0; t < n_terms_; ++t) KSb += sw.beta[t] * KS[t];
      const double rn = R.norm();
      const double r_s = rn > 0.0 ? (KSb - R).norm() / rn : 0.0;
      solver_.factorize(sw.beta);
      const Eigen::VectorXd Snew = solver_.solve(R);
      const double su = variable_norm(L, Snew, amp_var);
      const Eigen::VectorXd dS = Snew - S;
      mode.eps_uhat = su > 0.0 ? variable_norm(L, dS, amp_var) / su : 0.0;
      mode.eps_r = std::max(r_psi, r_s);
      S = Snew;
      KS = term_products(S);
      mode.sweeps = q;
      if (su == 0.0) zero = true;
      if (mode.eps_uhat <= opt_.eta_uhat && mode.eps_r <= opt_.eta_r) {
        mode.converged = true;
        break;
      }
    }
    const double sigma = variable_norm(L, S, amp_var);
    const double ref = sol_.modes.empty() ? sigma : sigma1_;
    if (zero || !(sigma > 1e-10 * ref)) {
      log("mode " + std::to_string(sol_.n_modes() + 1) + " has zero amplitude, stopping");
      finished_ = true;
      break;
    }
    if (!mode.converged) {
      std::ostringstream s;
      s << "warning: mode " << sol_.n_modes() + 1 << " hit the sweep cap (" << opt_.max_sweeps
        << "), eps_uhat=" << mode.eps_uhat << " eps_r=" << mode.eps_r;
      log(s.str());
    }
    mode.spatial = std::move(S);
    mode.psi = std::move(psi);
    push_mode(std::move(mode), std::move(KS));
    ++computed;
    ++enriched_;
    if (opt_.update_factors) update_factors();
    for (int pass = 0; pass < opt_.refine_passes && sol_.n_modes() > 1; ++pass) {
      refine_modes();
      if (opt_.update_factors) update_factors();
    }
    const double rel = variable_norm(L, sol_.modes.back().spatial, amp_var) /
                       variable_norm(L, sol_.modes.front().spatial, amp_var);
    {
      std::ostringstream s;
      s << "mode " << sol_.n_modes() << ": sweeps=" << sol_.modes.back().sweeps
        << " eps_uhat=" << sol_.modes.back().eps_uhat << " eps_r=" << sol_.modes.back().eps_r
        << " sigma_uhat/sigma_uhat1=" << rel;
      log(s.str());
    }
    if (opt_.compress_every > 0 && enriched_ % opt_.compress_every == 0) compress();
    if (rel <= opt_.eta_star) finished_ = true;
  }
  return sol_;
}

namespace {

void accumulate(FieldErrors& acc, const FieldErrors& e, double w) {
  for (int v = 0; v < 4; ++v) {
    acc.L2[v] += w * e.L2[v];
    acc.ref2[v] += w * e.ref2[v];
  }
}

// Tensor-product parametric quadrature: calls f(mu, weight).
template <class F>
void for_each_parameter_point(const std::vector<Eigen::VectorXd>& pts, const std::vector<Eigen::VectorXd>& wts, F&& f) {
  const int np = static_cast<int>(pts.size());
  std::vector<int> idx(np, 0);
  Eigen::VectorXd mu(np);
  while (true) {
    double w = 1.0;
    for (int j = 0; j < np; ++j) {
      mu[j] = pts[j][idx[j]];
      w *= wts[j][idx[j]];
    }
    f(mu, w);
    int j = 0;
    while (j < np && ++idx[j] == pts[j].size()) idx[j++] = 0;
    if (j == np) break;
  }
}

}  // namespace

FieldErrors pgd_l2_error(const PgdSolution& sol, const HdgDiscretisation& disc, const ExactSolution& exact,
                         int n_modes) {
  std::vector<Eigen::VectorXd> pts, wts;
  for (const auto& pm : sol.pmeshes) {
    pts.push_back(pm.qp());
    wts.push_back(pm.qw());
  }
  FieldErrors acc;
  for_each_parameter_point(pts, wts, [&](const Eigen::VectorXd& mu, double w) {
    accumulate(acc, disc.errors(sol.evaluate(mu, n_modes), mu, exact), w);
  });
  return acc;
}

FieldErrors hdg_l2_error(const HdgDiscretisation& disc, const ExactSolution& exact, int n_points) {
  const ParameterBox& box = disc.problem().box;
  const QuadRule1D gl = gauss_legendre(n_points);
  std::vector<Eigen::VectorXd> pts, wts;
  for (int j = 0; j < box.size(); ++j) {
    const double a = box.lower[j], b = box.upper[j];
    if (a == b) {
      pts.push_back(Eigen::VectorXd::Constant(1, a));
      wts.push_back(Eigen::VectorXd::Ones(1));
    } else {
      pts.push_back(((gl.points.array() + 1.0) * 0.5 * (b - a) + a).matrix());
      wts.push_back(gl.weights * 0.5 * (b - a));
    }
  }
  FieldErrors acc;
  CondensedSolver solver(disc);
  for_each_parameter_point(pts, wts, [&](const Eigen::VectorXd& mu, double w) {
    const Eigen::VectorXd wt = disc.term_weights(mu);
    solver.factorize(wt);
    const Eigen::VectorXd x = solver.solve(disc.rhs(wt, disc.data_coefficients(mu)));
    accumulate(acc, disc.errors(x, mu, exact), w);
  });
  return acc;
}

}  // namespace hdgpgd
