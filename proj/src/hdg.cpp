#include "hdgpgd/hdg.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hdgpgd {

void finalize_mapping(StokesProblem& P, double prune_tol) {
  P.mapping.set_box(P.box);
  PruneOptions<2> opt;
  opt.tol = prune_tol;
  const ReferenceMesh& m = P.mesh;
  const Eigen::Matrix2Xd ref = simplex_nodes(m.k);
  const int stride = std::max(1, m.n_elements() / 64);
  for (int e = 0; e < m.n_elements(); e += stride) {
    for (int i = 0; i < ref.cols(); ++i) {
      SpatialPoint<2> p;
      p.x = m.element_nodes[e].col(i);
      p.element = e;
      p.xi = ref.col(i);
      opt.samples.push_back(p);
    }
  }
  const MatrixField J = sep_jacobian(P.mapping);
  P.det = sep_det(J, opt);
  P.cof = sep_transpose(sep_adj(J, opt));
}

double FieldErrors::relative(int v) const {
  if (ref2[v] <= 1e-28) return std::sqrt(L2[v]);
  return std::sqrt(L2[v] / ref2[v]);
}

HdgDiscretisation::HdgDiscretisation(std::shared_ptr<const StokesProblem> problem) : problem_(std::move(problem)) {
  const StokesProblem& P = *problem_;
  const ReferenceMesh& mesh = P.mesh;
  const int k = mesh.k;
  skeleton_ = build_skeleton(mesh);
  n_det_ = P.det.rank();
  n_cof_ = P.cof.rank();
  n_map_ = P.mapping.rank();
  if (n_cof_ == 0 || n_det_ == 0) throw std::invalid_argument("problem mapping not finalized (det/cof empty)");

  Layout& L = layout_;
  L.nloc = simplex_ndofs(k);
  L.n_el = mesh.n_elements();
  L.block = 7 * L.nloc + 1;
  L.hyb0 = L.n_el * L.block;
  L.n_hyb = skeleton_.hybrid_dofs();
  L.rho0 = L.hyb0 + L.n_hyb;
  L.kappa = !skeleton_.has_neumann;
  L.size = L.rho0 + L.n_rho();

  double ell = P.ell;
  if (ell <= 0.0) {
    Eigen::Vector2d lo = Eigen::Vector2d::Constant(1e300), hi = Eigen::Vector2d::Constant(-1e300);
    for (const auto& X : mesh.element_nodes) {
      lo = lo.cwiseMin(X.rowwise().minCoeff());
      hi = hi.cwiseMax(X.rowwise().maxCoeff());
    }
    ell = (hi - lo).norm();
  }
  tau_ref_ = P.tau * P.nu / ell;

  const int order = 2 * k + 2 + P.quad_increment;
  vol_ = simplex_basis(k, quad_rule_triangle(order));
  nqv_ = static_cast<int>(vol_.weights.size());
  const QuadRule1D fr = quad_rule_unit_segment(order);
  nqf_ = static_cast<int>(fr.points.size());
  for (int f = 0; f < 3; ++f) {
    Eigen::Matrix2Xd xi(2, nqf_);
    for (int q = 0; q < nqf_; ++q) xi.col(q) = simplex_face_point(f, fr.points[q]);
    face_tab_[f] = simplex_basis(k, xi);
    face_tab_[f].weights = fr.weights;
  }
  phi_fwd_.resize(nqf_, k + 1);
  phi_rev_.resize(nqf_, k + 1);
  for (int q = 0; q < nqf_; ++q) {
    phi_fwd_.row(q) = lagrange_1d(k, fr.points[q]).transpose();
    phi_rev_.row(q) = lagrange_1d(k, 1.0 - fr.points[q]).transpose();
  }

  cache_.resize(L.n_el);
  kappa_w_ = Eigen::VectorXd::Zero(L.n_el);
  double total_boundary = 0.0;
  for (int e = 0; e < L.n_el; ++e) {
    ElementCache& ec = cache_[e];
    const Eigen::Matrix2Xd& X = mesh.element_nodes[e];
    ec.dV.resize(nqv_);
    ec.dNdx.resize(nqv_, L.nloc);
    ec.dNdy.resize(nqv_, L.nloc);
    ec.x = X * vol_.values.transpose();
    ec.det.resize(n_det_ * nqv_);
    ec.cof.resize(n_cof_ * nqv_);
    ec.map.resize(n_map_ * nqv_);
    for (int q = 0; q < nqv_; ++q) {
      Eigen::Matrix2d G;
      G.col(0) = X * vol_.dxi.row(q).transpose();
      G.col(1) = X * vol_.deta.row(q).transpose();
      const double dj = G.determinant();
      if (!(dj > 0.0)) throw std::runtime_error("non-positive reference Jacobian in element " + std::to_string(e));
      ec.dV[q] = vol_.weights[q] * dj;
      const Eigen::Matrix2d Gi = G.inverse();
      // grad_x N = G^{-T} grad_xi N
      ec.dNdx.row(q) = Gi(0, 0) * vol_.dxi.row(q) + Gi(1, 0) * vol_.deta.row(q);
      ec.dNdy.row(q) = Gi(0, 1) * vol_.dxi.row(q) + Gi(1, 1) * vol_.deta.row(q);
      SpatialPoint<2> sp;
      sp.x = ec.x.col(q);
      sp.element = e;
      sp.xi = vol_.points.col(q);
      for (int t = 0; t < n_det_; ++t) ec.det[t * nqv_ + q] = P.det.terms()[t].spatial(sp);
      for (int t = 0; t < n_cof_; ++t) ec.cof[t * nqv_ + q] = P.cof.terms()[t].spatial(sp);
      for (int t = 0; t < n_map_; ++t) ec.map[t * nqv_ + q] = P.mapping.terms()[t].spatial(sp);
    }

    int hoff = 0;
    for (int f = 0; f < 3; ++f) {
      FaceCache& fc = ec.faces[f];
      fc.face = skeleton_.element_faces[e][f];
      const Face& F = skeleton_.faces[fc.face];
      fc.tag = F.tag;
      fc.boundary = !F.interior();
      fc.kind = fc.boundary ? mesh.tags[F.tag].kind : BoundaryKind::Neumann;
      fc.hybrid = F.hybrid >= 0;
      fc.reversed = skeleton_.reversed(mesh, e, f);
      const BasisTabulation& ft = face_tab_[f];
      fc.x = X * ft.values.transpose();
      fc.n.resize(2, nqf_);
      fc.ds.resize(nqf_);
      fc.tau_s = Eigen::VectorXd::Ones(nqf_);
      fc.cof.resize(n_cof_ * nqf_);
      fc.map.resize(n_map_ * nqf_);
      const Eigen::Vector2d dxi = simplex_face_point(f, 1.0) - simplex_face_point(f, 0.0);
      for (int q = 0; q < nqf_; ++q) {
        Eigen::Matrix2d G;
        G.col(0) = X * ft.dxi.row(q).transpose();
        G.col(1) = X * ft.deta.row(q).transpose();
        const Eigen::Vector2d d = G * dxi;
        const double len = d.norm();
        fc.n.col(q) = Eigen::Vector2d(d.y(), -d.x()) / len;
        fc.ds[q] = len * ft.weights[q];
        if (P.tau_scale) fc.tau_s[q] = P.tau_scale(fc.x.col(q), fc.n.col(q));
        SpatialPoint<2> sp;
        sp.x = fc.x.col(q);
        sp.element = e;
        sp.xi = ft.points.col(q);
        for (int t = 0; t < n_cof_; ++t) fc.cof[t * nqf_ + q] = P.cof.terms()[t].spatial(sp);
        for (int t = 0; t < n_map_; ++t) fc.map[t * nqf_ + q] = P.mapping.terms()[t].spatial(sp);
      }
      if (fc.boundary) ec.boundary_measure += fc.ds.sum();
      if (fc.hybrid) {
        fc.hyb_offset = hoff;
        for (int a = 0; a <= k; ++a)
          for (int j = 0; j < 2; ++j) ec.hybrid_dofs.push_back((F.hybrid * (k + 1) + a) * 2 + j);
        hoff += 2 * (k + 1);
      }
    }
    kappa_w_[e] = ec.boundary_measure;
    total_boundary += ec.boundary_measure;
  }
  kappa_w_ /= total_boundary;
}

const std::vector<ParamFactor>& HdgDiscretisation::term_factors(int t) const {
  static const std::vector<ParamFactor> none;
  if (t < n_det_) return problem_->det.terms()[t].parametric;
  if (t < n_det_ + n_cof_) return problem_->cof.terms()[t - n_det_].parametric;
  return none;
}

Eigen::VectorXd HdgDiscretisation::term_weights(const Eigen::VectorXd& mu) const {
  if (mu.size() != problem_->n_params()) throw std::invalid_argument("parameter point has wrong dimension");
  if (!problem_->box.contains(mu)) throw std::out_of_range("parameter point outside the parameter box");
  Eigen::VectorXd w(n_terms());
  for (int t = 0; t < n_det_; ++t) w[t] = problem_->det.weight(t, mu);
  for (int t = 0; t < n_cof_; ++t) w[n_det_ + t] = problem_->cof.weight(t, mu);
  w[unit_term()] = 1.0;
  return w;
}

Eigen::VectorXd HdgDiscretisation::data_coefficients(const Eigen::VectorXd& mu) const {
  Eigen::VectorXd c(n_data());
  for (int l = 0; l < n_data(); ++l) {
    double v = 1.0;
    for (int j = 0; j < mu.size(); ++j) v *= problem_->data[l].parametric[j](mu[j]);
    c[l] = v;
  }
  return c;
}

void HdgDiscretisation::combine_volume(const ElementCache& ec, const Eigen::VectorXd& w, Eigen::VectorXd& d,
                                       std::vector<Mat2>& C) const {
  d = Eigen::VectorXd::Zero(nqv_);
  C.assign(nqv_, Mat2::Zero());
  for (int t = 0; t < n_det_; ++t)
    if (w[t] != 0.0) d += w[t] * ec.det.segment(t * nqv_, nqv_);
  for (int t = 0; t < n_cof_; ++t) {
    const double wt = w[n_det_ + t];
    if (wt == 0.0) continue;
    for (int q = 0; q < nqv_; ++q) C[q] += wt * ec.cof[t * nqv_ + q];
  }
}

double HdgDiscretisation::min_volume_det(const Eigen::VectorXd& w) const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& ec : cache_) {
    Eigen::VectorXd d = Eigen::VectorXd::Zero(nqv_);
    for (int t = 0; t < n_det_; ++t) d += w[t] * ec.det.segment(t * nqv_, nqv_);
    m = std::min(m, d.minCoeff());
  }
  return m;
}

void HdgDiscretisation::combine_face(const FaceCache& fc, const Eigen::VectorXd& w, std::vector<Mat2>& C) const {
  C.assign(nqf_, Mat2::Zero());
  for (int t = 0; t < n_cof_; ++t) {
    const double wt = w[n_det_ + t];
    if (wt == 0.0) continue;
    for (int q = 0; q < nqf_; ++q) C[q] += wt * fc.cof[t * nqf_ + q];
  }
}

ElementBlocks HdgDiscretisation::element_blocks(int e, const Eigen::VectorXd& w) const {
  const ElementCache& ec = cache_[e];
  const int nl = layout_.nloc;
  const int NT = layout_.block;
  const int k = mesh().k;
  const int nh = static_cast<int>(ec.hybrid_dofs.size());
  const double nu = problem_->nu;
  ElementBlocks b;
  b.unit = w[unit_term()];
  b.A = Eigen::MatrixXd::Zero(NT, NT);
  b.B = Eigen::MatrixXd::Zero(NT, nh);
  b.C = Eigen::MatrixXd::Zero(nh, NT);
  b.H = Eigen::MatrixXd::Zero(nh, nh);
  b.g = Eigen::VectorXd::Zero(nh);
  b.hybrid_dofs = ec.hybrid_dofs;

  Eigen::VectorXd d;
  std::vector<Mat2> C;
  combine_volume(ec, w, d, C);
  const Eigen::MatrixXd& N = vol_.values;
  const Eigen::MatrixXd Md = N.transpose() * (ec.dV.cwiseProduct(d)).asDiagonal() * N;
  Eigen::MatrixXd P0(nqv_, nl), P1(nqv_, nl);
  for (int q = 0; q < nqv_; ++q) {
    P0.row(q) = C[q](0, 0) * ec.dNdx.row(q) + C[q](0, 1) * ec.dNdy.row(q);
    P1.row(q) = C[q](1, 0) * ec.dNdx.row(q) + C[q](1, 1) * ec.dNdy.row(q);
  }
  const Eigen::MatrixXd G[2] = {P0.transpose() * ec.dV.asDiagonal() * N, P1.transpose() * ec.dV.asDiagonal() * N};

  const int ou = 4 * nl, op = 6 * nl, oz = 7 * nl;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const int oL = (2 * i + j) * nl;
      b.A.block(oL, oL, nl, nl) = (-1.0 / nu) * Md;
      b.A.block(oL, ou + j * nl, nl, nl) = G[i];
      b.A.block(ou + j * nl, oL, nl, nl) = G[i].transpose();
    }
  }
  for (int j = 0; j < 2; ++j) {
    b.A.block(ou + j * nl, op, nl, nl) = G[j].transpose();
    b.A.block(op, ou + j * nl, nl, nl) = G[j];
  }

  Eigen::VectorXd a = Eigen::VectorXd::Zero(nl);
  double perimeter = 0.0;
  const double ut = b.unit * tau_ref_;
  std::vector<Mat2> Cf;
  for (int f = 0; f < 3; ++f) {
    const FaceCache& fc = ec.faces[f];
    const Eigen::MatrixXd& Nf = face_tab_[f].values;
    const Eigen::VectorXd dst = fc.ds.cwiseProduct(fc.tau_s);
    const Eigen::MatrixXd Ft = Nf.transpose() * dst.asDiagonal() * Nf;
    for (int j = 0; j < 2; ++j) b.A.block(ou + j * nl, ou + j * nl, nl, nl) += ut * Ft;
    a += Nf.transpose() * fc.ds;
    perimeter += fc.ds.sum();
    if (!fc.hybrid) continue;

    combine_face(fc, w, Cf);
    const Eigen::MatrixXd& phi = face_phi(fc);
    Eigen::VectorXd m0(nqf_), m1(nqf_), t0(nqf_), t1(nqf_);
    for (int q = 0; q < nqf_; ++q) {
      const Vec2 m = Cf[q] * fc.n.col(q);
      m0[q] = m[0];
      m1[q] = m[1];
      t0[q] = -fc.n(1, q);
      t1[q] = fc.n(0, q);
    }
    const Eigen::VectorXd* mm[2] = {&m0, &m1};
    const Eigen::VectorXd* tt[2] = {&t0, &t1};
    Eigen::MatrixXd Wm[2];
    for (int i = 0; i < 2; ++i) Wm[i] = Nf.transpose() * (fc.ds.cwiseProduct(*mm[i])).asDiagonal() * phi;
    const Eigen::MatrixXd Wt = ut * (Nf.transpose() * dst.asDiagonal() * phi);
    const int off = fc.hyb_offset;
    auto col = [&](int aa, int j) { return off + 2 * aa + j; };
    for (int aa = 0; aa <= k; ++aa) {
      for (int j = 0; j < 2; ++j) {
        const int c = col(aa, j);
        for (int i = 0; i < 2; ++i) b.B.col(c).segment((2 * i + j) * nl, nl) += Wm[i].col(aa);
        b.B.col(c).segment(ou + j * nl, nl) += Wt.col(aa);
        b.B.col(c).segment(op, nl) += Wm[j].col(aa);
        b.g[c] += phi.col(aa).dot(fc.ds.cwiseProduct(*mm[j]));
      }
    }
    if (fc.kind != BoundaryKind::Slip || !fc.boundary) {
      const Eigen::MatrixXd Pt = ut * (phi.transpose() * dst.asDiagonal() * phi);
      for (int aa = 0; aa <= k; ++aa)
        for (int j = 0; j < 2; ++j) {
          b.C.row(col(aa, j)) = b.B.col(col(aa, j)).transpose();
          for (int bb = 0; bb <= k; ++bb) b.H(col(aa, j), col(bb, j)) = -Pt(aa, bb);
        }
    } else {
      // Slot 0 enforces uhat . m = 0, slot 1 zero tangential flux.
      for (int j = 0; j < 2; ++j) {
        const Eigen::MatrixXd Pm = phi.transpose() * (fc.ds.cwiseProduct(*mm[j])).asDiagonal() * phi;
        const Eigen::MatrixXd Ptt = ut * (phi.transpose() * (dst.cwiseProduct(*tt[j])).asDiagonal() * phi);
        const Eigen::MatrixXd Cu = -ut * (phi.transpose() * (dst.cwiseProduct(*tt[j])).asDiagonal() * Nf);
        for (int aa = 0; aa <= k; ++aa) {
          for (int bb = 0; bb <= k; ++bb) {
            b.H(col(aa, 0), col(bb, j)) = Pm(aa, bb);
            b.H(col(aa, 1), col(bb, j)) = Ptt(aa, bb);
          }
          b.C.row(col(aa, 1)).segment(ou + j * nl, nl) = Cu.row(aa);
        }
        for (int i = 0; i < 2; ++i) {
          const Eigen::VectorXd wij = fc.ds.cwiseProduct(*mm[i]).cwiseProduct(*tt[j]);
          const Eigen::MatrixXd CL = -(phi.transpose() * wij.asDiagonal() * Nf);
          for (int aa = 0; aa <= k; ++aa) b.C.row(col(aa, 1)).segment((2 * i + j) * nl, nl) = CL.row(aa);
        }
      }
    }
  }
  a /= perimeter;
  b.A.block(op, oz, nl, 1) = b.unit * a;
  b.A.block(oz, op, 1, nl) = b.unit * a.transpose();
  return b;
}

Eigen::VectorXd HdgDiscretisation::apply(const Eigen::VectorXd& w, const Eigen::VectorXd& x) const {
  const Layout& L = layout_;
  Eigen::VectorXd r = Eigen::VectorXd::Zero(L.size);
  for (int e = 0; e < L.n_el; ++e) {
    const ElementBlocks b = element_blocks(e, w);
    const int nh = static_cast<int>(b.hybrid_dofs.size());
    Eigen::VectorXd uh(nh);
    for (int i = 0; i < nh; ++i) uh[i] = x[L.hyb0 + b.hybrid_dofs[i]];
    const auto X = x.segment(e * L.block, L.block);
    const double rho = x[L.rho(e)];
    r.segment(e * L.block, L.block) += b.A * X - b.B * uh;
    r[L.zeta(e)] -= b.unit * rho;
    const Eigen::VectorXd rh = b.C * X + b.H * uh;
    for (int i = 0; i < nh; ++i) r[L.hyb0 + b.hybrid_dofs[i]] += rh[i];
    r[L.rho(e)] += b.g.dot(uh);
    if (L.kappa) {
      r[L.rho(e)] += b.unit * kappa_w_[e] * x[L.kappa_index()];
      r[L.kappa_index()] += b.unit * kappa_w_[e] * rho;
    }
  }
  return r;
}

Eigen::VectorXd HdgDiscretisation::rhs(const Eigen::VectorXd& w, const Eigen::VectorXd& c) const {
  const StokesProblem& P = *problem_;
  const Layout& L = layout_;
  const int nl = L.nloc;
  const int k = mesh().k;
  const double unit = w[unit_term()];
  const double ut = unit * tau_ref_;
  Eigen::VectorXd R = Eigen::VectorXd::Zero(L.size);

  bool any_source = false;
  for (int l = 0; l < n_data(); ++l)
    if (P.data[l].kind == DataTerm::Kind::Source && c[l] != 0.0) any_source = true;

  Eigen::VectorXd d;
  std::vector<Mat2> C, Cf;
  for (int e = 0; e < L.n_el; ++e) {
    const ElementCache& ec = cache_[e];
    const int o = e * L.block;
    if (any_source) {
      combine_volume(ec, w, d, C);
      Eigen::VectorXd s0 = Eigen::VectorXd::Zero(nqv_), s1 = Eigen::VectorXd::Zero(nqv_);
      for (int l = 0; l < n_data(); ++l) {
        if (P.data[l].kind != DataTerm::Kind::Source || c[l] == 0.0) continue;
        for (int q = 0; q < nqv_; ++q) {
          SpatialPoint<2> sp;
          sp.x = ec.x.col(q);
          sp.element = e;
          sp.xi = vol_.points.col(q);
          const Vec2 s = c[l] * P.data[l].value(sp);
          s0[q] += s[0];
          s1[q] += s[1];
        }
      }
      const Eigen::VectorXd wd = ec.dV.cwiseProduct(d);
      R.segment(o + 4 * nl, nl) += vol_.values.transpose() * wd.cwiseProduct(s0);
      R.segment(o + 5 * nl, nl) += vol_.values.transpose() * wd.cwiseProduct(s1);
    }
    for (int f = 0; f < 3; ++f) {
      const FaceCache& fc = ec.faces[f];
      if (!fc.boundary || fc.kind == BoundaryKind::Slip) continue;
      const DataTerm::Kind want = fc.kind == BoundaryKind::Dirichlet ? DataTerm::Kind::Dirichlet : DataTerm::Kind::Neumann;
      Eigen::Matrix2Xd gv = Eigen::Matrix2Xd::Zero(2, nqf_);
      bool any = false;
      for (int l = 0; l < n_data(); ++l) {
        if (P.data[l].kind != want || P.data[l].tag != fc.tag || c[l] == 0.0) continue;
        any = true;
        for (int q = 0; q < nqf_; ++q) {
          SpatialPoint<2> sp;
          sp.x = fc.x.col(q);
          sp.element = e;
          sp.xi = face_tab_[f].points.col(q);
          gv.col(q) += c[l] * P.data[l].value(sp);
        }
      }
      if (!any) continue;
      const Eigen::MatrixXd& Nf = face_tab_[f].values;
      if (fc.kind == BoundaryKind::Dirichlet) {
        combine_face(fc, w, Cf);
        Eigen::VectorXd m0(nqf_), m1(nqf_), un(nqf_);
        for (int q = 0; q < nqf_; ++q) {
          const Vec2 m = Cf[q] * fc.n.col(q);
          m0[q] = m[0];
          m1[q] = m[1];
          un[q] = gv.col(q).dot(m);
        }
        const Eigen::VectorXd* mm[2] = {&m0, &m1};
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j)
            R.segment(o + (2 * i + j) * nl, nl) +=
                Nf.transpose() * fc.ds.cwiseProduct(*mm[i]).cwiseProduct(gv.row(j).transpose());
        const Eigen::VectorXd dst = fc.ds.cwiseProduct(fc.tau_s);
        for (int j = 0; j < 2; ++j)
          R.segment(o + (4 + j) * nl, nl) += ut * (Nf.transpose() * dst.cwiseProduct(gv.row(j).transpose()));
        R.segment(o + 6 * nl, nl) += Nf.transpose() * fc.ds.cwiseProduct(un);
        R[L.rho(e)] -= fc.ds.dot(un);
      } else {
        const Eigen::MatrixXd& phi = face_phi(fc);
        for (int aa = 0; aa <= k; ++aa)
          for (int j = 0; j < 2; ++j) {
            const int h = ec.hybrid_dofs[fc.hyb_offset + 2 * aa + j];
            R[L.hyb0 + h] -= unit * phi.col(aa).dot(fc.ds.cwiseProduct(gv.row(j).transpose()));
          }
      }
    }
  }
  return R;
}

FieldErrors HdgDiscretisation::errors(const Eigen::VectorXd& x, const Eigen::VectorXd& mu,
                                      const ExactSolution& exact) const {
  const StokesProblem& P = *problem_;
  const Layout& L = layout_;
  const int nl = L.nloc;
  const int k = mesh().k;
  const Eigen::VectorXd w = term_weights(mu);
  Eigen::VectorXd mw(n_map_);
  for (int t = 0; t < n_map_; ++t) mw[t] = P.mapping.weight(t, mu);

  FieldErrors fe;
  Eigen::VectorXd d;
  std::vector<Mat2> C, Cf;
  for (int e = 0; e < L.n_el; ++e) {
    const ElementCache& ec = cache_[e];
    combine_volume(ec, w, d, C);
    const int o = e * L.block;
    const Eigen::MatrixXd& N = vol_.values;
    Eigen::MatrixXd Lh(nqv_, 4);
    for (int c = 0; c < 4; ++c) Lh.col(c) = N * x.segment(o + c * nl, nl);
    const Eigen::VectorXd u0 = N * x.segment(o + 4 * nl, nl);
    const Eigen::VectorXd u1 = N * x.segment(o + 5 * nl, nl);
    const Eigen::VectorXd ph = N * x.segment(o + 6 * nl, nl);
    for (int q = 0; q < nqv_; ++q) {
      Vec2 xm = Vec2::Zero();
      for (int t = 0; t < n_map_; ++t) xm += mw[t] * ec.map[t * nqv_ + q];
      const double dv = ec.dV[q] * d[q];
      if (exact.u) {
        const Vec2 ue = exact.u(xm, mu);
        fe.L2[VarU] += dv * (Vec2(u0[q], u1[q]) - ue).squaredNorm();
        fe.ref2[VarU] += dv * ue.squaredNorm();
      }
      if (exact.p) {
        const double pe = exact.p(xm, mu);
        fe.L2[VarP] += dv * (ph[q] - pe) * (ph[q] - pe);
        fe.ref2[VarP] += dv * pe * pe;
      }
      if (exact.L) {
        const Mat2 Le = exact.L(xm, mu);
        Mat2 Lq;
        Lq << Lh(q, 0), Lh(q, 1), Lh(q, 2), Lh(q, 3);
        fe.L2[VarL] += dv * (Lq - Le).squaredNorm();
        fe.ref2[VarL] += dv * Le.squaredNorm();
      }
    }
    if (!exact.u) continue;
    for (int f = 0; f < 3; ++f) {
      const FaceCache& fc = ec.faces[f];
      if (!fc.hybrid) continue;
      if (skeleton_.faces[fc.face].left != e) continue;
      combine_face(fc, w, Cf);
      const Eigen::MatrixXd& phi = face_phi(fc);
      for (int q = 0; q < nqf_; ++q) {
        Vec2 uh = Vec2::Zero();
        for (int aa = 0; aa <= k; ++aa)
          for (int j = 0; j < 2; ++j) uh[j] += phi(q, aa) * x[L.hyb0 + ec.hybrid_dofs[fc.hyb_offset + 2 * aa + j]];
        Vec2 xm = Vec2::Zero();
        for (int t = 0; t < n_map_; ++t) xm += mw[t] * fc.map[t * nqf_ + q];
        const double dsm = fc.ds[q] * (Cf[q] * fc.n.col(q)).norm();
        const Vec2 ue = exact.u(xm, mu);
        fe.L2[VarUhat] += dsm * (uh - ue).squaredNorm();
        fe.ref2[VarUhat] += dsm * ue.squaredNorm();
      }
    }
  }
  return fe;
}

double HdgDiscretisation::max_velocity_error(const Eigen::VectorXd& x, const Eigen::VectorXd& mu,
                                             const ExactSolution& exact) const {
  const Layout& L = layout_;
  const int nl = L.nloc;
  Eigen::VectorXd mw(n_map_);
  for (int t = 0; t < n_map_; ++t) mw[t] = problem_->mapping.weight(t, mu);
  double err = 0.0;
  for (int e = 0; e < L.n_el; ++e) {
    const ElementCache& ec = cache_[e];
    const int o = e * L.block;
    const Eigen::VectorXd u0 = vol_.values * x.segment(o + 4 * nl, nl);
    const Eigen::VectorXd u1 = vol_.values * x.segment(o + 5 * nl, nl);
    for (int q = 0; q < nqv_; ++q) {
      Vec2 xm = Vec2::Zero();
      for (int t = 0; t < n_map_; ++t) xm += mw[t] * ec.map[t * nqv_ + q];
      err = std::max(err, (Vec2(u0[q], u1[q]) - exact.u(xm, mu)).norm());
    }
  }
  return err;
}

Vec2 HdgDiscretisation::boundary_force(const Eigen::VectorXd& x, const Eigen::VectorXd& mu, int tag) const {
  const Layout& L = layout_;
  const int nl = L.nloc;
  const Eigen::VectorXd w = term_weights(mu);
  Vec2 F = Vec2::Zero();
  std::vector<Mat2> Cf;
  for (const auto& bf : mesh().boundary_faces) {
    if (bf.tag != tag) continue;
    const int e = bf.element, f = bf.local_face;
    const FaceCache& fc = cache_[e].faces[f];
    combine_face(fc, w, Cf);
    const Eigen::MatrixXd& Nf = face_tab_[f].values;
    const int o = e * L.block;
    for (int q = 0; q < nqf_; ++q) {
      const Vec2 m = Cf[q] * fc.n.col(q);
      Mat2 Lq;
      for (int c = 0; c < 4; ++c) Lq(c / 2, c % 2) = Nf.row(q).dot(x.segment(o + c * nl, nl));
      const double pq = Nf.row(q).dot(x.segment(o + 6 * nl, nl));
      F -= fc.ds[q] * (Lq.transpose() * m + pq * m);
    }
  }
  return F;
}

double HdgDiscretisation::boundary_mean_pressure(const Eigen::VectorXd& x, const Eigen::VectorXd& mu, int tag) const {
  const Layout& L = layout_;
  const Eigen::VectorXd w = term_weights(mu);
  double num = 0.0, den = 0.0;
  std::vector<Mat2> Cf;
  for (const auto& bf : mesh().boundary_faces) {
    if (bf.tag != tag) continue;
    const int e = bf.element, f = bf.local_face;
    const FaceCache& fc = cache_[e].faces[f];
    combine_face(fc, w, Cf);
    const Eigen::MatrixXd& Nf = face_tab_[f].values;
    const auto pe = x.segment(e * L.block + 6 * L.nloc, L.nloc);
    for (int q = 0; q < nqf_; ++q) {
      const double dsm = fc.ds[q] * (Cf[q] * fc.n.col(q)).norm();
      num += dsm * Nf.row(q).dot(pe);
      den += dsm;
    }
  }
  return den > 0.0 ? num / den : 0.0;
}

Eigen::Vector3d HdgDiscretisation::point_values(const Eigen::VectorXd& x, int e, const Vec2& xi) const {
  const Layout& L = layout_;
  const BasisTabulation t = simplex_basis(mesh().k, Eigen::Matrix2Xd(xi));
  const int o = e * L.block;
  const auto N = t.values.row(0);
  return Eigen::Vector3d(N.dot(x.segment(o + 4 * L.nloc, L.nloc)), N.dot(x.segment(o + 5 * L.nloc, L.nloc)),
                         N.dot(x.segment(o + 6 * L.nloc, L.nloc)));
}

Vec2 HdgDiscretisation::deformed_point(int e, const Vec2& xi, const Eigen::VectorXd& mu) const {
  SpatialPoint<2> sp;
  sp.x = mesh().map(e, xi);
  sp.element = e;
  sp.xi = xi;
  return problem_->mapping(sp, mu);
}

CondensedSolver::CondensedSolver(const HdgDiscretisation& disc) : disc_(disc) {}

void CondensedSolver::factorize(const Eigen::VectorXd& w) {
  const Layout& L = disc_.layout();
  const int ng = L.n_hyb + L.n_rho();
  unit_ = w[disc_.unit_term()];
  cond_.resize(L.n_el);
  std::vector<Eigen::Triplet<double>> trip;
  for (int e = 0; e < L.n_el; ++e) {
    ElementBlocks b = disc_.element_blocks(e, w);
    Condensed& c = cond_[e];
    c.lu.compute(b.A);
    if (!(c.lu.rcond() > 1e-15))
      throw std::runtime_error("singular local HDG matrix in element " + std::to_string(e));
    const int nh = static_cast<int>(b.hybrid_dofs.size());
    Eigen::MatrixXd rhs(L.block, nh + 1);
    rhs.leftCols(nh) = b.B;
    rhs.col(nh).setZero();
    rhs(7 * L.nloc, nh) = b.unit;
    const Eigen::MatrixXd sol = c.lu.solve(rhs);
    c.Z = sol.leftCols(nh);
    c.zr = sol.col(nh);
    c.C = std::move(b.C);
    c.hybrid_dofs = b.hybrid_dofs;
    const Eigen::MatrixXd Kh = b.H + c.C * c.Z;
    const Eigen::VectorXd kr = c.C * c.zr;
    const int re = L.n_hyb + e;
    for (int i = 0; i < nh; ++i) {
      for (int j = 0; j < nh; ++j) trip.emplace_back(c.hybrid_dofs[i], c.hybrid_dofs[j], Kh(i, j));
      trip.emplace_back(c.hybrid_dofs[i], re, kr[i]);
      trip.emplace_back(re, c.hybrid_dofs[i], b.g[i]);
    }
    if (L.kappa) {
      const double v = b.unit * disc_.kappa_weights()[e];
      trip.emplace_back(re, L.n_hyb + L.n_el, v);
      trip.emplace_back(L.n_hyb + L.n_el, re, v);
    }
  }
  K_.resize(ng, ng);
  K_.setFromTriplets(trip.begin(), trip.end());
  K_.makeCompressed();
  if (!analysed_) {
    const Eigen::SparseMatrix<double> Kt = K_.transpose();
    symmetric_ = (K_ - Kt).norm() <= 1e-10 * K_.norm();
  }
  if (symmetric_) {
    const double shift = 1e-8 * K_.norm() / std::sqrt(static_cast<double>(ng));
    for (int i = L.n_hyb; i < ng; ++i) trip.emplace_back(i, i, shift);
    Ks_.resize(ng, ng);
    Ks_.setFromTriplets(trip.begin(), trip.end());
    if (!analysed_) ldlt_.analyzePattern(Ks_);
    analysed_ = true;
    ldlt_.factorize(Ks_);
    if (ldlt_.info() != Eigen::Success) use_lu();
    return;
  }
  if (!analysed_) {
    lu_.analyzePattern(K_);
    analysed_ = true;
  }
  lu_.factorize(K_);
  if (lu_.info() != Eigen::Success)
    throw std::runtime_error("global HDG factorization failed: " + lu_.lastErrorMessage());
}

void CondensedSolver::use_lu() {
  symmetric_ = false;
  Ks_ = Eigen::SparseMatrix<double>();
  lu_.analyzePattern(K_);
  lu_.factorize(K_);
  if (lu_.info() != Eigen::Success)
    throw std::runtime_error("global HDG factorization failed: " + lu_.lastErrorMessage());
}

Eigen::VectorXd CondensedSolver::global_solve(const Eigen::VectorXd& g) const {
  if (!symmetric_) return lu_.solve(g);
  Eigen::VectorXd s = ldlt_.solve(g);
  const double gn = g.norm();
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 10; ++it) {
    const Eigen::VectorXd r = g - K_ * s;
    const double rn = r.norm();
    if (rn <= 1e-14 * gn || rn >= 0.5 * prev) break;
    prev = rn;
    s += ldlt_.solve(r);
  }
  return s;
}

Eigen::VectorXd CondensedSolver::solve(const Eigen::VectorXd& R) const {
  const Layout& L = disc_.layout();
  const int ng = L.n_hyb + L.n_rho();
  Eigen::VectorXd g(ng);
  g.head(L.n_hyb) = R.segment(L.hyb0, L.n_hyb);
  g.tail(L.n_rho()) = R.segment(L.rho0, L.n_rho());
  std::vector<Eigen::VectorXd> x0(L.n_el);
  for (int e = 0; e < L.n_el; ++e) {
    const Condensed& c = cond_[e];
    x0[e] = c.lu.solve(R.segment(e * L.block, L.block));
    const Eigen::VectorXd cx = c.C * x0[e];
    for (std::size_t i = 0; i < c.hybrid_dofs.size(); ++i) g[c.hybrid_dofs[i]] -= cx[i];
  }
  Eigen::VectorXd s = global_solve(g);
  const double gn = g.norm();
  last_residual_ = gn > 0.0 ? (K_ * s - g).norm() / gn : (K_ * s - g).norm();
  if (symmetric_ && last_residual_ > 1e-10) {
    const_cast<CondensedSolver*>(this)->use_lu();
    s = lu_.solve(g);
    last_residual_ = gn > 0.0 ? (K_ * s - g).norm() / gn : (K_ * s - g).norm();
  }

  Eigen::VectorXd x(L.size);
  x.segment(L.hyb0, L.n_hyb) = s.head(L.n_hyb);
  x.segment(L.rho0, L.n_rho()) = s.tail(L.n_rho());
  for (int e = 0; e < L.n_el; ++e) {
    const Condensed& c = cond_[e];
    Eigen::VectorXd uh(c.hybrid_dofs.size());
    for (std::size_t i = 0; i < c.hybrid_dofs.size(); ++i) uh[i] = s[c.hybrid_dofs[i]];
    x.segment(e * L.block, L.block) = x0[e] + c.Z * uh + c.zr * s[L.n_hyb + e];
  }
  return x;
}

Eigen::VectorXd solve_full_order(const HdgDiscretisation& disc, const Eigen::VectorXd& mu) {
  const Eigen::VectorXd w = disc.term_weights(mu);
  CondensedSolver s(disc);
  s.factorize(w);
  return s.solve(disc.rhs(w, disc.data_coefficients(mu)));
}

}  // namespace hdgpgd
