#include "hdgpgd/cases.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <stdexcept>

namespace hdgpgd {

namespace {

// Collects vertices (merged by position) and triangles, orients triangles
// counter-clockwise and tags boundary edges through a classifier.
class MeshBuilder {
 public:
  int vertex(const Vec2& x) {
    const std::pair<long long, long long> key{std::llround(x.x() * 1e9), std::llround(x.y() * 1e9)};
    const auto it = index_.find(key);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(points_.size());
    points_.push_back(x);
    index_.emplace(key, id);
    return id;
  }

  void triangle(int a, int b, int c) {
    const Vec2 u = points_[b] - points_[a], v = points_[c] - points_[a];
    if (u.x() * v.y() - u.y() * v.x() < 0.0) std::swap(b, c);
    elements_.push_back({a, b, c});
  }

  void quad(int a, int b, int c, int d) {
    triangle(a, b, c);
    triangle(a, c, d);
  }

  const Vec2& point(int i) const { return points_[i]; }

  ReferenceMesh build(int k, const std::function<std::string(const Vec2&, const Vec2&)>& classify) const {
    Eigen::Matrix2Xd V(2, points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) V.col(i) = points_[i];
    std::map<std::pair<int, int>, std::vector<std::pair<int, int>>> edges;
    for (int e = 0; e < static_cast<int>(elements_.size()); ++e)
      for (int f = 0; f < 3; ++f) {
        const int a = elements_[e][f], b = elements_[e][(f + 1) % 3];
        edges[{std::min(a, b), std::max(a, b)}].push_back({e, f});
      }
    std::vector<BoundaryFaceSpec> boundary;
    for (const auto& [key, users] : edges) {
      if (users.size() != 1) continue;
      const std::string tag = classify(points_[key.first], points_[key.second]);
      if (tag.empty())
        throw std::logic_error("generated mesh has an unclassified boundary edge");
      boundary.push_back({users[0].first, users[0].second, tag});
    }
    return make_mesh(V, elements_, boundary, k);
  }

 private:
  std::vector<Vec2> points_;
  std::map<std::pair<long long, long long>, int> index_;
  std::vector<std::array<int, 3>> elements_;
};

// Circular arc about the origin from a to b, the short way round.
EdgeCurve arc(const Vec2& a, const Vec2& b, double r) {
  const double t0 = std::atan2(a.y(), a.x());
  const double dt = std::atan2(a.x() * b.y() - a.y() * b.x(), a.dot(b));
  return [=](double s) {
    const double t = t0 + s * dt;
    return Vec2(r * std::cos(t), r * std::sin(t));
  };
}

bool on_circle(const Vec2& x, double r) { return std::abs(x.norm() - r) < 1e-10 * std::max(1.0, r); }

ParamFactor identity_factor(const std::string& name) {
  return param_function(name, [](double m) { return m; });
}

SpatialFactor<Vec2> identity_map() {
  return SpatialFactor<Vec2>([](const SpatialPoint<2>& p) { return p.x; },
                             [](const SpatialPoint<2>&) { return Mat2::Identity().eval(); });
}

SpatialFactor<Vec2> constant_vector(const Vec2& v) {
  return SpatialFactor<Vec2>([v](const SpatialPoint<2>&) { return v; });
}

int require_tag(const ReferenceMesh& m, const std::string& name) {
  const int t = m.tag_index(name);
  if (t < 0) throw std::logic_error("mesh has no boundary named '" + name + "'");
  return t;
}

}  // namespace

ReferenceMesh annulus_mesh(int n_r, int n_theta, double r_in, double r_out, int k) {
  if (n_r < 1 || n_theta < 3 || !(r_out > r_in) || !(r_in > 0.0))
    throw std::invalid_argument("invalid annulus mesh parameters");
  MeshBuilder b;
  std::vector<int> id((n_r + 1) * n_theta);
  for (int i = 0; i <= n_r; ++i) {
    const double r = r_in + (r_out - r_in) * i / n_r;
    for (int j = 0; j < n_theta; ++j) {
      const double t = 2.0 * std::numbers::pi * j / n_theta;
      id[i * n_theta + j] = b.vertex(Vec2(r * std::cos(t), r * std::sin(t)));
    }
  }
  for (int i = 0; i < n_r; ++i)
    for (int j = 0; j < n_theta; ++j) {
      const int jn = (j + 1) % n_theta;
      b.quad(id[i * n_theta + j], id[(i + 1) * n_theta + j], id[(i + 1) * n_theta + jn], id[i * n_theta + jn]);
    }
  ReferenceMesh m = b.build(k, [&](const Vec2& a, const Vec2& c) -> std::string {
    if (on_circle(a, r_in) && on_circle(c, r_in)) return "DIRICHLET:inner";
    if (on_circle(a, r_out) && on_circle(c, r_out)) return "DIRICHLET:outer";
    return "";
  });
  curve_boundary(m, [&](const BoundaryTag& t, const Vec2& a, const Vec2& c) -> std::optional<EdgeCurve> {
    return arc(a, c, t.name == "inner" ? r_in : r_out);
  });
  return m;
}

ProblemDefinition couette_case(const CouetteOptions& opt) {
  static const int n_r[] = {4, 8, 16, 32};
  if (opt.mesh_level < 1 || opt.mesh_level > 4) throw std::invalid_argument("couette mesh level must be in 1..4");
  const double R = opt.r_out;
  if (!(opt.mu_lower >= 1.0 - 1e-14) || !(opt.mu_upper < R) || opt.mu_upper < opt.mu_lower)
    throw std::invalid_argument("couette inner radius range must lie in [1, r_out)");
  const int nr = n_r[opt.mesh_level - 1];

  auto P = std::make_shared<StokesProblem>();
  P->mesh = annulus_mesh(nr, 4 * nr, 1.0, R, opt.k);
  P->box = {{"mu1"}, {opt.mu_lower}, {opt.mu_upper}};
  P->nu = opt.nu;
  P->tau = opt.tau;
  P->ell = opt.ell;
  P->quad_increment = opt.quad_increment;

  // x^mu = (x / r) psi1(mu) + x psi2(mu): r = 1 -> mu, r = R fixed.
  const ParamFactor psi1 = param_function("psi1", [R](double m) { return R * (m - 1.0) / (R - 1.0); });
  const ParamFactor psi2 = param_function("psi2", [R](double m) { return (R - m) / (R - 1.0); });
  const SpatialFactor<Vec2> radial(
      [](const SpatialPoint<2>& p) { return Vec2(p.x / p.x.norm()); },
      [](const SpatialPoint<2>& p) {
        const double r = p.x.norm();
        return Mat2(Mat2::Identity() / r - p.x * p.x.transpose() / (r * r * r));
      });
  P->mapping = sep_build<Vec2, 2>({{radial, {psi1}}, {identity_map(), {psi2}}}, 1, P->box);
  finalize_mapping(*P);

  const double wi = opt.omega_in, wo = opt.omega_out;
  DataTerm inner;
  inner.kind = DataTerm::Kind::Dirichlet;
  inner.tag = require_tag(P->mesh, "inner");
  inner.value = SpatialFactor<Vec2>([wi](const SpatialPoint<2>& p) { return Vec2(-wi * p.x.y(), wi * p.x.x()); });
  inner.parametric = {identity_factor("mu1")};
  DataTerm outer;
  outer.kind = DataTerm::Kind::Dirichlet;
  outer.tag = require_tag(P->mesh, "outer");
  outer.value = SpatialFactor<Vec2>([wo](const SpatialPoint<2>& p) { return Vec2(-wo * p.x.y(), wo * p.x.x()); });
  outer.parametric = {ParamFactor()};
  P->data = {inner, outer};

  const double nu = opt.nu;
  auto coeffs = [R, wi, wo](double mu) {
    const double den = R * R - mu * mu;
    return std::pair<double, double>{(wo * R * R - wi * mu * mu) / den, mu * mu * R * R * (wi - wo) / den};
  };
  ExactSolution ex;
  ex.u = [coeffs](const Vec2& x, const Eigen::VectorXd& mu) {
    const auto [A, B] = coeffs(mu[0]);
    const double f = A + B / x.squaredNorm();
    return Vec2(-f * x.y(), f * x.x());
  };
  ex.p = [](const Vec2&, const Eigen::VectorXd&) { return 0.0; };
  ex.L = [coeffs, nu](const Vec2& x, const Eigen::VectorXd& mu) {
    const auto [A, B] = coeffs(mu[0]);
    const double r2 = x.squaredNorm();
    const double f = A + B / r2;
    const double fx = -2.0 * B * x.x() / (r2 * r2), fy = -2.0 * B * x.y() / (r2 * r2);
    Mat2 G;  // G(i, j) = d_i u_j
    G << -x.y() * fx, f + x.x() * fx, -f - x.y() * fy, x.x() * fy;
    return Mat2(-nu * G);
  };

  ProblemDefinition def;
  def.name = "couette";
  def.problem = P;
  def.exact = ex;
  def.force_tags = {"inner", "outer"};
  return def;
}

ReferenceMesh channel_mesh(const ChannelOptions& o) {
  const double H = o.height, L = o.half_length;
  const double r_max = o.r_ref * (1.0 + std::abs(o.radius_gain));
  if (!(o.r_ref > 0.0) || !(r_max < o.r_int) || !(o.r_int < std::min(1.0, H)) || !(L > 2.0 + o.shift) ||
      o.refinement < 1)
    throw std::invalid_argument("invalid channel geometry options");
  const int ref = o.refinement;
  const int nt = 16 * ref, ny = nt / 4, n_polar = 3 * ref, n_trans = 3 * ref;

  MeshBuilder b;
  auto add_half = [&](double sy) {
    auto V = [&](const Vec2& x) { return b.vertex(Vec2(x.x(), sy * x.y())); };
    auto square = [&](int j) -> Vec2 {
      if (j <= ny) return {1.0, H * j / ny};
      if (j <= 3 * ny) return {1.0 - 2.0 * (j - ny) / (2 * ny), H};
      return {-1.0, H * (nt - j) / ny};
    };
    std::vector<int> id((n_polar + n_trans + 1) * (nt + 1));
    for (int j = 0; j <= nt; ++j) {
      const double t = std::numbers::pi * j / nt;
      const Vec2 dir(std::cos(t), std::sin(t));
      for (int i = 0; i <= n_polar; ++i) {
        const double r = o.r_ref + (o.r_int - o.r_ref) * i / n_polar;
        id[i * (nt + 1) + j] = V(r * dir);
      }
      const Vec2 c = o.r_int * dir, s = square(j);
      for (int l = 1; l <= n_trans; ++l) {
        const double a = static_cast<double>(l) / n_trans;
        id[(n_polar + l) * (nt + 1) + j] = V(l == n_trans ? s : Vec2((1.0 - a) * c + a * s));
      }
    }
    for (int i = 0; i < n_polar + n_trans; ++i)
      for (int j = 0; j < nt; ++j)
        b.quad(id[i * (nt + 1) + j], id[(i + 1) * (nt + 1) + j], id[(i + 1) * (nt + 1) + j + 1],
               id[i * (nt + 1) + j + 1]);

    // Side blocks with columns breaking at |x| = 1 and |x| = 2.
    auto columns = [&](double x0, double x1) {
      const int n = std::max(1, static_cast<int>(std::lround(std::abs(x1 - x0) * 4 * ref)));
      std::vector<double> xs;
      for (int i = 0; i <= n; ++i) xs.push_back(x0 + (x1 - x0) * i / n);
      return xs;
    };
    for (double side : {-1.0, 1.0}) {
      std::vector<double> xs = columns(side * 1.0, side * 2.0);
      const std::vector<double> far = columns(side * 2.0, side * L);
      xs.insert(xs.end(), far.begin() + 1, far.end());
      for (std::size_t c = 0; c + 1 < xs.size(); ++c)
        for (int r = 0; r < ny; ++r)
          b.quad(V({xs[c], H * r / ny}), V({xs[c + 1], H * r / ny}), V({xs[c + 1], H * (r + 1) / ny}),
                 V({xs[c], H * (r + 1) / ny}));
    }
  };
  add_half(1.0);
  if (o.mirrored) add_half(-1.0);

  auto near = [](double a, double b) { return std::abs(a - b) < 1e-10; };
  ReferenceMesh m = b.build(o.k, [&](const Vec2& a, const Vec2& c) -> std::string {
    if (near(a.y(), 0.0) && near(c.y(), 0.0)) return "SLIP:symmetry";
    if (near(a.x(), -L) && near(c.x(), -L)) return "DIRICHLET:inflow";
    if (near(a.x(), L) && near(c.x(), L)) return "NEUMANN:outflow";
    if (near(std::abs(a.y()), H) && near(std::abs(c.y()), H)) return "DIRICHLET:wall";
    if (on_circle(a, o.r_ref) && on_circle(c, o.r_ref)) return "DIRICHLET:obstacle";
    return "";
  });
  curve_edges(m, [&](const Vec2& a, const Vec2& c) -> std::optional<EdgeCurve> {
    for (double r : {o.r_ref, o.r_int})
      if (on_circle(a, r) && on_circle(c, r)) return arc(a, c, r);
    return std::nullopt;
  });
  return m;
}

ProblemDefinition channel_cylinder_case(const ChannelOptions& o) {
  auto P = std::make_shared<StokesProblem>();
  P->mesh = channel_mesh(o);
  P->box = {{"mu1", "mu2"}, {-1.0, 0.0}, {1.0, 1.0}};
  P->nu = o.nu;
  P->tau = o.tau;
  P->ell = o.ell;
  P->quad_increment = o.quad_increment;

  // Radial stretch inside r_int moving the obstacle radius to r_ref (1 + gain mu1),
  // and a horizontal shift by shift * mu2 tapering to zero over 1 <= |x| <= 2.
  const double c = o.radius_gain * o.r_ref / (o.r_int - o.r_ref), ri = o.r_int;
  const SpatialFactor<Vec2> radial(
      [c, ri](const SpatialPoint<2>& p) {
        const double r = p.x.norm();
        if (r >= ri) return Vec2::Zero().eval();
        return Vec2(c * (ri / r - 1.0) * p.x);
      },
      [c, ri](const SpatialPoint<2>& p) {
        const double r = p.x.norm();
        if (r >= ri) return Mat2::Zero().eval();
        return Mat2(c * (ri / r - 1.0) * Mat2::Identity() - c * ri * p.x * p.x.transpose() / (r * r * r));
      });
  const double sh = o.shift;
  const SpatialFactor<Vec2> shift(
      [sh](const SpatialPoint<2>& p) {
        const double a = std::abs(p.x.x());
        const double t = a <= 1.0 ? 1.0 : (a >= 2.0 ? 0.0 : 2.0 - a);
        return Vec2(sh * t, 0.0);
      },
      [sh](const SpatialPoint<2>& p) {
        const double a = std::abs(p.x.x());
        Mat2 G = Mat2::Zero();
        if (a > 1.0 && a < 2.0) G(0, 0) = -sh * (p.x.x() > 0.0 ? 1.0 : -1.0);
        return G;
      });
  const ParamFactor one;
  P->mapping = sep_build<Vec2, 2>({{identity_map(), {one, one}},
                                   {radial, {identity_factor("mu1"), one}},
                                   {shift, {one, identity_factor("mu2")}}},
                                  2, P->box);
  finalize_mapping(*P);

  const double H = o.height, U = o.inflow_speed;
  DataTerm inflow;
  inflow.kind = DataTerm::Kind::Dirichlet;
  inflow.tag = require_tag(P->mesh, "inflow");
  inflow.value = SpatialFactor<Vec2>([H, U](const SpatialPoint<2>& p) {
    const double y = p.x.y() / H;
    return Vec2(U * (1.0 - y * y), 0.0);
  });
  inflow.parametric = {one, one};
  P->data = {inflow};

  ProblemDefinition def;
  def.name = o.mirrored ? "channel_cylinder_full" : "channel_cylinder";
  def.problem = P;
  def.force_tags = {"obstacle"};
  def.inflow_tag = "inflow";
  def.outflow_tag = "outflow";
  return def;
}

ProblemDefinition file_case(const FileCaseOptions& o) {
  if (o.mu_upper < o.mu_lower) throw std::invalid_argument("empty parameter interval");
  if (!(o.mu_lower > 0.0)) throw std::invalid_argument("dilation factor must be positive");
  auto P = std::make_shared<StokesProblem>();
  P->mesh = load_mesh(o.path);
  P->box = {{"mu1"}, {o.mu_lower}, {o.mu_upper}};
  P->nu = o.nu;
  P->tau = o.tau;
  P->ell = o.ell;
  P->quad_increment = o.quad_increment;
  P->mapping = sep_build<Vec2, 2>({{identity_map(), {identity_factor("mu1")}}}, 1, P->box);
  finalize_mapping(*P);
  for (const auto& [name, value] : o.dirichlet) {
    const int t = P->mesh.tag_index(name);
    if (t < 0) throw std::invalid_argument("mesh has no boundary named '" + name + "'");
    if (P->mesh.tags[t].kind != BoundaryKind::Dirichlet)
      throw std::invalid_argument("boundary '" + name + "' is not a Dirichlet boundary");
    DataTerm d;
    d.kind = DataTerm::Kind::Dirichlet;
    d.tag = t;
    d.value = constant_vector(value);
    d.parametric = {ParamFactor()};
    P->data.push_back(d);
  }
  ProblemDefinition def;
  def.name = "file";
  def.problem = P;
  return def;
}

double min_mapping_determinant(const HdgDiscretisation& disc, int n_per_axis) {
  const ParameterBox& box = disc.problem().box;
  const int np = box.size();
  const int n = std::max(1, n_per_axis);
  double m = std::numeric_limits<double>::infinity();
  std::vector<int> idx(np, 0);
  while (true) {
    Eigen::VectorXd mu(np);
    for (int j = 0; j < np; ++j)
      mu[j] = n == 1 ? 0.5 * (box.lower[j] + box.upper[j])
                     : box.lower[j] + (box.upper[j] - box.lower[j]) * idx[j] / (n - 1);
    m = std::min(m, disc.min_volume_det(disc.term_weights(mu)));
    int j = 0;
    while (j < np && ++idx[j] == n) idx[j++] = 0;
    if (j == np) break;
  }
  return m;
}

}  // namespace hdgpgd
