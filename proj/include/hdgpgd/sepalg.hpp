#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

namespace hdgpgd {

template <int Dim>
using Point = Eigen::Matrix<double, Dim, 1>;

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

// Location handed to spatial factors. Analytic factors read x only; nodal
// factors use the element index and reference coordinates xi.
template <int Dim>
struct SpatialPoint {
  Point<Dim> x = Point<Dim>::Zero();
  int element = -1;
  Point<Dim> xi = Point<Dim>::Zero();
};

// Axis-aligned parameter box. No bounds means unrestricted.
struct ParameterBox {
  std::vector<std::string> names;
  std::vector<double> lower;
  std::vector<double> upper;

  int size() const { return static_cast<int>(lower.size()); }
  bool empty() const { return lower.empty(); }

  bool contains(const Eigen::VectorXd& mu, double tol = 1e-12) const {
    if (empty()) return true;
    if (mu.size() != size()) return false;
    for (int j = 0; j < size(); ++j) {
      const double slack = tol * std::max(1.0, upper[j] - lower[j]);
      if (!(mu[j] >= lower[j] - slack && mu[j] <= upper[j] + slack)) return false;
    }
    return true;
  }
};

// A named 1D function of one parameter with a process-unique identity.
class ParamFunction {
 public:
  ParamFunction(std::string name, std::function<double(double)> f)
      : id_(next_id()), name_(std::move(name)), f_(std::move(f)) {}

  std::uint64_t id() const { return id_; }
  const std::string& name() const { return name_; }
  double operator()(double mu) const { return f_(mu); }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter++;
  }
  std::uint64_t id_;
  std::string name_;
  std::function<double(double)> f_;
};

// Product of primitive parameter functions along one axis, kept sorted by
// identity so that products commute exactly. The empty product is 1.
class ParamFactor {
 public:
  ParamFactor() = default;
  explicit ParamFactor(std::shared_ptr<const ParamFunction> f) { factors_.push_back(std::move(f)); }

  double operator()(double mu) const {
    double v = 1.0;
    for (const auto& f : factors_) v *= (*f)(mu);
    return v;
  }

  bool is_constant() const { return factors_.empty(); }
  bool same_as(const ParamFactor& o) const {
    if (factors_.size() != o.factors_.size()) return false;
    for (std::size_t i = 0; i < factors_.size(); ++i)
      if (factors_[i]->id() != o.factors_[i]->id()) return false;
    return true;
  }

  std::string label() const {
    if (factors_.empty()) return "1";
    std::string s;
    for (const auto& f : factors_) {
      if (!s.empty()) s += "*";
      s += f->name();
    }
    return s;
  }

  friend ParamFactor operator*(const ParamFactor& a, const ParamFactor& b) {
    ParamFactor r;
    r.factors_.reserve(a.factors_.size() + b.factors_.size());
    std::merge(a.factors_.begin(), a.factors_.end(), b.factors_.begin(), b.factors_.end(),
               std::back_inserter(r.factors_),
               [](const auto& x, const auto& y) { return x->id() < y->id(); });
    return r;
  }

 private:
  std::vector<std::shared_ptr<const ParamFunction>> factors_;
};

inline ParamFactor param_function(std::string name, std::function<double(double)> f) {
  return ParamFactor(std::make_shared<const ParamFunction>(std::move(name), std::move(f)));
}

namespace detail {

template <class V>
V zero_value() {
  if constexpr (std::is_arithmetic_v<V>) {
    return V(0);
  } else {
    return V::Zero();
  }
}

template <class V>
double max_abs(const V& v) {
  if constexpr (std::is_arithmetic_v<V>) {
    return std::abs(v);
  } else {
    return v.cwiseAbs().maxCoeff();
  }
}

template <class V, int Dim>
struct GradientOf {
  using type = std::monostate;
};
template <int Dim>
struct GradientOf<double, Dim> {
  using type = Point<Dim>;
};
template <int Dim>
struct GradientOf<Point<Dim>, Dim> {
  using type = Eigen::Matrix<double, Dim, Dim>;
};

}  // namespace detail

// Spatial coefficient of a separated term. Gradient convention for vector
// values: G(i, a) = d V_i / d x_a.
template <class V, int Dim = 2>
class SpatialFactor {
 public:
  using Value = V;
  using Gradient = typename detail::GradientOf<V, Dim>::type;
  using ValueFn = std::function<V(const SpatialPoint<Dim>&)>;
  using GradientFn = std::function<Gradient(const SpatialPoint<Dim>&)>;
  enum class Kind { Analytic, Nodal };

  SpatialFactor() : value_([](const SpatialPoint<Dim>&) { return detail::zero_value<V>(); }) {}
  explicit SpatialFactor(ValueFn value, Kind kind = Kind::Analytic)
      : value_(std::move(value)), kind_(kind) {}
  SpatialFactor(ValueFn value, GradientFn gradient, Kind kind = Kind::Analytic)
      : value_(std::move(value)), gradient_(std::move(gradient)), kind_(kind) {}

  V operator()(const SpatialPoint<Dim>& p) const { return value_(p); }
  V operator()(const Point<Dim>& x) const {
    SpatialPoint<Dim> p;
    p.x = x;
    return value_(p);
  }

  bool has_gradient() const { return static_cast<bool>(gradient_); }
  Gradient gradient(const SpatialPoint<Dim>& p) const {
    if (!gradient_) throw std::logic_error("spatial factor has no gradient");
    return gradient_(p);
  }
  Kind kind() const { return kind_; }
  const ValueFn& function() const { return value_; }

 private:
  ValueFn value_;
  GradientFn gradient_;
  Kind kind_ = Kind::Analytic;
};

template <class V, int Dim = 2>
struct SepTerm {
  SpatialFactor<V, Dim> spatial;
  std::vector<ParamFactor> parametric;
};

template <class V, int Dim = 2>
class SeparatedField {
 public:
  using Value = V;
  using Term = SepTerm<V, Dim>;

  explicit SeparatedField(int n_params = 0, ParameterBox box = {})
      : n_params_(n_params), box_(std::move(box)) {}

  int n_params() const { return n_params_; }
  int rank() const { return static_cast<int>(terms_.size()); }
  const std::vector<Term>& terms() const { return terms_; }
  const ParameterBox& box() const { return box_; }
  void set_box(ParameterBox box) { box_ = std::move(box); }

  void push_back(Term t) {
    if (static_cast<int>(t.parametric.size()) != n_params_)
      throw std::invalid_argument("separated term has " + std::to_string(t.parametric.size()) +
                                  " parametric factors, field expects " + std::to_string(n_params_));
    terms_.push_back(std::move(t));
  }

  // Parametric weight of term k at mu.
  double weight(int k, const Eigen::VectorXd& mu) const {
    double w = 1.0;
    for (int j = 0; j < n_params_; ++j) w *= terms_[k].parametric[j](mu[j]);
    return w;
  }

  // Unchecked evaluation; sep_eval adds the box check.
  V operator()(const SpatialPoint<Dim>& p, const Eigen::VectorXd& mu) const {
    V v = detail::zero_value<V>();
    for (int k = 0; k < rank(); ++k) v += weight(k, mu) * terms_[k].spatial(p);
    return v;
  }

 private:
  int n_params_;
  ParameterBox box_;
  std::vector<Term> terms_;
};

using ScalarField = SeparatedField<double, 2>;
using VectorField = SeparatedField<Vec2, 2>;
using MatrixField = SeparatedField<Mat2, 2>;

template <class V, int Dim>
SeparatedField<V, Dim> sep_build(std::vector<SepTerm<V, Dim>> terms, int n_params, ParameterBox box = {}) {
  if (!box.empty() && box.size() != n_params)
    throw std::invalid_argument("parameter box dimension does not match n_params");
  SeparatedField<V, Dim> f(n_params, std::move(box));
  for (auto& t : terms) f.push_back(std::move(t));
  return f;
}

template <class V, int Dim>
V sep_eval(const SeparatedField<V, Dim>& f, const SpatialPoint<Dim>& p, const Eigen::VectorXd& mu) {
  if (mu.size() != f.n_params())
    throw std::invalid_argument("parameter point has wrong dimension");
  if (!f.box().contains(mu)) throw std::out_of_range("parameter point outside the parameter box");
  return f(p, mu);
}

template <class V, int Dim>
V sep_eval(const SeparatedField<V, Dim>& f, const Point<Dim>& x, const Eigen::VectorXd& mu) {
  SpatialPoint<Dim> p;
  p.x = x;
  return sep_eval(f, p, mu);
}

// Term-wise combination: result term (a, b) has spatial op(fa, gb) and
// parametric factors multiplied axis by axis.
template <class R, class A, class B, int Dim>
SeparatedField<R, Dim> sep_combine(const SeparatedField<A, Dim>& f, const SeparatedField<B, Dim>& g,
                                   std::function<R(const A&, const B&)> op) {
  if (f.n_params() != g.n_params()) throw std::invalid_argument("parameter count mismatch");
  SeparatedField<R, Dim> r(f.n_params(), f.box().empty() ? g.box() : f.box());
  for (const auto& ta : f.terms()) {
    for (const auto& tb : g.terms()) {
      SepTerm<R, Dim> t;
      auto sa = ta.spatial;
      auto sb = tb.spatial;
      t.spatial = SpatialFactor<R, Dim>([sa, sb, op](const SpatialPoint<Dim>& p) { return op(sa(p), sb(p)); });
      for (int j = 0; j < f.n_params(); ++j) t.parametric.push_back(ta.parametric[j] * tb.parametric[j]);
      r.push_back(std::move(t));
    }
  }
  return r;
}

template <class R, class A, int Dim>
SeparatedField<R, Dim> sep_map(const SeparatedField<A, Dim>& f, std::function<R(const A&)> op) {
  SeparatedField<R, Dim> r(f.n_params(), f.box());
  for (const auto& ta : f.terms()) {
    auto sa = ta.spatial;
    r.push_back({SpatialFactor<R, Dim>([sa, op](const SpatialPoint<Dim>& p) { return op(sa(p)); }),
                 ta.parametric});
  }
  return r;
}

template <class V, int Dim>
SeparatedField<V, Dim> sep_scale(const SeparatedField<V, Dim>& f, double a) {
  return sep_map<V, V, Dim>(f, [a](const V& v) -> V { return a * v; });
}

template <class V, int Dim>
SeparatedField<V, Dim> sep_add(const SeparatedField<V, Dim>& f, const SeparatedField<V, Dim>& g) {
  if (f.n_params() != g.n_params()) throw std::invalid_argument("parameter count mismatch");
  SeparatedField<V, Dim> r(f.n_params(), f.box().empty() ? g.box() : f.box());
  for (const auto& t : f.terms()) r.push_back(t);
  for (const auto& t : g.terms()) r.push_back(t);
  return r;
}

template <int Dim>
SeparatedField<Eigen::Matrix<double, Dim, Dim>, Dim> sep_jacobian(const SeparatedField<Point<Dim>, Dim>& mapping) {
  using M = Eigen::Matrix<double, Dim, Dim>;
  SeparatedField<M, Dim> J(mapping.n_params(), mapping.box());
  for (const auto& t : mapping.terms()) {
    if (!t.spatial.has_gradient())
      throw std::invalid_argument("mapping term has no spatial gradient; cannot form the Jacobian");
    auto s = t.spatial;
    J.push_back({SpatialFactor<M, Dim>([s](const SpatialPoint<Dim>& p) { return s.gradient(p); }), t.parametric});
  }
  return J;
}

template <int Dim>
SeparatedField<double, Dim> sep_trace(const SeparatedField<Eigen::Matrix<double, Dim, Dim>, Dim>& A) {
  using M = Eigen::Matrix<double, Dim, Dim>;
  return sep_map<double, M, Dim>(A, [](const M& m) { return m.trace(); });
}

template <int Dim>
SeparatedField<Eigen::Matrix<double, Dim, Dim>, Dim> sep_transpose(
    const SeparatedField<Eigen::Matrix<double, Dim, Dim>, Dim>& A) {
  using M = Eigen::Matrix<double, Dim, Dim>;
  return sep_map<M, M, Dim>(A, [](const M& m) -> M { return m.transpose(); });
}

template <int Dim>
struct PruneOptions {
  double tol = 0.0;
  // Reference points used to measure spatial amplitudes. Without samples no
  // term is dropped for being small; merging still happens.
  std::vector<SpatialPoint<Dim>> samples;
  int param_samples = 7;
  double proportional_tol = 1e-13;
};

// Merges terms with identical or proportional parametric factors and drops
// terms below tol times the largest term amplitude.
template <class V, int Dim>
SeparatedField<V, Dim> sep_prune(const SeparatedField<V, Dim>& f, const PruneOptions<Dim>& opt = {}) {
  const int np = f.n_params();
  const ParameterBox& box = f.box();
  const bool sampled_params = !box.empty() && opt.param_samples > 0;

  // Per-axis samples of each factor, used for proportionality and amplitude.
  auto axis_samples = [&](const ParamFactor& phi, int j) {
    Eigen::VectorXd v(opt.param_samples);
    for (int s = 0; s < opt.param_samples; ++s) {
      const double t = opt.param_samples == 1 ? 0.5 : double(s) / (opt.param_samples - 1);
      v[s] = phi(box.lower[j] + t * (box.upper[j] - box.lower[j]));
    }
    return v;
  };

  struct Group {
    std::vector<ParamFactor> parametric;
    std::vector<std::pair<int, double>> members;  // term index, scale
    std::vector<Eigen::VectorXd> samples;
  };
  std::vector<Group> groups;

  for (int k = 0; k < f.rank(); ++k) {
    const auto& t = f.terms()[k];
    std::vector<Eigen::VectorXd> sk;
    if (sampled_params)
      for (int j = 0; j < np; ++j) sk.push_back(axis_samples(t.parametric[j], j));

    bool placed = false;
    for (auto& g : groups) {
      bool identical = true;
      for (int j = 0; j < np && identical; ++j) identical = g.parametric[j].same_as(t.parametric[j]);
      if (identical) {
        g.members.push_back({k, 1.0});
        placed = true;
        break;
      }
      if (!sampled_params) continue;
      double scale = 1.0;
      bool proportional = true;
      for (int j = 0; j < np && proportional; ++j) {
        const Eigen::VectorXd& a = sk[j];
        const Eigen::VectorXd& b = g.samples[j];
        const double bb = b.squaredNorm();
        if (bb == 0.0 || a.squaredNorm() == 0.0) {
          proportional = false;
          break;
        }
        const double c = a.dot(b) / bb;
        proportional = (a - c * b).norm() <= opt.proportional_tol * a.norm();
        scale *= c;
      }
      if (proportional) {
        g.members.push_back({k, scale});
        placed = true;
        break;
      }
    }
    if (!placed) groups.push_back({t.parametric, {{k, 1.0}}, sk});
  }

  std::vector<SepTerm<V, Dim>> merged;
  for (const auto& g : groups) {
    SepTerm<V, Dim> t;
    t.parametric = g.parametric;
    if (g.members.size() == 1 && g.members[0].second == 1.0) {
      t.spatial = f.terms()[g.members[0].first].spatial;
    } else {
      std::vector<std::pair<SpatialFactor<V, Dim>, double>> parts;
      for (const auto& [k, c] : g.members) parts.push_back({f.terms()[k].spatial, c});
      t.spatial = SpatialFactor<V, Dim>([parts](const SpatialPoint<Dim>& p) {
        V v = detail::zero_value<V>();
        for (const auto& [s, c] : parts) v += c * s(p);
        return v;
      });
    }
    merged.push_back(std::move(t));
  }

  std::vector<double> amp(merged.size(), std::numeric_limits<double>::infinity());
  if (!opt.samples.empty()) {
    for (std::size_t k = 0; k < merged.size(); ++k) {
      double a = 0.0;
      for (const auto& p : opt.samples) a = std::max(a, detail::max_abs(merged[k].spatial(p)));
      if (sampled_params)
        for (int j = 0; j < np; ++j) a *= axis_samples(merged[k].parametric[j], j).cwiseAbs().maxCoeff();
      amp[k] = a;
    }
  }
  const double amax = amp.empty() ? 0.0 : *std::max_element(amp.begin(), amp.end());

  SeparatedField<V, Dim> r(np, box);
  for (std::size_t k = 0; k < merged.size(); ++k) {
    if (amp[k] == 0.0) continue;
    if (std::isfinite(amp[k]) && amp[k] < opt.tol * amax) continue;
    r.push_back(std::move(merged[k]));
  }
  return r;
}

// Leibniz expansion: one term per tuple (k_0..k_{n-1}) of input terms, row i
// taken from term k_i. Symmetric duplicates merge in sep_prune.
template <int Dim>
SeparatedField<double, Dim> sep_det(const SeparatedField<Eigen::Matrix<double, Dim, Dim>, Dim>& J,
                                    const PruneOptions<Dim>& opt = {}) {
  static_assert(Dim == 2 || Dim == 3, "determinant implemented for 2D and 3D");
  using M = Eigen::Matrix<double, Dim, Dim>;
  const int n = J.rank();
  SeparatedField<double, Dim> D(J.n_params(), J.box());
  if (n == 0) return D;

  std::vector<int> idx(Dim, 0);
  while (true) {
    std::vector<SpatialFactor<M, Dim>> rows;
    std::vector<ParamFactor> par(J.n_params());
    for (int i = 0; i < Dim; ++i) {
      rows.push_back(J.terms()[idx[i]].spatial);
      for (int j = 0; j < J.n_params(); ++j) par[j] = par[j] * J.terms()[idx[i]].parametric[j];
    }
    D.push_back({SpatialFactor<double, Dim>([rows](const SpatialPoint<Dim>& p) {
                   M m;
                   for (int i = 0; i < Dim; ++i) m.row(i) = rows[i](p).row(i);
                   return m.determinant();
                 }),
                 par});
    int d = Dim - 1;
    while (d >= 0 && ++idx[d] == n) idx[d--] = 0;
    if (d < 0) break;
  }
  return sep_prune(D, opt);
}

// Faddeev-LeVerrier on the separated algebra:
//   M_1 = I,  c = -(1/k) tr(A M_k),  M_{k+1} = A M_k + c I,
//   adj(A) = (-1)^(n-1) M_n.
template <int Dim>
SeparatedField<Eigen::Matrix<double, Dim, Dim>, Dim> sep_adj(
    const SeparatedField<Eigen::Matrix<double, Dim, Dim>, Dim>& A, const PruneOptions<Dim>& opt = {}) {
  static_assert(Dim == 2 || Dim == 3, "adjugate implemented for 2D and 3D");
  using M = Eigen::Matrix<double, Dim, Dim>;
  const int np = A.n_params();

  SeparatedField<M, Dim> Mk(np, A.box());
  Mk.push_back({SpatialFactor<M, Dim>([](const SpatialPoint<Dim>&) -> M { return M::Identity(); }),
                std::vector<ParamFactor>(np)});
  if (A.rank() == 0) return SeparatedField<M, Dim>(np, A.box());

  for (int k = 1; k < Dim; ++k) {
    auto AM = sep_prune(sep_combine<M, M, M, Dim>(A, Mk, [](const M& a, const M& b) -> M { return a * b; }), opt);
    auto c = sep_scale(sep_trace(AM), -1.0 / k);
    auto cI = sep_map<M, double, Dim>(c, [](const double& s) -> M { return s * M::Identity(); });
    Mk = sep_prune(sep_add(AM, cI), opt);
  }
  if ((Dim - 1) % 2 == 1) Mk = sep_scale(Mk, -1.0);
  return Mk;
}

}  // namespace hdgpgd
