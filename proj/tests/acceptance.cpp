// Acceptance suite: one PASS/FAIL line per criterion.
#include "support.hpp"

#include "hdgpgd/io.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>

using namespace hdgpgd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ProblemDefinition couette(int level, int k, double lo = 1.0, double hi = 3.0) {
  CouetteOptions o;
  o.mesh_level = level;
  o.k = k;
  o.mu_lower = lo;
  o.mu_upper = hi;
  return couette_case(o);
}

// Runs the greedy loop one mode at a time and calls f after each mode.
void each_mode(PgdEngine& engine, int max_modes, const std::function<void(const PgdSolution&)>& f) {
  for (int m = 0; m < max_modes && !engine.finished(); ++m) {
    const int before = engine.enriched();
    engine.run(1);
    if (engine.enriched() == before) break;
    f(engine.solution());
  }
}

Outcome convergence() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg;
  cfg.case_name = "couette";
  cfg.conv_levels = {1, 2, 3};
  cfg.conv_degrees = {1, 2, 3};
  cfg.param_elements = {200};
  cfg.param_degree = {2};
  const ConvergenceTable t = run_convergence(cfg);
  const double secs = seconds_since(t0);
  bool pass = secs < 600.0;
  std::string detail;
  for (const auto& [k, r] : t.final_rates) {
    const auto& ls = t.rates.at(k);
    detail += fmt("k=%d L %.2f u %.2f p %.2f uhat %.2f (least squares %.2f %.2f %.2f %.2f); ", k, r[0], r[1], r[2],
                  r[3], ls[0], ls[1], ls[2], ls[3]);
    for (double v : r) pass = pass && v >= k + 0.7;
  }
  double ratio = 0.0;
  for (const auto& row : t.rows)
    for (int v = 0; v < 4; ++v) ratio = std::max(ratio, row.errors[v] / row.hdg_errors[v]);
  return {pass, detail + fmt("max PGD/HDG error %.3f; %.0f s (target finest-pair rate >= k+0.7, < 600 s)", ratio, secs)};
}

// Shared by the pointwise-error and amplitude criteria: Mesh 2, k = 4,
// parametric mesh 1000 elements of degree 4.
struct QuarticCouette {
  ProblemDefinition def = couette(2, 4);
  HdgDiscretisation disc{def.problem};
  std::vector<PgdSolution> snapshots;  // after 1, 2, ... modes
  std::vector<double> amplitudes;
  QuarticCouette() {
    PgdOptions opt;
    opt.eta_star = 1e-12;
    PgdEngine engine(disc, {interval_mesh(1.0, 3.0, 1000, 4)}, opt);
    each_mode(engine, 9, [&](const PgdSolution& s) { snapshots.push_back(s); });
    amplitudes = mode_amplitudes(engine.solution(), disc.layout(), PgdVariable::Uhat);
  }
};

QuarticCouette& quartic() {
  static QuarticCouette q;
  return q;
}

Outcome pointwise_mode_errors() {
  QuarticCouette& q = quartic();
  const double limit[3] = {1e-1, 7e-3, 2e-4};
  const Eigen::Matrix2Xd xi = simplex_nodes(4);
  bool pass = static_cast<int>(q.snapshots.size()) >= 3;
  std::string detail;
  for (double mu1 : {1.0, 2.0, 3.0}) {
    const Eigen::VectorXd mu = Eigen::VectorXd::Constant(1, mu1);
    detail += fmt("mu1=%g:", mu1);
    for (int m = 0; m < 3 && m < static_cast<int>(q.snapshots.size()); ++m) {
      const Eigen::VectorXd x = q.snapshots[m].evaluate(mu);
      double err = 0.0;
      for (int e = 0; e < q.disc.mesh().n_elements(); ++e)
        for (int a = 0; a < xi.cols(); ++a) {
          const Vec2 p = q.disc.deformed_point(e, xi.col(a), mu);
          const double uh = q.disc.point_values(x, e, xi.col(a)).head<2>().norm();
          err = std::max(err, std::abs(uh - q.def.exact->u(p, mu).norm()));
        }
      pass = pass && err < 3.0 * limit[m];
      detail += fmt(" m%d %.2e", m + 1, err);
    }
    detail += "; ";
  }
  return {pass, detail + "limits 3e-1, 2.1e-2, 6e-4"};
}

Outcome amplitude_decay() {
  const auto& a = quartic().amplitudes;
  int first = -1;
  for (int m = 0; m < static_cast<int>(a.size()); ++m)
    if (a[m] <= 1e-4) {
      first = m + 1;
      break;
    }
  const double last = a.empty() ? 1.0 : a.back();
  return {first > 0 && first <= 9, fmt("first mode <= 1e-4: %d, sigma_9/sigma_1 %.2e (target <= 9 modes)", first, last)};
}

Outcome saturation() {
  bool pass = true;
  std::string detail;
  for (int level = 1; level <= 3; ++level) {
    const auto def = couette(level, 2);
    const HdgDiscretisation disc(def.problem);
    const FieldErrors he = hdg_l2_error(disc, *def.exact, 8);
    PgdOptions opt;
    opt.eta_star = 1e-12;
    PgdEngine engine(disc, {interval_mesh(1.0, 3.0, 200, 2)}, opt);
    int mstar = -1;
    double gap = 0.0;
    each_mode(engine, 6, [&](const PgdSolution& s) {
      if (mstar > 0) return;
      const FieldErrors pe = pgd_l2_error(s, disc, *def.exact);
      double g = 0.0;
      for (int v = 0; v < 4; ++v)
        g = std::max(g, std::abs(pe.relative(v) - he.relative(v)) / he.relative(v));
      if (g <= 0.1) mstar = s.n_modes();
      gap = g;
    });
    pass = pass && mstar > 0;
    detail += fmt("mesh %d m*=%d gap %.3f; ", level, mstar, gap);
  }
  return {pass, detail + "target m* <= 6, gap <= 0.1 in L, u, p, uhat"};
}

Outcome degenerate_box() {
  const auto def = couette(1, 2, 2.0, 2.0);
  const HdgDiscretisation disc(def.problem);
  PgdEngine engine(disc, {interval_mesh(2.0, 2.0, 4, 2)}, PgdOptions{});
  const PgdSolution& sol = engine.run();
  const Eigen::VectorXd mu = Eigen::VectorXd::Constant(1, 2.0);
  const Eigen::VectorXd full = solve_full_order(disc, mu);
  const Eigen::VectorXd pgd = sol.evaluate(mu, 1);
  double worst = 0.0;
  for (auto v : {PgdVariable::L, PgdVariable::U, PgdVariable::P, PgdVariable::Uhat, PgdVariable::Rho}) {
    const double ref = variable_norm(disc.layout(), full, v);
    worst = std::max(worst, variable_norm(disc.layout(), Eigen::VectorXd(pgd - full), v) / ref);
  }
  return {worst <= 1e-10 && sol.n_modes() == 1, fmt("modes %d, max relative difference %.2e (target 1e-10)",
                                                    sol.n_modes(), worst)};
}

template <int Dim>
void identity_errors(std::uint64_t seed, int n_terms, int n_params, int samples, double err[4]) {
  using M = Eigen::Matrix<double, Dim, Dim>;
  std::mt19937_64 rng(seed);
  const auto f = hdgpgd::testing::random_mapping<Dim>(rng, n_terms, n_params);
  const auto J = sep_jacobian(f);
  const auto D = sep_det(J);
  const auto A = sep_adj(J);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int s = 0; s < samples; ++s) {
    Point<Dim> x;
    for (int a = 0; a < Dim; ++a) x[a] = U(rng);
    Eigen::VectorXd mu(n_params);
    for (int j = 0; j < n_params; ++j) mu[j] = U(rng);
    const M Jx = sep_eval(J, x, mu);
    const double jmax = std::max(1.0, Jx.cwiseAbs().maxCoeff());
    const double scale = std::pow(jmax, Dim), ascale = std::pow(jmax, Dim - 1);
    const double det = Jx.determinant();
    const M adj = sep_eval(A, x, mu);
    M cof;
    if constexpr (Dim == 2) {
      cof << Jx(1, 1), -Jx(0, 1), -Jx(1, 0), Jx(0, 0);
    } else {
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          const int r0 = (j + 1) % 3, r1 = (j + 2) % 3, c0 = (i + 1) % 3, c1 = (i + 2) % 3;
          cof(i, j) = Jx(r0, c0) * Jx(r1, c1) - Jx(r0, c1) * Jx(r1, c0);
        }
    }
    err[0] = std::max(err[0], std::abs(sep_eval(D, x, mu) - det) / scale);
    err[1] = std::max(err[1], (adj - cof).cwiseAbs().maxCoeff() / ascale);
    err[2] = std::max(err[2], (Jx - hdgpgd::testing::fd_jacobian(f, x, mu)).cwiseAbs().maxCoeff() / jmax);
    err[3] = std::max(err[3], (adj * Jx - det * M::Identity()).cwiseAbs().maxCoeff() / scale);
  }
}

Outcome separated_algebra() {
  double e[4] = {0, 0, 0, 0};
  identity_errors<2>(7, 3, 2, 100, e);
  identity_errors<2>(11, 1, 1, 100, e);
  identity_errors<3>(13, 2, 2, 100, e);
  return {e[0] <= 1e-12 && e[1] <= 1e-12 && e[2] <= 1e-6 && e[3] <= 1e-12,
          fmt("det %.1e, adj %.1e, Jacobian vs FD %.1e, adj J - det I %.1e (targets 1e-12/1e-12/1e-6/1e-12)", e[0],
              e[1], e[2], e[3])};
}

Outcome polynomial_exactness() {
  double worst = 0.0;
  const Eigen::VectorXd one = Eigen::VectorXd::Constant(1, 1.0);
  for (int k = 1; k <= 4; ++k) {
    const auto def = hdgpgd::testing::manufactured_problem(k, 0.7, 2);
    const HdgDiscretisation disc(def.problem);
    const Eigen::VectorXd x = solve_full_order(disc, one);
    // Pressure is determined up to the global mean constraint.
    ExactSolution ex = *def.exact;
    const double c = hdgpgd::testing::pressure_offset(disc, x, ex, one);
    auto p = ex.p;
    ex.p = [p, c](const Vec2& y, const Eigen::VectorXd& mu) { return p(y, mu) + c; };
    const FieldErrors e = disc.errors(x, one, ex);
    for (int v = 0; v < 4; ++v) worst = std::max(worst, e.relative(v));
  }
  return {worst <= 1e-10, fmt("k=1..4, max relative error %.2e (target 1e-10)", worst)};
}

Outcome compression() {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> N(0.0, 1.0);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const std::vector<ParametricMesh> pm = {interval_mesh(0.0, 1.0, 8, 2), interval_mesh(-1.0, 1.0, 6, 3)};
  const int m = 5, n = 40;
  auto random_psi = [&](const ParametricMesh& p) {
    Eigen::VectorXd v(p.n_dofs());
    for (int d = 0; d < v.size(); ++d) v[d] = N(rng);
    return v;
  };
  Eigen::MatrixXd S(n, m);
  std::vector<std::vector<Eigen::VectorXd>> psi(m);
  for (int i = 0; i < m; ++i) {
    for (int r = 0; r < n; ++r) S(r, i) = N(rng);
    for (const auto& p : pm) psi[i].push_back(random_psi(p));
  }
  const CompressionResult c = compress_separated(S.transpose() * S, psi, pm, 1e-10);
  const Eigen::MatrixXd T = S * c.coefficients.transpose();
  double err = 0.0, ref = 0.0;
  for (int s = 0; s < 1000; ++s) {
    const int r = std::min(n - 1, static_cast<int>(U(rng) * n));
    const double mu0 = U(rng), mu1 = -1.0 + 2.0 * U(rng);
    double a = 0.0, b = 0.0;
    for (int i = 0; i < m; ++i) a += S(r, i) * pm[0].evaluate(psi[i][0], mu0) * pm[1].evaluate(psi[i][1], mu1);
    for (int i = 0; i < static_cast<int>(c.psi.size()); ++i)
      b += T(r, i) * pm[0].evaluate(c.psi[i][0], mu0) * pm[1].evaluate(c.psi[i][1], mu1);
    err = std::max(err, std::abs(a - b));
    ref = std::max(ref, std::abs(a));
  }
  // Duplicated terms: five terms spanning three.
  Eigen::MatrixXd D(n, 5);
  std::vector<std::vector<Eigen::VectorXd>> dpsi(5);
  for (int i = 0; i < 3; ++i) {
    for (int r = 0; r < n; ++r) D(r, i) = N(rng);
    dpsi[i] = {random_psi(pm[0]), random_psi(pm[1])};
  }
  D.col(3) = D.col(0);
  dpsi[3] = dpsi[0];
  D.col(4) = -2.0 * D.col(2);
  dpsi[4] = dpsi[2];
  const CompressionResult d = compress_separated(D.transpose() * D, dpsi, pm, 1e-10);
  const int rank = static_cast<int>(d.coefficients.rows());
  return {err <= 1e-10 * ref && rank <= 3,
          fmt("rank 5 -> %d, max error %.1e relative to max %.2f (target 1e-10); duplicated input 5 -> %d terms",
              static_cast<int>(c.coefficients.rows()), err / ref, ref, rank)};
}

Outcome channel_forces() {
  RunConfig cfg;
  cfg.case_name = "channel_cylinder";
  cfg.k = 2;
  cfg.mesh_level = 1;
  cfg.param_elements = {20};
  cfg.param_degree = {2};
  cfg.pgd.eta_star = 1e-5;
  cfg.pgd.max_modes = 40;
  const auto def = make_problem(cfg);
  const HdgDiscretisation disc(def.problem);
  PgdEngine engine(disc, make_pmeshes(cfg, def.problem->box), cfg.pgd);
  const PgdSolution& sol = engine.run();
  const int tag = disc.mesh().tag_index("obstacle");
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  double worst = 0.0;
  for (int s = 0; s < 5; ++s) {
    const Eigen::VectorXd mu = Eigen::Vector2d(-1.0 + 2.0 * U(rng), U(rng));
    const Vec2 Fp = -disc.boundary_force(sol.evaluate(mu), mu, tag);
    const Vec2 Ff = -disc.boundary_force(solve_full_order(disc, mu), mu, tag);
    worst = std::max(worst, (Fp - Ff).norm() / Ff.norm());
  }
  return {worst < 0.01, fmt("%d modes, max relative force difference at 5 points %.2e (target < 1e-2)",
                            sol.n_modes(), worst)};
}

Outcome determinism() {
  RunConfig cfg;
  cfg.case_name = "couette";
  cfg.k = 2;
  cfg.mesh_level = 1;
  cfg.output_dir = (fs::temp_directory_path() / "hdgpgd_acceptance").string();
  auto slurp = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  };
  const OfflineReport a = run_offline(cfg);
  const std::string first = slurp(a.archive_path);
  const OfflineReport b = run_offline(cfg);
  const std::string second = slurp(b.archive_path);
  return {!first.empty() && first == second, fmt("%zu bytes, %d modes, identical: %s", first.size(), a.modes,
                                                 first == second ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only, known;
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--known-failure", known, "Criteria whose failure does not fail the exit status");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"optimal convergence", convergence},
      {"pointwise mode errors", pointwise_mode_errors},
      {"amplitude decay", amplitude_decay},
      {"PGD-to-full-order saturation", saturation},
      {"degenerate-box oracle", degenerate_box},
      {"separated-algebra oracles", separated_algebra},
      {"polynomial exactness", polynomial_exactness},
      {"compression fidelity", compression},
      {"demo-case cross-validation", channel_forces},
      {"determinism", determinism},
  };
  const std::set<int> run(only.begin(), only.end()), expected(known.begin(), known.end());
  int unexpected = 0;
  for (int i = 0; i < static_cast<int>(criteria.size()); ++i) {
    const int id = i + 1;
    if (!run.empty() && !run.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    if (!o.pass && !expected.count(id)) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}
