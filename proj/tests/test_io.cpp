#include "doctest.h"

#include "support.hpp"

#include "hdgpgd/hash.hpp"
#include "hdgpgd/io.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace hdgpgd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "hdgpgd_io_test" / name;
  fs::create_directories(p);
  return p;
}

RunConfig small_couette(int modes = 3) {
  RunConfig c = parse_config("case = couette\nk = 1\nmesh.level = 1\nparam.elements = 20\n");
  c.pgd.max_modes = modes;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(HDGPGD_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("config parsing reads dotted keys and rejects unknown ones") {
  const RunConfig c = parse_config(
      "# comment\ncase = couette\nk = 3\nmesh.level = 1\npgd.eta_star = 1e-6  # trailing\n"
      "param.elements = 50, 60\nhdg.tau = 2.5\nfile.dirichlet.lid = 1, 0\n");
  CHECK(c.k == 3);
  CHECK(c.pgd.eta_star == 1e-6);
  CHECK(c.param_elements == std::vector<int>{50, 60});
  CHECK(c.tau == 2.5);
  CHECK(c.file.dirichlet.at("lid") == Vec2(1.0, 0.0));
  CHECK_THROWS_AS(parse_config("pgd.eta = 1\n"), InputError);
  CHECK_THROWS_AS(parse_config("k = two\n"), InputError);
  CHECK_THROWS_AS(parse_config("k = 0\n"), InputError);
  CHECK_THROWS_AS(parse_config("pgd.eta_star = 0\n"), InputError);
  CHECK_THROWS_AS(parse_config("pgd.eta_r = -1\n"), InputError);
  CHECK_THROWS_AS(parse_config("case = nowhere\n"), InputError);
  CHECK_THROWS_AS(parse_config("just words\n"), InputError);
  CHECK_THROWS_AS(load_config("/nonexistent/config"), InputError);
}

TEST_CASE("formatted config parses back to the same config") {
  RunConfig c = parse_config("case = channel_cylinder\nk = 2\npgd.eta_star = 3.3e-5\nchannel.shift = 0.1\n");
  c.file.dirichlet["a"] = Vec2(0.1, -2.0);
  const std::string text = format_config(c);
  CHECK(format_config(parse_config(text)) == text);
}

TEST_CASE("parametric meshes broadcast a single entry to every axis") {
  const RunConfig c = parse_config("case = channel_cylinder\nparam.elements = 7\nparam.degree = 1, 3\n");
  const auto def = make_problem(c);
  const auto pm = make_pmeshes(c, def.problem->box);
  REQUIRE(pm.size() == 2);
  CHECK(pm[0].n_elements() == 7);
  CHECK(pm[1].n_elements() == 7);
  CHECK(pm[0].degree() == 1);
  CHECK(pm[1].degree() == 3);
  CHECK(pm[0].lower() == -1.0);
  const RunConfig bad = parse_config("case = channel_cylinder\nparam.elements = 7, 8, 9\nparam.degree = 1, 2, 3\n");
  CHECK_NOTHROW(make_pmeshes(bad, def.problem->box));
  const RunConfig few = parse_config("case = couette\nparam.degree = 1, 2\n");
  RunConfig c2 = few;
  c2.param_elements = {3, 4};
  CHECK_NOTHROW(make_pmeshes(c2, make_problem(few).problem->box));
}

TEST_CASE("archive round trip is bit exact and detects corruption") {
  const RunConfig cfg = small_couette();
  const auto def = make_problem(cfg);
  const HdgDiscretisation disc(def.problem);
  PgdOptions opt = cfg.pgd;
  PgdEngine engine(disc, make_pmeshes(cfg, def.problem->box), opt);
  ModesArchive a;
  a.config = cfg;
  a.solution = engine.run();
  a.mesh_hash = disc.mesh().hash();
  a.fingerprint = problem_fingerprint(cfg, disc.mesh());
  for (const auto& m : a.solution.modes) a.sweeps.push_back(m.sweeps);

  const std::string bytes = encode_archive(a, disc.layout());
  const ModesArchive b = decode_archive(bytes);
  CHECK(encode_archive(b, disc.layout()) == bytes);
  REQUIRE(b.solution.n_modes() == a.solution.n_modes());
  for (int i = 0; i < a.solution.n_modes(); ++i) {
    CHECK(b.solution.modes[i].spatial == a.solution.modes[i].spatial);
    CHECK(b.solution.modes[i].psi[0] == a.solution.modes[i].psi[0]);
  }
  CHECK(b.fingerprint == a.fingerprint);
  CHECK(b.solution.fingerprint == a.fingerprint);
  CHECK(b.mesh_hash == a.mesh_hash);
  CHECK(format_config(b.config) == format_config(cfg));

  CHECK_THROWS_AS(decode_archive(bytes.substr(0, bytes.size() - 9)), InputError);
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x20;
  CHECK_THROWS_AS(decode_archive(flipped), InputError);
  CHECK_THROWS_AS(decode_archive("not an archive at all, clearly"), InputError);

  // A future schema with a valid checksum is still refused.
  std::string future = bytes.substr(0, bytes.size() - 8);
  const auto at = future.find("\"schema\":1");
  REQUIRE(at != std::string::npos);
  future[at + 9] = '2';
  Fnv1a h;
  h.add(future.data(), future.size());
  for (int i = 0; i < 8; ++i) future.push_back(static_cast<char>((h.value() >> (8 * i)) & 0xff));
  CHECK_THROWS_WITH_AS(decode_archive(future), doctest::Contains("schema"), InputError);
}

TEST_CASE("offline runs are deterministic and the report matches the archive") {
  RunConfig cfg = small_couette(4);
  cfg.output_dir = scratch("det").string();
  const OfflineReport ra = run_offline(cfg);
  const std::string first = slurp(ra.archive_path);
  const OfflineReport rb = run_offline(cfg);
  CHECK(rb.archive_path == ra.archive_path);
  CHECK(slurp(rb.archive_path) == first);
  const ModesArchive a = read_archive(ra.archive_path);
  const auto def = make_problem(a.config);
  const HdgDiscretisation disc(def.problem);
  CHECK(ra.amplitudes.at("uhat") == mode_amplitudes(a.solution, disc.layout(), PgdVariable::Uhat));
  CHECK(ra.amplitudes.at("p") == mode_amplitudes(a.solution, disc.layout(), PgdVariable::P));
  CHECK(ra.modes == a.solution.n_modes());
}

TEST_CASE("degenerate interval gives a one-mode archive") {
  RunConfig cfg = small_couette(5);
  cfg.couette.mu_lower = cfg.couette.mu_upper = 2.0;
  cfg.output_dir = scratch("point").string();
  const OfflineReport r = run_offline(cfg);
  CHECK(r.modes == 1);
}

TEST_CASE("Couette defaults need at most 12 modes at eta* = 1e-4") {
  RunConfig cfg = parse_config("case = couette\n");
  cfg.output_dir = scratch("defaults").string();
  const OfflineReport r = run_offline(cfg);
  CHECK(r.modes <= 12);
  CHECK(r.amplitudes.at("uhat").back() <= cfg.pgd.eta_star);
}

TEST_CASE("VTK export writes deformed subtriangulated fields") {
  CouetteOptions o;
  o.mesh_level = 1;
  o.k = 3;
  const auto def = couette_case(o);
  const HdgDiscretisation disc(def.problem);
  for (double mu : {1.0, 2.0}) {
    const Eigen::VectorXd m = Eigen::VectorXd::Constant(1, mu);
    const Eigen::VectorXd x = solve_full_order(disc, m);
    std::istringstream in(format_vtk(disc, x, m));
    std::string line, word;
    long np = 0, nc = 0;
    std::vector<Vec2> pts;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      word.clear();
      ls >> word;
      if (word == "POINTS") {
        ls >> np;
        for (long i = 0; i < np; ++i) {
          double a, b, c;
          in >> a >> b >> c;
          pts.emplace_back(a, b);
        }
      } else if (word == "CELLS") {
        ls >> nc;
      }
    }
    const Layout& L = disc.layout();
    CHECK(np == static_cast<long>(L.n_el) * L.nloc);
    CHECK(nc == static_cast<long>(L.n_el) * 9);
    double rmin = 1e300;
    const Eigen::Matrix2Xd xi = simplex_nodes(3);
    for (int e = 0; e < L.n_el; ++e)
      for (int a = 0; a < L.nloc; ++a) {
        const Vec2& p = pts[e * L.nloc + a];
        rmin = std::min(rmin, p.norm());
        CHECK((p - disc.deformed_point(e, xi.col(a), m)).norm() <= 1e-12);
      }
    CHECK(rmin == doctest::Approx(mu).epsilon(1e-12));
  }
}

TEST_CASE("observed rates are least-squares slopes") {
  const std::vector<double> h = {0.5, 0.25, 0.125};
  CHECK(observed_rate(h, {3.0 * 0.125, 3.0 * 0.015625, 3.0 * 0.001953125}) == doctest::Approx(3.0));
  CHECK(observed_rate({0.5, 0.25}, {1.0, 0.2}) == doctest::Approx(std::log2(5.0)));
  CHECK(std::isnan(observed_rate({0.5}, {1.0})));
  CHECK(std::isnan(observed_rate({}, {})));
}

TEST_CASE("convergence on a single mesh reports errors without rates") {
  RunConfig cfg = small_couette();
  cfg.conv_levels = {1};
  cfg.conv_degrees = {1};
  cfg.conv_max_modes = 6;
  cfg.conv_eta_star = 1e-4;
  const ConvergenceTable t = run_convergence(cfg);
  REQUIRE(t.rows.size() == 1);
  for (double e : t.rows[0].errors) CHECK(e > 0.0);
  for (double r : t.rates.at(1)) CHECK(std::isnan(r));
}

TEST_CASE("error integration is converged in the quadrature increment") {
  CouetteOptions o;
  o.mesh_level = 1;
  o.k = 2;
  o.quad_increment = 4;
  const auto a = couette_case(o);
  o.quad_increment = 8;
  const auto b = couette_case(o);
  const HdgDiscretisation da(a.problem), db(b.problem);
  const Eigen::VectorXd mu = Eigen::VectorXd::Constant(1, 2.5);
  const FieldErrors ea = da.errors(solve_full_order(da, mu), mu, *a.exact);
  const FieldErrors eb = db.errors(solve_full_order(db, mu), mu, *b.exact);
  for (int v : {VarL, VarU, VarUhat}) CHECK(ea.relative(v) == doctest::Approx(eb.relative(v)).epsilon(0.01));
}

TEST_CASE("quantities of interest by name") {
  RunConfig cfg = parse_config("case = channel_cylinder\nk = 1\nmesh.level = 1\n");
  const auto def = make_problem(cfg);
  const HdgDiscretisation disc(def.problem);
  const Eigen::VectorXd mu = Eigen::Vector2d(0.2, 0.5);
  const Eigen::VectorXd x = solve_full_order(disc, mu);
  CHECK(qoi_names(def) == std::vector<std::string>{"drag:obstacle", "lift:obstacle", "pressure_drop"});
  const QoiValues q = evaluate_qois(def, disc, x, mu);
  REQUIRE(q.values.size() == 3);
  for (const auto& [name, v] : q.values) CHECK(qoi_value(def, disc, x, mu, name) == v);
  CHECK(q.values[0].second == -disc.boundary_force(x, mu, disc.mesh().tag_index("obstacle")).x());
  CHECK(q.u_max > q.u_min);
  CHECK_THROWS_AS(qoi_value(def, disc, x, mu, "drag:wall"), std::invalid_argument);
  CHECK_THROWS_AS(qoi_value(def, disc, x, mu, "torque"), std::invalid_argument);
}

TEST_CASE("command line exit codes") {
  const fs::path dir = scratch("cli");
  const fs::path mesh = dir / "box.mesh";
  write_mesh(hdgpgd::testing::rectangle_mesh(2, 2, 1.0, 1.0, 1), mesh.string());
  std::ofstream(dir / "missing.cfg") << "case = file:" << (dir / "nope.mesh").string() << "\n";
  std::ofstream(dir / "unknown.cfg") << "case = couette\nmesh.refine = 2\n";
  std::ofstream(dir / "file.cfg") << "case = file:" << mesh.string() << "\nfile.mu_lower = 1\nfile.mu_upper = 2\n"
                                  << "file.dirichlet.top = 1, 0\npgd.max_modes = 2\nparam.elements = 4\n"
                                  << "output.dir = " << (dir / "out").string() << "\n";
  CHECK(run_cli("offline " + (dir / "missing.cfg").string()) == 2);
  CHECK(run_cli("offline " + (dir / "unknown.cfg").string()) == 2);
  CHECK(run_cli("offline " + (dir / "absent.cfg").string()) == 2);
  CHECK(run_cli("frobnicate") == 2);
  REQUIRE(run_cli("offline " + (dir / "file.cfg").string()) == 0);
  const std::string archive = (dir / "out" / "file.modes").string();
  CHECK(run_cli("amplitudes " + archive) == 0);
  CHECK(run_cli("evaluate " + archive + " --mu 1.5 --export " + (dir / "f.vtk").string()) == 0);
  CHECK(fs::exists(dir / "f.vtk"));
  CHECK(run_cli("evaluate " + archive + " --mu 2.5") == 2);
  CHECK(run_cli("evaluate " + archive + " --mu 1.5,1.5") == 2);
  CHECK(run_cli("evaluate " + archive + " --mu abc") == 2);
  // A different mesh behind the same path is rejected.
  write_mesh(hdgpgd::testing::rectangle_mesh(3, 2, 1.0, 1.0, 1), mesh.string());
  CHECK(run_cli("evaluate " + archive + " --mu 1.5") == 2);
  fs::remove(mesh);
  CHECK(run_cli("evaluate " + archive + " --mu 1.5") == 2);
}
