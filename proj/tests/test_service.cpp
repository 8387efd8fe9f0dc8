#include "doctest.h"

#include "support.hpp"

#include "hdgpgd/service.hpp"

#include "json.hpp"

#include <filesystem>

using namespace hdgpgd;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// One Couette archive shared by the test cases.
const ModesArchive& couette_archive() {
  static const ModesArchive a = [] {
    RunConfig cfg = parse_config("case = couette\nk = 2\nmesh.level = 1\nparam.elements = 40\npgd.max_modes = 10\n");
    cfg.output_dir = (fs::temp_directory_path() / "hdgpgd_service_test").string();
    return read_archive(run_offline(cfg).archive_path);
  }();
  return a;
}

json ok(const ServiceResponse& r) {
  REQUIRE(r.status == 200);
  return json::parse(r.body);
}

bool all_finite(const json& j) {
  if (j.is_number_float()) return std::isfinite(j.get<double>());
  if (j.is_array() || j.is_object()) {
    for (const auto& v : j)
      if (!all_finite(v)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("meta describes the archive") {
  const QueryService s(couette_archive());
  CHECK(s.consistent());
  const json m = ok(s.handle("GET", "/api/meta", ""));
  CHECK(m["case"] == "couette");
  CHECK(m["k"] == 2);
  CHECK(m["elements"] == 128);
  REQUIRE(m["axes"].size() == 1);
  CHECK(m["axes"][0]["name"] == "mu1");
  CHECK(m["axes"][0]["lower"] == 1.0);
  CHECK(m["axes"][0]["upper"] == 3.0);
  CHECK(m["modes"] == couette_archive().solution.n_modes());
  CHECK(m["qois"] == json{"drag:inner", "lift:inner", "drag:outer", "lift:outer"});
  CHECK(m["amplitudes"]["uhat"][0] == 1.0);
  CHECK(m["consistent"] == true);
  CHECK(all_finite(m));
}

TEST_CASE("evaluate matches the library and is reproducible") {
  const QueryService s(couette_archive());
  const ServiceResponse r = s.handle("POST", "/api/evaluate", R"({"mu":[1.75]})");
  const json e = ok(r);
  const Eigen::VectorXd mu = Eigen::VectorXd::Constant(1, 1.75);
  const Eigen::VectorXd x = couette_archive().solution.evaluate(mu);
  const QoiValues q = evaluate_qois(s.definition(), s.discretisation(), x, mu);
  for (const auto& [name, v] : q.values) CHECK(e["qoi"][name].get<double>() == v);
  CHECK(e["u_min"].get<double>() == q.u_min);
  CHECK(e["u_max"].get<double>() == q.u_max);
  CHECK(e["modes"] == couette_archive().solution.n_modes());
  CHECK(s.handle("POST", "/api/evaluate", R"({"mu":[1.75]})").body == r.body);
  CHECK(all_finite(e));
  // Torque balance: the annulus transmits equal and opposite moments, so
  // the net force on each circle vanishes by symmetry.
  CHECK(std::abs(e["qoi"]["drag:inner"].get<double>()) < 1e-6);
}

TEST_CASE("request errors map to status codes") {
  const QueryService s(couette_archive());
  CHECK(s.handle("POST", "/api/evaluate", R"({"mu":[3.5]})").status == 422);
  CHECK(s.handle("POST", "/api/evaluate", R"({"mu":[0.5]})").status == 422);
  CHECK(s.handle("POST", "/api/evaluate", R"({"mu":[1.5, 2.0]})").status == 400);
  CHECK(s.handle("POST", "/api/evaluate", R"({"mu":["a"]})").status == 400);
  CHECK(s.handle("POST", "/api/evaluate", R"({"nu":[2]})").status == 400);
  CHECK(s.handle("POST", "/api/evaluate", "{not json").status == 400);
  CHECK(s.handle("POST", "/api/evaluate", "[1]").status == 400);
  CHECK(s.handle("POST", "/api/field", R"({"mu":[2],"var":"vorticity"})").status == 400);
  CHECK(s.handle("POST", "/api/field", R"({"mu":[2],"res":0})").status == 400);
  CHECK(s.handle("POST", "/api/field", R"({"mu":[2],"res":1025})").status == 400);
  CHECK(s.handle("POST", "/api/surface", R"({"qoi":"drag:inner","grid":[202]})").status == 400);
  CHECK(s.handle("POST", "/api/surface", R"({"qoi":"drag:inner","grid":[0]})").status == 400);
  CHECK(s.handle("POST", "/api/surface", R"({"qoi":"torque"})").status == 400);
  CHECK(s.handle("POST", "/api/surface", R"({"qoi":"drag:inner","grid":[3,3]})").status == 400);
  CHECK(s.handle("GET", "/api/evaluate", "").status == 405);
  CHECK(s.handle("POST", "/api/meta", "").status == 405);
  CHECK(s.handle("GET", "/api/nothing", "").status == 404);
  const json err = json::parse(s.handle("POST", "/api/evaluate", R"({"mu":[9]})").body);
  CHECK(err["error"].is_string());
}

TEST_CASE("field raster samples the velocity inside the deformed annulus") {
  const QueryService s(couette_archive());
  const auto& exact = *s.definition().exact;
  const double mu = 2.0;
  const Eigen::VectorXd m = Eigen::VectorXd::Constant(1, mu);
  const json fx = ok(s.handle("POST", "/api/field", R"({"mu":[2.0],"var":"u_x","res":64})"));
  const json fm = ok(s.handle("POST", "/api/field", R"({"mu":[2.0],"res":64})"));
  CHECK(fm["var"] == "u_mag");
  CHECK(fx["bounds"]["xmin"].get<double>() == doctest::Approx(-5.0));
  CHECK(fx["bounds"]["ymax"].get<double>() == doctest::Approx(5.0));
  const double x0 = fx["bounds"]["xmin"], y0 = fx["bounds"]["ymin"];
  const double dx = (fx["bounds"]["xmax"].get<double>() - x0) / 64, dy = (fx["bounds"]["ymax"].get<double>() - y0) / 64;
  REQUIRE(fx["values"].size() == 64);
  double err = 0.0;
  int inside = 0;
  for (int j = 0; j < 64; ++j)
    for (int i = 0; i < 64; ++i) {
      const Vec2 q(x0 + (i + 0.5) * dx, y0 + (j + 0.5) * dy);
      const json& v = fx["values"][j][i];
      const double r = q.norm();
      if (r < mu - 1e-9 || r > 5.0 + 1e-9) {
        CHECK(v.is_null());
        continue;
      }
      if (r > mu + 0.1 && r < 4.9) CHECK_FALSE(v.is_null());
      if (v.is_null()) continue;
      ++inside;
      const Vec2 u = exact.u(q, m);
      err = std::max(err, std::abs(v.get<double>() - u.x()));
      CHECK(fm["values"][j][i].get<double>() >= 0.0);
    }
  CHECK(inside > 1500);
  // Peak speed is omega_in * mu = 2 on the inner circle. The coarsest mesh
  // has a pointwise error of about 2% of it at the nodes.
  CHECK(err < 0.03 * 2.0);
  CHECK(fm["max"].get<double>() <= 2.0 * 1.05);
}

TEST_CASE("field boundary polylines follow the deformed boundary") {
  const QueryService s(couette_archive());
  const json f = ok(s.handle("POST", "/api/field", R"({"mu":[3.0],"res":8})"));
  int inner = 0;
  for (const auto& b : f["boundary"]) {
    REQUIRE(b["points"].size() == 3);
    const double target = b["tag"] == "inner" ? 3.0 : 5.0;
    inner += b["tag"] == "inner";
    for (const auto& p : b["points"])
      CHECK(std::hypot(p[0].get<double>(), p[1].get<double>()) == doctest::Approx(target).epsilon(1e-10));
  }
  CHECK(inner == 16);
}

TEST_CASE("a zero-mode archive rasterises to zeros") {
  ModesArchive a = couette_archive();
  a.solution.modes.clear();
  a.sweeps.clear();
  const QueryService s(a);
  const json f = ok(s.handle("POST", "/api/field", R"({"mu":[1.5],"var":"p","res":16})"));
  int cells = 0;
  for (const auto& row : f["values"])
    for (const auto& v : row)
      if (!v.is_null()) {
        CHECK(v.get<double>() == 0.0);
        ++cells;
      }
  CHECK(cells > 0);
  CHECK(f["min"] == 0.0);
  const json e = ok(s.handle("POST", "/api/evaluate", R"({"mu":[1.5]})"));
  CHECK(e["modes"] == 0);
  CHECK(e["u_max"] == 0.0);
}

TEST_CASE("surface samples the quantity of interest on a grid") {
  const QueryService s(couette_archive());
  const json one = ok(s.handle("POST", "/api/surface", R"({"qoi":"drag:outer","grid":[1]})"));
  const json mid = ok(s.handle("POST", "/api/evaluate", R"({"mu":[2.0]})"));
  CHECK(one["axes"][0][0] == 2.0);
  CHECK(one["values"][0].get<double>() == mid["qoi"]["drag:outer"].get<double>());
  const json g = ok(s.handle("POST", "/api/surface", R"({"qoi":"lift:inner","grid":[5]})"));
  REQUIRE(g["values"].size() == 5);
  CHECK(g["axes"][0] == json{1.0, 1.5, 2.0, 2.5, 3.0});
  for (int i = 0; i < 5; ++i) {
    const json e = ok(s.handle("POST", "/api/evaluate", json{{"mu", {g["axes"][0][i]}}}.dump()));
    CHECK(g["values"][i].get<double>() == e["qoi"]["lift:inner"].get<double>());
  }
  const json d = ok(s.handle("POST", "/api/surface", R"({"qoi":"drag:inner"})"));
  CHECK(d["values"].size() == 21);
  CHECK(all_finite(d));
}

TEST_CASE("a two-parameter surface is row-major with the last axis fastest") {
  RunConfig cfg = parse_config("case = channel_cylinder\nk = 1\nmesh.level = 1\nparam.elements = 6\npgd.max_modes = 3\n");
  cfg.output_dir = (fs::temp_directory_path() / "hdgpgd_service_test").string();
  const QueryService s(read_archive(run_offline(cfg).archive_path));
  const json g = ok(s.handle("POST", "/api/surface", R"({"qoi":"drag:obstacle","grid":[3,2]})"));
  REQUIRE(g["values"].size() == 3);
  REQUIRE(g["values"][0].size() == 2);
  const json e = ok(s.handle("POST", "/api/evaluate", R"({"mu":[0.0, 1.0]})"));
  CHECK(g["values"][1][1].get<double>() == e["qoi"]["drag:obstacle"].get<double>());
  CHECK(s.handle("POST", "/api/evaluate", R"({"mu":[0.0, 1.5]})").status == 422);
}

TEST_CASE("tampered archives are refused with 409") {
  ModesArchive a = couette_archive();
  a.mesh_hash ^= 1;
  const QueryService s(a);
  CHECK_FALSE(s.consistent());
  CHECK(s.handle("POST", "/api/evaluate", R"({"mu":[2]})").status == 409);
  CHECK(s.handle("POST", "/api/field", R"({"mu":[2]})").status == 409);
  CHECK(s.handle("POST", "/api/surface", R"({"qoi":"drag:inner"})").status == 409);
  CHECK(ok(s.handle("GET", "/api/meta", ""))["consistent"] == false);
  ModesArchive b = couette_archive();
  b.fingerprint ^= 1;
  CHECK(QueryService(b).handle("POST", "/api/evaluate", R"({"mu":[2]})").status == 409);
  ModesArchive c = couette_archive();
  c.config.couette.r_out = 4.0;
  CHECK_FALSE(QueryService(c).consistent());
}

TEST_CASE("cases without force boundaries expose no quantities of interest") {
  const fs::path dir = fs::temp_directory_path() / "hdgpgd_service_test";
  fs::create_directories(dir);
  const fs::path mesh = dir / "cavity.mesh";
  write_mesh(hdgpgd::testing::rectangle_mesh(2, 2, 1.0, 1.0, 1), mesh.string());
  RunConfig cfg = parse_config("file.mu_lower = 1\nfile.mu_upper = 2\nfile.dirichlet.top = 1, 0\npgd.max_modes = 2\n"
                               "param.elements = 4\n");
  cfg.case_name = "file:" + mesh.string();
  cfg.output_dir = dir.string();
  const QueryService s(read_archive(run_offline(cfg).archive_path));
  CHECK(ok(s.meta())["qois"].empty());
  const json e = ok(s.handle("POST", "/api/evaluate", R"({"mu":[1.5]})"));
  CHECK(e["qoi"].empty());
  CHECK(e["u_max"].get<double>() > 0.5);
  CHECK(s.handle("POST", "/api/surface", R"({"qoi":"pressure_drop"})").status == 400);
}
