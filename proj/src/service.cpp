#include "hdgpgd/service.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hdgpgd {

using json = nlohmann::json;

namespace {

struct RequestError {
  int status;
  std::string message;
};

ServiceResponse error(int status, const std::string& message) {
  return {status, json{{"error", message}}.dump()};
}

json parse_request(const std::string& body) {
  try {
    json j = json::parse(body);
    if (!j.is_object()) throw RequestError{400, "request body must be a JSON object"};
    return j;
  } catch (const json::parse_error& e) {
    throw RequestError{400, std::string("malformed JSON: ") + e.what()};
  }
}

Eigen::VectorXd parse_mu(const json& req, const PgdSolution& sol) {
  if (!req.contains("mu") || !req["mu"].is_array()) throw RequestError{400, "'mu' must be an array of numbers"};
  const json& m = req["mu"];
  if (static_cast<int>(m.size()) != sol.n_params())
    throw RequestError{400, "'mu' must have " + std::to_string(sol.n_params()) + " entries"};
  Eigen::VectorXd mu(m.size());
  for (std::size_t j = 0; j < m.size(); ++j) {
    if (!m[j].is_number()) throw RequestError{400, "'mu' must be an array of numbers"};
    mu[j] = m[j].get<double>();
    if (!std::isfinite(mu[j])) throw RequestError{400, "'mu' entries must be finite"};
  }
  if (!sol.contains(mu)) throw RequestError{422, "mu is outside the parameter box"};
  return mu;
}

json mu_json(const Eigen::VectorXd& mu) {
  json a = json::array();
  for (Eigen::Index j = 0; j < mu.size(); ++j) a.push_back(mu[j]);
  return a;
}

// A zero-mode archive is the zero field.
Eigen::VectorXd solution_at(const PgdSolution& sol, const HdgDiscretisation& disc, const Eigen::VectorXd& mu) {
  return sol.modes.empty() ? Eigen::VectorXd::Zero(disc.size()) : sol.evaluate(mu);
}

double finite(double v, const char* what) {
  if (!std::isfinite(v)) throw RequestError{500, std::string("non-finite ") + what};
  return v;
}

}  // namespace

QueryService::QueryService(ModesArchive archive) : archive_(std::move(archive)) {
  def_ = make_problem(archive_.config);
  disc_ = std::make_unique<HdgDiscretisation>(def_.problem);
  const std::uint64_t mesh_hash = disc_->mesh().hash();
  if (mesh_hash != archive_.mesh_hash) {
    consistent_ = false;
    mismatch_ = "mesh hash differs from the archive";
  } else if (problem_fingerprint(archive_.config, disc_->mesh()) != archive_.fingerprint) {
    consistent_ = false;
    mismatch_ = "problem fingerprint differs from the archive";
  } else if (archive_.solution.n_params() != def_.problem->box.size()) {
    consistent_ = false;
    mismatch_ = "parameter count differs from the archive";
  } else {
    for (const auto& m : archive_.solution.modes)
      if (m.spatial.size() != disc_->size()) {
        consistent_ = false;
        mismatch_ = "mode size differs from the discretisation";
        break;
      }
  }
  sub_ = lattice_subtriangles(disc_->mesh().k);
  xi_ = simplex_nodes(disc_->mesh().k);
}

ServiceResponse QueryService::meta() const {
  const PgdSolution& sol = archive_.solution;
  json axes = json::array();
  for (int j = 0; j < sol.n_params(); ++j)
    axes.push_back({{"name", "mu" + std::to_string(j + 1)},
                    {"lower", sol.pmeshes[j].lower()},
                    {"upper", sol.pmeshes[j].upper()}});
  json amps = json::object();
  if (consistent_)
    for (int v = 0; v < kPgdVariables; ++v)
      amps[variable_name(static_cast<PgdVariable>(v))] =
          mode_amplitudes(sol, disc_->layout(), static_cast<PgdVariable>(v));
  json doc = {{"case", def_.name},
              {"k", disc_->mesh().k},
              {"elements", disc_->mesh().n_elements()},
              {"axes", axes},
              {"modes", sol.n_modes()},
              {"variables", {"u_mag", "u_x", "u_y", "p"}},
              {"qois", qoi_names(def_)},
              {"amplitudes", amps},
              {"consistent", consistent_}};
  return {200, doc.dump()};
}

ServiceResponse QueryService::evaluate(const std::string& request) const {
  try {
    const json req = parse_request(request);
    if (!consistent_) return error(409, mismatch_);
    const Eigen::VectorXd mu = parse_mu(req, archive_.solution);
    const Eigen::VectorXd x = solution_at(archive_.solution, *disc_, mu);
    const QoiValues q = evaluate_qois(def_, *disc_, x, mu);
    json qoi = json::object();
    for (const auto& [name, v] : q.values) qoi[name] = finite(v, "quantity of interest");
    json doc = {{"mu", mu_json(mu)},
                {"modes", archive_.solution.n_modes()},
                {"qoi", qoi},
                {"u_min", finite(q.u_min, "velocity")},
                {"u_max", finite(q.u_max, "velocity")}};
    return {200, doc.dump()};
  } catch (const RequestError& e) {
    return error(e.status, e.message);
  }
}

ServiceResponse QueryService::field(const std::string& request) const {
  try {
    const json req = parse_request(request);
    if (!consistent_) return error(409, mismatch_);
    const Eigen::VectorXd mu = parse_mu(req, archive_.solution);
    const std::string var = req.value("var", std::string("u_mag"));
    if (var != "u_mag" && var != "u_x" && var != "u_y" && var != "p")
      throw RequestError{400, "unknown variable '" + var + "' (u_mag, u_x, u_y, p)"};
    if (req.contains("res") && !req["res"].is_number_integer()) throw RequestError{400, "'res' must be an integer"};
    const int res = req.value("res", 128);
    if (res < 1 || res > kMaxRaster) throw RequestError{400, "'res' must be in [1, " + std::to_string(kMaxRaster) + "]"};

    const Eigen::VectorXd x = solution_at(archive_.solution, *disc_, mu);
    const ReferenceMesh& mesh = disc_->mesh();
    const int n_el = mesh.n_elements(), nloc = static_cast<int>(xi_.cols());
    Eigen::Matrix2Xd P(2, static_cast<Eigen::Index>(n_el) * nloc);
    for (int e = 0; e < n_el; ++e)
      for (int a = 0; a < nloc; ++a) P.col(e * nloc + a) = disc_->deformed_point(e, xi_.col(a), mu);
    const Vec2 lo = P.rowwise().minCoeff(), hi = P.rowwise().maxCoeff();
    const double dx = (hi.x() - lo.x()) / res, dy = (hi.y() - lo.y()) / res;

    // Each raster cell center takes the value of the first deformed linear
    // subtriangle containing it, evaluated at the linearly interpolated
    // reference coordinates.
    std::vector<double> val(static_cast<std::size_t>(res) * res, std::numeric_limits<double>::quiet_NaN());
    const double eps = 1e-12;
    for (int e = 0; e < n_el; ++e)
      for (const auto& t : sub_) {
        const Vec2 a = P.col(e * nloc + t[0]), b = P.col(e * nloc + t[1]), c = P.col(e * nloc + t[2]);
        Mat2 T;
        T << b - a, c - a;
        const double det = T.determinant();
        if (!(std::abs(det) > 0.0)) continue;
        const Mat2 Ti = T.inverse();
        const double x0 = std::min({a.x(), b.x(), c.x()}), x1 = std::max({a.x(), b.x(), c.x()});
        const double y0 = std::min({a.y(), b.y(), c.y()}), y1 = std::max({a.y(), b.y(), c.y()});
        const int i0 = std::max(0, static_cast<int>(std::floor((x0 - lo.x()) / dx - 0.5)));
        const int i1 = std::min(res - 1, static_cast<int>(std::ceil((x1 - lo.x()) / dx - 0.5)));
        const int j0 = std::max(0, static_cast<int>(std::floor((y0 - lo.y()) / dy - 0.5)));
        const int j1 = std::min(res - 1, static_cast<int>(std::ceil((y1 - lo.y()) / dy - 0.5)));
        for (int j = j0; j <= j1; ++j)
          for (int i = i0; i <= i1; ++i) {
            double& v = val[static_cast<std::size_t>(j) * res + i];
            if (!std::isnan(v)) continue;
            const Vec2 q(lo.x() + (i + 0.5) * dx, lo.y() + (j + 0.5) * dy);
            const Vec2 l = Ti * (q - a);
            if (l.x() < -eps || l.y() < -eps || l.x() + l.y() > 1.0 + eps) continue;
            const Vec2 xi = xi_.col(t[0]) + l.x() * (xi_.col(t[1]) - xi_.col(t[0])) +
                            l.y() * (xi_.col(t[2]) - xi_.col(t[0]));
            const Eigen::Vector3d f = disc_->point_values(x, e, xi);
            v = var == "u_mag" ? std::hypot(f[0], f[1]) : var == "u_x" ? f[0] : var == "u_y" ? f[1] : f[2];
          }
      }

    double vmin = std::numeric_limits<double>::infinity(), vmax = -vmin;
    json rows = json::array();
    for (int j = 0; j < res; ++j) {
      json row = json::array();
      for (int i = 0; i < res; ++i) {
        const double v = val[static_cast<std::size_t>(j) * res + i];
        if (std::isnan(v)) {
          row.push_back(nullptr);
        } else {
          finite(v, "field value");
          vmin = std::min(vmin, v);
          vmax = std::max(vmax, v);
          row.push_back(v);
        }
      }
      rows.push_back(std::move(row));
    }

    json boundary = json::array();
    for (const auto& bf : mesh.boundary_faces) {
      json pts = json::array();
      for (int a : simplex_face_nodes(mesh.k, bf.local_face)) {
        const Vec2 p = P.col(bf.element * nloc + a);
        pts.push_back({p.x(), p.y()});
      }
      boundary.push_back({{"tag", mesh.tags[bf.tag].name}, {"points", pts}});
    }

    const bool any = vmin <= vmax;
    json doc = {{"mu", mu_json(mu)},
                {"var", var},
                {"res", res},
                {"bounds", {{"xmin", lo.x()}, {"xmax", hi.x()}, {"ymin", lo.y()}, {"ymax", hi.y()}}},
                {"min", any ? json(vmin) : json(nullptr)},
                {"max", any ? json(vmax) : json(nullptr)},
                {"values", rows},
                {"boundary", boundary}};
    return {200, doc.dump()};
  } catch (const RequestError& e) {
    return error(e.status, e.message);
  }
}

ServiceResponse QueryService::surface(const std::string& request) const {
  try {
    const json req = parse_request(request);
    if (!consistent_) return error(409, mismatch_);
    const PgdSolution& sol = archive_.solution;
    if (!req.contains("qoi") || !req["qoi"].is_string()) throw RequestError{400, "'qoi' must be a string"};
    const std::string qoi = req["qoi"].get<std::string>();
    const auto names = qoi_names(def_);
    if (std::find(names.begin(), names.end(), qoi) == names.end())
      throw RequestError{400, "unknown quantity of interest '" + qoi + "'"};
    const int d = sol.n_params();
    std::vector<int> grid(d, 21);
    if (req.contains("grid")) {
      const json& g = req["grid"];
      if (!g.is_array() || static_cast<int>(g.size()) != d)
        throw RequestError{400, "'grid' must have " + std::to_string(d) + " entries"};
      for (int j = 0; j < d; ++j) {
        if (!g[j].is_number_integer()) throw RequestError{400, "'grid' entries must be integers"};
        grid[j] = g[j].get<int>();
      }
    }
    for (int n : grid)
      if (n < 1 || n > kMaxSurface)
        throw RequestError{400, "'grid' entries must be in [1, " + std::to_string(kMaxSurface) + "]"};

    std::vector<std::vector<double>> axes(d);
    json axes_json = json::array();
    for (int j = 0; j < d; ++j) {
      const double a = sol.pmeshes[j].lower(), b = sol.pmeshes[j].upper();
      for (int i = 0; i < grid[j]; ++i)
        axes[j].push_back(grid[j] == 1 ? 0.5 * (a + b) : i == grid[j] - 1 ? b : a + (b - a) * i / (grid[j] - 1));
      axes_json.push_back(axes[j]);
    }

    // Row-major over the axes, last axis fastest.
    long total = 1;
    for (int n : grid) total *= n;
    std::vector<double> flat(total);
    Eigen::VectorXd mu(d);
    for (long idx = 0; idx < total; ++idx) {
      long r = idx;
      for (int j = d - 1; j >= 0; --j) {
        mu[j] = axes[j][r % grid[j]];
        r /= grid[j];
      }
      flat[idx] = finite(qoi_value(def_, *disc_, solution_at(sol, *disc_, mu), mu, qoi), "quantity of interest");
    }
    std::function<json(int, long)> nest = [&](int j, long offset) {
      json a = json::array();
      long stride = 1;
      for (int i = j + 1; i < d; ++i) stride *= grid[i];
      for (int i = 0; i < grid[j]; ++i)
        a.push_back(j == d - 1 ? json(flat[offset + i]) : nest(j + 1, offset + i * stride));
      return a;
    };
    json doc = {{"qoi", qoi}, {"grid", grid}, {"axes", axes_json}, {"values", d > 0 ? nest(0, 0) : json::array()}};
    return {200, doc.dump()};
  } catch (const RequestError& e) {
    return error(e.status, e.message);
  }
}

ServiceResponse QueryService::handle(const std::string& method, const std::string& path,
                                     const std::string& body) const {
  try {
    if (path == "/api/meta") return method == "GET" ? meta() : error(405, "use GET");
    if (path == "/api/evaluate" || path == "/api/field" || path == "/api/surface") {
      if (method != "POST") return error(405, "use POST");
      if (path == "/api/evaluate") return evaluate(body);
      if (path == "/api/field") return field(body);
      return surface(body);
    }
    return error(404, "no such endpoint '" + path + "'");
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
}

}  // namespace hdgpgd
