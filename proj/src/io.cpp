#include "hdgpgd/io.hpp"

#include "hdgpgd/hash.hpp"
#include "json.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>

namespace hdgpgd {

using json = nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(x))
    throw InputError("config key '" + key + "': expected a number, got '" + v + "'");
  return x;
}

long long parse_int(const std::string& key, const std::string& v) {
  long long x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw InputError("config key '" + key + "': expected an integer, got '" + v + "'");
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InputError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& p : split(v, ',')) out.push_back(static_cast<int>(parse_int(key, p)));
  if (out.empty()) throw InputError("config key '" + key + "': empty list");
  return out;
}

std::string fmt_int_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Setting {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <class T>
Setting dbl(T RunConfig::*group, double T::*field) {
  return {[=](const RunConfig& c) { return fmt_double(c.*group.*field); },
          [=](RunConfig& c, const std::string& k, const std::string& v) { c.*group.*field = parse_double(k, v); }};
}
Setting dbl(double RunConfig::*field) {
  return {[=](const RunConfig& c) { return fmt_double(c.*field); },
          [=](RunConfig& c, const std::string& k, const std::string& v) { c.*field = parse_double(k, v); }};
}
template <class T>
Setting integer(T RunConfig::*group, int T::*field) {
  return {[=](const RunConfig& c) { return std::to_string(c.*group.*field); },
          [=](RunConfig& c, const std::string& k, const std::string& v) {
            c.*group.*field = static_cast<int>(parse_int(k, v));
          }};
}
Setting integer(int RunConfig::*field) {
  return {[=](const RunConfig& c) { return std::to_string(c.*field); },
          [=](RunConfig& c, const std::string& k, const std::string& v) { c.*field = static_cast<int>(parse_int(k, v)); }};
}
template <class T>
Setting boolean(T RunConfig::*group, bool T::*field) {
  return {[=](const RunConfig& c) { return std::string(c.*group.*field ? "true" : "false"); },
          [=](RunConfig& c, const std::string& k, const std::string& v) { c.*group.*field = parse_bool(k, v); }};
}
Setting int_list(std::vector<int> RunConfig::*field) {
  return {[=](const RunConfig& c) { return fmt_int_list(c.*field); },
          [=](RunConfig& c, const std::string& k, const std::string& v) { c.*field = parse_int_list(k, v); }};
}

const std::map<std::string, Setting>& settings() {
  static const std::map<std::string, Setting> s = {
      {"case", {[](const RunConfig& c) { return c.case_name; },
                [](RunConfig& c, const std::string&, const std::string& v) { c.case_name = v; }}},
      {"k", integer(&RunConfig::k)},
      {"mesh.level", integer(&RunConfig::mesh_level)},
      {"param.elements", int_list(&RunConfig::param_elements)},
      {"param.degree", int_list(&RunConfig::param_degree)},
      {"pgd.eta_star", dbl(&RunConfig::pgd, &PgdOptions::eta_star)},
      {"pgd.eta_uhat", dbl(&RunConfig::pgd, &PgdOptions::eta_uhat)},
      {"pgd.eta_r", dbl(&RunConfig::pgd, &PgdOptions::eta_r)},
      {"pgd.max_modes", integer(&RunConfig::pgd, &PgdOptions::max_modes)},
      {"pgd.max_sweeps", integer(&RunConfig::pgd, &PgdOptions::max_sweeps)},
      {"pgd.compress_every", integer(&RunConfig::pgd, &PgdOptions::compress_every)},
      {"pgd.compress_tol", dbl(&RunConfig::pgd, &PgdOptions::compress_tol)},
      {"pgd.update_factors", boolean(&RunConfig::pgd, &PgdOptions::update_factors)},
      {"pgd.refine_passes", integer(&RunConfig::pgd, &PgdOptions::refine_passes)},
      {"hdg.tau", dbl(&RunConfig::tau)},
      {"hdg.ell", dbl(&RunConfig::ell)},
      {"hdg.quad_increment", integer(&RunConfig::quad_increment)},
      {"output.dir", {[](const RunConfig& c) { return c.output_dir; },
                      [](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; }}},
      {"seed", {[](const RunConfig& c) { return std::to_string(c.seed); },
                [](RunConfig& c, const std::string& k, const std::string& v) {
                  const long long s = parse_int(k, v);
                  if (s < 0) throw InputError("config key 'seed' must be nonnegative");
                  c.seed = static_cast<std::uint64_t>(s);
                }}},
      {"couette.r_out", dbl(&RunConfig::couette, &CouetteOptions::r_out)},
      {"couette.mu_lower", dbl(&RunConfig::couette, &CouetteOptions::mu_lower)},
      {"couette.mu_upper", dbl(&RunConfig::couette, &CouetteOptions::mu_upper)},
      {"couette.omega_in", dbl(&RunConfig::couette, &CouetteOptions::omega_in)},
      {"couette.omega_out", dbl(&RunConfig::couette, &CouetteOptions::omega_out)},
      {"couette.nu", dbl(&RunConfig::couette, &CouetteOptions::nu)},
      {"channel.half_length", dbl(&RunConfig::channel, &ChannelOptions::half_length)},
      {"channel.height", dbl(&RunConfig::channel, &ChannelOptions::height)},
      {"channel.r_ref", dbl(&RunConfig::channel, &ChannelOptions::r_ref)},
      {"channel.r_int", dbl(&RunConfig::channel, &ChannelOptions::r_int)},
      {"channel.radius_gain", dbl(&RunConfig::channel, &ChannelOptions::radius_gain)},
      {"channel.shift", dbl(&RunConfig::channel, &ChannelOptions::shift)},
      {"channel.inflow_speed", dbl(&RunConfig::channel, &ChannelOptions::inflow_speed)},
      {"channel.nu", dbl(&RunConfig::channel, &ChannelOptions::nu)},
      {"file.mu_lower", dbl(&RunConfig::file, &FileCaseOptions::mu_lower)},
      {"file.mu_upper", dbl(&RunConfig::file, &FileCaseOptions::mu_upper)},
      {"file.nu", dbl(&RunConfig::file, &FileCaseOptions::nu)},
      {"convergence.levels", int_list(&RunConfig::conv_levels)},
      {"convergence.degrees", int_list(&RunConfig::conv_degrees)},
      {"convergence.eta_star", dbl(&RunConfig::conv_eta_star)},
      {"convergence.eta_factor", dbl(&RunConfig::conv_eta_factor)},
      {"convergence.max_modes", integer(&RunConfig::conv_max_modes)},
      {"convergence.max_sweeps", integer(&RunConfig::conv_max_sweeps)},
  };
  return s;
}

const std::string kDirichletPrefix = "file.dirichlet.";

void validate(const RunConfig& c) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw InputError(std::string("config key '") + name + "' must be positive");
  };
  if (c.k < 1) throw InputError("config key 'k' must be at least 1");
  positive(c.pgd.eta_star, "pgd.eta_star");
  positive(c.pgd.eta_uhat, "pgd.eta_uhat");
  positive(c.pgd.eta_r, "pgd.eta_r");
  positive(c.pgd.compress_tol, "pgd.compress_tol");
  positive(c.tau, "hdg.tau");
  positive(c.conv_eta_star, "convergence.eta_star");
  positive(c.conv_eta_factor, "convergence.eta_factor");
  if (c.pgd.max_modes < 1) throw InputError("config key 'pgd.max_modes' must be at least 1");
  if (c.pgd.max_sweeps < 1) throw InputError("config key 'pgd.max_sweeps' must be at least 1");
  if (c.pgd.refine_passes < 0) throw InputError("config key 'pgd.refine_passes' must be nonnegative");
  if (c.pgd.compress_every < 0) throw InputError("config key 'pgd.compress_every' must be nonnegative");
  if (c.quad_increment < 0) throw InputError("config key 'hdg.quad_increment' must be nonnegative");
  for (int n : c.param_elements)
    if (n < 1) throw InputError("config key 'param.elements' entries must be at least 1");
  for (int n : c.param_degree)
    if (n < 1) throw InputError("config key 'param.degree' entries must be at least 1");
  const bool known = c.case_name == "couette" || c.case_name == "channel_cylinder" || c.case_name == "channel_cylinder_full" ||
                     c.case_name.rfind("file:", 0) == 0;
  if (!known) throw InputError("unknown case '" + c.case_name + "' (couette, channel_cylinder, channel_cylinder_full, file:<path>)");
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.rfind(kDirichletPrefix, 0) == 0) {
      const auto parts = split(value, ',');
      if (parts.size() != 2) throw InputError("config key '" + key + "': expected 'vx, vy'");
      c.file.dirichlet[key.substr(kDirichletPrefix.size())] = Vec2(parse_double(key, parts[0]), parse_double(key, parts[1]));
      continue;
    }
    const auto it = settings().find(key);
    if (it == settings().end()) throw InputError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    it->second.set(c, key, value);
  }
  validate(c);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::map<std::string, std::string> config_entries(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& [key, s] : settings()) out[key] = s.get(cfg);
  for (const auto& [name, v] : cfg.file.dirichlet) out[kDirichletPrefix + name] = fmt_double(v.x()) + "," + fmt_double(v.y());
  return out;
}

std::string format_config(const RunConfig& cfg) {
  std::string s;
  for (const auto& [key, value] : config_entries(cfg)) s += key + " = " + value + "\n";
  return s;
}

ProblemDefinition make_problem(const RunConfig& cfg) {
  if (cfg.case_name == "couette") {
    CouetteOptions o = cfg.couette;
    o.k = cfg.k;
    o.mesh_level = cfg.mesh_level;
    o.tau = cfg.tau;
    o.ell = cfg.ell;
    o.quad_increment = cfg.quad_increment;
    return couette_case(o);
  }
  if (cfg.case_name == "channel_cylinder" || cfg.case_name == "channel_cylinder_full") {
    ChannelOptions o = cfg.channel;
    o.k = cfg.k;
    o.refinement = cfg.mesh_level;
    o.tau = cfg.tau;
    o.ell = cfg.ell;
    o.quad_increment = cfg.quad_increment;
    o.mirrored = cfg.case_name == "channel_cylinder_full";
    return channel_cylinder_case(o);
  }
  if (cfg.case_name.rfind("file:", 0) == 0) {
    FileCaseOptions o = cfg.file;
    o.path = cfg.case_name.substr(5);
    o.tau = cfg.tau;
    o.ell = cfg.ell;
    o.quad_increment = cfg.quad_increment;
    if (!std::filesystem::exists(o.path)) throw InputError("mesh file '" + o.path + "' not found");
    return file_case(o);
  }
  throw InputError("unknown case '" + cfg.case_name + "'");
}

std::vector<ParametricMesh> make_pmeshes(const RunConfig& cfg, const ParameterBox& box) {
  auto pick = [](const std::vector<int>& v, int j, const char* key) {
    if (v.size() == 1) return v[0];
    if (j < static_cast<int>(v.size())) return v[j];
    throw InputError(std::string("config key '") + key + "' has fewer entries than parameter axes");
  };
  std::vector<ParametricMesh> pm;
  for (int j = 0; j < box.size(); ++j)
    pm.push_back(interval_mesh(box.lower[j], box.upper[j], pick(cfg.param_elements, j, "param.elements"),
                               pick(cfg.param_degree, j, "param.degree")));
  return pm;
}

std::uint64_t problem_fingerprint(const RunConfig& cfg, const ReferenceMesh& mesh) {
  RunConfig c = cfg;
  c.output_dir.clear();
  Fnv1a h;
  h.add(format_config(c));
  h.add(static_cast<std::int64_t>(mesh.hash()));
  return h.value();
}

std::vector<std::string> qoi_names(const ProblemDefinition& def) {
  std::vector<std::string> names;
  for (const auto& t : def.force_tags) {
    names.push_back("drag:" + t);
    names.push_back("lift:" + t);
  }
  if (!def.inflow_tag.empty() && !def.outflow_tag.empty()) names.push_back("pressure_drop");
  return names;
}

QoiValues evaluate_qois(const ProblemDefinition& def, const HdgDiscretisation& disc, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& mu) {
  QoiValues q;
  const ReferenceMesh& mesh = disc.mesh();
  for (const auto& t : def.force_tags) {
    const int tag = mesh.tag_index(t);
    if (tag < 0) throw std::invalid_argument("mesh has no boundary named '" + t + "'");
    const Vec2 F = -disc.boundary_force(x, mu, tag);
    q.values.emplace_back("drag:" + t, F.x());
    q.values.emplace_back("lift:" + t, F.y());
  }
  if (!def.inflow_tag.empty() && !def.outflow_tag.empty()) {
    const double pin = disc.boundary_mean_pressure(x, mu, mesh.tag_index(def.inflow_tag));
    const double pout = disc.boundary_mean_pressure(x, mu, mesh.tag_index(def.outflow_tag));
    q.values.emplace_back("pressure_drop", pin - pout);
  }
  const Layout& L = disc.layout();
  double umin = std::numeric_limits<double>::infinity(), umax = 0.0;
  for (int e = 0; e < L.n_el; ++e)
    for (int i = 0; i < L.nloc; ++i) {
      const double m = std::hypot(x[L.u(e, 0) + i], x[L.u(e, 1) + i]);
      umin = std::min(umin, m);
      umax = std::max(umax, m);
    }
  q.u_min = L.n_el > 0 ? umin : 0.0;
  q.u_max = umax;
  return q;
}

double qoi_value(const ProblemDefinition& def, const HdgDiscretisation& disc, const Eigen::VectorXd& x,
                 const Eigen::VectorXd& mu, const std::string& name) {
  const ReferenceMesh& mesh = disc.mesh();
  const auto colon = name.find(':');
  if (colon != std::string::npos) {
    const std::string kind = name.substr(0, colon), tag = name.substr(colon + 1);
    if ((kind == "drag" || kind == "lift") &&
        std::find(def.force_tags.begin(), def.force_tags.end(), tag) != def.force_tags.end()) {
      const Vec2 F = -disc.boundary_force(x, mu, mesh.tag_index(tag));
      return kind == "drag" ? F.x() : F.y();
    }
  } else if (name == "pressure_drop" && !def.inflow_tag.empty() && !def.outflow_tag.empty()) {
    return disc.boundary_mean_pressure(x, mu, mesh.tag_index(def.inflow_tag)) -
           disc.boundary_mean_pressure(x, mu, mesh.tag_index(def.outflow_tag));
  }
  throw std::invalid_argument("unknown quantity of interest '" + name + "'");
}

// ---------------------------------------------------------------------------
// Archive

namespace {

constexpr char kMagic[8] = {'H', 'D', 'G', 'P', 'G', 'D', 'A', '1'};
constexpr int kSchema = 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

void put_array(std::string& out, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(v[i]));
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

std::uint64_t unhex(const std::string& s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw InputError("archive header: bad hex value '" + s + "'");
  return v;
}

}  // namespace

std::string encode_archive(const ModesArchive& a, const Layout& layout) {
  const PgdSolution& sol = a.solution;
  json h;
  h["schema"] = kSchema;
  h["fingerprint"] = hex(a.fingerprint);
  h["mesh_hash"] = hex(a.mesh_hash);
  h["k"] = a.config.k;
  h["config"] = config_entries(a.config);
  h["modes"] = sol.n_modes();
  h["spatial_size"] = layout.size;
  h["layout"] = {{"nloc", layout.nloc},   {"n_el", layout.n_el}, {"block", layout.block}, {"hyb0", layout.hyb0},
                 {"n_hyb", layout.n_hyb}, {"rho0", layout.rho0}, {"kappa", layout.kappa}};
  json axes = json::array();
  for (int j = 0; j < sol.n_params(); ++j) {
    const ParametricMesh& pm = sol.pmeshes[j];
    axes.push_back({{"lower", pm.lower()}, {"upper", pm.upper()}, {"elements", pm.n_elements()},
                    {"degree", pm.degree()}, {"dofs", pm.n_dofs()}});
  }
  h["axes"] = axes;
  json amps = json::object();
  for (int v = 0; v < kPgdVariables; ++v)
    amps[variable_name(static_cast<PgdVariable>(v))] = mode_amplitudes(sol, layout, static_cast<PgdVariable>(v));
  h["amplitudes"] = amps;
  h["sweeps"] = a.sweeps;
  h["arrays"] = "per mode: spatial[spatial_size], then psi[axis][dofs] for each axis";

  const std::string header = h.dump();
  std::string out(kMagic, kMagic + 8);
  put_u64(out, header.size());
  out += header;
  for (const auto& m : sol.modes) {
    if (m.spatial.size() != layout.size) throw std::invalid_argument("mode size does not match the layout");
    put_array(out, m.spatial);
    for (int j = 0; j < sol.n_params(); ++j) put_array(out, m.psi[j]);
  }
  Fnv1a cs;
  cs.add(out.data(), out.size());
  put_u64(out, cs.value());
  return out;
}

ModesArchive decode_archive(const std::string& bytes) {
  if (bytes.size() < 24 || !std::equal(kMagic, kMagic + 8, bytes.begin())) throw InputError("not a modes archive");
  Fnv1a cs;
  cs.add(bytes.data(), bytes.size() - 8);
  if (cs.value() != get_u64(bytes, bytes.size() - 8)) throw InputError("archive checksum mismatch (corrupt or truncated)");
  const std::uint64_t hlen = get_u64(bytes, 8);
  if (hlen > bytes.size() - 24) throw InputError("archive header length out of range");
  json h;
  try {
    h = json::parse(bytes.substr(16, hlen));
  } catch (const json::exception& e) {
    throw InputError(std::string("archive header: ") + e.what());
  }
  ModesArchive a;
  try {
    if (h.at("schema").get<int>() != kSchema)
      throw InputError("archive schema " + std::to_string(h.at("schema").get<int>()) + " is not supported");
    std::string text;
    for (const auto& [key, value] : h.at("config").items()) text += key + " = " + value.get<std::string>() + "\n";
    a.config = parse_config(text);
    a.fingerprint = unhex(h.at("fingerprint").get<std::string>());
    a.mesh_hash = unhex(h.at("mesh_hash").get<std::string>());
    a.sweeps = h.at("sweeps").get<std::vector<int>>();
    const int m = h.at("modes").get<int>();
    const long long n = h.at("spatial_size").get<long long>();
    std::vector<int> dofs;
    for (const auto& ax : h.at("axes")) {
      a.solution.pmeshes.push_back(interval_mesh(ax.at("lower").get<double>(), ax.at("upper").get<double>(),
                                                 ax.at("elements").get<int>(), ax.at("degree").get<int>()));
      dofs.push_back(ax.at("dofs").get<int>());
      if (a.solution.pmeshes.back().n_dofs() != dofs.back()) throw InputError("archive axis dof count mismatch");
    }
    long long per_mode = n;
    for (int d : dofs) per_mode += d;
    if (m < 0 || n < 0 || static_cast<std::uint64_t>(m * per_mode * 8) != bytes.size() - 24 - hlen)
      throw InputError("archive payload size does not match its header");
    std::size_t pos = 16 + hlen;
    auto read = [&](long long len) {
      Eigen::VectorXd v(len);
      for (long long i = 0; i < len; ++i, pos += 8) v[i] = std::bit_cast<double>(get_u64(bytes, pos));
      return v;
    };
    for (int i = 0; i < m; ++i) {
      PgdMode md;
      md.spatial = read(n);
      for (int d : dofs) md.psi.push_back(read(d));
      if (i < static_cast<int>(a.sweeps.size())) md.sweeps = a.sweeps[i];
      a.solution.modes.push_back(std::move(md));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("archive header: ") + e.what());
  }
  a.solution.fingerprint = a.fingerprint;
  return a;
}

void write_archive(const std::string& path, const ModesArchive& a, const Layout& layout) {
  const std::string bytes = encode_archive(a, layout);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write archive '" + path + "'");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw InputError("failed writing archive '" + path + "'");
}

ModesArchive read_archive(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open archive '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return decode_archive(ss.str());
}

// ---------------------------------------------------------------------------
// VTK export

std::string format_vtk(const HdgDiscretisation& disc, const Eigen::VectorXd& x, const Eigen::VectorXd& mu) {
  const ReferenceMesh& mesh = disc.mesh();
  const Layout& L = disc.layout();
  const int k = mesh.k;
  const Eigen::Matrix2Xd xi = simplex_nodes(k);
  const auto sub = lattice_subtriangles(k);

  std::ostringstream s;
  s << std::setprecision(17);
  s << "# vtk DataFile Version 3.0\nhdgpgd solution\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  const long np = static_cast<long>(L.n_el) * L.nloc;
  s << "POINTS " << np << " double\n";
  for (int e = 0; e < L.n_el; ++e)
    for (int a = 0; a < L.nloc; ++a) {
      const Vec2 p = disc.deformed_point(e, xi.col(a), mu);
      s << p.x() << ' ' << p.y() << " 0\n";
    }
  const long nc = static_cast<long>(L.n_el) * static_cast<long>(sub.size());
  s << "CELLS " << nc << ' ' << 4 * nc << '\n';
  for (int e = 0; e < L.n_el; ++e)
    for (const auto& t : sub)
      s << "3 " << e * L.nloc + t[0] << ' ' << e * L.nloc + t[1] << ' ' << e * L.nloc + t[2] << '\n';
  s << "CELL_TYPES " << nc << '\n';
  for (long c = 0; c < nc; ++c) s << "5\n";
  s << "POINT_DATA " << np << "\nVECTORS velocity double\n";
  for (int e = 0; e < L.n_el; ++e)
    for (int a = 0; a < L.nloc; ++a) s << x[L.u(e, 0) + a] << ' ' << x[L.u(e, 1) + a] << " 0\n";
  s << "SCALARS pressure double 1\nLOOKUP_TABLE default\n";
  for (int e = 0; e < L.n_el; ++e)
    for (int a = 0; a < L.nloc; ++a) s << x[L.p(e) + a] << '\n';
  s << "SCALARS velocity_magnitude double 1\nLOOKUP_TABLE default\n";
  for (int e = 0; e < L.n_el; ++e)
    for (int a = 0; a < L.nloc; ++a) s << std::hypot(x[L.u(e, 0) + a], x[L.u(e, 1) + a]) << '\n';
  return s.str();
}

void write_vtk(const std::string& path, const HdgDiscretisation& disc, const Eigen::VectorXd& x,
               const Eigen::VectorXd& mu) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot write '" + path + "'");
  f << format_vtk(disc, x, mu);
}

// ---------------------------------------------------------------------------
// Drivers

OfflineReport run_offline(const RunConfig& cfg, const std::function<void(const std::string&)>& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const ProblemDefinition def = make_problem(cfg);
  const HdgDiscretisation disc(def.problem);
  PgdOptions opt = cfg.pgd;
  opt.log = log;
  PgdEngine engine(disc, make_pmeshes(cfg, def.problem->box), opt);
  engine.run();

  ModesArchive a;
  a.config = cfg;
  a.mesh_hash = disc.mesh().hash();
  a.fingerprint = problem_fingerprint(cfg, disc.mesh());
  a.solution = engine.solution();
  a.solution.fingerprint = a.fingerprint;
  for (const auto& m : a.solution.modes) a.sweeps.push_back(m.sweeps);

  std::filesystem::create_directories(cfg.output_dir);
  OfflineReport r;
  r.archive_path = (std::filesystem::path(cfg.output_dir) / (def.name + ".modes")).string();
  write_archive(r.archive_path, a, disc.layout());
  r.modes = a.solution.n_modes();
  r.enriched = engine.enriched();
  r.sweeps = a.sweeps;
  for (int v = 0; v < kPgdVariables; ++v)
    r.amplitudes[variable_name(static_cast<PgdVariable>(v))] =
        mode_amplitudes(a.solution, disc.layout(), static_cast<PgdVariable>(v));
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

double observed_rate(const std::vector<double>& h, const std::vector<double>& e) {
  const std::size_t n = std::min(h.size(), e.size());
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lx = std::log(h[i]), ly = std::log(e[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double den = n * sxx - sx * sx;
  return den != 0.0 ? (n * sxy - sx * sy) / den : std::numeric_limits<double>::quiet_NaN();
}

ConvergenceTable run_convergence(const RunConfig& cfg, const std::function<void(const std::string&)>& log) {
  ConvergenceTable table;
  for (int k : cfg.conv_degrees) {
    std::vector<double> hs, es[4];
    for (int level : cfg.conv_levels) {
      RunConfig c = cfg;
      c.k = k;
      c.mesh_level = level;
      const ProblemDefinition def = make_problem(c);
      if (!def.exact) throw InputError("case '" + cfg.case_name + "' has no exact solution for a convergence study");
      const HdgDiscretisation disc(def.problem);
      const FieldErrors he = hdg_l2_error(disc, *def.exact, 8);
      ConvergenceRow row;
      row.k = k;
      row.level = level;
      row.h = std::ldexp(1.0, -level);
      double floor = std::numeric_limits<double>::infinity();
      for (int v = 0; v < 4; ++v) {
        row.hdg_errors[v] = he.relative(v);
        floor = std::min(floor, row.hdg_errors[v]);
      }
      row.eta_star = std::min(cfg.conv_eta_star, cfg.conv_eta_factor * floor);
      PgdOptions opt = c.pgd;
      opt.eta_star = row.eta_star;
      opt.max_modes = cfg.conv_max_modes;
      opt.max_sweeps = cfg.conv_max_sweeps;
      opt.log = {};
      PgdEngine engine(disc, make_pmeshes(c, def.problem->box), opt);
      engine.run();
      const FieldErrors fe = pgd_l2_error(engine.solution(), disc, *def.exact);
      row.modes = engine.solution().n_modes();
      for (int v = 0; v < 4; ++v) row.errors[v] = fe.relative(v);
      table.rows.push_back(row);
      hs.push_back(row.h);
      for (int v = 0; v < 4; ++v) es[v].push_back(row.errors[v]);
      if (log) {
        std::ostringstream s;
        s << "k=" << k << " level=" << level << " eta*=" << row.eta_star << " modes=" << row.modes
          << " L=" << row.errors[0] << " u=" << row.errors[1] << " p=" << row.errors[2] << " uhat=" << row.errors[3];
        log(s.str());
      }
    }
    std::vector<double> rates, last;
    for (int v = 0; v < 4; ++v) {
      rates.push_back(observed_rate(hs, es[v]));
      const std::size_t n = hs.size();
      last.push_back(n < 2 ? std::numeric_limits<double>::quiet_NaN()
                           : observed_rate({hs[n - 2], hs[n - 1]}, {es[v][n - 2], es[v][n - 1]}));
    }
    table.rates[k] = rates;
    table.final_rates[k] = last;
  }
  return table;
}

}  // namespace hdgpgd
