#include "hdgpgd/io.hpp"
#include "hdgpgd/service.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace hdgpgd;
using json = nlohmann::json;

namespace {

void log_line(const std::string& s) {
  std::cerr << s << '\n';
}

Eigen::VectorXd parse_mu_list(const std::string& s) {
  std::vector<double> v;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw InputError("--mu: cannot parse '" + item + "'");
    }
  }
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

int cmd_offline(const std::string& config_path) {
  const RunConfig cfg = load_config(config_path);
  const OfflineReport r = run_offline(cfg, log_line);
  json report = {{"archive", r.archive_path}, {"modes", r.modes},         {"enriched", r.enriched},
                 {"sweeps", r.sweeps},        {"amplitudes", r.amplitudes}, {"seconds", r.seconds}};
  const auto path = std::filesystem::path(r.archive_path).replace_extension(".report.json");
  std::ofstream(path) << report.dump(2) << '\n';
  std::cout << "archive " << r.archive_path << "\nmodes " << r.modes << "\nreport " << path.string() << '\n';
  return 0;
}

int cmd_convergence(const std::string& config_path) {
  const RunConfig cfg = load_config(config_path);
  const ConvergenceTable t = run_convergence(cfg, log_line);
  std::printf("%3s %5s %5s %9s %10s %12s %12s %12s %12s %10s\n", "k", "level", "modes", "eta*", "h", "L", "u", "p",
              "uhat", "pgd/hdg");
  for (const auto& r : t.rows) {
    double ratio = 0.0;
    for (int v = 0; v < 4; ++v) ratio = std::max(ratio, r.errors[v] / r.hdg_errors[v]);
    std::printf("%3d %5d %5d %9.2e %10.4g %12.4e %12.4e %12.4e %12.4e %10.4f\n", r.k, r.level, r.modes, r.eta_star, r.h,
                r.errors[0], r.errors[1], r.errors[2], r.errors[3], ratio);
  }
  auto print_rates = [](const char* title, const std::map<int, std::vector<double>>& rates) {
    std::printf("%s\n", title);
    for (const auto& [k, r] : rates) {
      std::printf("%3d", k);
      for (double v : r) std::isnan(v) ? std::printf(" %8s", "-") : std::printf(" %8.3f", v);
      std::printf("\n");
    }
  };
  print_rates("observed rates, finest pair (L u p uhat)", t.final_rates);
  print_rates("observed rates, least squares (L u p uhat)", t.rates);
  return 0;
}

int cmd_evaluate(const std::string& archive_path, const std::string& mu_text, const std::string& export_path) {
  const QueryService svc(read_archive(archive_path));
  if (!svc.consistent()) throw InputError("archive does not match its problem: " + svc.mismatch());
  const Eigen::VectorXd mu = parse_mu_list(mu_text);
  json req = {{"mu", std::vector<double>(mu.data(), mu.data() + mu.size())}};
  const ServiceResponse r = svc.evaluate(req.dump());
  if (r.status != 200) {
    const std::string msg = json::parse(r.body).at("error").get<std::string>();
    if (r.status >= 500) throw std::runtime_error(msg);
    throw InputError(msg);
  }
  std::cout << json::parse(r.body).dump(2) << '\n';
  if (!export_path.empty()) {
    const PgdSolution& sol = svc.archive().solution;
    const Eigen::VectorXd x = sol.modes.empty() ? Eigen::VectorXd::Zero(svc.discretisation().size()) : sol.evaluate(mu);
    write_vtk(export_path, svc.discretisation(), x, mu);
    std::cerr << "wrote " << export_path << '\n';
  }
  return 0;
}

int cmd_amplitudes(const std::string& archive_path) {
  const QueryService svc(read_archive(archive_path));
  if (!svc.consistent()) throw InputError("archive does not match its problem: " + svc.mismatch());
  const PgdSolution& sol = svc.archive().solution;
  const Layout& L = svc.discretisation().layout();
  std::printf("%5s", "mode");
  for (int v = 0; v < kPgdVariables; ++v) std::printf(" %12s", variable_name(static_cast<PgdVariable>(v)));
  std::printf("\n");
  std::vector<std::vector<double>> a;
  for (int v = 0; v < kPgdVariables; ++v) a.push_back(mode_amplitudes(sol, L, static_cast<PgdVariable>(v)));
  for (int m = 0; m < sol.n_modes(); ++m) {
    std::printf("%5d", m + 1);
    for (int v = 0; v < kPgdVariables; ++v) std::printf(" %12.4e", a[v][m]);
    std::printf("\n");
  }
  return 0;
}

int cmd_serve(const std::string& archive_path, const std::string& host, int port) {
  const QueryService svc(read_archive(archive_path));
  if (!svc.consistent()) std::cerr << "warning: " << svc.mismatch() << "; evaluation endpoints answer 409\n";
  std::cerr << "serving " << archive_path << " on http://" << host << ':' << port << '\n';
  serve(svc, host, port);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HDG Stokes solver with PGD parametric reduction"};
  app.require_subcommand(1);

  std::string config, archive, mu, export_path, host = "127.0.0.1";
  int port = 8080;
  auto* off = app.add_subcommand("offline", "run the greedy PGD enrichment and write a modes archive");
  off->add_option("config", config, "config file")->required();
  auto* conv = app.add_subcommand("convergence", "mesh/degree convergence study against the exact solution");
  conv->add_option("config", config, "config file")->required();
  auto* ev = app.add_subcommand("evaluate", "evaluate quantities of interest at one parameter point");
  ev->add_option("archive", archive, "modes archive")->required();
  ev->add_option("--mu", mu, "comma separated parameter values")->required();
  ev->add_option("--export", export_path, "write a VTK file of the fields");
  auto* amp = app.add_subcommand("amplitudes", "print relative mode amplitudes per variable");
  amp->add_option("archive", archive, "modes archive")->required();
  auto* srv = app.add_subcommand("serve", "HTTP query service over an archive");
  srv->add_option("archive", archive, "modes archive")->required();
  srv->add_option("--port", port, "port")->check(CLI::Range(1, 65535));
  srv->add_option("--host", host, "bind address");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*off) return cmd_offline(config);
    if (*conv) return cmd_convergence(config);
    if (*ev) return cmd_evaluate(archive, mu, export_path);
    if (*amp) return cmd_amplitudes(archive);
    if (*srv) return cmd_serve(archive, host, port);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
