#pragma once

#include "hdgpgd/cases.hpp"
#include "hdgpgd/pgd.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hdgpgd {

// Input errors (bad config, missing files, malformed archives): exit code 2.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string case_name = "couette";  // couette | channel_cylinder | channel_cylinder_full | file:<path>
  int k = 2;
  int mesh_level = 2;  // couette mesh level or channel refinement
  std::vector<int> param_elements = {200};  // per axis, one value applies to all
  std::vector<int> param_degree = {2};
  PgdOptions pgd;
  double tau = 10.0;
  double ell = 0.0;
  int quad_increment = 4;
  std::string output_dir = "out";
  std::uint64_t seed = 0;

  CouetteOptions couette;
  ChannelOptions channel;
  FileCaseOptions file;

  std::vector<int> conv_levels = {1, 2, 3};
  std::vector<int> conv_degrees = {1, 2, 3};
  // Per row the greedy tolerance is min(eta_star, eta_factor * smallest
  // relative full-order error), so the PGD truncation sits below the
  // discretisation error.
  double conv_eta_star = 1e-4;
  double conv_eta_factor = 0.1;
  int conv_max_modes = 30;
  int conv_max_sweeps = 8;
};

// Flat "dotted.key = value" text, '#' comments. Unknown keys are errors.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
// Canonical sorted key = value listing of every setting.
std::map<std::string, std::string> config_entries(const RunConfig& cfg);
std::string format_config(const RunConfig& cfg);

ProblemDefinition make_problem(const RunConfig& cfg);
std::vector<ParametricMesh> make_pmeshes(const RunConfig& cfg, const ParameterBox& box);
// Hash of the canonical config and the mesh.
std::uint64_t problem_fingerprint(const RunConfig& cfg, const ReferenceMesh& mesh);

// Quantities of interest at one parameter point.
struct QoiValues {
  std::vector<std::pair<std::string, double>> values;  // drag:<tag>, lift:<tag>, pressure_drop
  double u_min = 0.0, u_max = 0.0;                      // velocity magnitude over element nodes
};
std::vector<std::string> qoi_names(const ProblemDefinition& def);
// Force on the obstacle is minus the boundary pseudo-traction integral.
QoiValues evaluate_qois(const ProblemDefinition& def, const HdgDiscretisation& disc, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& mu);
double qoi_value(const ProblemDefinition& def, const HdgDiscretisation& disc, const Eigen::VectorXd& x,
                 const Eigen::VectorXd& mu, const std::string& name);

// Archive: 8-byte magic, u64 header length, JSON header, raw little-endian
// f64 arrays in header order, u64 FNV-1a checksum of everything before it.
struct ModesArchive {
  RunConfig config;
  std::uint64_t fingerprint = 0;
  std::uint64_t mesh_hash = 0;
  PgdSolution solution;
  std::vector<int> sweeps;
};
std::string encode_archive(const ModesArchive& a, const Layout& layout);
ModesArchive decode_archive(const std::string& bytes);
void write_archive(const std::string& path, const ModesArchive& a, const Layout& layout);
ModesArchive read_archive(const std::string& path);

// Legacy ASCII VTK unstructured grid, k^2 linear subtriangles per element,
// deformed coordinates, velocity, pressure and velocity magnitude.
std::string format_vtk(const HdgDiscretisation& disc, const Eigen::VectorXd& x, const Eigen::VectorXd& mu);
void write_vtk(const std::string& path, const HdgDiscretisation& disc, const Eigen::VectorXd& x,
               const Eigen::VectorXd& mu);

struct OfflineReport {
  std::string archive_path;
  int modes = 0;
  int enriched = 0;
  std::vector<int> sweeps;
  std::map<std::string, std::vector<double>> amplitudes;
  double seconds = 0.0;
};
OfflineReport run_offline(const RunConfig& cfg, const std::function<void(const std::string&)>& log = {});

struct ConvergenceRow {
  int k = 0, level = 0, modes = 0;
  double h = 0.0;
  double eta_star = 0.0;
  double errors[4] = {0, 0, 0, 0};      // PGD: L, u, p, uhat
  double hdg_errors[4] = {0, 0, 0, 0};  // full order at 8 Gauss-Legendre points per axis
};
struct ConvergenceTable {
  std::vector<ConvergenceRow> rows;
  // Least-squares slope of log error against log h per degree and variable,
  // and the slope between the two finest meshes.
  std::map<int, std::vector<double>> rates, final_rates;
};
ConvergenceTable run_convergence(const RunConfig& cfg, const std::function<void(const std::string&)>& log = {});
// Least-squares slope of log(e) against log(h); empty input or one point gives NaN.
double observed_rate(const std::vector<double>& h, const std::vector<double>& e);

}  // namespace hdgpgd
