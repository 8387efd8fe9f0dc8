#pragma once

#include "hdgpgd/hdg.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace hdgpgd {

struct ProblemDefinition {
  std::string name;
  std::shared_ptr<StokesProblem> problem;
  std::optional<ExactSolution> exact;
  std::vector<std::string> force_tags;  // boundaries with force QoIs
  std::string inflow_tag, outflow_tag;  // pressure-drop QoI when both set
};

struct CouetteOptions {
  double r_out = 5.0;
  double mu_lower = 1.0, mu_upper = 3.0;
  double omega_in = 1.0, omega_out = 0.0;
  double nu = 1.0;
  int mesh_level = 2;  // 1..4: 128, 512, 2048, 8192 elements
  int k = 2;
  int quad_increment = 4;
  double tau = 10.0;
  double ell = 0.0;
};

// Structured annulus 1 <= r <= r_out with n_r x n_theta quads split in two,
// curved boundary edges. Tags DIRICHLET:inner and DIRICHLET:outer.
ReferenceMesh annulus_mesh(int n_r, int n_theta, double r_in, double r_out, int k);

ProblemDefinition couette_case(const CouetteOptions& opt);

struct ChannelOptions {
  double half_length = 3.0;  // channel [-L, L] x [0, H]
  double height = 1.0;
  double r_ref = 0.25;      // obstacle radius at mu1 = 0
  double r_int = 0.6;       // radial mapping support
  double radius_gain = 0.4; // R(mu1) = r_ref (1 + gain mu1)
  double shift = 0.3;       // horizontal shift at mu2 = 1
  double inflow_speed = 1.0;
  double nu = 1.0;
  int refinement = 1;
  int k = 2;
  int quad_increment = 4;
  double tau = 10.0;
  double ell = 0.0;
  bool mirrored = false;  // full channel [-L, L] x [-H, H], obstacle a full disc
};

// Channel with a half-disc obstacle on the bottom symmetry wall. Parameters:
// mu1 in [-1, 1] scales the obstacle radius, mu2 in [0, 1] shifts it.
ProblemDefinition channel_cylinder_case(const ChannelOptions& opt);
ReferenceMesh channel_mesh(const ChannelOptions& opt);

// Mesh file with a dilation mapping x^mu = mu1 x over [lower, upper] and
// constant Dirichlet velocities per boundary name.
struct FileCaseOptions {
  std::string path;
  double mu_lower = 1.0, mu_upper = 1.0;
  std::map<std::string, Vec2> dirichlet;
  double nu = 1.0;
  int quad_increment = 4;
  double tau = 10.0;
  double ell = 0.0;
};
ProblemDefinition file_case(const FileCaseOptions& opt);

// Minimum of det(J) over quadrature points of the discretisation for a
// tensor grid of n points per axis.
double min_mapping_determinant(const HdgDiscretisation& disc, int n_per_axis);

}  // namespace hdgpgd
