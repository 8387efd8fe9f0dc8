#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace hdgpgd {

enum class BoundaryKind { Dirichlet, Neumann, Slip };

struct BoundaryTag {
  BoundaryKind kind = BoundaryKind::Dirichlet;
  std::string name;
  std::string str() const;
};

// Parses "DIRICHLET:<name>", "NEUMANN:<name>" or "SLIP:<name>".
BoundaryTag parse_tag(const std::string& s);

struct BoundaryFace {
  int element = -1;
  int local_face = -1;
  int tag = -1;  // index into ReferenceMesh::tags
};

// High-order triangular mesh of the reference domain. Local face f of an
// element joins its vertices f and f+1.
struct ReferenceMesh {
  int k = 1;
  Eigen::Matrix2Xd vertices;
  std::vector<std::array<int, 3>> elements;
  std::vector<Eigen::Matrix2Xd> element_nodes;  // 2 x nloc per element
  std::vector<BoundaryTag> tags;
  std::vector<BoundaryFace> boundary_faces;

  int n_elements() const { return static_cast<int>(elements.size()); }
  int n_vertices() const { return static_cast<int>(vertices.cols()); }
  int tag_index(const std::string& name) const;  // -1 if absent

  // Physical point and Jacobian d x / d xi of the isoparametric map.
  Eigen::Vector2d map(int e, const Eigen::Vector2d& xi) const;
  Eigen::Matrix2d map_jacobian(int e, const Eigen::Vector2d& xi) const;

  std::uint64_t hash() const;
};

struct BoundaryFaceSpec {
  int element;
  int local_face;
  std::string tag;
};

// Validates topology and orientation and generates uniform lattice nodes.
ReferenceMesh make_mesh(const Eigen::Matrix2Xd& vertices, const std::vector<std::array<int, 3>>& elements,
                        const std::vector<BoundaryFaceSpec>& boundary, int k);

ReferenceMesh load_mesh(const std::string& path);
ReferenceMesh parse_mesh(const std::string& text);
std::string format_mesh(const ReferenceMesh& mesh);
void write_mesh(const ReferenceMesh& mesh, const std::string& path);

// Curves boundary edges: for each boundary face the callback may return a
// curve gamma(s), s in [0, 1], running from the face's first to second local
// vertex. Edge nodes are moved onto the curve and the displacement is blended
// linearly into the element.
using EdgeCurve = std::function<Eigen::Vector2d(double)>;
void curve_boundary(ReferenceMesh& mesh,
                    const std::function<std::optional<EdgeCurve>(const BoundaryTag&, const Eigen::Vector2d&,
                                                                 const Eigen::Vector2d&)>& curve_for);

// Same for every element edge, interior ones included; both neighbours of an
// interior edge receive the same curve.
void curve_edges(ReferenceMesh& mesh,
                 const std::function<std::optional<EdgeCurve>(const Eigen::Vector2d&, const Eigen::Vector2d&)>& curve_for);

struct Face {
  int left = -1, left_face = -1;
  int right = -1, right_face = -1;  // -1 on the boundary
  int tag = -1;                     // boundary tag index, -1 for interior faces
  int v0 = -1, v1 = -1;             // global vertices, v0 < v1; face nodes run v0 -> v1
  int hybrid = -1;                  // hybrid face index, -1 on Dirichlet faces
  bool interior() const { return right >= 0; }
};

struct Skeleton {
  int k = 1;
  std::vector<Face> faces;
  std::vector<std::array<int, 3>> element_faces;  // face id per local face
  int n_hybrid_faces = 0;
  bool has_neumann = false;

  int hybrid_dofs() const { return n_hybrid_faces * (k + 1) * 2; }
  // True when the element's local face direction is opposite to v0 -> v1.
  bool reversed(const ReferenceMesh& mesh, int e, int f) const;
};

Skeleton build_skeleton(const ReferenceMesh& mesh);

struct FaceFrame {
  Eigen::Matrix2Xd points;
  Eigen::Matrix2Xd normals;   // outward from the left element
  Eigen::Matrix2Xd tangents;  // normal rotated by +90 degrees
  Eigen::VectorXd measure;    // |dx/ds| for s in [0, 1]
};

// Geometry at face parameters s in [0, 1] measured along v0 -> v1.
FaceFrame face_frame(const ReferenceMesh& mesh, const Skeleton& sk, int face, const Eigen::VectorXd& s);

}  // namespace hdgpgd
