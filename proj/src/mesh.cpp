#include "hdgpgd/mesh.hpp"

#include "hdgpgd/hash.hpp"
#include "hdgpgd/shape.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace hdgpgd {

std::string BoundaryTag::str() const {
  switch (kind) {
    case BoundaryKind::Dirichlet: return "DIRICHLET:" + name;
    case BoundaryKind::Neumann: return "NEUMANN:" + name;
    case BoundaryKind::Slip: return "SLIP:" + name;
  }
  return name;
}

BoundaryTag parse_tag(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos || colon + 1 >= s.size()) throw std::invalid_argument("unknown boundary tag '" + s + "'");
  const std::string kind = s.substr(0, colon);
  BoundaryTag t;
  t.name = s.substr(colon + 1);
  if (kind == "DIRICHLET")
    t.kind = BoundaryKind::Dirichlet;
  else if (kind == "NEUMANN")
    t.kind = BoundaryKind::Neumann;
  else if (kind == "SLIP")
    t.kind = BoundaryKind::Slip;
  else
    throw std::invalid_argument("unknown boundary tag '" + s + "'");
  return t;
}

int ReferenceMesh::tag_index(const std::string& name) const {
  for (std::size_t i = 0; i < tags.size(); ++i)
    if (tags[i].name == name) return static_cast<int>(i);
  return -1;
}

Eigen::Vector2d ReferenceMesh::map(int e, const Eigen::Vector2d& xi) const {
  const BasisTabulation t = simplex_basis(k, Eigen::Matrix2Xd(xi));
  return element_nodes[e] * t.values.row(0).transpose();
}

Eigen::Matrix2d ReferenceMesh::map_jacobian(int e, const Eigen::Vector2d& xi) const {
  const BasisTabulation t = simplex_basis(k, Eigen::Matrix2Xd(xi));
  Eigen::Matrix2d G;
  G.col(0) = element_nodes[e] * t.dxi.row(0).transpose();
  G.col(1) = element_nodes[e] * t.deta.row(0).transpose();
  return G;
}

std::uint64_t ReferenceMesh::hash() const {
  Fnv1a h;
  h.add(static_cast<std::int64_t>(k));
  h.add(vertices.data(), sizeof(double) * vertices.size());
  for (const auto& el : elements)
    for (int v : el) h.add(static_cast<std::int64_t>(v));
  for (const auto& X : element_nodes) h.add(X.data(), sizeof(double) * X.size());
  for (const auto& t : tags) h.add(t.str());
  for (const auto& b : boundary_faces) {
    h.add(static_cast<std::int64_t>(b.element));
    h.add(static_cast<std::int64_t>(b.local_face));
    h.add(static_cast<std::int64_t>(b.tag));
  }
  return h.value();
}

ReferenceMesh make_mesh(const Eigen::Matrix2Xd& vertices, const std::vector<std::array<int, 3>>& elements,
                        const std::vector<BoundaryFaceSpec>& boundary, int k) {
  if (k < 1 || k > 8) throw std::invalid_argument("mesh degree out of range [1, 8]");
  ReferenceMesh m;
  m.k = k;
  m.vertices = vertices;
  m.elements = elements;
  const int nv = m.n_vertices();

  for (int e = 0; e < m.n_elements(); ++e) {
    const auto& el = elements[e];
    for (int v : el)
      if (v < 0 || v >= nv) throw std::invalid_argument("element " + std::to_string(e) + " references a missing vertex");
    const Eigen::Vector2d a = vertices.col(el[1]) - vertices.col(el[0]);
    const Eigen::Vector2d b = vertices.col(el[2]) - vertices.col(el[0]);
    const double det = a.x() * b.y() - a.y() * b.x();
    if (!(det > 0.0)) throw std::invalid_argument("inverted or degenerate element " + std::to_string(e));
  }

  std::map<std::pair<int, int>, std::vector<std::pair<int, int>>> edges;
  for (int e = 0; e < m.n_elements(); ++e)
    for (int f = 0; f < 3; ++f) {
      const int a = elements[e][f], b = elements[e][(f + 1) % 3];
      edges[{std::min(a, b), std::max(a, b)}].push_back({e, f});
    }
  for (const auto& [key, users] : edges)
    if (users.size() > 2)
      throw std::invalid_argument("face (" + std::to_string(key.first) + ", " + std::to_string(key.second) +
                                  ") is shared by " + std::to_string(users.size()) + " elements");

  std::map<std::pair<int, int>, int> tagged;
  for (const auto& bf : boundary) {
    if (bf.element < 0 || bf.element >= m.n_elements() || bf.local_face < 0 || bf.local_face > 2)
      throw std::invalid_argument("boundary face references a missing element or local face");
    const BoundaryTag tag = parse_tag(bf.tag);
    int ti = m.tag_index(tag.name);
    if (ti < 0) {
      m.tags.push_back(tag);
      ti = static_cast<int>(m.tags.size()) - 1;
    } else if (m.tags[ti].kind != tag.kind) {
      throw std::invalid_argument("boundary name '" + tag.name + "' used with two different kinds");
    }
    const int a = elements[bf.element][bf.local_face], b = elements[bf.element][(bf.local_face + 1) % 3];
    const std::pair<int, int> key{std::min(a, b), std::max(a, b)};
    if (edges.at(key).size() != 1)
      throw std::invalid_argument("interior face of element " + std::to_string(bf.element) + " tagged as boundary");
    if (!tagged.emplace(key, ti).second)
      throw std::invalid_argument("boundary face of element " + std::to_string(bf.element) + " tagged twice");
    m.boundary_faces.push_back({bf.element, bf.local_face, ti});
  }
  for (const auto& [key, users] : edges)
    if (users.size() == 1 && !tagged.count(key))
      throw std::invalid_argument("untagged boundary face (" + std::to_string(key.first) + ", " +
                                  std::to_string(key.second) + ")");

  const Eigen::Matrix2Xd ref = simplex_nodes(k);
  m.element_nodes.resize(m.n_elements());
  for (int e = 0; e < m.n_elements(); ++e) {
    const auto& el = elements[e];
    const Eigen::Vector2d x0 = vertices.col(el[0]);
    Eigen::Matrix2d A;
    A.col(0) = vertices.col(el[1]) - x0;
    A.col(1) = vertices.col(el[2]) - x0;
    m.element_nodes[e] = (A * ref).colwise() + x0;
  }
  return m;
}

ReferenceMesh parse_mesh(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    lines.push_back(line);
  }
  std::size_t pos = 0;
  auto header = [&](const char* key) {
    if (pos >= lines.size()) throw std::invalid_argument(std::string("malformed mesh file: missing '") + key + "'");
    std::istringstream ls(lines[pos++]);
    std::string word;
    long value = -1;
    if (!(ls >> word >> value) || word != key || value < 0)
      throw std::invalid_argument(std::string("malformed mesh file: expected '") + key + " <n>'");
    return value;
  };
  const long nsd = header("nsd");
  if (nsd != 2) throw std::invalid_argument("malformed mesh file: only nsd 2 is supported");
  const int k = static_cast<int>(header("degree"));
  const long nv = header("nvertices");
  const long ne = header("nelements");
  const long nb = header("nbfaces");
  if (lines.size() - pos != static_cast<std::size_t>(nv + ne + nb))
    throw std::invalid_argument("malformed mesh file: expected " + std::to_string(nv + ne + nb) + " data lines, found " +
                                std::to_string(lines.size() - pos));
  Eigen::Matrix2Xd V(2, nv);
  for (long i = 0; i < nv; ++i) {
    std::istringstream ls(lines[pos++]);
    if (!(ls >> V(0, i) >> V(1, i))) throw std::invalid_argument("malformed mesh file: bad vertex line " + std::to_string(i));
  }
  std::vector<std::array<int, 3>> E(ne);
  for (long i = 0; i < ne; ++i) {
    std::istringstream ls(lines[pos++]);
    if (!(ls >> E[i][0] >> E[i][1] >> E[i][2]))
      throw std::invalid_argument("malformed mesh file: bad element line " + std::to_string(i));
  }
  std::vector<BoundaryFaceSpec> B(nb);
  for (long i = 0; i < nb; ++i) {
    std::istringstream ls(lines[pos++]);
    if (!(ls >> B[i].element >> B[i].local_face >> B[i].tag))
      throw std::invalid_argument("malformed mesh file: bad boundary line " + std::to_string(i));
  }
  return make_mesh(V, E, B, k);
}

ReferenceMesh load_mesh(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open mesh file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_mesh(ss.str());
}

std::string format_mesh(const ReferenceMesh& m) {
  std::ostringstream out;
  out.precision(17);
  out << "nsd 2\ndegree " << m.k << "\nnvertices " << m.n_vertices() << "\nnelements " << m.n_elements()
      << "\nnbfaces " << m.boundary_faces.size() << "\n";
  for (int i = 0; i < m.n_vertices(); ++i) out << m.vertices(0, i) << " " << m.vertices(1, i) << "\n";
  for (const auto& e : m.elements) out << e[0] << " " << e[1] << " " << e[2] << "\n";
  for (const auto& b : m.boundary_faces) out << b.element << " " << b.local_face << " " << m.tags[b.tag].str() << "\n";
  return out.str();
}

void write_mesh(const ReferenceMesh& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write mesh file '" + path + "'");
  f << format_mesh(m);
}

namespace {

void blend_edge(ReferenceMesh& m, const Eigen::Matrix2Xd& ref, int e, int f, const EdgeCurve& curve) {
  const auto& el = m.elements[e];
  const Eigen::Vector2d a = m.vertices.col(el[f]);
  const Eigen::Vector2d b = m.vertices.col(el[(f + 1) % 3]);
  Eigen::Matrix2Xd& X = m.element_nodes[e];
  for (int i = 0; i < ref.cols(); ++i) {
    const double l[3] = {1.0 - ref(0, i) - ref(1, i), ref(0, i), ref(1, i)};
    const double la = l[f], lb = l[(f + 1) % 3];
    const double sum = la + lb;
    if (sum < 1e-14) continue;
    const double s = lb / sum;
    const Eigen::Vector2d d = curve(s) - (a + s * (b - a));
    X.col(i) += sum * d;
  }
}

}  // namespace

void curve_boundary(ReferenceMesh& m,
                    const std::function<std::optional<EdgeCurve>(const BoundaryTag&, const Eigen::Vector2d&,
                                                                 const Eigen::Vector2d&)>& curve_for) {
  const Eigen::Matrix2Xd ref = simplex_nodes(m.k);
  for (const auto& bf : m.boundary_faces) {
    const auto& el = m.elements[bf.element];
    const int f = bf.local_face;
    const auto curve = curve_for(m.tags[bf.tag], m.vertices.col(el[f]), m.vertices.col(el[(f + 1) % 3]));
    if (curve) blend_edge(m, ref, bf.element, f, *curve);
  }
}

void curve_edges(ReferenceMesh& m,
                 const std::function<std::optional<EdgeCurve>(const Eigen::Vector2d&, const Eigen::Vector2d&)>& curve_for) {
  const Eigen::Matrix2Xd ref = simplex_nodes(m.k);
  for (int e = 0; e < m.n_elements(); ++e) {
    for (int f = 0; f < 3; ++f) {
      const auto& el = m.elements[e];
      const auto curve = curve_for(m.vertices.col(el[f]), m.vertices.col(el[(f + 1) % 3]));
      if (curve) blend_edge(m, ref, e, f, *curve);
    }
  }
}

bool Skeleton::reversed(const ReferenceMesh& mesh, int e, int f) const {
  const Face& fc = faces[element_faces[e][f]];
  return mesh.elements[e][f] != fc.v0;
}

Skeleton build_skeleton(const ReferenceMesh& mesh) {
  Skeleton sk;
  sk.k = mesh.k;
  sk.element_faces.assign(mesh.n_elements(), {-1, -1, -1});
  std::map<std::pair<int, int>, int> index;
  for (int e = 0; e < mesh.n_elements(); ++e) {
    for (int f = 0; f < 3; ++f) {
      const int a = mesh.elements[e][f], b = mesh.elements[e][(f + 1) % 3];
      const std::pair<int, int> key{std::min(a, b), std::max(a, b)};
      auto it = index.find(key);
      if (it == index.end()) {
        Face fc;
        fc.left = e;
        fc.left_face = f;
        fc.v0 = key.first;
        fc.v1 = key.second;
        index.emplace(key, static_cast<int>(sk.faces.size()));
        sk.element_faces[e][f] = static_cast<int>(sk.faces.size());
        sk.faces.push_back(fc);
      } else {
        Face& fc = sk.faces[it->second];
        if (fc.right >= 0) throw std::invalid_argument("face shared by more than two elements");
        fc.right = e;
        fc.right_face = f;
        sk.element_faces[e][f] = it->second;
      }
    }
  }
  for (const auto& bf : mesh.boundary_faces) {
    Face& fc = sk.faces[sk.element_faces[bf.element][bf.local_face]];
    fc.tag = bf.tag;
  }
  for (auto& fc : sk.faces) {
    if (fc.right < 0 && fc.tag < 0) throw std::invalid_argument("dangling boundary face without a tag");
    const bool dirichlet = fc.tag >= 0 && mesh.tags[fc.tag].kind == BoundaryKind::Dirichlet;
    if (fc.tag >= 0 && mesh.tags[fc.tag].kind == BoundaryKind::Neumann) sk.has_neumann = true;
    if (!dirichlet) fc.hybrid = sk.n_hybrid_faces++;
  }
  return sk;
}

FaceFrame face_frame(const ReferenceMesh& mesh, const Skeleton& sk, int face, const Eigen::VectorXd& s) {
  const Face& fc = sk.faces.at(face);
  const int e = fc.left, f = fc.left_face;
  const bool rev = sk.reversed(mesh, e, f);
  const int nq = static_cast<int>(s.size());
  Eigen::Matrix2Xd xi(2, nq);
  for (int q = 0; q < nq; ++q) xi.col(q) = simplex_face_point(f, rev ? 1.0 - s[q] : s[q]);
  const BasisTabulation t = simplex_basis(mesh.k, xi);
  const Eigen::Vector2d dxi = simplex_face_point(f, 1.0) - simplex_face_point(f, 0.0);
  const Eigen::Matrix2Xd& X = mesh.element_nodes[e];
  FaceFrame fr;
  fr.points = X * t.values.transpose();
  fr.normals.resize(2, nq);
  fr.tangents.resize(2, nq);
  fr.measure.resize(nq);
  for (int q = 0; q < nq; ++q) {
    Eigen::Matrix2d G;
    G.col(0) = X * t.dxi.row(q).transpose();
    G.col(1) = X * t.deta.row(q).transpose();
    const Eigen::Vector2d d = G * dxi;
    const double len = d.norm();
    if (!(len > 0.0)) throw std::runtime_error("degenerate face " + std::to_string(face));
    fr.measure[q] = len;
    fr.normals.col(q) = Eigen::Vector2d(d.y(), -d.x()) / len;
    fr.tangents.col(q) = Eigen::Vector2d(-fr.normals(1, q), fr.normals(0, q));
  }
  return fr;
}

}  // namespace hdgpgd
