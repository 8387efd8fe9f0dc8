#pragma once

#include "hdgpgd/io.hpp"

#include <array>
#include <memory>
#include <string>
#include <vector>

namespace hdgpgd {

struct ServiceResponse {
  int status = 200;
  std::string body;  // JSON
};

// Read-only state over one archive. Handlers are const and safe to call
// concurrently; each response depends only on the archive and the request.
class QueryService {
 public:
  explicit QueryService(ModesArchive archive);

  // False when the rebuilt mesh or problem does not match the archive.
  bool consistent() const { return consistent_; }
  const std::string& mismatch() const { return mismatch_; }
  const ModesArchive& archive() const { return archive_; }
  const HdgDiscretisation& discretisation() const { return *disc_; }
  const ProblemDefinition& definition() const { return def_; }

  ServiceResponse meta() const;
  ServiceResponse evaluate(const std::string& request) const;  // {"mu":[...]}
  ServiceResponse field(const std::string& request) const;     // {"mu":[...],"var":"u_mag","res":128}
  ServiceResponse surface(const std::string& request) const;   // {"qoi":"drag:obstacle","grid":[21,21]}
  // Routes GET /api/meta and POST /api/{evaluate,field,surface}.
  ServiceResponse handle(const std::string& method, const std::string& path, const std::string& body) const;

  static constexpr int kMaxRaster = 1024;
  static constexpr int kMaxSurface = 201;

 private:
  ModesArchive archive_;
  ProblemDefinition def_;
  std::unique_ptr<HdgDiscretisation> disc_;
  bool consistent_ = true;
  std::string mismatch_;
  // Linear subtriangles of the reference element (local node indices) and
  // the reference coordinates of the local nodes.
  std::vector<std::array<int, 3>> sub_;
  Eigen::Matrix2Xd xi_;
};

// Blocking HTTP server on host:port.
void serve(const QueryService& service, const std::string& host, int port);

}  // namespace hdgpgd
