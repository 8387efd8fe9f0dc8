#include "hdgpgd/service.hpp"

#include "httplib.h"

#include <stdexcept>

namespace hdgpgd {

void serve(const QueryService& service, const std::string& host, int port) {
  httplib::Server srv;
  auto route = [&service](const httplib::Request& req, httplib::Response& res) {
    const ServiceResponse r = service.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  srv.Get(".*", route);
  srv.Post(".*", route);
  if (!srv.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace hdgpgd
