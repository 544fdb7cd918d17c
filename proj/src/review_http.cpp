// Eigen must come before httplib, whose system headers define macros that
// collide with Eigen parameter names.
#include "mmfit/review.hpp"

#include <fstream>
#include <sstream>

#include <httplib.h>

namespace mmfit {

struct ReviewHttpServer::Impl {
  ReviewService &service;
  httplib::Server server;
};

namespace {

std::string presented_token(const httplib::Request &req) {
  const std::string auth = req.get_header_value("Authorization");
  if (auth.rfind("Bearer ", 0) == 0) return auth.substr(7);
  if (req.has_header("X-MMFIT-Token")) return req.get_header_value("X-MMFIT-Token");
  if (req.has_param("token")) return req.get_param_value("token");
  return {};
}

std::string content_type(const std::filesystem::path &p) {
  const std::string ext = p.extension().string();
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".png") return "image/png";
  return "application/octet-stream";
}

}  // namespace

ReviewHttpServer::ReviewHttpServer(ReviewService &service, std::filesystem::path static_dir)
    : impl_(new Impl{service, {}}) {
  auto &svr = impl_->server;
  auto api = [this](const httplib::Request &req, httplib::Response &res) {
    std::string path = req.path;
    std::string query;
    for (const auto &[k, v] : req.params) {
      if (k == "token") continue;
      query += (query.empty() ? "" : "&") + k + "=" + v;
    }
    if (!query.empty()) path += "?" + query;
    const std::string who = req.has_header("X-MMFIT-User") ? req.get_header_value("X-MMFIT-User") : "annotator";
    const ReviewResponse r = impl_->service.handle(req.method, path, presented_token(req), req.body, who);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  for (const char *pattern : {R"(/tracks(/.*)?)", R"(/frames/.*)", R"(/export)"}) {
    svr.Get(pattern, api);
    svr.Post(pattern, api);
  }
  svr.Get(R"(/files/(.+))", [this](const httplib::Request &req, httplib::Response &res) {
    const ReviewResponse auth = impl_->service.handle("GET", "/tracks", presented_token(req), "");
    if (auth.status == 401) {
      res.status = 401;
      res.set_content(auth.body.dump(), "application/json");
      return;
    }
    const std::filesystem::path file = impl_->service.image_file(req.matches[1].str());
    std::ifstream in(file, std::ios::binary);
    if (file.empty() || !in) {
      res.status = 404;
      res.set_content(R"({"error":"not_found","message":"no such image"})", "application/json");
      return;
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    res.set_content(ss.str(), content_type(file));
  });
  if (!static_dir.empty()) svr.set_mount_point("/", static_dir.string());
}

ReviewHttpServer::~ReviewHttpServer() { stop(); }

int ReviewHttpServer::bind(const std::string &host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error("review server: cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) throw Error("review server: cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void ReviewHttpServer::listen() { impl_->server.listen_after_bind(); }

void ReviewHttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace mmfit
