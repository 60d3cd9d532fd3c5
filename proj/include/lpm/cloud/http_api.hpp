#pragma once

// Operator-facing HTTP surface over a MaintenanceCloud. Bodies and responses
// are canonical JSON; errors are {"error": "..."} with 400/404/409/422.

#include <memory>
#include <string>
#include <thread>

#include "httplib.h"
#include "lpm/canonical.hpp"
#include "lpm/cloud/service.hpp"

namespace lpm::cloud {

class HttpApi {
 public:
  explicit HttpApi(MaintenanceCloud& cloud) : cloud_(cloud) { routes(); }
  ~HttpApi() { stop(); }

  HttpApi(const HttpApi&) = delete;
  HttpApi& operator=(const HttpApi&) = delete;

  // Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host, int port) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw std::runtime_error("cannot bind HTTP port " + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const noexcept { return port_; }
  httplib::Server& server() noexcept { return server_; }

 private:
  using Req = httplib::Request;
  using Res = httplib::Response;

  static void send(Res& res, int status, const Json& body) {
    res.status = status;
    res.set_content(to_canonical(body), "application/json");
  }
  static void fail(Res& res, int status, const std::string& msg) { send(res, status, Json{{"error", msg}}); }

  static std::size_t param(const Req& req, const char* name, std::size_t fallback) {
    if (!req.has_param(name)) return fallback;
    const auto v = req.get_param_value(name);
    std::size_t used = 0;
    const auto n = std::stoll(v, &used);
    if (used != v.size() || n < 0) throw FormatError(std::string("bad ") + name);
    return static_cast<std::size_t>(n);
  }

  static Json body_of(const Req& req) {
    if (req.body.empty()) return Json::object();
    auto j = parse_canonical(req.body);
    if (!j.is_object()) throw FormatError("body must be an object");
    return j;
  }

  // Maps domain errors onto status codes.
  template <typename F>
  static httplib::Server::Handler guarded(F f) {
    return [f](const Req& req, Res& res) {
      try {
        f(req, res);
      } catch (const NotFound& e) {
        fail(res, 404, e.what());
      } catch (const NoDataError& e) {
        fail(res, 404, e.what());
      } catch (const OrderStateError& e) {
        fail(res, 409, e.what());
      } catch (const Conflict& e) {
        fail(res, 409, e.what());
      } catch (const RetrainRefused& e) {
        fail(res, 422, e.what());
      } catch (const FormatError& e) {
        fail(res, 400, e.what());
      } catch (const std::invalid_argument& e) {
        fail(res, 400, e.what());
      } catch (const std::out_of_range& e) {
        fail(res, 400, e.what());
      } catch (const std::exception& e) {
        fail(res, 500, e.what());
      }
    };
  }

  void routes() {
    auto& s = server_;
    s.Get("/alerts", guarded([this](const Req& req, Res& res) {
      const auto limit = param(req, "limit", 50);
      const auto offset = param(req, "offset", 0);
      Json items = Json::array();
      for (auto& a : cloud_.alert_page(limit, offset)) items.push_back(std::move(a));
      send(res, 200, Json{{"alerts", items}, {"total", cloud_.alert_count()}, {"limit", limit}, {"offset", offset}});
    }));
    s.Get(R"(/alerts/([^/]+))", guarded([this](const Req& req, Res& res) {
      auto a = cloud_.alert(req.matches[1]);
      if (!a) throw NotFound("unknown alert " + std::string(req.matches[1]));
      send(res, 200, *a);
    }));
    s.Get(R"(/equipment/([^/]+)/prediction)", guarded([this](const Req& req, Res& res) {
      send(res, 200, to_json(cloud_.predict(req.matches[1])));
    }));
    s.Get(R"(/predictions/([^/]+))", guarded([this](const Req& req, Res& res) {
      auto p = cloud_.prediction(req.matches[1]);
      if (!p) throw NotFound("unknown prediction " + std::string(req.matches[1]));
      send(res, 200, to_json(*p));
    }));
    s.Get("/orders", guarded([this](const Req& req, Res& res) {
      cloud_.retry_submissions();
      const auto all = cloud_.orders();
      const auto limit = param(req, "limit", 50);
      const auto offset = param(req, "offset", 0);
      Json items = Json::array();
      for (std::size_t i = offset; i < all.size() && items.size() < limit; ++i) items.push_back(to_json(all[i]));
      send(res, 200, Json{{"orders", items}, {"total", all.size()}, {"limit", limit}, {"offset", offset}});
    }));
    s.Post("/orders", guarded([this](const Req& req, Res& res) {
      const auto body = body_of(req);
      send(res, 201, to_json(cloud_.create_order(detail::string_at(body, "prediction_id"))));
    }));
    s.Post(R"(/orders/([^/]+)/approve)", guarded([this](const Req& req, Res& res) {
      send(res, 200, to_json(cloud_.approve_order(req.matches[1])));
    }));
    s.Post(R"(/orders/([^/]+)/reject)", guarded([this](const Req& req, Res& res) {
      send(res, 200, to_json(cloud_.reject_order(req.matches[1])));
    }));
    s.Get("/rules", guarded([this](const Req&, Res& res) {
      Json items = Json::array();
      for (const auto& r : cloud_.rules()) items.push_back(to_json(r));
      send(res, 200, Json{{"rules", items}, {"total", items.size()}});
    }));
    s.Post("/admin/retrain", guarded([this](const Req& req, Res& res) {
      const auto body = body_of(req);
      const auto edge = detail::string_at(body, "edge_id");
      const auto rep = cloud_.retrain(edge);
      send(res, 200, Json{{"edge_id", edge},
                          {"model_version", rep.snapshot.version},
                          {"threshold", rep.snapshot.threshold},
                          {"reference_size", rep.snapshot.reference.size()},
                          {"records", rep.records},
                          {"normal_pool", rep.normal_pool}});
    }));
    s.Post("/admin/distribute", guarded([this](const Req& req, Res& res) {
      const auto body = body_of(req);
      std::vector<std::string> edges;
      if (body.contains("edge_id"))
        edges.push_back(detail::string_at(body, "edge_id"));
      else
        edges = cloud_.known_edges();
      Json out = Json::array();
      for (const auto& e : edges) {
        if (!cloud_.latest_model(e)) {
          if (body.contains("edge_id")) throw NotFound("no model for edge '" + e + "'");
          continue;
        }
        out.push_back(MaintenanceCloud::to_json(cloud_.distribute(e)));
      }
      send(res, 200, Json{{"deliveries", out}});
    }));
    s.set_error_handler([](const Req&, Res& res) {
      if (res.body.empty()) fail(res, res.status, res.status == 404 ? "not found" : "error");
    });
  }

  MaintenanceCloud& cloud_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace lpm::cloud
