#include "server.hpp"

#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "tpsd/tpsd.h"

namespace tpsd_server {

namespace {

using Json = nlohmann::ordered_json;

int http_status(tpsd_status s) {
  switch (s) {
    case TPSD_OK: return 200;
    case TPSD_ERR_INFEASIBLE:
    case TPSD_ERR_EMPTY_STRATUM:
    case TPSD_ERR_RANK_DEFICIENT:
    case TPSD_ERR_NON_CONVERGENCE:
    case TPSD_ERR_SEPARATION:
    case TPSD_ERR_SINGULAR:
    case TPSD_ERR_DIVERGENCE:
    case TPSD_ERR_ESTIMATOR_FAILURE: return 422;
    case TPSD_ERR_TIMEOUT: return 503;
    case TPSD_ERR_INTERNAL:
    case TPSD_ERR_IO: return 500;
    default: return 400;
  }
}

Response error(int status, const std::string& kind, const std::string& message) {
  Json j;
  j["error"] = kind;
  j["message"] = message;
  return {status, j.dump()};
}

Response failure(tpsd_status s) { return error(http_status(s), tpsd_status_name(s), tpsd_last_error()); }

// Takes ownership of a string returned by the library.
std::string take(char* p) {
  std::string s = p ? p : "";
  tpsd_string_free(p);
  return s;
}

bool parse_object(const std::string& body, Json& out, Response& err) {
  try {
    out = Json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    err = error(400, "parse", std::string("request body is not JSON: ") + e.what());
    return false;
  }
  if (!out.is_object()) {
    err = error(400, "invalid-argument", "request body must be a JSON object");
    return false;
  }
  return true;
}

Response allocate_from_moments(const Json& req) {
  const Json& m = req.at("moments");
  if (!m.is_object() || !req.contains("n")) return error(400, "invalid-argument", "moments requests need 'moments' and 'n'");
  std::vector<std::string> methods = {"neyman"};
  if (req.contains("methods")) {
    if (!req.at("methods").is_array()) return error(400, "invalid-argument", "'methods' must be an array");
    methods.clear();
    for (const auto& x : req.at("methods")) {
      if (!x.is_string()) return error(400, "invalid-argument", "'methods' must hold strings");
      methods.push_back(x.get<std::string>());
    }
  }
  Json out;
  Json allocs = Json::array();
  for (const auto& method : methods) {
    Json call = m;
    call["n"] = req.at("n");
    call["method"] = method;
    if (req.contains("min_per_stratum")) call["min_per_stratum"] = req.at("min_per_stratum");
    tpsd_allocation* a = nullptr;
    tpsd_status s = tpsd_allocate_moments(call.dump().c_str(), &a);
    if (s != TPSD_OK) return failure(s);
    char* text = nullptr;
    s = tpsd_allocation_to_json(a, &text);
    tpsd_allocation_free(a);
    if (s != TPSD_OK) return failure(s);
    Json one = Json::parse(take(text));
    one["method"] = method;
    allocs.push_back(std::move(one));
  }
  out["allocations"] = allocs;
  return {200, out.dump()};
}

constexpr double kMaxCohort = 1e5;

// Rejects cohorts above the per-request limit, in the scenario or the grid.
bool within_limits(const Json& req, Response& err) {
  auto too_big = [](const Json& v) { return v.is_number() && v.get<double>() > kMaxCohort; };
  if (req.contains("scenario") && req.at("scenario").is_object() && req.at("scenario").contains("N") &&
      too_big(req.at("scenario").at("N"))) {
    err = error(400, "invalid-argument", "cohort size N is limited to 100000 per request");
    return false;
  }
  if (req.contains("grid") && req.at("grid").is_object() && req.at("grid").contains("N") &&
      req.at("grid").at("N").is_array()) {
    for (const auto& v : req.at("grid").at("N")) {
      if (too_big(v)) {
        err = error(400, "invalid-argument", "cohort size N is limited to 100000 per request");
        return false;
      }
    }
  }
  return true;
}

}  // namespace

Response handle_presets() {
  char* text = nullptr;
  tpsd_status s = tpsd_presets_json(&text);
  if (s != TPSD_OK) return failure(s);
  Json j;
  j["presets"] = Json::parse(take(text));
  return {200, j.dump()};
}

Response handle_allocate(const std::string& body) {
  Json req;
  Response err;
  if (!parse_object(body, req, err)) return err;
  if (req.contains("moments")) return allocate_from_moments(req);
  if (!req.contains("scenario")) return error(400, "invalid-argument", "request needs 'scenario' or 'moments'");
  if (!within_limits(req, err)) return err;
  char* text = nullptr;
  tpsd_status s = tpsd_scenario_allocate(req.dump().c_str(), &text);
  if (s != TPSD_OK) return failure(s);
  return {200, Json::parse(take(text)).dump()};
}

Response handle_simulate(const std::string& body, const Options& opt) {
  Json req;
  Response err;
  if (!parse_object(body, req, err)) return err;
  if (req.contains("spec") && !req.contains("scenario")) {
    req["scenario"] = req["spec"];
    req.erase("spec");
  }
  if (!req.contains("scenario")) return error(400, "invalid-argument", "request needs a 'spec'");
  if (!within_limits(req, err)) return err;
  if (!req.contains("reps") || !req.at("reps").is_number_integer() || req.at("reps").get<long long>() < 1) {
    return error(400, "invalid-argument", "'reps' must be a positive integer");
  }
  if (req.at("reps").get<unsigned long long>() > opt.max_reps) {
    return error(400, "invalid-argument", "'reps' exceeds the limit of " + std::to_string(opt.max_reps));
  }
  if (!req.contains("designs")) req["designs"] = {"SRS", "PSS", "IF-IPW", "IF-GR"};
  req["jobs"] = opt.jobs;
  tpsd_report* report = nullptr;
  tpsd_status s = tpsd_simulate(req.dump().c_str(), opt.time_budget_seconds, &report);
  if (s != TPSD_OK) return failure(s);
  char* text = nullptr;
  s = tpsd_report_format(report, "json", &text);
  tpsd_report_free(report);
  if (s != TPSD_OK) return failure(s);
  return {200, Json::parse(take(text)).dump()};
}

struct Server::Impl {
  Options opt;
  httplib::Server http;
};

Server::Server(Options opt) : impl_(std::make_unique<Impl>()) {
  impl_->opt = std::move(opt);
  auto& http = impl_->http;
  const Options& o = impl_->opt;
  auto reply = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  http.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                            {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                            {"Access-Control-Allow-Headers", "Content-Type"}});
  http.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  http.Get("/presets", [reply](const httplib::Request&, httplib::Response& res) { reply(res, handle_presets()); });
  http.Post("/allocate", [reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_allocate(req.body));
  });
  http.Post("/simulate", [reply, &o](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_simulate(req.body, o));
  });
  if (!o.static_dir.empty()) http.set_mount_point("/", o.static_dir);
}

Server::~Server() { stop(); }

int Server::bind() {
  auto& o = impl_->opt;
  if (o.port == 0) return impl_->http.bind_to_any_port(o.host);
  return impl_->http.bind_to_port(o.host, o.port) ? o.port : -1;
}

void Server::listen() { impl_->http.listen_after_bind(); }

void Server::stop() {
  if (impl_ && impl_->http.is_running()) impl_->http.stop();
}

}  // namespace tpsd_server
