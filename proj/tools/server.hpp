#pragma once

#include <cstddef>
#include <memory>
#include <string>

namespace tpsd_server {

struct Options {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::string static_dir;
  double time_budget_seconds = 60.0;
  std::size_t max_reps = 500;
  unsigned jobs = 1;
};

struct Response {
  int status = 200;
  std::string body;
};

Response handle_presets();
Response handle_allocate(const std::string& body);
Response handle_simulate(const std::string& body, const Options& opt);

class Server {
 public:
  explicit Server(Options opt);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds the socket; returns the bound port or -1.
  int bind();
  /// Serves until stop(); call after bind().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace tpsd_server
