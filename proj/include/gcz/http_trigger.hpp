#pragma once

// HTTP trigger endpoint: GET /trigger/<name> fires the named event and
// answers {"fired":"<name>"} without waiting for the graph to process it.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>

namespace gcz::transport {

class HttpTriggerServer {
 public:
  /// Called before the 200 response is sent, on one of the server's worker
  /// threads. Sequential requests are delivered in request order.
  using Handler = std::function<void(const std::string& name)>;

  /// Binds and starts serving. Port 0 picks an ephemeral port.
  /// Throws BindFailure.
  HttpTriggerServer(const std::string& address, std::uint16_t port, Handler handler);
  ~HttpTriggerServer();
  HttpTriggerServer(const HttpTriggerServer&) = delete;
  HttpTriggerServer& operator=(const HttpTriggerServer&) = delete;

  std::uint16_t port() const { return port_; }
  /// Idempotent.
  void stop();

  std::uint64_t fired() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::uint16_t port_ = 0;
};

}  // namespace gcz::transport
