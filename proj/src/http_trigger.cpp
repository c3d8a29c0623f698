#include "gcz/http_trigger.hpp"

#include <atomic>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "gcz/error.hpp"

namespace gcz::transport {

struct HttpTriggerServer::Impl {
  httplib::Server server;
  std::thread thread;
  std::once_flag stopped;
  std::atomic<std::uint64_t> fired{0};
};

HttpTriggerServer::HttpTriggerServer(const std::string& address, std::uint16_t port, Handler handler)
    : impl_(std::make_unique<Impl>()) {
  auto& server = impl_->server;
  server.Get(R"(/trigger/([^/]+))", [this, handler = std::move(handler)](const httplib::Request& req,
                                                                          httplib::Response& res) {
    const std::string name = req.matches[1];
    handler(name);
    ++impl_->fired;
    res.set_content(nlohmann::json{{"fired", name}}.dump(), "application/json");
  });
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.status == 404) res.set_content(R"({"error":"NotFound"})", "application/json");
  });

  // httplib's default also sets SO_REUSEPORT, which lets a second server share the port.
  server.set_socket_options([](socket_t sock) {
    int one = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  });

  int bound = port;
  if (port == 0)
    bound = server.bind_to_any_port(address);
  else if (!server.bind_to_port(address, port))
    bound = -1;
  if (bound <= 0)
    throw Error(ErrorCode::BindFailure, "http listener " + address + ":" + std::to_string(port) + ": bind failed");
  port_ = static_cast<std::uint16_t>(bound);
  impl_->thread = std::thread([impl = impl_.get()] { impl->server.listen_after_bind(); });
  server.wait_until_ready();
}

HttpTriggerServer::~HttpTriggerServer() { stop(); }

void HttpTriggerServer::stop() {
  std::call_once(impl_->stopped, [this] {
    impl_->server.stop();
    impl_->thread.join();
  });
}

std::uint64_t HttpTriggerServer::fired() const { return impl_->fired; }

}  // namespace gcz::transport
