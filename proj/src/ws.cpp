#include "gcz/ws.hpp"

#include <atomic>
#include <mutex>
#include <set>
#include <thread>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

namespace gcz::transport {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using nlohmann::json;

std::string ingest_error_reply(const Error& error) {
  json reply{{"error", std::string(to_string(error.code()))}, {"detail", error.detail()}};
  if (!error.where().empty()) reply["at"] = error.where();
  return reply.dump();
}

namespace {

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string percent_decode(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size() && hex_value(s[i + 1]) >= 0 && hex_value(s[i + 2]) >= 0) {
      out += static_cast<char>(hex_value(s[i + 1]) * 16 + hex_value(s[i + 2]));
      i += 2;
    } else if (s[i] == '+') {
      out += ' ';
    } else {
      out += s[i];
    }
  }
  return out;
}

}  // namespace

std::pair<std::string, std::string> split_ingest_target(std::string_view target) {
  const auto q = target.find('?');
  std::string path(target.substr(0, q));
  std::string device;
  if (q == std::string_view::npos) return {path, device};
  const std::string query(target.substr(q + 1));
  std::size_t start = 0;
  while (start <= query.size()) {
    std::size_t end = query.find('&', start);
    if (end == std::string::npos) end = query.size();
    const std::string pair = query.substr(start, end - start);
    if (pair.rfind("device=", 0) == 0) device = percent_decode(std::string_view(pair).substr(7));
    start = end + 1;
  }
  return {path, device};
}

struct WsIngestServer::Impl {
  class Session;

  asio::io_context io{1};
  tcp::acceptor acceptor{io};
  Handler handler;
  std::thread thread;
  std::once_flag stopped;
  std::atomic<std::uint64_t> next_connection{1};
  std::atomic<std::uint64_t> received{0};
  std::atomic<std::uint64_t> rejected{0};
  std::mutex sessions_mutex;
  std::set<std::shared_ptr<Session>> sessions;

  void accept();
  void shutdown();
};

class WsIngestServer::Impl::Session : public std::enable_shared_from_this<Session> {
 public:
  Session(Impl& owner, tcp::socket socket) : owner_(owner), ws_(std::move(socket)) {}

  void start() {
    http::async_read(ws_.next_layer(), buffer_, request_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_request(ec); });
  }

  void close() {
    beast::error_code ignored;
    ws_.next_layer().shutdown(tcp::socket::shutdown_both, ignored);
    ws_.next_layer().close(ignored);
  }

 private:
  void on_request(beast::error_code ec) {
    if (ec) return finish();
    auto [path, device] = split_ingest_target(std::string_view(request_.target().data(), request_.target().size()));
    if (path != kIngestPath || !websocket::is_upgrade(request_)) {
      auto res = std::make_shared<http::response<http::string_body>>(http::status::not_found, request_.version());
      res->set(http::field::content_type, "application/json");
      res->body() = R"({"error":"NotFound"})";
      res->prepare_payload();
      http::async_write(ws_.next_layer(), *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
        self->close();
        self->finish();
      });
      return;
    }
    device_ = std::move(device);
    id_ = owner_.next_connection++;
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(request_, [self = shared_from_this()](beast::error_code ec2) {
      if (ec2) return self->finish();
      self->read();
    });
  }

  void read() {
    buffer_.clear();
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
  }

  void on_read(beast::error_code ec) {
    if (ec) return finish();
    ++owner_.received;
    std::optional<std::string> reply;
    if (!ws_.got_text()) {
      reply = ingest_error_reply(Error(ErrorCode::SchemaError, "text frames only"));
    } else {
      const std::string text = beast::buffers_to_string(buffer_.data());
      try {
        auto sentence = dsl::parse_sentence(text);
        owner_.handler(IngestEvent{id_, device_, std::move(sentence)});
      } catch (const Error& e) {
        reply = ingest_error_reply(e);
      }
    }
    if (!reply) return read();
    ++owner_.rejected;
    reply_ = std::move(*reply);
    ws_.text(true);
    ws_.async_write(asio::buffer(reply_), [self = shared_from_this()](beast::error_code ec2, std::size_t) {
      if (ec2) return self->finish();
      self->read();
    });
  }

  void finish() {
    std::lock_guard lock(owner_.sessions_mutex);
    owner_.sessions.erase(shared_from_this());
  }

  Impl& owner_;
  websocket::stream<tcp::socket> ws_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> request_;
  std::string device_;
  std::string reply_;
  std::uint64_t id_ = 0;
};

void WsIngestServer::Impl::accept() {
  acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;
    auto session = std::make_shared<Session>(*this, std::move(socket));
    {
      std::lock_guard lock(sessions_mutex);
      sessions.insert(session);
    }
    session->start();
    accept();
  });
}

void WsIngestServer::Impl::shutdown() {
  std::call_once(stopped, [this] {
    asio::post(io, [this] {
      beast::error_code ignored;
      acceptor.close(ignored);
      std::set<std::shared_ptr<Session>> open;
      {
        std::lock_guard lock(sessions_mutex);
        open = sessions;
      }
      for (const auto& s : open) s->close();
      io.stop();
    });
    thread.join();
    std::lock_guard lock(sessions_mutex);
    sessions.clear();
  });
}

WsIngestServer::WsIngestServer(const std::string& address, std::uint16_t port, Handler handler)
    : impl_(std::make_unique<Impl>()) {
  impl_->handler = std::move(handler);
  beast::error_code ec;
  const auto ip = asio::ip::make_address(address, ec);
  if (ec) throw Error(ErrorCode::BindFailure, "bad listen address \"" + address + "\"");
  const tcp::endpoint endpoint(ip, port);
  auto& acceptor = impl_->acceptor;
  acceptor.open(endpoint.protocol(), ec);
  if (!ec) acceptor.set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) acceptor.bind(endpoint, ec);
  if (!ec) acceptor.listen(asio::socket_base::max_listen_connections, ec);
  if (ec)
    throw Error(ErrorCode::BindFailure,
                "websocket listener " + address + ":" + std::to_string(port) + ": " + ec.message());
  impl_->accept();
  impl_->thread = std::thread([impl = impl_.get()] { impl->io.run(); });
}

WsIngestServer::~WsIngestServer() { stop(); }

void WsIngestServer::stop() { impl_->shutdown(); }

std::uint16_t WsIngestServer::port() const {
  beast::error_code ec;
  auto ep = impl_->acceptor.local_endpoint(ec);
  return ec ? 0 : ep.port();
}

std::uint64_t WsIngestServer::frames_received() const { return impl_->received; }
std::uint64_t WsIngestServer::frames_rejected() const { return impl_->rejected; }

struct WsClient::Impl {
  asio::io_context io;
  websocket::stream<tcp::socket> ws{io};
};

WsClient::WsClient(const std::string& host, std::uint16_t port, const std::string& target)
    : impl_(std::make_unique<Impl>()) {
  try {
    tcp::resolver resolver(impl_->io);
    asio::connect(impl_->ws.next_layer(), resolver.resolve(host, std::to_string(port)));
    impl_->ws.next_layer().set_option(tcp::no_delay(true));
    impl_->ws.handshake(host + ":" + std::to_string(port), target);
    impl_->ws.text(true);
  } catch (const beast::system_error& e) {
    throw Error(ErrorCode::IoError, "websocket connect " + host + ":" + std::to_string(port) + target + ": " +
                                        e.code().message());
  }
}

WsClient::~WsClient() {
  beast::error_code ignored;
  impl_->ws.next_layer().close(ignored);
}

void WsClient::send(std::string_view text) {
  beast::error_code ec;
  impl_->ws.write(asio::buffer(text.data(), text.size()), ec);
  if (ec) throw Error(ErrorCode::IoError, "websocket send: " + ec.message());
}

std::optional<std::string> WsClient::read(std::chrono::milliseconds timeout) {
  beast::flat_buffer buffer;
  bool done = false;
  beast::error_code result;
  impl_->ws.async_read(buffer, [&](beast::error_code ec, std::size_t) {
    result = ec;
    done = true;
  });
  impl_->io.restart();
  impl_->io.run_for(timeout);
  if (!done) {
    beast::error_code ignored;
    impl_->ws.next_layer().cancel(ignored);
    impl_->io.restart();
    impl_->io.run();
    return std::nullopt;
  }
  if (result) return std::nullopt;
  return beast::buffers_to_string(buffer.data());
}

void WsClient::close() {
  beast::error_code ignored;
  impl_->ws.close(websocket::close_code::normal, ignored);
}

}  // namespace gcz::transport
