#pragma once

// WebSocket ingest for scanners: ws://<host>:<port>/input?device=<id>, one
// JSON sentence per text frame.

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "gcz/dsl4gc.hpp"

namespace gcz::transport {

inline constexpr std::string_view kIngestPath = "/input";

struct IngestEvent {
  std::uint64_t connection_id = 0;
  /// Value of the `device` query parameter; empty when absent.
  std::string device;
  dsl::ControlSentence sentence;
};

/// Reply sent for a frame that does not parse:
/// {"error":"<Code>","detail":"...","at":"<pointer>"}
std::string ingest_error_reply(const Error& error);

/// Splits `/path?device=x` into the path and the decoded device id.
std::pair<std::string, std::string> split_ingest_target(std::string_view target);

class WsIngestServer {
 public:
  /// Called on the server's I/O thread, in frame order per connection.
  using Handler = std::function<void(IngestEvent)>;

  /// Binds and starts serving. Port 0 picks an ephemeral port.
  /// Throws BindFailure.
  WsIngestServer(const std::string& address, std::uint16_t port, Handler handler);
  ~WsIngestServer();
  WsIngestServer(const WsIngestServer&) = delete;
  WsIngestServer& operator=(const WsIngestServer&) = delete;

  std::uint16_t port() const;
  /// Closes the listener and every connection. Idempotent.
  void stop();

  std::uint64_t frames_received() const;
  std::uint64_t frames_rejected() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Blocking client, used by tests and the bench harness in place of a scanner.
class WsClient {
 public:
  /// Throws IoError when the handshake fails.
  WsClient(const std::string& host, std::uint16_t port, const std::string& target = std::string(kIngestPath));
  ~WsClient();
  WsClient(const WsClient&) = delete;
  WsClient& operator=(const WsClient&) = delete;

  void send(std::string_view text);
  /// Next text message, or nullopt on timeout or close. A timed-out read
  /// leaves the connection unusable.
  std::optional<std::string> read(std::chrono::milliseconds timeout);
  void close();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace gcz::transport
