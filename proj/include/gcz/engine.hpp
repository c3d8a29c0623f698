#pragma once

// Runs a loaded graph: listeners submit into one ordered inbound queue, a
// worker steps the graph and hands each sink output to its transport.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "gcz/bus.hpp"
#include "gcz/pipeline.hpp"
#include "gcz/uart.hpp"
#include "gcz/ws.hpp"

namespace gcz::runtime {

struct EngineOptions {
  std::size_t queue_capacity = 1024;
  std::string topic_prefix = std::string(transport::kDefaultTopicPrefix);
  /// Serial device for hw-emulator-out nodes; empty = bus only.
  std::string serial_path;
  /// Takes the place of serial_path when set, e.g. to capture UART bytes.
  transport::UartSink::Writer serial_writer;
  transport::RetryPolicy retry;
  /// Reports sink failures; the engine keeps running.
  std::function<void(const Error&)> on_error;
};

class Engine {
 public:
  /// Observes loopback-out outputs, on the worker thread.
  using Tap = std::function<void(const std::string& sink_id, const pipe::Message& message)>;

  /// Throws BadTopic for an invalid sink device id, IoError if the serial
  /// device cannot be opened.
  Engine(const pipe::NodeGraph& graph, transport::TopicBus& bus, EngineOptions options = {});
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  void add_tap(Tap tap);

  void start();
  /// Processes everything already queued, then stops the worker and lets
  /// serial clocks play out. Idempotent.
  void stop();

  /// Blocks while the queue is full. Throws UnknownSource.
  void submit(const std::string& source_id, pipe::Message message);
  /// Delivers to every ws-in node.
  void submit_ingest(const transport::IngestEvent& event);
  /// Delivers to every http-in node.
  void submit_trigger(const std::string& name);

  /// Blocks until the queue is empty and the worker is idle.
  void drain();

  std::uint64_t processed() const;
  std::uint64_t published() const;
  std::uint64_t failures() const;

 private:
  struct Inbound {
    std::string source;
    pipe::Message message;
  };
  struct SerialClock;

  void run();
  void dispatch(const pipe::SinkOutput& out);
  void fail(const Error& e);
  void write_serial(std::span<const std::uint8_t> bytes);
  SerialClock& serial_clock(const std::string& sink_id, dsl::DeviceKind kind);

  const pipe::NodeGraph& graph_;
  transport::TopicBus& bus_;
  EngineOptions options_;
  transport::SentencePublisher publisher_;
  std::map<std::string, transport::TopicAddress, std::less<>> topics_;
  std::map<std::string, std::uint64_t, std::less<>> record_offsets_;
  std::vector<std::string> ws_sources_;
  std::vector<std::string> http_sources_;
  std::vector<Tap> taps_;

  std::mutex serial_mutex_;
  std::map<std::pair<std::string, dsl::DeviceKind>, std::unique_ptr<SerialClock>> clocks_;

  mutable std::mutex mutex_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
  std::condition_variable idle_;
  std::deque<Inbound> queue_;
  bool busy_ = false;
  bool stopping_ = false;
  bool started_ = false;
  std::uint64_t processed_ = 0;
  std::uint64_t published_ = 0;
  std::uint64_t failures_ = 0;
  std::thread worker_;
};

}  // namespace gcz::runtime
