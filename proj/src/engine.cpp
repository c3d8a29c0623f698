#include "gcz/engine.hpp"

#include <fstream>

#include "gcz/devstate.hpp"

namespace gcz::runtime {

struct Engine::SerialClock {
  dev::LiveSource source;
  transport::UartSink sink;
  std::thread thread;

  SerialClock(dsl::DeviceKind kind, transport::UartSink::Writer writer) : source(kind), sink(std::move(writer)) {}
};

Engine::Engine(const pipe::NodeGraph& graph, transport::TopicBus& bus, EngineOptions options)
    : graph_(graph), bus_(bus), options_(std::move(options)), publisher_(bus, options_.retry) {
  for (const auto& node : graph_.nodes()) {
    switch (node.type) {
      case pipe::NodeType::ws_in: ws_sources_.push_back(node.id); break;
      case pipe::NodeType::http_in: http_sources_.push_back(node.id); break;
      case pipe::NodeType::swemu_out:
      case pipe::NodeType::hw_emulator_out: {
        const auto& params = std::get<pipe::SinkParams>(node.behavior);
        topics_.emplace(node.id, transport::TopicAddress::for_device(params.device, options_.topic_prefix));
        break;
      }
      default: break;
    }
  }
  if (!options_.serial_writer && !options_.serial_path.empty() &&
      !graph_.ids_of(pipe::NodeType::hw_emulator_out).empty()) {
    auto port = std::make_shared<transport::SerialPort>(options_.serial_path);
    options_.serial_writer = [port](std::span<const std::uint8_t> bytes) { port->write(bytes); };
  }
}

Engine::~Engine() { stop(); }

void Engine::add_tap(Tap tap) { taps_.push_back(std::move(tap)); }

void Engine::start() {
  std::lock_guard lock(mutex_);
  if (started_) return;
  started_ = true;
  worker_ = std::thread([this] { run(); });
}

void Engine::stop() {
  {
    std::lock_guard lock(mutex_);
    if (!started_ || stopping_) return;
    stopping_ = true;
  }
  not_empty_.notify_all();
  not_full_.notify_all();
  worker_.join();
  for (auto& [_, clock] : clocks_) {
    clock->source.close();
    if (clock->thread.joinable()) clock->thread.join();
  }
}

void Engine::submit(const std::string& source_id, pipe::Message message) {
  const auto* node = graph_.find(source_id);
  if (!node || pipe::role_of(node->type) != pipe::NodeRole::source)
    throw Error(ErrorCode::UnknownSource, "\"" + source_id + "\" is not a source node");
  std::unique_lock lock(mutex_);
  not_full_.wait(lock, [this] { return stopping_ || queue_.size() < options_.queue_capacity; });
  if (stopping_) return;
  queue_.push_back({source_id, std::move(message)});
  not_empty_.notify_one();
}

void Engine::submit_ingest(const transport::IngestEvent& event) {
  for (const auto& id : ws_sources_) submit(id, event.sentence);
}

void Engine::submit_trigger(const std::string& name) {
  for (const auto& id : http_sources_) submit(id, pipe::Trigger{name});
}

void Engine::drain() {
  std::unique_lock lock(mutex_);
  idle_.wait(lock, [this] { return queue_.empty() && !busy_; });
}

std::uint64_t Engine::processed() const {
  std::lock_guard lock(mutex_);
  return processed_;
}

std::uint64_t Engine::published() const {
  std::lock_guard lock(mutex_);
  return published_;
}

std::uint64_t Engine::failures() const {
  std::lock_guard lock(mutex_);
  return failures_;
}

void Engine::run() {
  std::unique_lock lock(mutex_);
  for (;;) {
    not_empty_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
    if (queue_.empty()) break;
    Inbound in = std::move(queue_.front());
    queue_.pop_front();
    busy_ = true;
    not_full_.notify_one();
    lock.unlock();
    try {
      for (const auto& out : pipe::step_graph(graph_, in.source, in.message)) dispatch(out);
    } catch (const Error& e) {
      fail(e);
    }
    lock.lock();
    busy_ = false;
    ++processed_;
    idle_.notify_all();
  }
  idle_.notify_all();
}

void Engine::fail(const Error& e) {
  {
    std::lock_guard lock(mutex_);
    ++failures_;
  }
  if (options_.on_error) options_.on_error(e);
}

void Engine::write_serial(std::span<const std::uint8_t> bytes) {
  std::lock_guard lock(serial_mutex_);
  options_.serial_writer(bytes);
}

Engine::SerialClock& Engine::serial_clock(const std::string& sink_id, dsl::DeviceKind kind) {
  auto& slot = clocks_[{sink_id, kind}];
  if (!slot) {
    slot = std::make_unique<SerialClock>(kind, [this](std::span<const std::uint8_t> b) { write_serial(b); });
    auto* clock = slot.get();
    clock->thread = std::thread([this, clock] {
      try {
        dev::run_clock(clock->source, clock->sink);
      } catch (const Error& e) {
        fail(e);
      }
    });
  }
  return *slot;
}

void Engine::dispatch(const pipe::SinkOutput& out) {
  const auto* node = graph_.find(out.sink_id);
  if (node->type == pipe::NodeType::loopback_out) {
    for (const auto& tap : taps_) tap(out.sink_id, out.message);
    return;
  }
  const auto* sentence = std::get_if<dsl::ControlSentence>(&out.message);
  if (!sentence) {
    fail(Error(ErrorCode::SchemaError, "trigger reached sink \"" + out.sink_id + "\" without being turned into a sentence"));
    return;
  }
  try {
    switch (node->type) {
      case pipe::NodeType::hw_emulator_out:
        if (options_.serial_writer) serial_clock(out.sink_id, sentence->kind()).source.push(*sentence);
        [[fallthrough]];
      case pipe::NodeType::swemu_out: {
        publisher_.publish_sentence(*sentence, topics_.at(out.sink_id));
        std::lock_guard lock(mutex_);
        ++published_;
        break;
      }
      case pipe::NodeType::record_out: {
        const auto& params = std::get<pipe::SinkParams>(node->behavior);
        auto stream = dev::expand_sentence(*sentence);
        auto& offset = record_offsets_[out.sink_id];
        for (auto& f : stream.frames) f.index += offset;
        offset += stream.size();
        if (!params.path.empty()) {
          std::ofstream file(params.path, std::ios::app);
          dev::write_frame_log(file, stream);
          if (!file) throw Error(ErrorCode::IoError, "cannot append to " + params.path);
        }
        break;
      }
      default: break;
    }
  } catch (const Error& e) {
    fail(Error(e.code(), "sink \"" + out.sink_id + "\": " + e.detail(), e.where()));
  }
}

}  // namespace gcz::runtime
