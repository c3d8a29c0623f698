#include <doctest.h>

#include <condition_variable>
#include <mutex>

#include "gcz/engine.hpp"
#include "gcz/uart.hpp"
#include "support.hpp"

using namespace gcz;
using namespace gcz::runtime;
using namespace std::chrono_literals;
using gcz::test::error_of;

namespace {

pipe::NodeGraph config(const char* name) {
  return pipe::load_graph(test::slurp(std::filesystem::path(GCZ_SOURCE_DIR) / "configs" / name));
}

struct Received {
  std::mutex mutex;
  std::condition_variable cv;
  std::vector<std::pair<std::uint64_t, std::string>> items;

  void push(std::uint64_t seq, const dsl::ControlSentence& s) {
    std::lock_guard lock(mutex);
    items.emplace_back(seq, dsl::serialize_sentence(s));
    cv.notify_all();
  }
  bool wait(std::size_t n) {
    std::unique_lock lock(mutex);
    return cv.wait_for(lock, 5s, [&] { return items.size() >= n; });
  }
};

}  // namespace

TEST_CASE("an HTTP trigger reaches the bus as the node's sentence") {
  auto graph = config("get-press.json");
  transport::LoopbackBus bus;
  Received got;
  transport::SentenceSubscriber sub(bus, transport::TopicAddress::for_device("pad0"),
                                    [&](std::uint64_t seq, const dsl::ControlSentence& s) { got.push(seq, s); });
  Engine engine(graph, bus);
  engine.start();
  for (int i = 0; i < 10; ++i) engine.submit_trigger("get");
  engine.drain();
  REQUIRE(got.wait(10));
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(got.items[i].first == i + 1);
    CHECK(got.items[i].second == R"([{"dpad":5,"btn":[1],"dur":2,"ang":[0,0,0,0]}])");
  }
  CHECK(engine.processed() == 10);
  CHECK(engine.published() == 10);
  engine.stop();
}

TEST_CASE("taps see loopback outputs in submission order") {
  auto graph = config("remap-chain.json");
  transport::LoopbackBus bus;
  Engine engine(graph, bus);
  std::vector<std::string> seen;
  engine.add_tap([&](const std::string& sink, const pipe::Message& m) {
    CHECK(sink == "out");
    seen.push_back(pipe::serialize_message(m));
  });
  engine.start();
  std::vector<std::string> expected;
  for (int i = 0; i < 500; ++i) {
    auto s = test::random_sentence(dsl::DeviceKind::gamepad);
    expected.push_back(pipe::serialize_message(pipe::step_graph(graph, "probe", s).at(0).message));
    engine.submit("probe", s);
  }
  engine.stop();
  CHECK(seen == expected);
  CHECK(error_of([&] { engine.submit("out", dsl::parse_sentence(test::kHadouken)); }) == ErrorCode::UnknownSource);
}

TEST_CASE("record-out appends a continuous frame log") {
  test::TempDir dir;
  auto j = nlohmann::json::parse(test::slurp(std::filesystem::path(GCZ_SOURCE_DIR) / "configs/macros.json"));
  const auto log = dir.path() / "moves.log";
  j["nodes"][3]["params"]["path"] = log.string();
  auto graph = pipe::graph_from_json(j);
  transport::LoopbackBus bus;
  Engine engine(graph, bus);
  engine.start();
  engine.submit_trigger("hadouken");
  engine.submit_trigger("jump");
  engine.stop();

  std::istringstream in(test::slurp(log));
  auto frames = dev::read_frame_log(in);
  REQUIRE(frames.size() == 7 + 4);
  for (std::size_t i = 0; i < frames.size(); ++i) CHECK(frames.frames[i].index == i);
  auto hadouken = dev::expand_sentence(dsl::parse_sentence(test::kHadouken));
  for (std::size_t i = 0; i < 7; ++i) CHECK(frames.frames[i].state == hadouken.frames[i].state);
}

TEST_CASE("hw-emulator-out drives UART frames at the frame clock") {
  auto graph = config("get-press.json");
  transport::LoopbackBus bus;
  std::mutex m;
  std::vector<std::uint8_t> bytes;
  EngineOptions opts;
  opts.serial_writer = [&](std::span<const std::uint8_t> b) {
    std::lock_guard lock(m);
    bytes.insert(bytes.end(), b.begin(), b.end());
  };
  Engine engine(graph, bus, opts);
  engine.start();
  engine.submit_trigger("get");
  std::this_thread::sleep_for(150ms);
  engine.stop();

  std::lock_guard lock(m);
  transport::UartStreamDecoder dec;
  dec.feed(bytes);
  std::vector<dev::DeviceState> states;
  while (auto s = dec.next()) states.push_back(*s);
  dev::GamepadState pressed;
  pressed.btn.insert(1);
  const dev::DeviceState neutral = dev::GamepadState{};
  // idle ticks before and after, the press itself lasts exactly two frames
  auto first = std::find(states.begin(), states.end(), dev::DeviceState(pressed));
  REQUIRE(first != states.end());
  REQUIRE(states.end() - first >= 3);
  CHECK(first[1] == dev::DeviceState(pressed));
  CHECK(first[2] == neutral);
  CHECK(std::count(states.begin(), states.end(), dev::DeviceState(pressed)) == 2);
}

TEST_CASE("a trigger reaching a sink is reported, not fatal") {
  auto graph = pipe::load_graph(R"({"nodes":[{"id":"get","type":"http-in"},{"id":"emu","type":"swemu-out"}],
                                    "wires":[["get",0,"emu",0]]})");
  transport::LoopbackBus bus;
  std::vector<std::string> errors;
  EngineOptions opts;
  opts.on_error = [&](const Error& e) { errors.push_back(e.what()); };
  Engine engine(graph, bus, opts);
  engine.start();
  engine.submit_trigger("x");
  engine.drain();
  CHECK(engine.failures() == 1);
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].find("\"emu\"") != std::string::npos);
  engine.stop();
}

TEST_CASE("publish failures are counted") {
  auto graph = config("get-press.json");
  transport::LoopbackBus bus;
  EngineOptions opts;
  opts.retry = {2, 1ms, 1ms};
  Engine engine(graph, bus, opts);
  engine.start();
  bus.fail_next(2);
  engine.submit_trigger("get");
  engine.submit_trigger("get");
  engine.drain();
  CHECK(engine.failures() == 1);
  CHECK(engine.published() == 1);
  engine.stop();
}

TEST_CASE("invalid sink device ids are rejected up front") {
  auto graph = pipe::load_graph(R"({"nodes":[{"id":"get","type":"http-in"},
    {"id":"emu","type":"swemu-out","params":{"device":"a+b"}}],"wires":[["get",0,"emu",0]]})");
  transport::LoopbackBus bus;
  CHECK(error_of([&] { Engine engine(graph, bus); }) == ErrorCode::BadTopic);
}
