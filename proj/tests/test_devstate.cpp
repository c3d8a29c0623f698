#include <doctest.h>

#include <numeric>
#include <sstream>
#include <thread>

#include "gcz/devstate.hpp"
#include "support.hpp"

using namespace gcz;
using namespace gcz::dev;
using gcz::test::error_of;
using gcz::test::kAllKinds;

namespace {

DeviceState pad(dsl::Dpad d, std::vector<int> buttons = {}) {
  GamepadState s;
  s.dpad = d;
  for (int b : buttons) s.btn.insert(b);
  return s;
}

int total_duration(const ControlSentence& s) {
  int sum = 0;
  for (const auto& w : s) sum += dsl::duration_of(w);
  return sum;
}

/// Sink that closes after a fixed number of deliveries.
class ClosingSink final : public FrameSink {
 public:
  explicit ClosingSink(std::uint64_t limit) : limit_(limit) {}
  void deliver(std::uint64_t, const DeviceState&) override { ++seen_; }
  bool closed() const override { return seen_ >= limit_; }

 private:
  std::uint64_t limit_;
  std::uint64_t seen_ = 0;
};

}  // namespace

TEST_CASE("hadouken expands to seven frames") {
  auto stream = expand_sentence(dsl::parse_sentence(test::kHadouken));
  REQUIRE(stream.size() == 7);
  const DeviceState expected[] = {pad(dsl::Dpad::down),       pad(dsl::Dpad::down),
                                  pad(dsl::Dpad::down_right), pad(dsl::Dpad::down_right),
                                  pad(dsl::Dpad::right, {1}), pad(dsl::Dpad::right, {1}),
                                  pad(dsl::Dpad::neutral)};
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(stream.frames[i].index == i);
    CHECK(stream.frames[i].state == expected[i]);
  }

  std::ostringstream log;
  write_frame_log(log, stream);
  CHECK(log.str() ==
        "0\t{\"dpad\":2,\"btn\":[],\"dur\":1,\"ang\":[0,0,0,0]}\n"
        "1\t{\"dpad\":2,\"btn\":[],\"dur\":1,\"ang\":[0,0,0,0]}\n"
        "2\t{\"dpad\":3,\"btn\":[],\"dur\":1,\"ang\":[0,0,0,0]}\n"
        "3\t{\"dpad\":3,\"btn\":[],\"dur\":1,\"ang\":[0,0,0,0]}\n"
        "4\t{\"dpad\":6,\"btn\":[1],\"dur\":1,\"ang\":[0,0,0,0]}\n"
        "5\t{\"dpad\":6,\"btn\":[1],\"dur\":1,\"ang\":[0,0,0,0]}\n"
        "6\t{\"dpad\":5,\"btn\":[],\"dur\":1,\"ang\":[0,0,0,0]}\n");
}

TEST_CASE("expansion length is one plus the total duration") {
  for (auto kind : kAllKinds) {
    for (int i = 0; i < 300; ++i) {
      auto s = test::random_sentence(kind, 4, true);
      // keep the streams small
      std::vector<ControlWord> words;
      for (auto w : s) {
        std::visit([](auto& x) { x.dur = 1 + x.dur % 50; }, w);
        words.push_back(w);
      }
      auto small = ControlSentence::from_words(words);
      auto stream = expand_sentence(small);
      CHECK(stream.size() == static_cast<std::size_t>(1 + total_duration(small)));
      CHECK(stream.frames.back().state == neutral_state(kind));
    }
  }
}

TEST_CASE("expansion rejects a trailing hold") {
  auto s = dsl::parse_sentence(R"([{"dpad":5,"btn":[1],"dur":-1}])");
  CHECK(error_of([&] { expand_sentence(s); }) == ErrorCode::UnboundedDuration);
}

TEST_CASE("apply is idempotent for asserting kinds") {
  for (auto kind : {DeviceKind::gamepad, DeviceKind::keyboard}) {
    for (int i = 0; i < 1000; ++i) {
      auto start = apply_word(neutral_state(kind), test::random_word(kind));
      auto w = test::random_word(kind);
      auto once = apply_word(start, w);
      CHECK(apply_word(once, w) == once);
    }
  }
}

TEST_CASE("apply_word on another kind fails") {
  CHECK(error_of([] { apply_word(neutral_state(DeviceKind::gamepad), dsl::neutral_word(DeviceKind::mouse)); }) ==
        ErrorCode::KindMismatch);
  LiveSource live(DeviceKind::keyboard);
  CHECK(error_of([&] { live.push(dsl::parse_sentence(test::kHadouken)); }) == ErrorCode::KindMismatch);
}

TEST_CASE("mouse motion accumulates within a frame and settles") {
  auto s = apply_word(neutral_state(DeviceKind::mouse), dsl::parse_word(R"({"mov":[100,-100]})"));
  s = apply_word(s, dsl::parse_word(R"({"mov":[100,-100]})"));
  CHECK(std::get<MouseState>(s).pending == dsl::Motion{127, -127});
  CHECK(std::get<MouseState>(settle(s)).pending == dsl::Motion{0, 0});
}

TEST_CASE("diff then apply reproduces the next state") {
  for (auto kind : kAllKinds) {
    for (int i = 0; i < 1000; ++i) {
      auto prev = apply_word(neutral_state(kind), test::random_word(kind));
      auto next = apply_word(settle(prev), test::random_word(kind));
      auto d = diff_states(prev, next);
      if (prev == next) {
        CHECK_FALSE(d);
        continue;
      }
      REQUIRE(d);
      CHECK(dsl::duration_of(*d) == dsl::kHold);
      CHECK(apply_word(settle(prev), *d) == next);
    }
  }
}

TEST_CASE("diff of neutral to button one") {
  auto d = diff_states(neutral_state(DeviceKind::gamepad), pad(dsl::Dpad::neutral, {1}));
  REQUIRE(d);
  CHECK(dsl::serialize_word(*d) == R"({"dpad":5,"btn":[1],"dur":-1,"ang":[0,0,0,0]})");
  CHECK_FALSE(diff_states(neutral_state(DeviceKind::gamepad), neutral_state(DeviceKind::gamepad)));
}

TEST_CASE("frame log round trip") {
  for (auto kind : kAllKinds) {
    for (int i = 0; i < 50; ++i) {
      std::vector<ControlWord> words;
      for (auto w : test::random_sentence(kind, 4, true)) {
        std::visit([](auto& x) { x.dur = 1 + x.dur % 8; }, w);
        words.push_back(w);
      }
      auto stream = expand_sentence(ControlSentence::from_words(words));
      std::stringstream log;
      write_frame_log(log, stream);
      CHECK(read_frame_log(log) == stream);
    }
  }
}

TEST_CASE("clock delivers every frame of a stream at the frame rate") {
  StreamSource src(dsl::parse_sentence(R"([{"dpad":5,"btn":[1],"dur":5}])"));
  CollectingSink sink;
  auto report = run_clock(src, sink);
  REQUIRE(sink.stream.size() == 6);
  CHECK(report.ticks == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(sink.stream.frames[i].index == i);
  const double ms = std::chrono::duration<double, std::milli>(report.elapsed).count();
  CHECK(ms == doctest::Approx(100.0).epsilon(0.15));
}

TEST_CASE("clock with no input re-delivers neutral") {
  LiveSource live(DeviceKind::gamepad);
  CollectingSink sink;
  ClockOptions opts;
  opts.rate = 600;
  opts.max_ticks = 20;
  auto report = run_clock(live, sink, opts);
  CHECK(report.ticks == 20);
  for (auto& f : sink.stream.frames) CHECK(f.state == neutral_state(DeviceKind::gamepad));
}

TEST_CASE("clock stops with SinkClosed") {
  LiveSource live(DeviceKind::mouse);
  ClosingSink sink(3);
  ClockOptions opts;
  opts.rate = 1000;
  opts.max_ticks = 10;
  CHECK(error_of([&] { run_clock(live, sink, opts); }) == ErrorCode::SinkClosed);
}

TEST_CASE("clock stops on request") {
  LiveSource live(DeviceKind::gamepad);
  CollectingSink sink;
  std::stop_source stop;
  ClockOptions opts;
  opts.rate = 1000;
  opts.stop = stop.get_token();
  std::thread t([&] { run_clock(live, sink, opts); });
  std::this_thread::sleep_for(std::chrono::milliseconds(30));
  stop.request_stop();
  t.join();
  CHECK(sink.stream.size() > 0);
}

TEST_CASE("live source plays queued sentences then releases") {
  LiveSource live(DeviceKind::gamepad);
  CHECK(live.idle());
  live.push(dsl::parse_sentence(test::kHadouken));
  std::vector<DeviceState> seen;
  while (auto s = live.poll()) seen.push_back(*s);
  auto expected = expand_sentence(dsl::parse_sentence(test::kHadouken));
  REQUIRE(seen.size() == expected.size());
  for (std::size_t i = 0; i < seen.size(); ++i) CHECK(seen[i] == expected.frames[i].state);
  CHECK(live.idle());
  CHECK_FALSE(live.exhausted());
  live.close();
  CHECK(live.exhausted());
}

TEST_CASE("live source keeps a hold word active until superseded") {
  LiveSource live(DeviceKind::gamepad);
  live.push(dsl::parse_sentence(R"([{"dpad":8,"dur":-1}])"));
  for (int i = 0; i < 5; ++i) {
    auto s = live.poll();
    REQUIRE(s);
    CHECK(*s == pad(dsl::Dpad::up));
  }
  live.push(dsl::parse_sentence(R"([{"dpad":2,"dur":1}])"));
  CHECK(*live.poll() == pad(dsl::Dpad::down));
  CHECK(*live.poll() == pad(dsl::Dpad::neutral));
  CHECK_FALSE(live.poll());
}

TEST_CASE("live source drops the oldest finite word when full") {
  LiveSource live(DeviceKind::gamepad, 2);
  live.push(dsl::parse_sentence(R"([{"dpad":1},{"dpad":2},{"dpad":3}])"));
  // four words queued into two slots: 1 and 2 are dropped
  CHECK(live.dropped() == 2);
  CHECK(*live.poll() == pad(dsl::Dpad::down_right));
  CHECK(*live.poll() == pad(dsl::Dpad::neutral));
  CHECK_FALSE(live.poll());
}
