// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <httplib.h>

#include <condition_variable>
#include <cstdio>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>

#include <fmt/format.h>

#include "gcz/bench.hpp"
#include "gcz/bus.hpp"
#include "gcz/devstate.hpp"
#include "gcz/engine.hpp"
#include "gcz/http_trigger.hpp"
#include "gcz/pipeline.hpp"
#include "gcz/uart.hpp"
#include "support.hpp"

using namespace gcz;
using namespace std::chrono_literals;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances.
constexpr double kHadoukenBudgetS = 1.0;
constexpr double kRoundTripBudgetS = 10.0;
constexpr int kRoundTripsPerKind = 10'000;
constexpr int kRemapWords = 1'000;
constexpr int kTriggerTrials = 100;
constexpr std::size_t kLatencyProbes = 100;
constexpr double kStandaloneMeanMs = 16.0;
constexpr double kOverallMeanMs = 44.0;
constexpr int kUartFrames = 10'000;
constexpr int kCorruptionFrames = 1'000;
constexpr int kClockTicks = 600;
constexpr double kClockPeriodMs = 1000.0 / 60.0;
constexpr double kClockPeriodTolerance = 0.10;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

const char* kHadoukenLog =
    "0\t{\"dpad\":2,\"btn\":[],\"dur\":1,\"ang\":[0,0,0,0]}\n"
    "1\t{\"dpad\":2,\"btn\":[],\"dur\":1,\"ang\":[0,0,0,0]}\n"
    "2\t{\"dpad\":3,\"btn\":[],\"dur\":1,\"ang\":[0,0,0,0]}\n"
    "3\t{\"dpad\":3,\"btn\":[],\"dur\":1,\"ang\":[0,0,0,0]}\n"
    "4\t{\"dpad\":6,\"btn\":[1],\"dur\":1,\"ang\":[0,0,0,0]}\n"
    "5\t{\"dpad\":6,\"btn\":[1],\"dur\":1,\"ang\":[0,0,0,0]}\n"
    "6\t{\"dpad\":5,\"btn\":[],\"dur\":1,\"ang\":[0,0,0,0]}\n";

Outcome hadouken_golden() {
  const auto t0 = Clock::now();
  std::vector<std::string> logs;
  std::size_t frames = 0;
  for (int run = 0; run < 3; ++run) {
    auto sentence = dsl::parse_sentence(test::kHadouken);
    dev::StreamSource source(sentence);
    std::ostringstream out;
    dev::RecordingSink sink(out);
    frames = dev::run_clock(source, sink).ticks;
    logs.push_back(out.str());
  }
  const double s = seconds_since(t0) / 3;
  bool identical = true;
  for (auto& l : logs) identical = identical && l == logs[0];
  return {frames == 7 && identical && logs[0] == kHadoukenLog && s < kHadoukenBudgetS,
          fmt::format("{} frames, {} identical golden logs, {:.3f} s per run", frames, identical ? 3 : 0, s)};
}

Outcome grammar_round_trip() {
  const auto t0 = Clock::now();
  int failures = 0, not_shorter = 0;
  for (auto kind : test::kAllKinds) {
    for (int i = 0; i < kRoundTripsPerKind; ++i) {
      auto word = test::random_word(kind, true);
      auto text = dsl::serialize_word(word);
      if (dsl::parse_word(text) != word) ++failures;
      auto sentence = dsl::ControlSentence::from_words({word});
      auto bytes = dsl::encode_binary(sentence);
      if (dsl::decode_binary(bytes) != sentence) ++failures;
      if (bytes.size() >= dsl::serialize_sentence(sentence).size()) ++not_shorter;
    }
  }
  const double s = seconds_since(t0);
  return {failures == 0 && not_shorter == 0 && s < kRoundTripBudgetS,
          fmt::format("{} words, {} failures, {} not compressed, {:.2f} s", 3 * kRoundTripsPerKind, failures,
                      not_shorter, s)};
}

std::map<int, int> random_permutation() {
  std::vector<int> dom;
  for (int b = 1; b <= 16; ++b)
    if (test::uniform(0, 1)) dom.push_back(b);
  auto img = dom;
  std::shuffle(img.begin(), img.end(), test::rng());
  std::map<int, int> m;
  for (std::size_t i = 0; i < dom.size(); ++i) m[dom[i]] = img[i];
  return m;
}

Outcome remap_algebra() {
  using namespace pipe;
  int failures = 0;
  const auto pass = ButtonMapping::Unmapped::pass;
  const auto negate = AngTransform::make({Rational{-1, 1}, {-1, 1}, {-1, 1}, {-1, 1}}, {}, {0, 1, 2, 3});
  for (int i = 0; i < kRemapWords; ++i) {
    auto w = test::random_gamepad();
    // identities
    if (remap_button(w, ButtonMapping()) != w) ++failures;
    if (remap_dpad(w, DpadMapping()) != w) ++failures;
    if (remap_ang(w, AngTransform()) != w) ++failures;
    // inverses
    auto m = random_permutation();
    std::map<int, int> inv;
    for (auto [a, b] : m) inv[b] = a;
    auto fwd = ButtonMapping::from_pairs({m.begin(), m.end()}, pass);
    auto back = ButtonMapping::from_pairs({inv.begin(), inv.end()}, pass);
    if (remap_button(remap_button(w, fwd), back) != w) ++failures;
    std::vector<int> dirs{1, 2, 3, 4, 6, 7, 8, 9}, img = dirs, img2 = dirs;
    std::shuffle(img.begin(), img.end(), test::rng());
    std::shuffle(img2.begin(), img2.end(), test::rng());
    std::vector<std::pair<int, int>> d1, d1inv, d2, dc;
    std::map<int, int> f, g;
    for (std::size_t k = 0; k < dirs.size(); ++k) {
      f[dirs[k]] = img[k];
      g[dirs[k]] = img2[k];
      d1.emplace_back(dirs[k], img[k]);
      d1inv.emplace_back(img[k], dirs[k]);
      d2.emplace_back(dirs[k], img2[k]);
    }
    if (remap_dpad(remap_dpad(w, DpadMapping::from_pairs(d1)), DpadMapping::from_pairs(d1inv)) != w) ++failures;
    // composition
    for (int d : dirs) dc.emplace_back(d, g[f[d]]);
    if (remap_dpad(remap_dpad(w, DpadMapping::from_pairs(d1)), DpadMapping::from_pairs(d2)) !=
        remap_dpad(w, DpadMapping::from_pairs(dc)))
      ++failures;
    auto m2 = random_permutation();
    std::map<int, int> c;
    for (int b = 1; b <= 16; ++b) {
      const int t1 = m.count(b) ? m[b] : b;
      const int t2 = m2.count(t1) ? m2[t1] : t1;
      if (m.count(b) || m2.count(b)) c[b] = t2;
    }
    auto two = remap_button(remap_button(w, fwd), ButtonMapping::from_pairs({m2.begin(), m2.end()}, pass));
    if (two != remap_button(w, ButtonMapping::from_pairs({c.begin(), c.end()}, pass))) ++failures;
    // involution
    if (remap_ang(remap_ang(w, negate), negate) != w) ++failures;
  }
  return {failures == 0, fmt::format("{} random words, {} failures", kRemapWords, failures)};
}

Outcome trigger_end_to_end() {
  const auto config = test::slurp(std::filesystem::path(GCZ_SOURCE_DIR) / "configs/get-press.json");
  auto graph = pipe::load_graph(config);
  const auto params = nlohmann::json::parse(config)["nodes"][1]["params"];
  const auto expected = dsl::sentence_from_json(nlohmann::json::array({params}));

  transport::LoopbackBus bus;
  std::mutex m;
  std::condition_variable cv;
  std::vector<dsl::ControlSentence> got;
  transport::SentenceSubscriber sub(bus, transport::TopicAddress::for_device("pad0"),
                                    [&](std::uint64_t, const dsl::ControlSentence& s) {
                                      std::lock_guard lock(m);
                                      got.push_back(s);
                                      cv.notify_all();
                                    });
  runtime::Engine engine(graph, bus);
  engine.start();
  transport::HttpTriggerServer http("127.0.0.1", 0, [&](const std::string& name) { engine.submit_trigger(name); });
  httplib::Client client("127.0.0.1", http.port());

  int ok = 0;
  for (int i = 0; i < kTriggerTrials; ++i) {
    std::size_t before;
    {
      std::lock_guard lock(m);
      before = got.size();
    }
    auto res = client.Get("/trigger/press");
    if (!res || res->status != 200) continue;
    engine.drain();
    bus.flush();
    std::unique_lock lock(m);
    cv.wait_for(lock, 2s, [&] { return got.size() > before; });
    const bool one = got.size() == before + 1;
    const bool single_button = one && std::get<dsl::GamepadWord>(got.back()[0]).btn.size() == 1;
    if (one && single_button && got.back() == expected) ++ok;
  }
  http.stop();
  engine.stop();
  return {ok == kTriggerTrials, fmt::format("{}/{} trials delivered exactly the node's sentence", ok, kTriggerTrials)};
}

Outcome latency(const char* route, double max_mean_ms) {
  auto r = bench::run_route(route, {kLatencyProbes});
  const auto verdicts = bench::classify(r.stats, bench::ThresholdTable::standard());
  const bool every = bench::all_pass(verdicts);
  return {r.stats.n == kLatencyProbes && r.stats.mean <= max_mean_ms && every,
          fmt::format("n={} mean {:.3f} ms (limit {} ms) p95 {:.3f} max {:.3f}, groups {}", r.stats.n, r.stats.mean,
                      max_mean_ms, r.stats.p95, r.stats.max, every ? "all pass" : "not all pass")};
}

dev::DeviceState random_state() {
  auto kind = test::kAllKinds[test::uniform(0, 2)];
  return dev::apply_word(dev::neutral_state(kind), test::random_word(kind));
}

Outcome uart_robustness() {
  std::vector<dev::DeviceState> sent;
  std::vector<std::uint8_t> stream;
  for (int i = 0; i < kUartFrames; ++i) {
    for (int g = test::uniform(0, 6); g > 0; --g) stream.push_back(static_cast<std::uint8_t>(test::uniform(0, 255)));
    sent.push_back(random_state());
    auto f = transport::encode_uart_frame(sent.back());
    stream.insert(stream.end(), f.bytes().begin(), f.bytes().end());
  }
  transport::UartStreamDecoder dec;
  std::vector<dev::DeviceState> got;
  for (std::size_t i = 0; i < stream.size(); i += 64) {
    dec.feed(std::span(stream).subspan(i, std::min<std::size_t>(64, stream.size() - i)));
    while (auto s = dec.next()) got.push_back(*s);
  }
  const bool exact = got == sent;

  int rejected = 0, trials = 0;
  for (int i = 0; i < kCorruptionFrames; ++i) {
    auto f = transport::encode_uart_frame(random_state());
    std::vector<std::uint8_t> bytes(f.bytes().begin(), f.bytes().end());
    for (std::size_t pos = 0; pos < bytes.size(); ++pos) {
      auto bad = bytes;
      bad[pos] ^= static_cast<std::uint8_t>(test::uniform(1, 255));
      ++trials;
      try {
        transport::decode_uart_frame(bad);
      } catch (const Error&) {
        ++rejected;
      }
    }
  }
  return {exact && rejected == trials,
          fmt::format("{}/{} frames recovered exactly from {} bytes; {}/{} corruptions rejected", got.size(),
                      sent.size(), stream.size(), rejected, trials)};
}

Outcome frame_clock() {
  dev::LiveSource source(dsl::DeviceKind::gamepad);
  dev::CollectingSink sink;
  dev::ClockOptions options;
  options.max_ticks = kClockTicks;
  auto report = dev::run_clock(source, sink, options);
  const auto intervals = report.intervals_ms();
  double mean = 0;
  for (double v : intervals) mean += v;
  mean /= static_cast<double>(intervals.size());
  double drift = 0;
  for (std::size_t i = 0; i < report.tick_times.size(); ++i) {
    const double expected = static_cast<double>(i) * kClockPeriodMs;
    drift = std::max(drift, std::abs(std::chrono::duration<double, std::milli>(report.tick_times[i]).count() - expected));
  }
  const double total_ms = std::chrono::duration<double, std::milli>(report.elapsed).count();
  drift = std::max(drift, std::abs(total_ms - kClockTicks * kClockPeriodMs));
  const bool ok = report.ticks == static_cast<std::uint64_t>(kClockTicks) &&
                  std::abs(mean - kClockPeriodMs) <= kClockPeriodTolerance * kClockPeriodMs && drift < kClockPeriodMs;
  return {ok, fmt::format("{} ticks, mean period {:.3f} ms, max drift {:.3f} ms over {:.2f} s", report.ticks, mean,
                          drift, total_ms / 1000)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"hadouken-golden", hadouken_golden},
      {"grammar-round-trip", grammar_round_trip},
      {"remap-algebra", remap_algebra},
      {"get-trigger-end-to-end", trigger_end_to_end},
      {"standalone-latency", [] { return latency("remap-chain", kStandaloneMeanMs); }},
      {"overall-latency", [] { return latency("overall", kOverallMeanMs); }},
      {"uart-robustness", uart_robustness},
      {"frame-clock", frame_clock},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : fmt::format("{} criteria failed", failed)) << std::endl;
  return failed == 0 ? 0 : 1;
}
