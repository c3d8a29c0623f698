#include "gcz/bench.hpp"

#include <algorithm>
#include <condition_variable>
#include <istream>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "gcz/devstate.hpp"
#include "gcz/engine.hpp"
#include "gcz/error.hpp"
#include "gcz/ws.hpp"

namespace gcz::bench {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double percentile(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - static_cast<double>(lo));
}

LatencyStats LatencyStats::from_delays(std::vector<double> delays) {
  if (delays.empty()) throw Error(ErrorCode::Usage, "no samples");
  std::sort(delays.begin(), delays.end());
  LatencyStats s;
  s.n = delays.size();
  s.mean = std::accumulate(delays.begin(), delays.end(), 0.0) / static_cast<double>(s.n);
  s.p50 = percentile(delays, 0.50);
  s.p95 = percentile(delays, 0.95);
  s.max = delays.back();
  return s;
}

LatencyStats LatencyStats::from_samples(std::span<const LatencySample> samples) {
  std::vector<double> delays;
  delays.reserve(samples.size());
  for (const auto& s : samples) delays.push_back(s.delay_ms());
  return from_delays(std::move(delays));
}

ThresholdTable::ThresholdTable(std::vector<ThresholdGroup> groups) : groups_(std::move(groups)) {
  if (groups_.empty()) throw Error(ErrorCode::ConfigError, "threshold table is empty");
  for (std::size_t i = 1; i < groups_.size(); ++i)
    if (!(groups_[i - 1].threshold_ms < groups_[i].threshold_ms))
      throw Error(ErrorCode::ConfigError, "thresholds must be strictly increasing");
}

ThresholdTable ThresholdTable::standard() {
  return ThresholdTable({{"avatar-first-person", 100}, {"avatar-third-person", 500}, {"omnipresent", 1000}});
}

std::vector<Verdict> classify(const LatencyStats& stats, const ThresholdTable& table) {
  std::vector<Verdict> out;
  for (const auto& g : table.groups()) out.push_back({g.label, g.threshold_ms, stats.mean <= g.threshold_ms});
  return out;
}

bool all_pass(const std::vector<Verdict>& verdicts) {
  return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.pass; });
}

namespace {

constexpr std::string_view kChain = "remap-button remap-ang remap-dpad";

enum class Observe { tap, bus, uart };

struct RouteSetup {
  dsl::DeviceKind kind;
  Observe observe;
  bool via_ws = false;
  bool remap_chain = false;
};

const std::vector<std::pair<RouteInfo, RouteSetup>>& table() {
  using dsl::DeviceKind;
  static const std::vector<std::pair<RouteInfo, RouteSetup>> t = {
      {{"remap-chain", "Gamepad", std::string(kChain), "loopback"}, {DeviceKind::gamepad, Observe::tap, false, true}},
      {{"passthrough", "Gamepad", "(none)", "loopback"}, {DeviceKind::gamepad, Observe::tap, false, false}},
      {{"gamepad-sw", "Gamepad", std::string(kChain), "S/W"}, {DeviceKind::gamepad, Observe::bus, false, true}},
      {{"gamepad-hw", "Gamepad", std::string(kChain) + " H/W Emulator", "H/W"},
       {DeviceKind::gamepad, Observe::uart, false, true}},
      {{"mouse-sw", "Mouse", "(none)", "S/W"}, {DeviceKind::mouse, Observe::bus, false, false}},
      {{"mouse-hw", "Mouse", "H/W Emulator", "H/W"}, {DeviceKind::mouse, Observe::uart, false, false}},
      {{"keyboard-sw", "Keyboard", "(none)", "S/W"}, {DeviceKind::keyboard, Observe::bus, false, false}},
      {{"keyboard-hw", "Keyboard", "H/W Emulator", "H/W"}, {DeviceKind::keyboard, Observe::uart, false, false}},
      {{"overall", "Gamepad", "ws-in " + std::string(kChain), "S/W"}, {DeviceKind::gamepad, Observe::bus, true, true}},
  };
  return t;
}

const RouteSetup& setup_of(std::string_view name) {
  for (const auto& [info, setup] : table())
    if (info.name == name) return setup;
  throw Error(ErrorCode::RouteUnavailable, "unknown route \"" + std::string(name) + "\"");
}

json route_graph(const RouteSetup& setup) {
  json nodes = json::array();
  json wires = json::array();
  std::string prev = setup.via_ws ? "ws" : "probe";
  nodes.push_back({{"id", prev}, {"type", setup.via_ws ? "ws-in" : "inject"}});
  auto link = [&](const std::string& id, const std::string& type, json params) {
    json node{{"id", id}, {"type", type}};
    if (!params.is_null()) node["params"] = std::move(params);
    nodes.push_back(std::move(node));
    wires.push_back({prev, 0, id, 0});
    prev = id;
  };
  if (setup.remap_chain) {
    link("buttons", "remap-button", {{"map", {{"1", "2"}, {"2", "1"}}}, {"policy", "pass"}});
    link("sticks", "remap-ang", {{"scale", {1, -1, 1, -1}}, {"perm", {0, 1, 2, 3}}});
    link("dpad", "remap-dpad", {{"map", {{"1", "3"}, {"3", "1"}, {"4", "6"}, {"6", "4"}, {"7", "9"}, {"9", "7"}}}});
  }
  switch (setup.observe) {
    case Observe::tap: link("out", "loopback-out", nullptr); break;
    case Observe::bus: link("out", "swemu-out", {{"device", "bench"}}); break;
    case Observe::uart: link("out", "hw-emulator-out", {{"device", "bench"}}); break;
  }
  return {{"nodes", nodes}, {"wires", wires}};
}

dsl::ControlSentence probe(dsl::DeviceKind kind, std::size_t k) {
  const int button = k % 2 == 0 ? 1 : 2;
  switch (kind) {
    case dsl::DeviceKind::gamepad: {
      dsl::GamepadWord w;
      w.btn.insert(button);
      w.dur = 1;
      return dsl::ControlSentence::from_words({w});
    }
    case dsl::DeviceKind::mouse: {
      dsl::MouseWord w;
      w.btn.insert(button);
      w.dur = 1;
      return dsl::ControlSentence::from_words({w});
    }
    case dsl::DeviceKind::keyboard: {
      dsl::KeyboardWord w;
      w.key.insert(*dsl::key_code(button == 1 ? "a" : "b"));
      w.dur = 1;
      return dsl::ControlSentence::from_words({w});
    }
  }
  throw Error(ErrorCode::RouteUnavailable, "bad probe kind");
}

std::int64_t now_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now().time_since_epoch()).count();
}

// Expected observation for the current probe; the first matching delivery
// after arming stamps t_out.
class Observer {
 public:
  void arm(std::optional<dsl::ControlSentence> sentence, std::optional<dev::DeviceState> state) {
    std::lock_guard lock(mutex_);
    sentence_ = std::move(sentence);
    state_ = std::move(state);
    t_out_.reset();
  }

  void saw(const dsl::ControlSentence& s) {
    const auto t = now_ns();
    std::lock_guard lock(mutex_);
    if (!t_out_ && sentence_ && *sentence_ == s) stamp(t);
  }

  void saw(const dev::DeviceState& s) {
    const auto t = now_ns();
    std::lock_guard lock(mutex_);
    if (!t_out_ && state_ && *state_ == s) stamp(t);
  }

  std::optional<std::int64_t> wait(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    seen_.wait_for(lock, timeout, [this] { return t_out_.has_value(); });
    return t_out_;
  }

 private:
  void stamp(std::int64_t t) {
    t_out_ = t;
    seen_.notify_all();
  }

  std::mutex mutex_;
  std::condition_variable seen_;
  std::optional<dsl::ControlSentence> sentence_;
  std::optional<dev::DeviceState> state_;
  std::optional<std::int64_t> t_out_;
};

}  // namespace

const std::vector<RouteInfo>& routes() {
  static const std::vector<RouteInfo> r = [] {
    std::vector<RouteInfo> out;
    for (const auto& [info, _] : table()) out.push_back(info);
    return out;
  }();
  return r;
}

const RouteInfo& find_route(std::string_view name) {
  for (const auto& r : routes())
    if (r.name == name) return r;
  throw Error(ErrorCode::RouteUnavailable, "unknown route \"" + std::string(name) + "\"");
}

RouteResult run_route(std::string_view name, const RunOptions& options) {
  if (options.n == 0) throw Error(ErrorCode::Usage, "probe count must be at least 1");
  const RouteInfo& info = find_route(name);
  const RouteSetup& setup = setup_of(name);
  const pipe::NodeGraph graph = pipe::graph_from_json(route_graph(setup));
  const std::string source = setup.via_ws ? "ws" : "probe";

  Observer observer;
  transport::LoopbackBus bus;
  std::unique_ptr<transport::SentenceSubscriber> subscriber;
  if (setup.observe == Observe::bus)
    subscriber = std::make_unique<transport::SentenceSubscriber>(
        bus, transport::TopicAddress::for_device("bench"),
        [&observer](std::uint64_t, const dsl::ControlSentence& s) { observer.saw(s); });

  runtime::EngineOptions engine_options;
  transport::UartStreamDecoder decoder;
  if (setup.observe == Observe::uart)
    engine_options.serial_writer = [&](std::span<const std::uint8_t> bytes) {
      decoder.feed(bytes);
      while (auto state = decoder.next()) observer.saw(*state);
    };
  runtime::Engine engine(graph, bus, engine_options);
  engine.add_tap([&observer](const std::string&, const pipe::Message& m) {
    if (const auto* s = std::get_if<dsl::ControlSentence>(&m)) observer.saw(*s);
  });
  engine.start();

  std::unique_ptr<transport::WsIngestServer> server;
  std::unique_ptr<transport::WsClient> client;
  if (setup.via_ws) {
    server = std::make_unique<transport::WsIngestServer>(
        "127.0.0.1", 0, [&engine](transport::IngestEvent e) { engine.submit_ingest(e); });
    client = std::make_unique<transport::WsClient>("127.0.0.1", server->port(), "/input?device=bench");
  }

  RouteResult result{info, {}, {}};
  for (std::size_t k = 0; k < options.n; ++k) {
    const auto p = probe(setup.kind, k);
    const auto outputs = pipe::step_graph(graph, source, p);
    const auto& expected = std::get<dsl::ControlSentence>(outputs.at(0).message);
    if (setup.observe == Observe::uart)
      observer.arm(std::nullopt, dev::expand_sentence(expected).frames.at(0).state);
    else
      observer.arm(expected, std::nullopt);

    const auto t_in = now_ns();
    if (client)
      client->send(dsl::serialize_sentence(p));
    else
      engine.submit(source, p);
    const auto t_out = observer.wait(options.timeout);
    if (!t_out)
      throw Error(ErrorCode::Timeout, fmt::format("route {}: probe {} not observed within {} ms", info.name, k,
                                                  options.timeout.count()));
    result.samples.push_back({info.name, fmt::format("probe-{}", k), t_in, *t_out});
    if (setup.observe == Observe::uart) {
      // Let the release frame play so the next probe does not queue behind it.
      observer.arm(std::nullopt, dev::neutral_state(setup.kind));
      if (!observer.wait(options.timeout))
        throw Error(ErrorCode::Timeout, fmt::format("route {}: release of probe {} not observed", info.name, k));
    }
  }
  if (server) server->stop();
  engine.stop();
  result.stats = LatencyStats::from_samples(result.samples);
  return result;
}

std::string emit_report(std::span<const RouteResult> results, ReportFormat format, const ThresholdTable& table) {
  if (results.empty()) throw Error(ErrorCode::Usage, "report needs at least one route result");
  bool every = true;
  if (format == ReportFormat::json) {
    json rows = json::array();
    for (const auto& r : results) {
      const auto verdicts = classify(r.stats, table);
      json cls = json::array();
      for (const auto& v : verdicts) cls.push_back({{"group", v.group}, {"threshold_ms", v.threshold_ms}, {"pass", v.pass}});
      every = every && all_pass(verdicts);
      rows.push_back({{"route", r.route.name},
                      {"Input", r.route.input},
                      {"Processed Nodes", r.route.processed_nodes},
                      {"Emulation", r.route.emulation},
                      {"Average Delay", r.stats.mean},
                      {"n", r.stats.n},
                      {"p50", r.stats.p50},
                      {"p95", r.stats.p95},
                      {"max", r.stats.max},
                      {"classification", cls},
                      {"all_pass", all_pass(verdicts)}});
    }
    json groups = json::array();
    for (const auto& g : table.groups()) groups.push_back({{"group", g.label}, {"threshold_ms", g.threshold_ms}});
    return json{{"schema", "gcz-bench-report/1"}, {"thresholds", groups}, {"rows", rows}, {"all_pass", every}}.dump(2) +
           "\n";
  }

  std::string out = fmt::format("{:<9} {:<48} {:<9} {:>13} {:>9} {:>9} {:>9} {:>5}\n", "Input", "Processed Nodes",
                                "Emulation", "Average Delay", "p50", "p95", "max", "n");
  std::string verdict_lines;
  for (const auto& r : results) {
    out += fmt::format("{:<9} {:<48} {:<9} {:>10.3f} ms {:>9.3f} {:>9.3f} {:>9.3f} {:>5}\n", r.route.input,
                       r.route.processed_nodes, r.route.emulation, r.stats.mean, r.stats.p50, r.stats.p95, r.stats.max,
                       r.stats.n);
    verdict_lines += r.route.name + ":";
    for (const auto& v : classify(r.stats, table)) {
      verdict_lines += fmt::format(" {}<={:g}ms {}", v.group, v.threshold_ms, v.pass ? "pass" : "FAIL");
      every = every && v.pass;
    }
    verdict_lines += "\n";
  }
  return out + verdict_lines + (every ? "all groups pass\n" : "threshold exceeded\n");
}

namespace {

bool fail_at(std::string* why, const std::string& where) {
  if (why) *why = where;
  return false;
}

bool is_number(const json& j, const char* key) { return j.contains(key) && j[key].is_number(); }

}  // namespace

bool validate_report(const json& report, std::string* why) {
  if (!report.is_object()) return fail_at(why, "/");
  for (const auto& key : report.items())
    if (key.key() != "schema" && key.key() != "thresholds" && key.key() != "rows" && key.key() != "all_pass")
      return fail_at(why, "/" + key.key());
  if (!report.contains("schema") || report["schema"] != "gcz-bench-report/1") return fail_at(why, "/schema");
  if (!report.contains("thresholds") || !report["thresholds"].is_array() || report["thresholds"].empty())
    return fail_at(why, "/thresholds");
  double last = -1;
  for (std::size_t i = 0; i < report["thresholds"].size(); ++i) {
    const auto& g = report["thresholds"][i];
    const std::string at = "/thresholds/" + std::to_string(i);
    if (!g.is_object() || !g.contains("group") || !g["group"].is_string() || !is_number(g, "threshold_ms"))
      return fail_at(why, at);
    if (!(g["threshold_ms"].get<double>() > last)) return fail_at(why, at + "/threshold_ms");
    last = g["threshold_ms"].get<double>();
  }
  if (!report.contains("rows") || !report["rows"].is_array() || report["rows"].empty()) return fail_at(why, "/rows");
  bool every = true;
  for (std::size_t i = 0; i < report["rows"].size(); ++i) {
    const auto& r = report["rows"][i];
    const std::string at = "/rows/" + std::to_string(i);
    if (!r.is_object()) return fail_at(why, at);
    for (const char* key : {"route", "Input", "Processed Nodes", "Emulation"})
      if (!r.contains(key) || !r[key].is_string()) return fail_at(why, at + "/" + key);
    for (const char* key : {"Average Delay", "p50", "p95", "max"})
      if (!is_number(r, key) || r[key].get<double>() < 0) return fail_at(why, at + "/" + key);
    if (!r.contains("n") || !r["n"].is_number_unsigned() || r["n"].get<std::uint64_t>() < 1)
      return fail_at(why, at + "/n");
    if (!(r["p50"].get<double>() <= r["p95"].get<double>() && r["p95"].get<double>() <= r["max"].get<double>()))
      return fail_at(why, at + "/p95");
    if (!r.contains("classification") || !r["classification"].is_array() ||
        r["classification"].size() != report["thresholds"].size())
      return fail_at(why, at + "/classification");
    bool row_pass = true;
    for (std::size_t j = 0; j < r["classification"].size(); ++j) {
      const auto& c = r["classification"][j];
      const std::string cat = at + "/classification/" + std::to_string(j);
      if (!c.is_object() || !c.contains("group") || c["group"] != report["thresholds"][j]["group"] ||
          !is_number(c, "threshold_ms") || !c.contains("pass") || !c["pass"].is_boolean())
        return fail_at(why, cat);
      const bool expect = r["Average Delay"].get<double>() <= c["threshold_ms"].get<double>();
      if (c["pass"].get<bool>() != expect) return fail_at(why, cat + "/pass");
      row_pass = row_pass && expect;
    }
    if (!r.contains("all_pass") || r["all_pass"] != row_pass) return fail_at(why, at + "/all_pass");
    every = every && row_pass;
  }
  if (!report.contains("all_pass") || report["all_pass"] != every) return fail_at(why, "/all_pass");
  return true;
}

void write_sample_log(std::ostream& out, std::span<const LatencySample> samples) {
  for (const auto& s : samples) out << s.route << ',' << s.label << ',' << s.t_in_ns << ',' << s.t_out_ns << '\n';
}

std::vector<LatencySample> read_sample_log(std::istream& in) {
  std::vector<LatencySample> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    LatencySample s;
    try {
      if (fields.size() != 4) throw std::invalid_argument("field count");
      std::size_t used_in = 0, used_out = 0;
      s = {fields[0], fields[1], std::stoll(fields[2], &used_in), std::stoll(fields[3], &used_out)};
      if (used_in != fields[2].size() || used_out != fields[3].size()) throw std::invalid_argument("digits");
    } catch (const std::exception&) {
      throw Error(ErrorCode::SchemaError, "sample log line " + std::to_string(number) + ": expected route,label,t_in_ns,t_out_ns");
    }
    if (s.t_out_ns < s.t_in_ns)
      throw Error(ErrorCode::SchemaError, "sample log line " + std::to_string(number) + ": t_out before t_in");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace gcz::bench
