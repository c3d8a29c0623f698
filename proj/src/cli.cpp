#include "gcz/cli.hpp"

#include <pthread.h>
#include <signal.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "gcz/bench.hpp"
#include "gcz/bus.hpp"
#include "gcz/devstate.hpp"
#include "gcz/engine.hpp"
#include "gcz/http_trigger.hpp"
#include "gcz/mqtt.hpp"
#include "gcz/pipeline.hpp"
#include "gcz/uart.hpp"
#include "gcz/ws.hpp"

namespace gcz::cli {

using nlohmann::json;

int exit_code_for(ErrorCode code) {
  if (code == ErrorCode::Usage) return kExitUsage;
  return 10 + static_cast<int>(code);
}

namespace {

struct RunConfig {
  std::string graph;
  int ws_port = 8765;
  int http_port = 8766;
  std::string broker = "loopback";
  std::string serial = "none";
  std::string topic_prefix = std::string(transport::kDefaultTopicPrefix);
  std::string listen = "0.0.0.0";
  std::string log_level = "warn";

  bool has_serial() const { return !serial.empty() && serial != "none"; }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json_file(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::MalformedJson, path + ": " + e.what());
  }
}

// Config file keys become option defaults; GCZ_* variables and flags still
// override them.
RunConfig file_defaults(int argc, char** argv) {
  std::string path;
  for (int i = 1; i < argc; ++i) {
    const std::string_view a = argv[i];
    if (a == "--config" && i + 1 < argc) path = argv[i + 1];
    if (a.starts_with("--config=")) path = std::string(a.substr(9));
  }
  if (path.empty())
    if (const char* env = std::getenv("GCZ_CONFIG")) path = env;
  RunConfig cfg;
  if (path.empty()) return cfg;
  const json doc = parse_json_file(path);
  if (!doc.is_object()) throw Error(ErrorCode::ConfigError, path + ": expected a JSON object");
  auto str = [&](const std::string& key, std::string& out) {
    if (!doc[key].is_string()) throw Error(ErrorCode::ConfigError, path + ": \"" + key + "\" must be a string");
    out = doc[key].get<std::string>();
  };
  auto port = [&](const std::string& key, int& out) {
    if (!doc[key].is_number_integer() || doc[key].get<int>() < 1 || doc[key].get<int>() > 65535)
      throw Error(ErrorCode::ConfigError, path + ": \"" + key + "\" must be a port in 1..65535");
    out = doc[key].get<int>();
  };
  for (const auto& item : doc.items()) {
    const auto& k = item.key();
    if (k == "graph") str(k, cfg.graph);
    else if (k == "ws_port") port(k, cfg.ws_port);
    else if (k == "http_port") port(k, cfg.http_port);
    else if (k == "broker") str(k, cfg.broker);
    else if (k == "serial") str(k, cfg.serial);
    else if (k == "topic_prefix") str(k, cfg.topic_prefix);
    else if (k == "listen") str(k, cfg.listen);
    else if (k == "log_level") str(k, cfg.log_level);
    else throw Error(ErrorCode::ConfigError, path + ": unknown key \"" + k + "\"");
  }
  return cfg;
}

void add_config_flag(CLI::App* sub) {
  sub->add_option("--config", "JSON run config; its values act as defaults")->envname("GCZ_CONFIG");
}

void add_broker_options(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--broker", cfg.broker, "'loopback' or host[:port] of an MQTT broker")
      ->envname("GCZ_BROKER")
      ->capture_default_str();
  sub->add_option("--topic-prefix", cfg.topic_prefix, "Emulator topic prefix")
      ->envname("GCZ_TOPIC_PREFIX")
      ->capture_default_str();
}

void add_serial_option(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--serial", cfg.serial, "Serial device for the hardware emulator, or 'none'")
      ->envname("GCZ_SERIAL")
      ->capture_default_str();
}

void add_log_option(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--log-level", cfg.log_level, "trace, debug, info, warn, error or off")
      ->envname("GCZ_LOG_LEVEL")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}))
      ->capture_default_str();
}

void setup_logging(const std::string& level) {
  auto logger = spdlog::get("gcz");
  if (!logger) logger = spdlog::stderr_color_mt("gcz");
  logger->set_pattern("gcz: %l: %v");
  logger->set_level(spdlog::level::from_str(level));
  spdlog::set_default_logger(logger);
}

std::unique_ptr<transport::TopicBus> make_bus(const RunConfig& cfg) {
  if (cfg.broker == "loopback") return std::make_unique<transport::LoopbackBus>();
  transport::MqttBus::Options options;
  options.broker = transport::BrokerAddress::parse(cfg.broker);
  auto bus = std::make_unique<transport::MqttBus>(options);
  bus->connect();
  return bus;
}

void flush_bus(transport::TopicBus& bus) {
  if (auto* loop = dynamic_cast<transport::LoopbackBus*>(&bus)) loop->flush();
}

void cmd_validate(const std::string& path) {
  const json doc = parse_json_file(path);
  if (doc.is_object() && (doc.contains("nodes") || doc.contains("wires"))) {
    const auto graph = pipe::graph_from_json(doc);
    for (const auto& w : graph.warnings()) spdlog::warn("{}: {}", path, w);
    return;
  }
  if (doc.is_object())
    dsl::word_from_json(doc);
  else
    dsl::sentence_from_json(doc);
}

void cmd_play(const std::string& path, const std::string& sink, const std::string& out_path,
              const std::string& device, const RunConfig& cfg) {
  const auto sentence = dsl::sentence_from_json(parse_json_file(path));
  if (sink == "pubsub") {
    const auto topic = transport::TopicAddress::for_device(device, cfg.topic_prefix);
    auto bus = make_bus(cfg);
    transport::SentencePublisher publisher(*bus);
    publisher.publish_sentence(sentence, topic);
    flush_bus(*bus);
    return;
  }
  std::unique_ptr<transport::SerialPort> port;
  if (sink == "uart") {
    if (!cfg.has_serial()) throw Error(ErrorCode::ConfigError, "uart sink needs --serial or GCZ_SERIAL");
    port = std::make_unique<transport::SerialPort>(cfg.serial);
  }
  dev::StreamSource source(sentence);
  if (sink == "loopback") {
    dev::CollectingSink collect;
    dev::run_clock(source, collect);
    spdlog::info("{} frames delivered", collect.stream.size());
  } else if (sink == "record") {
    std::ofstream file;
    if (!out_path.empty() && out_path != "-") {
      file.open(out_path, std::ios::trunc);
      if (!file) throw Error(ErrorCode::IoError, "cannot write " + out_path);
    }
    dev::RecordingSink record(file.is_open() ? static_cast<std::ostream&>(file) : std::cout);
    dev::run_clock(source, record);
  } else {
    transport::UartSink uart([&port](std::span<const std::uint8_t> bytes) { port->write(bytes); });
    dev::run_clock(source, uart);
  }
}

sigset_t shutdown_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  return set;
}

void cmd_serve(const RunConfig& cfg, bool trace_bus) {
  // Every thread started below inherits the mask, so only sigwait sees them.
  const sigset_t signals = shutdown_signals();
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  if (cfg.graph.empty()) throw Error(ErrorCode::ConfigError, "serve needs --graph or GCZ_GRAPH");
  const auto graph = pipe::load_graph(read_file(cfg.graph));
  for (const auto& w : graph.warnings()) spdlog::warn("{}: {}", cfg.graph, w);

  auto bus = make_bus(cfg);
  std::mutex print_mutex;
  std::vector<std::uint64_t> traces;
  if (trace_bus) {
    std::set<std::string> topics;
    for (const auto& node : graph.nodes())
      if (node.type == pipe::NodeType::swemu_out || node.type == pipe::NodeType::hw_emulator_out)
        topics.insert(
            transport::TopicAddress::for_device(std::get<pipe::SinkParams>(node.behavior).device, cfg.topic_prefix)
                .str());
    for (const auto& t : topics)
      traces.push_back(bus->subscribe(t, [&print_mutex](const std::string& topic, const std::string& payload) {
        std::lock_guard lock(print_mutex);
        std::cout << topic << '\t' << payload << std::endl;
      }));
  }

  runtime::EngineOptions options;
  options.topic_prefix = cfg.topic_prefix;
  if (cfg.has_serial()) options.serial_path = cfg.serial;
  options.on_error = [](const Error& e) { spdlog::error("{}", e.what()); };
  runtime::Engine engine(graph, *bus, options);
  engine.start();

  transport::WsIngestServer ws(cfg.listen, static_cast<std::uint16_t>(cfg.ws_port),
                               [&engine](transport::IngestEvent e) {
                                 spdlog::debug("ws conn {} device '{}': {} words", e.connection_id, e.device,
                                               e.sentence.size());
                                 engine.submit_ingest(e);
                               });
  transport::HttpTriggerServer http(cfg.listen, static_cast<std::uint16_t>(cfg.http_port),
                                    [&engine](const std::string& name) {
                                      spdlog::debug("trigger {}", name);
                                      engine.submit_trigger(name);
                                    });
  spdlog::info("serving {}: ws {}:{}{} http {}:{}/trigger/<name> broker {}", cfg.graph, cfg.listen, ws.port(),
               transport::kIngestPath, cfg.listen, http.port(), cfg.broker);

  int sig = 0;
  sigwait(&signals, &sig);
  spdlog::info("signal {}, shutting down", sig);
  http.stop();
  ws.stop();
  engine.drain();
  engine.stop();
  flush_bus(*bus);
  for (auto id : traces) bus->unsubscribe(id);
}

int cmd_bench(const std::string& route, std::size_t n, const std::string& format, const std::string& samples_path,
              int timeout_ms) {
  std::vector<std::string> names;
  if (route == "all")
    for (const auto& r : bench::routes()) names.push_back(r.name);
  else
    names.push_back(bench::find_route(route).name);

  bench::RunOptions options;
  options.n = n;
  options.timeout = std::chrono::milliseconds(timeout_ms);
  std::vector<bench::RouteResult> results;
  for (const auto& name : names) results.push_back(bench::run_route(name, options));

  if (!samples_path.empty()) {
    std::ofstream out(samples_path, std::ios::trunc);
    for (const auto& r : results) bench::write_sample_log(out, r.samples);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + samples_path);
  }
  std::cout << bench::emit_report(results, format == "json" ? bench::ReportFormat::json : bench::ReportFormat::text);
  bool every = true;
  for (const auto& r : results) every = every && bench::all_pass(bench::classify(r.stats, bench::ThresholdTable::standard()));
  return every ? kExitOk : kExitThresholdExceeded;
}

}  // namespace

int run(int argc, char** argv) {
  try {
    RunConfig cfg = file_defaults(argc, argv);

    CLI::App app{"Game-control remapping middleware", "gcz"};
    app.require_subcommand(1);

    auto* validate = app.add_subcommand("validate", "Check a sentence or graph config file");
    std::string validate_path;
    validate->add_option("path", validate_path, "Sentence or graph JSON file")->required();

    auto* play = app.add_subcommand("play", "Clock a sentence into a sink at 60 fps");
    std::string play_path, sink = "loopback", out_path, device = "pad0";
    play->add_option("sentence", play_path, "Sentence JSON file")->required();
    play->add_option("--sink", sink, "loopback, record, uart or pubsub")
        ->check(CLI::IsMember({"loopback", "record", "uart", "pubsub"}))
        ->capture_default_str();
    play->add_option("--out", out_path, "Frame log path for the record sink (default stdout)");
    play->add_option("--device", device, "Emulator device id for the pubsub sink")->capture_default_str();
    add_serial_option(play, cfg);
    add_broker_options(play, cfg);
    add_config_flag(play);
    add_log_option(play, cfg);

    auto* serve = app.add_subcommand("serve", "Run a graph behind the WebSocket and HTTP listeners");
    bool trace_bus = false;
    serve->add_option("--graph", cfg.graph, "Graph config file")->envname("GCZ_GRAPH")->capture_default_str();
    serve->add_option("--ws-port", cfg.ws_port, "WebSocket ingest port")
        ->envname("GCZ_WS_PORT")
        ->check(CLI::Range(1, 65535))
        ->capture_default_str();
    serve->add_option("--http-port", cfg.http_port, "HTTP trigger port")
        ->envname("GCZ_HTTP_PORT")
        ->check(CLI::Range(1, 65535))
        ->capture_default_str();
    serve->add_option("--listen", cfg.listen, "Listen address")->envname("GCZ_LISTEN")->capture_default_str();
    serve->add_flag("--trace-bus", trace_bus, "Print every emulator-topic message as <topic><TAB><payload>");
    add_serial_option(serve, cfg);
    add_broker_options(serve, cfg);
    add_config_flag(serve);
    add_log_option(serve, cfg);

    auto* bench_cmd = app.add_subcommand("bench", "Measure route latency");
    std::string route = "remap-chain", format = "text", samples_path;
    std::size_t n = 100;
    int timeout_ms = 5000;
    bool list = false;
    bench_cmd->add_option("--route", route, "Route name, or 'all'")->capture_default_str();
    bench_cmd->add_option("--n", n, "Probes per route")->envname("GCZ_N")->capture_default_str();
    bench_cmd->add_option("--format", format, "text or json")
        ->envname("GCZ_FORMAT")
        ->check(CLI::IsMember({"text", "json"}))
        ->capture_default_str();
    bench_cmd->add_option("--samples", samples_path, "Write raw samples as route,label,t_in_ns,t_out_ns");
    bench_cmd->add_option("--timeout-ms", timeout_ms, "Per-probe timeout")->check(CLI::PositiveNumber)->capture_default_str();
    bench_cmd->add_flag("--list", list, "List routes and exit");
    add_config_flag(bench_cmd);
    add_log_option(bench_cmd, cfg);

    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == 0) return app.exit(e);
      std::string msg = e.what();
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      std::cerr << "gcz: error: Usage: " << msg << "\n";
      return kExitUsage;
    }
    setup_logging(cfg.log_level);

    if (*validate) {
      cmd_validate(validate_path);
    } else if (*play) {
      cmd_play(play_path, sink, out_path, device, cfg);
    } else if (*serve) {
      cmd_serve(cfg, trace_bus);
    } else if (*bench_cmd) {
      if (list) {
        for (const auto& r : bench::routes())
          std::cout << r.name << '\t' << r.input << '\t' << r.processed_nodes << '\t' << r.emulation << '\n';
        return kExitOk;
      }
      return cmd_bench(route, n, format, samples_path, timeout_ms);
    }
    return kExitOk;
  } catch (const Error& e) {
    std::cerr << "gcz: error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "gcz: error: Internal: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace gcz::cli
