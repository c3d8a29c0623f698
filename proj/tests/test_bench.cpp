#include <doctest.h>

#include <numeric>
#include <sstream>

#include "gcz/bench.hpp"
#include "support.hpp"

using namespace gcz;
using namespace gcz::bench;
using gcz::test::error_of;

namespace {

std::vector<LatencySample> samples_from_delays(const std::vector<double>& ms) {
  std::vector<LatencySample> out;
  std::int64_t t = 1'000'000;
  for (double d : ms) {
    out.push_back({"remap-chain", "btn1", t, t + static_cast<std::int64_t>(d * 1e6)});
    t += 50'000'000;
  }
  return out;
}

std::vector<bool> passes(double mean) {
  LatencyStats s;
  s.n = 1;
  s.mean = s.p50 = s.p95 = s.max = mean;
  std::vector<bool> out;
  for (auto& v : classify(s, ThresholdTable::standard())) out.push_back(v.pass);
  return out;
}

}  // namespace

TEST_CASE("standard thresholds") {
  const auto& g = ThresholdTable::standard().groups();
  REQUIRE(g.size() == 3);
  CHECK(g[0].threshold_ms == 100);
  CHECK(g[1].threshold_ms == 500);
  CHECK(g[2].threshold_ms == 1000);
  CHECK(error_of([] { ThresholdTable({{"a", 100}, {"b", 100}}); }) == ErrorCode::ConfigError);
  CHECK(error_of([] { ThresholdTable({{"a", 500}, {"b", 100}}); }) == ErrorCode::ConfigError);
}

TEST_CASE("classification examples") {
  CHECK(passes(44) == std::vector<bool>{true, true, true});
  CHECK(passes(100) == std::vector<bool>{true, true, true});
  CHECK(passes(600) == std::vector<bool>{false, false, true});
  CHECK(passes(1000.5) == std::vector<bool>{false, false, false});
}

TEST_CASE("a lower mean never passes fewer groups") {
  for (int i = 0; i < 1000; ++i) {
    double a = test::uniform(0, 150000) / 100.0;
    double b = test::uniform(0, 150000) / 100.0;
    if (a > b) std::swap(a, b);
    auto pa = passes(a), pb = passes(b);
    for (std::size_t k = 0; k < pa.size(); ++k) CHECK((pa[k] || !pb[k]));
    // passing a group implies passing every looser group
    for (std::size_t k = 1; k < pa.size(); ++k) CHECK((pa[k] || !pa[k - 1]));
  }
}

TEST_CASE("percentiles interpolate between ranks") {
  const std::vector<double> v{1, 2, 3, 4};
  CHECK(percentile(v, 0.5) == doctest::Approx(2.5));
  CHECK(percentile(v, 0.95) == doctest::Approx(3.85));
  CHECK(percentile(v, 0.0) == 1);
  CHECK(percentile(v, 1.0) == 4);
}

TEST_CASE("stats agree with a recomputation from the sample log") {
  std::vector<double> delays;
  for (int i = 0; i < 100; ++i) delays.push_back(test::uniform(1, 5000) / 100.0);
  auto samples = samples_from_delays(delays);
  std::stringstream log;
  write_sample_log(log, samples);
  auto back = read_sample_log(log);
  REQUIRE(back.size() == samples.size());

  double sum = 0, mx = 0;
  for (auto& s : back) {
    const double d = double(s.t_out_ns - s.t_in_ns) / 1e6;
    sum += d;
    mx = std::max(mx, d);
  }
  auto stats = LatencyStats::from_samples(back);
  CHECK(stats.n == 100);
  CHECK(stats.mean == doctest::Approx(sum / 100));
  CHECK(stats.max == doctest::Approx(mx));
  CHECK(stats.p50 <= stats.p95);
  CHECK(stats.p95 <= stats.max);
}

TEST_CASE("single sample and empty sets") {
  auto one = LatencyStats::from_delays({3.5});
  CHECK(one.p50 == 3.5);
  CHECK(one.p95 == 3.5);
  CHECK(one.max == 3.5);
  CHECK(one.mean == 3.5);
  CHECK(error_of([] { LatencyStats::from_delays({}); }) == ErrorCode::Usage);
  CHECK(error_of([] { emit_report({}, ReportFormat::json); }) == ErrorCode::Usage);
}

TEST_CASE("malformed sample log lines") {
  for (const char* bad : {"remap-chain,btn1,1\n", "remap-chain,btn1,x,2\n", "a,b,5,4,extra\n"}) {
    std::istringstream in(bad);
    CHECK(error_of([&] { read_sample_log(in); }) == ErrorCode::SchemaError);
  }
}

TEST_CASE("route table") {
  CHECK(find_route("remap-chain").name == "remap-chain");
  CHECK(find_route("overall").input.size() > 0);
  CHECK(error_of([] { find_route("warp"); }) == ErrorCode::RouteUnavailable);
  CHECK(error_of([] { run_route("warp"); }) == ErrorCode::RouteUnavailable);
  CHECK(error_of([] { run_route("remap-chain", {0}); }) == ErrorCode::Usage);
}

TEST_CASE("remap-chain run and report") {
  auto r = run_route("remap-chain", {20});
  CHECK(r.stats.n == 20);
  CHECK(r.samples.size() == 20);
  for (auto& s : r.samples) CHECK(s.t_out_ns >= s.t_in_ns);
  std::vector<RouteResult> results{r};
  auto report = nlohmann::json::parse(emit_report(results, ReportFormat::json));
  std::string why;
  CHECK_MESSAGE(validate_report(report, &why), why);
  CHECK(report["schema"] == "gcz-bench-report/1");
  CHECK(report["rows"][0]["route"] == "remap-chain");
  CHECK(report["all_pass"] == true);

  auto text = emit_report(results, ReportFormat::text);
  CHECK(text.find("remap-chain") != std::string::npos);
  CHECK(text.find("Average Delay") != std::string::npos);

  auto broken = report;
  broken["schema"] = "other";
  CHECK_FALSE(validate_report(broken));
  broken = report;
  broken["rows"][0]["p50"] = broken["rows"][0]["max"].get<double>() + 1;
  CHECK_FALSE(validate_report(broken, &why));
  CHECK(!why.empty());
  broken = report;
  broken["all_pass"] = false;
  CHECK_FALSE(validate_report(broken));
}

TEST_CASE("overall route over the WebSocket ingest") {
  auto r = run_route("overall", {10});
  CHECK(r.stats.n == 10);
  CHECK(all_pass(classify(r.stats, ThresholdTable::standard())));
}
