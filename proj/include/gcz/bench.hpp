#pragma once

// Latency harness: sequential single-button probes through a route, delay
// statistics, and classification against game-genre delay thresholds.

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace gcz::bench {

struct LatencySample {
  std::string route;
  std::string label;
  std::int64_t t_in_ns = 0;
  std::int64_t t_out_ns = 0;

  double delay_ms() const { return static_cast<double>(t_out_ns - t_in_ns) / 1e6; }
};

struct LatencyStats {
  std::size_t n = 0;
  double mean = 0;
  double p50 = 0;
  double p95 = 0;
  double max = 0;

  /// Throws Usage for an empty sample set.
  static LatencyStats from_delays(std::vector<double> delays_ms);
  static LatencyStats from_samples(std::span<const LatencySample> samples);
};

/// Linear interpolation between closest ranks; q in [0, 1]. `sorted` must be
/// non-empty and ascending.
double percentile(std::span<const double> sorted, double q);

struct ThresholdGroup {
  std::string label;
  double threshold_ms = 0;
};

class ThresholdTable {
 public:
  /// Throws ConfigError unless thresholds are strictly increasing.
  explicit ThresholdTable(std::vector<ThresholdGroup> groups);
  /// avatar-first-person 100 ms, avatar-third-person 500 ms, omnipresent 1000 ms.
  static ThresholdTable standard();

  const std::vector<ThresholdGroup>& groups() const { return groups_; }

 private:
  std::vector<ThresholdGroup> groups_;
};

struct Verdict {
  std::string group;
  double threshold_ms = 0;
  bool pass = false;
};

/// Pass iff mean <= threshold.
std::vector<Verdict> classify(const LatencyStats& stats, const ThresholdTable& table);
bool all_pass(const std::vector<Verdict>& verdicts);

struct RouteInfo {
  std::string name;
  /// Report columns.
  std::string input;
  std::string processed_nodes;
  std::string emulation;
};

/// Known routes, in report order.
const std::vector<RouteInfo>& routes();
/// Throws RouteUnavailable.
const RouteInfo& find_route(std::string_view name);

struct RunOptions {
  std::size_t n = 100;
  std::chrono::milliseconds timeout{5000};
};

struct RouteResult {
  RouteInfo route;
  LatencyStats stats;
  std::vector<LatencySample> samples;
};

/// Injects `n` probes one at a time, each after the previous one was
/// observed. Throws Usage (n = 0), RouteUnavailable, Timeout.
RouteResult run_route(std::string_view name, const RunOptions& options = {});

enum class ReportFormat { text, json };

/// Throws Usage for an empty result list.
std::string emit_report(std::span<const RouteResult> results, ReportFormat format,
                        const ThresholdTable& table = ThresholdTable::standard());

/// Checks a parsed JSON report against the fixed report schema; on failure
/// `why` names the first offending location.
bool validate_report(const nlohmann::json& report, std::string* why = nullptr);

/// Line format: `route,label,t_in_ns,t_out_ns`.
void write_sample_log(std::ostream& out, std::span<const LatencySample> samples);
/// Throws SchemaError on a malformed line.
std::vector<LatencySample> read_sample_log(std::istream& in);

}  // namespace gcz::bench
