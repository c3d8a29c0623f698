#pragma once

// Declarative node graph routing control messages from sources through
// remap/macro nodes to sinks.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "gcz/dsl4gc.hpp"

namespace gcz::pipe {

using dsl::ControlSentence;
using dsl::GamepadWord;

/// Partial button map {1..16} -> {1..16}. With the pass policy, unmapped
/// buttons go through unchanged, so the map must permute its own domain
/// (otherwise a mapped and an unmapped button could collide).
class ButtonMapping {
 public:
  enum class Unmapped { pass, drop };

  ButtonMapping() = default;  // identity
  /// Throws InvariantViolation on out-of-range buttons, a button mapped twice,
  /// or a pass-policy map that is not a permutation of its domain.
  static ButtonMapping from_pairs(const std::vector<std::pair<int, int>>& pairs, Unmapped policy);

  std::optional<int> target(int button) const;
  Unmapped policy() const { return policy_; }
  dsl::GamepadButtons apply(dsl::GamepadButtons buttons) const;

 private:
  std::array<std::uint8_t, 17> target_{};  // 0 = unmapped
  Unmapped policy_ = Unmapped::pass;
};

/// Total direction map with neutral fixed.
class DpadMapping {
 public:
  DpadMapping();  // identity
  /// Unlisted directions map to themselves. Throws InvariantViolation if 5 is
  /// sent anywhere but 5, or a direction is listed twice.
  static DpadMapping from_pairs(const std::vector<std::pair<int, int>>& pairs);
  /// Left/right mirror: 1<->3, 4<->6, 7<->9.
  static DpadMapping horizontal_mirror();

  dsl::Dpad apply(dsl::Dpad d) const { return table_[static_cast<std::size_t>(d)]; }

 private:
  std::array<dsl::Dpad, 10> table_{};
};

struct Rational {
  std::int64_t num = 1;
  std::int64_t den = 1;

  friend bool operator==(const Rational&, const Rational&) = default;
};

/// Output axis i reads input axis perm[i] = j and computes
/// clamp(round(scale[j] * ang[j] + offset[j]), -127, 127), rounding half away
/// from zero.
class AngTransform {
 public:
  AngTransform();  // identity
  /// Throws InvariantViolation if perm is not a permutation of {0..3} or a
  /// denominator is not positive.
  static AngTransform make(std::array<Rational, 4> scale, std::array<std::int64_t, 4> offset,
                           std::array<int, 4> perm);

  dsl::Axes apply(const dsl::Axes& ang) const;

 private:
  std::array<Rational, 4> scale_{};
  std::array<std::int64_t, 4> offset_{};
  std::array<int, 4> perm_{0, 1, 2, 3};
};

/// Round half away from zero of num / den (den > 0).
std::int64_t round_ratio(std::int64_t num, std::int64_t den);

GamepadWord remap_button(const GamepadWord& word, const ButtonMapping& m);
GamepadWord remap_dpad(const GamepadWord& word, const DpadMapping& m);
GamepadWord remap_ang(const GamepadWord& word, const AngTransform& t);

using MacroTable = std::map<std::string, ControlSentence, std::less<>>;

/// Copy of the named sentence; throws UnknownTrigger.
ControlSentence fire_macro(std::string_view trigger, const MacroTable& table);

/// Named event, e.g. from GET /trigger/<name>.
struct Trigger {
  std::string name;

  friend bool operator==(const Trigger&, const Trigger&) = default;
};

using Message = std::variant<ControlSentence, Trigger>;

/// Sentences serialize canonically; triggers as {"trigger":"<name>"}.
std::string serialize_message(const Message& message);

enum class NodeType {
  ws_in,
  http_in,
  inject,
  remap_button,
  remap_dpad,
  remap_ang,
  macro,
  virtual_gamepad,
  virtual_keyboard,
  virtual_mouse,
  hw_emulator_out,
  swemu_out,
  loopback_out,
  record_out,
};

enum class NodeRole { source, transform, sink };

std::string_view to_string(NodeType type);
std::optional<NodeType> node_type_from_string(std::string_view name);
NodeRole role_of(NodeType type);

struct SinkParams {
  /// Emulator device id; the bus topic is <prefix>/<device>.
  std::string device;
  /// record-out: frame log path (empty = in-memory only).
  std::string path;
};

struct NoParams {};

using NodeBehavior =
    std::variant<NoParams, ButtonMapping, DpadMapping, AngTransform, MacroTable, ControlSentence, SinkParams>;

struct NodeSpec {
  std::string id;
  NodeType type;
  nlohmann::json params;
  NodeBehavior behavior;
};

struct Wire {
  std::string from;
  int from_port = 0;
  std::string to;
  int to_port = 0;
};

struct SinkOutput {
  std::string sink_id;
  Message message;

  friend bool operator==(const SinkOutput&, const SinkOutput&) = default;
};

/// Immutable, validated, acyclic graph.
class NodeGraph {
 public:
  const std::vector<NodeSpec>& nodes() const { return nodes_; }
  const std::vector<Wire>& wires() const { return wires_; }
  /// Non-fatal findings, e.g. "NoSinks" or "UnreachableSink: <id>".
  const std::vector<std::string>& warnings() const { return warnings_; }

  const NodeSpec* find(std::string_view id) const;
  std::vector<std::string> ids_of(NodeRole role) const;
  std::vector<std::string> ids_of(NodeType type) const;

 private:
  friend NodeGraph graph_from_json(const nlohmann::json& config);

  std::vector<NodeSpec> nodes_;
  std::vector<Wire> wires_;
  std::vector<std::string> warnings_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::vector<std::size_t> topo_;
  std::vector<std::vector<std::size_t>> out_;  // node -> wire indices, declaration order

  friend std::vector<SinkOutput> step_graph(const NodeGraph&, std::string_view, const Message&);
};

/// Errors: MalformedJson, SchemaError, UnknownNodeType, DanglingWire,
/// CycleDetected. Locations are JSON pointers into the config.
NodeGraph load_graph(std::string_view config_text);
NodeGraph graph_from_json(const nlohmann::json& config);

/// Propagates one inbound message in topological order (ties broken by node
/// declaration order); fan-out follows wire declaration order. Throws
/// UnknownSource if source_id is not a source node.
std::vector<SinkOutput> step_graph(const NodeGraph& graph, std::string_view source_id, const Message& message);

}  // namespace gcz::pipe
