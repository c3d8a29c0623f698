#include "gcz/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>
#include <set>

namespace gcz::pipe {

using nlohmann::json;

namespace {

[[noreturn]] void schema_error(const std::string& where, const std::string& detail) {
  throw Error(ErrorCode::SchemaError, detail, where);
}

constexpr std::array<std::pair<NodeType, std::string_view>, 14> kNodeTypes{{
    {NodeType::ws_in, "ws-in"},
    {NodeType::http_in, "http-in"},
    {NodeType::inject, "inject"},
    {NodeType::remap_button, "remap-button"},
    {NodeType::remap_dpad, "remap-dpad"},
    {NodeType::remap_ang, "remap-ang"},
    {NodeType::macro, "macro"},
    {NodeType::virtual_gamepad, "virtual-gamepad"},
    {NodeType::virtual_keyboard, "virtual-keyboard"},
    {NodeType::virtual_mouse, "virtual-mouse"},
    {NodeType::hw_emulator_out, "hw-emulator-out"},
    {NodeType::swemu_out, "swemu-out"},
    {NodeType::loopback_out, "loopback-out"},
    {NodeType::record_out, "record-out"},
}};

// --- param readers ---------------------------------------------------------

void allow_only(const json& params, std::initializer_list<std::string_view> keys, const std::string& where) {
  for (const auto& [name, _] : params.items())
    if (std::find(keys.begin(), keys.end(), name) == keys.end())
      schema_error(where + "/" + name, "unexpected parameter \"" + name + "\"");
}

// Integers may be written as JSON numbers or as decimal strings ("2").
long long read_loose_int(const json& v, const std::string& where) {
  if (v.is_number_integer()) return v.get<long long>();
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    std::size_t used = 0;
    try {
      long long x = std::stoll(s, &used);
      if (used == s.size()) return x;
    } catch (const std::exception&) {
    }
  }
  schema_error(where, "expected an integer, got " + v.dump());
}

std::vector<std::pair<int, int>> read_int_map(const json& params, const std::string& where) {
  std::vector<std::pair<int, int>> pairs;
  auto it = params.find("map");
  if (it == params.end()) return pairs;
  if (!it->is_object()) schema_error(where + "/map", "expected an object");
  for (const auto& [from, to] : it->items()) {
    const std::string at = where + "/map/" + from;
    pairs.emplace_back(static_cast<int>(read_loose_int(json(from), at)), static_cast<int>(read_loose_int(to, at)));
  }
  return pairs;
}

template <typename F>
auto as_schema_error(const std::string& where, F&& build) {
  try {
    return build();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InvariantViolation) throw;
    schema_error(where, e.detail());
  }
}

Rational read_rational(const json& v, const std::string& where) {
  if (v.is_number_integer()) return {v.get<std::int64_t>(), 1};
  if (v.is_number_float()) {
    const double x = v.get<double>();
    std::int64_t den = 1;
    while (den <= 1'000'000) {
      const double scaled = x * static_cast<double>(den);
      if (std::isfinite(scaled) && std::abs(scaled - std::round(scaled)) < 1e-9 && std::abs(scaled) < 1e12)
        return {static_cast<std::int64_t>(std::llround(scaled)), den};
      den *= 10;
    }
    schema_error(where, "scale " + v.dump() + " is not a short decimal; write it as \"num/den\"");
  }
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    const auto slash = s.find('/');
    const json num = s.substr(0, slash);
    const json den = slash == std::string::npos ? json("1") : json(s.substr(slash + 1));
    Rational r{read_loose_int(num, where), read_loose_int(den, where)};
    if (r.den <= 0) schema_error(where, "denominator must be positive");
    return r;
  }
  schema_error(where, "expected a number or \"num/den\", got " + v.dump());
}

template <typename T, typename F>
std::array<T, 4> read_per_axis(const json& params, const char* key, T fallback, const std::string& where,
                               F&& read_one) {
  std::array<T, 4> out;
  out.fill(fallback);
  auto it = params.find(key);
  if (it == params.end()) return out;
  const std::string at = where + "/" + key;
  if (it->is_array()) {
    if (it->size() != 4) schema_error(at, "expected 4 per-axis values");
    for (std::size_t i = 0; i < 4; ++i) out[i] = read_one((*it)[i], at + "/" + std::to_string(i));
  } else {
    out.fill(read_one(*it, at));
  }
  return out;
}

NodeBehavior parse_behavior(NodeType type, const json& params, const std::string& where) {
  switch (type) {
    case NodeType::ws_in:
    case NodeType::http_in:
    case NodeType::inject:
    case NodeType::loopback_out:
      allow_only(params, {}, where);
      return NoParams{};
    case NodeType::remap_button: {
      allow_only(params, {"map", "policy"}, where);
      auto policy = ButtonMapping::Unmapped::pass;
      if (auto it = params.find("policy"); it != params.end()) {
        if (*it == "drop")
          policy = ButtonMapping::Unmapped::drop;
        else if (*it != "pass")
          schema_error(where + "/policy", "policy must be \"pass\" or \"drop\"");
      }
      auto pairs = read_int_map(params, where);
      return as_schema_error(where + "/map", [&] { return ButtonMapping::from_pairs(pairs, policy); });
    }
    case NodeType::remap_dpad: {
      allow_only(params, {"map"}, where);
      auto pairs = read_int_map(params, where);
      return as_schema_error(where + "/map", [&] { return DpadMapping::from_pairs(pairs); });
    }
    case NodeType::remap_ang: {
      allow_only(params, {"scale", "offset", "perm"}, where);
      auto scale = read_per_axis<Rational>(params, "scale", Rational{}, where, read_rational);
      auto offset = read_per_axis<std::int64_t>(params, "offset", 0, where, [](const json& v, const std::string& at) {
        auto x = read_loose_int(v, at);
        if (x < -254 || x > 254) schema_error(at, "offset outside -254..254");
        return static_cast<std::int64_t>(x);
      });
      for (auto& s : scale)
        if (std::abs(s.num) > 1'000'000'000 || s.den > 1'000'000'000) schema_error(where + "/scale", "scale too large");
      std::array<int, 4> perm{0, 1, 2, 3};
      if (auto it = params.find("perm"); it != params.end()) {
        if (!it->is_array() || it->size() != 4) schema_error(where + "/perm", "expected 4 axis indices");
        for (std::size_t i = 0; i < 4; ++i)
          perm[i] = static_cast<int>(read_loose_int((*it)[i], where + "/perm/" + std::to_string(i)));
      }
      return as_schema_error(where, [&] { return AngTransform::make(scale, offset, perm); });
    }
    case NodeType::macro: {
      allow_only(params, {"triggers"}, where);
      auto it = params.find("triggers");
      if (it == params.end() || !it->is_object()) schema_error(where + "/triggers", "expected an object of sentences");
      MacroTable table;
      for (const auto& [name, sentence] : it->items()) {
        try {
          table.emplace(name, dsl::sentence_from_json(sentence));
        } catch (const Error& e) {
          throw e.nested(where + "/triggers/" + name);
        }
      }
      return table;
    }
    case NodeType::virtual_gamepad:
    case NodeType::virtual_keyboard:
    case NodeType::virtual_mouse: {
      const auto kind = type == NodeType::virtual_gamepad  ? dsl::DeviceKind::gamepad
                        : type == NodeType::virtual_mouse ? dsl::DeviceKind::mouse
                                                          : dsl::DeviceKind::keyboard;
      try {
        return ControlSentence::from_words({dsl::word_from_json(params, kind)});
      } catch (const Error& e) {
        // Stray fields are a schema problem for node params.
        if (e.code() == ErrorCode::AmbiguousKind) schema_error(where + e.where(), e.detail());
        throw e.nested(where);
      }
    }
    case NodeType::hw_emulator_out:
    case NodeType::swemu_out:
    case NodeType::record_out: {
      SinkParams sink;
      if (type == NodeType::record_out) {
        allow_only(params, {"path"}, where);
      } else {
        allow_only(params, {"device"}, where);
        sink.device = type == NodeType::hw_emulator_out ? "hw0" : "pad0";
      }
      if (auto it = params.find("device"); it != params.end()) {
        if (!it->is_string() || it->get_ref<const std::string&>().empty())
          schema_error(where + "/device", "expected a non-empty device id");
        sink.device = it->get<std::string>();
      }
      if (auto it = params.find("path"); it != params.end()) {
        if (!it->is_string()) schema_error(where + "/path", "expected a file path");
        sink.path = it->get<std::string>();
      }
      return sink;
    }
  }
  return NoParams{};
}

int read_port(const json& v, const std::string& where) {
  if (v.is_number_integer() || v.is_string()) {
    try {
      return static_cast<int>(read_loose_int(v, where));
    } catch (const Error&) {
    }
  }
  schema_error(where, "port must be an integer");
}

bool has_output(NodeType t) { return role_of(t) != NodeRole::sink; }
bool has_input(NodeType t) { return role_of(t) != NodeRole::source; }

}  // namespace

// --- remap primitives -------------------------------------------------------

ButtonMapping ButtonMapping::from_pairs(const std::vector<std::pair<int, int>>& pairs, Unmapped policy) {
  ButtonMapping m;
  m.policy_ = policy;
  for (auto [from, to] : pairs) {
    if (!dsl::GamepadButtons::in_range(from) || !dsl::GamepadButtons::in_range(to))
      throw Error(ErrorCode::InvariantViolation,
                  "button mapping " + std::to_string(from) + "->" + std::to_string(to) + " outside 1..16");
    if (m.target_[static_cast<std::size_t>(from)] != 0)
      throw Error(ErrorCode::InvariantViolation, "button " + std::to_string(from) + " mapped twice");
    m.target_[static_cast<std::size_t>(from)] = static_cast<std::uint8_t>(to);
  }
  if (policy == Unmapped::pass) {
    std::set<int> domain, image;
    for (int b = 1; b <= 16; ++b) {
      if (m.target_[static_cast<std::size_t>(b)] == 0) continue;
      domain.insert(b);
      image.insert(m.target_[static_cast<std::size_t>(b)]);
    }
    if (domain != image)
      throw Error(ErrorCode::InvariantViolation,
                  "with policy \"pass\" the map must permute its own buttons, or pressed buttons would collide");
  }
  return m;
}

std::optional<int> ButtonMapping::target(int button) const {
  if (!dsl::GamepadButtons::in_range(button)) return std::nullopt;
  int t = target_[static_cast<std::size_t>(button)];
  if (t == 0) return std::nullopt;
  return t;
}

dsl::GamepadButtons ButtonMapping::apply(dsl::GamepadButtons buttons) const {
  dsl::GamepadButtons out;
  for (int b = 1; b <= 16; ++b) {
    if (!buttons.contains(b)) continue;
    if (auto t = target(b))
      out.insert(*t);
    else if (policy_ == Unmapped::pass)
      out.insert(b);
  }
  return out;
}

DpadMapping::DpadMapping() {
  for (std::size_t i = 0; i < table_.size(); ++i) table_[i] = static_cast<dsl::Dpad>(i);
}

DpadMapping DpadMapping::from_pairs(const std::vector<std::pair<int, int>>& pairs) {
  DpadMapping m;
  std::set<int> seen;
  for (auto [from, to] : pairs) {
    if (!dsl::valid_dpad(from) || !dsl::valid_dpad(to))
      throw Error(ErrorCode::InvariantViolation,
                  "direction mapping " + std::to_string(from) + "->" + std::to_string(to) + " outside 1..9");
    if (!seen.insert(from).second)
      throw Error(ErrorCode::InvariantViolation, "direction " + std::to_string(from) + " mapped twice");
    if (from == 5 && to != 5) throw Error(ErrorCode::InvariantViolation, "neutral (5) must map to 5");
    m.table_[static_cast<std::size_t>(from)] = static_cast<dsl::Dpad>(to);
  }
  return m;
}

DpadMapping DpadMapping::horizontal_mirror() {
  return from_pairs({{1, 3}, {3, 1}, {4, 6}, {6, 4}, {7, 9}, {9, 7}});
}

AngTransform::AngTransform() = default;

AngTransform AngTransform::make(std::array<Rational, 4> scale, std::array<std::int64_t, 4> offset,
                                std::array<int, 4> perm) {
  auto sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  if (sorted != std::array<int, 4>{0, 1, 2, 3})
    throw Error(ErrorCode::InvariantViolation, "perm must be a permutation of 0..3");
  for (const auto& s : scale)
    if (s.den <= 0) throw Error(ErrorCode::InvariantViolation, "scale denominator must be positive");
  AngTransform t;
  t.scale_ = scale;
  t.offset_ = offset;
  t.perm_ = perm;
  return t;
}

std::int64_t round_ratio(std::int64_t num, std::int64_t den) {
  if (num >= 0) return (2 * num + den) / (2 * den);
  return -((-2 * num + den) / (2 * den));
}

dsl::Axes AngTransform::apply(const dsl::Axes& ang) const {
  dsl::Axes out{};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto j = static_cast<std::size_t>(perm_[i]);
    const Rational& s = scale_[j];
    const std::int64_t v = round_ratio(s.num * ang[j] + offset_[j] * s.den, s.den);
    out[i] = static_cast<std::int8_t>(std::clamp<std::int64_t>(v, dsl::kAxisMin, dsl::kAxisMax));
  }
  return out;
}

GamepadWord remap_button(const GamepadWord& word, const ButtonMapping& m) {
  GamepadWord out = word;
  out.btn = m.apply(word.btn);
  return out;
}

GamepadWord remap_dpad(const GamepadWord& word, const DpadMapping& m) {
  GamepadWord out = word;
  out.dpad = m.apply(word.dpad);
  return out;
}

GamepadWord remap_ang(const GamepadWord& word, const AngTransform& t) {
  GamepadWord out = word;
  out.ang = t.apply(word.ang);
  return out;
}

ControlSentence fire_macro(std::string_view trigger, const MacroTable& table) {
  auto it = table.find(trigger);
  if (it == table.end()) throw Error(ErrorCode::UnknownTrigger, "no macro named \"" + std::string(trigger) + "\"");
  return it->second;
}

std::string serialize_message(const Message& message) {
  if (const auto* s = std::get_if<ControlSentence>(&message)) return dsl::serialize_sentence(*s);
  return json{{"trigger", std::get<Trigger>(message).name}}.dump();
}

// --- node types -------------------------------------------------------------

std::string_view to_string(NodeType type) {
  for (auto [t, name] : kNodeTypes)
    if (t == type) return name;
  return "unknown";
}

std::optional<NodeType> node_type_from_string(std::string_view name) {
  for (auto [t, n] : kNodeTypes)
    if (n == name) return t;
  return std::nullopt;
}

NodeRole role_of(NodeType type) {
  switch (type) {
    case NodeType::ws_in:
    case NodeType::http_in:
    case NodeType::inject: return NodeRole::source;
    case NodeType::hw_emulator_out:
    case NodeType::swemu_out:
    case NodeType::loopback_out:
    case NodeType::record_out: return NodeRole::sink;
    default: return NodeRole::transform;
  }
}

// --- graph ------------------------------------------------------------------

const NodeSpec* NodeGraph::find(std::string_view id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &nodes_[it->second];
}

std::vector<std::string> NodeGraph::ids_of(NodeRole role) const {
  std::vector<std::string> out;
  for (const auto& n : nodes_)
    if (role_of(n.type) == role) out.push_back(n.id);
  return out;
}

std::vector<std::string> NodeGraph::ids_of(NodeType type) const {
  std::vector<std::string> out;
  for (const auto& n : nodes_)
    if (n.type == type) out.push_back(n.id);
  return out;
}

NodeGraph load_graph(std::string_view config_text) {
  json config;
  try {
    config = json::parse(config_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::MalformedJson, e.what());
  }
  return graph_from_json(config);
}

NodeGraph graph_from_json(const json& config) {
  if (!config.is_object()) schema_error("", "graph config must be a JSON object");
  allow_only(config, {"nodes", "wires", "name"}, "");
  NodeGraph g;

  const json empty = json::array();
  const json& nodes = config.contains("nodes") ? config["nodes"] : empty;
  const json& wires = config.contains("wires") ? config["wires"] : empty;
  if (!nodes.is_array()) schema_error("/nodes", "expected an array");
  if (!wires.is_array()) schema_error("/wires", "expected an array");

  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string where = "/nodes/" + std::to_string(i);
    const json& n = nodes[i];
    if (!n.is_object()) schema_error(where, "expected a node object");
    allow_only(n, {"id", "type", "params", "name"}, where);
    if (!n.contains("id") || !n["id"].is_string() || n["id"].get_ref<const std::string&>().empty())
      schema_error(where + "/id", "node id must be a non-empty string");
    if (!n.contains("type") || !n["type"].is_string()) schema_error(where + "/type", "node type must be a string");
    NodeSpec spec;
    spec.id = n["id"].get<std::string>();
    auto type = node_type_from_string(n["type"].get_ref<const std::string&>());
    if (!type) throw Error(ErrorCode::UnknownNodeType, "unknown node type " + n["type"].dump(), where + "/type");
    spec.type = *type;
    spec.params = n.value("params", json::object());
    if (!spec.params.is_object()) schema_error(where + "/params", "params must be an object");
    spec.behavior = parse_behavior(spec.type, spec.params, where + "/params");
    if (g.index_.count(spec.id)) schema_error(where + "/id", "duplicate node id \"" + spec.id + "\"");
    g.index_.emplace(spec.id, g.nodes_.size());
    g.nodes_.push_back(std::move(spec));
  }

  g.out_.resize(g.nodes_.size());
  std::vector<std::vector<std::size_t>> adj(g.nodes_.size());
  for (std::size_t i = 0; i < wires.size(); ++i) {
    const std::string where = "/wires/" + std::to_string(i);
    const json& w = wires[i];
    if (!w.is_array() || w.size() != 4 || !w[0].is_string() || !w[2].is_string())
      schema_error(where, "wire must be [fromId, fromPort, toId, toPort]");
    Wire wire{w[0].get<std::string>(), read_port(w[1], where + "/1"), w[2].get<std::string>(),
              read_port(w[3], where + "/3")};
    const NodeSpec* from = g.find(wire.from);
    const NodeSpec* to = g.find(wire.to);
    if (!from) throw Error(ErrorCode::DanglingWire, "no node \"" + wire.from + "\"", where + "/0");
    if (!to) throw Error(ErrorCode::DanglingWire, "no node \"" + wire.to + "\"", where + "/2");
    if (wire.from_port != 0 || !has_output(from->type))
      throw Error(ErrorCode::DanglingWire,
                  "\"" + wire.from + "\" has no output port " + std::to_string(wire.from_port), where + "/1");
    if (wire.to_port != 0 || !has_input(to->type))
      throw Error(ErrorCode::DanglingWire, "\"" + wire.to + "\" has no input port " + std::to_string(wire.to_port),
                  where + "/3");
    const std::size_t a = g.index_.at(wire.from), b = g.index_.at(wire.to);
    g.out_[a].push_back(g.wires_.size());
    adj[a].push_back(b);
    g.wires_.push_back(std::move(wire));
  }

  // Cycle check by DFS; report the first cycle found.
  std::vector<int> color(g.nodes_.size(), 0);
  std::vector<std::size_t> path;
  std::function<void(std::size_t)> visit = [&](std::size_t u) {
    color[u] = 1;
    path.push_back(u);
    for (std::size_t v : adj[u]) {
      if (color[v] == 1) {
        std::string cycle;
        auto start = std::find(path.begin(), path.end(), v);
        for (auto it = start; it != path.end(); ++it) cycle += g.nodes_[*it].id + " -> ";
        cycle += g.nodes_[v].id;
        throw Error(ErrorCode::CycleDetected, cycle, "/wires");
      }
      if (color[v] == 0) visit(v);
    }
    path.pop_back();
    color[u] = 2;
  };
  for (std::size_t u = 0; u < g.nodes_.size(); ++u)
    if (color[u] == 0) visit(u);

  // Kahn's algorithm, smallest declaration index first.
  std::vector<int> indegree(g.nodes_.size(), 0);
  for (const auto& edges : adj)
    for (std::size_t v : edges) ++indegree[v];
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t u = 0; u < g.nodes_.size(); ++u)
    if (indegree[u] == 0) ready.push(u);
  while (!ready.empty()) {
    std::size_t u = ready.top();
    ready.pop();
    g.topo_.push_back(u);
    for (std::size_t v : adj[u])
      if (--indegree[v] == 0) ready.push(v);
  }

  // Reachability of sinks from any source.
  std::vector<bool> reached(g.nodes_.size(), false);
  for (std::size_t u : g.topo_) {
    if (role_of(g.nodes_[u].type) == NodeRole::source) reached[u] = true;
    if (reached[u])
      for (std::size_t v : adj[u]) reached[v] = true;
  }
  bool any_sink = false;
  for (std::size_t u = 0; u < g.nodes_.size(); ++u) {
    if (role_of(g.nodes_[u].type) != NodeRole::sink) continue;
    any_sink = true;
    if (!reached[u]) g.warnings_.push_back("UnreachableSink: " + g.nodes_[u].id);
  }
  if (!any_sink) g.warnings_.push_back("NoSinks");
  return g;
}

namespace {

// Output of one node for one inbound message; nullopt drops the message.
std::optional<Message> run_node(const NodeSpec& node, const Message& in) {
  const auto* sentence = std::get_if<ControlSentence>(&in);
  auto map_gamepad = [&](auto&& f) -> std::optional<Message> {
    if (!sentence || sentence->kind() != dsl::DeviceKind::gamepad) return in;
    std::vector<dsl::ControlWord> words;
    words.reserve(sentence->size());
    for (const auto& w : *sentence) words.emplace_back(f(std::get<GamepadWord>(w)));
    return ControlSentence::from_words(std::move(words));
  };
  switch (node.type) {
    case NodeType::remap_button:
      return map_gamepad([&](const GamepadWord& w) { return remap_button(w, std::get<ButtonMapping>(node.behavior)); });
    case NodeType::remap_dpad:
      return map_gamepad([&](const GamepadWord& w) { return remap_dpad(w, std::get<DpadMapping>(node.behavior)); });
    case NodeType::remap_ang:
      return map_gamepad([&](const GamepadWord& w) { return remap_ang(w, std::get<AngTransform>(node.behavior)); });
    case NodeType::macro: {
      const auto* trigger = std::get_if<Trigger>(&in);
      if (!trigger) return in;
      const auto& table = std::get<MacroTable>(node.behavior);
      if (table.find(trigger->name) == table.end()) return std::nullopt;
      return fire_macro(trigger->name, table);
    }
    case NodeType::virtual_gamepad:
    case NodeType::virtual_keyboard:
    case NodeType::virtual_mouse: return std::get<ControlSentence>(node.behavior);
    default: return in;
  }
}

}  // namespace

std::vector<SinkOutput> step_graph(const NodeGraph& graph, std::string_view source_id, const Message& message) {
  auto it = graph.index_.find(source_id);
  if (it == graph.index_.end() || role_of(graph.nodes_[it->second].type) != NodeRole::source)
    throw Error(ErrorCode::UnknownSource, "\"" + std::string(source_id) + "\" is not a source node");

  std::vector<std::vector<Message>> inbox(graph.nodes_.size());
  inbox[it->second].push_back(message);
  std::vector<SinkOutput> out;
  for (std::size_t u : graph.topo_) {
    if (inbox[u].empty()) continue;
    const NodeSpec& node = graph.nodes_[u];
    if (role_of(node.type) == NodeRole::sink) {
      for (auto& m : inbox[u]) out.push_back({node.id, std::move(m)});
      continue;
    }
    std::vector<Message> produced;
    for (const auto& m : inbox[u])
      if (auto r = run_node(node, m)) produced.push_back(std::move(*r));
    for (std::size_t w : graph.out_[u]) {
      const std::size_t target = graph.index_.find(graph.wires_[w].to)->second;
      for (const auto& m : produced) inbox[target].push_back(m);
    }
    inbox[u].clear();
  }
  return out;
}

}  // namespace gcz::pipe
