#include "gcz/dsl4gc.hpp"

#include <algorithm>
#include <limits>

namespace gcz::dsl {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 60> kKeyNames = {
    "a",     "b",     "c",      "d",         "e",    "f",    "g",    "h",     "i",     "j",     "k",   "l",
    "m",     "n",     "o",      "p",         "q",    "r",    "s",    "t",     "u",     "v",     "w",   "x",
    "y",     "z",     "0",      "1",         "2",    "3",    "4",    "5",     "6",     "7",     "8",   "9",
    "f1",    "f2",    "f3",     "f4",        "f5",   "f6",   "f7",   "f8",    "f9",    "f10",   "f11", "f12",
    "enter", "space", "tab",    "escape",    "backspace",    "up",   "down",  "left",  "right", "shift",
    "ctrl",  "alt",
};
static_assert(kKeyNames.size() == static_cast<std::size_t>(KeySet::last));

[[noreturn]] void violation(const std::string& where, const std::string& detail) {
  throw Error(ErrorCode::InvariantViolation, detail, where);
}

long long read_int(const json& v, const std::string& where) {
  if (v.is_number_unsigned()) {
    auto u = v.get<std::uint64_t>();
    if (u > static_cast<std::uint64_t>(std::numeric_limits<long long>::max()))
      violation(where, "integer " + v.dump() + " out of range");
    return static_cast<long long>(u);
  }
  if (v.is_number_integer()) return v.get<long long>();
  violation(where, "expected an integer, got " + v.dump());
}

long long read_ranged(const json& v, const std::string& where, long long lo, long long hi) {
  long long x = read_int(v, where);
  if (x < lo || x > hi)
    violation(where, std::to_string(x) + " outside " + std::to_string(lo) + ".." + std::to_string(hi));
  return x;
}

const json& read_array(const json& v, const std::string& where) {
  if (!v.is_array()) violation(where, "expected an array, got " + v.dump());
  return v;
}

template <typename Set>
Set read_index_set(const json& v, const std::string& where) {
  read_array(v, where);
  Set s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::string at = where + "/" + std::to_string(i);
    int idx = static_cast<int>(read_ranged(v[i], at, Set::first, Set::last));
    if (s.contains(idx)) violation(at, "duplicate index " + std::to_string(idx));
    s.insert(idx);
  }
  return s;
}

template <std::size_t N>
std::array<std::int8_t, N> read_axes(const json& v, const std::string& where) {
  read_array(v, where);
  if (v.size() != N)
    violation(where, "expected exactly " + std::to_string(N) + " values, got " + std::to_string(v.size()));
  std::array<std::int8_t, N> out{};
  for (std::size_t i = 0; i < N; ++i)
    out[i] = static_cast<std::int8_t>(read_ranged(v[i], where + "/" + std::to_string(i), kAxisMin, kAxisMax));
  return out;
}

KeySet read_keys(const json& v, const std::string& where) {
  read_array(v, where);
  KeySet s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::string at = where + "/" + std::to_string(i);
    if (!v[i].is_string()) violation(at, "expected a key name, got " + v[i].dump());
    auto code = key_code(v[i].get<std::string>());
    if (!code) violation(at, "unknown key name " + v[i].dump());
    if (s.contains(*code)) violation(at, "duplicate key " + v[i].dump());
    s.insert(*code);
  }
  if (s.size() > kMaxKeys)
    violation(where, std::to_string(s.size()) + " keys exceed the rollover limit of " + std::to_string(kMaxKeys));
  return s;
}

int read_duration(const json& obj) {
  auto it = obj.find("dur");
  if (it == obj.end()) return 1;
  long long d = read_int(*it, "/dur");
  if (d != kHold && (d < 1 || d > kMaxDuration))
    violation("/dur", std::to_string(d) + " is neither -1 nor within 1.." + std::to_string(kMaxDuration));
  return static_cast<int>(d);
}

std::span<const std::string_view> fields_of(DeviceKind kind) {
  static constexpr std::array<std::string_view, 4> gamepad{"dpad", "btn", "dur", "ang"};
  static constexpr std::array<std::string_view, 3> mouse{"btn", "mov", "dur"};
  static constexpr std::array<std::string_view, 3> keyboard{"key", "mod", "dur"};
  switch (kind) {
    case DeviceKind::gamepad: return gamepad;
    case DeviceKind::mouse: return mouse;
    case DeviceKind::keyboard: return keyboard;
  }
  return {};
}

DeviceKind infer_kind(const json& obj, std::optional<DeviceKind> forced) {
  std::vector<DeviceKind> found;
  if (obj.contains("dpad")) found.push_back(DeviceKind::gamepad);
  if (obj.contains("mov")) found.push_back(DeviceKind::mouse);
  if (obj.contains("key")) found.push_back(DeviceKind::keyboard);

  DeviceKind kind;
  if (forced) {
    kind = *forced;
    for (auto k : found)
      if (k != kind)
        throw Error(ErrorCode::AmbiguousKind,
                    "expected a " + std::string(to_string(kind)) + " word but found " +
                        std::string(to_string(k)) + " fields");
  } else if (found.size() == 1) {
    kind = found.front();
  } else if (found.empty()) {
    throw Error(ErrorCode::AmbiguousKind, "object has none of \"dpad\", \"mov\", \"key\"");
  } else {
    throw Error(ErrorCode::AmbiguousKind, "object matches more than one device kind");
  }

  auto allowed = fields_of(kind);
  for (const auto& [name, _] : obj.items())
    if (std::find(allowed.begin(), allowed.end(), name) == allowed.end())
      throw Error(ErrorCode::AmbiguousKind,
                  "field \"" + name + "\" does not belong to a " + std::string(to_string(kind)) + " word",
                  "/" + name);
  return kind;
}

template <typename T, typename F>
void if_present(const json& obj, const char* name, T& out, F&& read) {
  if (auto it = obj.find(name); it != obj.end()) out = read(*it, std::string("/") + name);
}

void append_indices(std::string& out, const std::vector<int>& idx) {
  out += '[';
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(idx[i]);
  }
  out += ']';
}

template <std::size_t N>
void append_axes(std::string& out, const std::array<std::int8_t, N>& v) {
  out += '[';
  for (std::size_t i = 0; i < N; ++i) {
    if (i) out += ',';
    out += std::to_string(static_cast<int>(v[i]));
  }
  out += ']';
}

json parse_json(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::MalformedJson, e.what());
  }
}

// Little-endian byte helpers for the binary records.
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}
void put_i8(std::vector<std::uint8_t>& out, std::int8_t v) { out.push_back(static_cast<std::uint8_t>(v)); }
std::int8_t get_i8(std::span<const std::uint8_t> b, std::size_t at) { return static_cast<std::int8_t>(b[at]); }

std::string record_where(std::size_t index, const char* field) {
  return "/" + std::to_string(index) + "/" + field;
}

int decode_duration(std::span<const std::uint8_t> rec, std::size_t at, std::size_t index) {
  int dur = static_cast<std::int16_t>(get_u16(rec, at));
  if (!valid_duration(dur))
    violation(record_where(index, "dur"), std::to_string(dur) + " is not a valid duration");
  return dur;
}

void expect_reserved_zero(std::span<const std::uint8_t> rec, std::size_t index) {
  if (rec.back() != 0) violation(record_where(index, "reserved"), "reserved byte must be zero");
}

ControlWord decode_record(DeviceKind kind, std::span<const std::uint8_t> rec, std::size_t index) {
  switch (kind) {
    case DeviceKind::gamepad: {
      GamepadWord w;
      if (!valid_dpad(rec[0])) violation(record_where(index, "dpad"), std::to_string(rec[0]) + " outside 1..9");
      w.dpad = static_cast<Dpad>(rec[0]);
      w.btn = *GamepadButtons::from_bits(get_u16(rec, 1));
      for (std::size_t i = 0; i < 4; ++i) {
        w.ang[i] = get_i8(rec, 3 + i);
        if (w.ang[i] < kAxisMin) violation(record_where(index, "ang"), "-128 outside -127..127");
      }
      w.dur = decode_duration(rec, 7, index);
      expect_reserved_zero(rec, index);
      return w;
    }
    case DeviceKind::mouse: {
      MouseWord w;
      auto btn = MouseButtons::from_bits(rec[0]);
      if (!btn) violation(record_where(index, "btn"), "button bits outside 1..3");
      w.btn = *btn;
      for (std::size_t i = 0; i < 2; ++i) {
        w.mov[i] = get_i8(rec, 1 + i);
        if (w.mov[i] < kAxisMin) violation(record_where(index, "mov"), "-128 outside -127..127");
      }
      w.dur = decode_duration(rec, 3, index);
      expect_reserved_zero(rec, index);
      return w;
    }
    case DeviceKind::keyboard: {
      KeyboardWord w;
      w.mod = *Modifiers::from_bits(rec[0]);
      int prev = 0;
      bool padding = false;
      for (std::size_t i = 0; i < kMaxKeys; ++i) {
        int code = rec[1 + i];
        if (code == 0) {
          padding = true;
          continue;
        }
        if (padding || code <= prev || !KeySet::in_range(code))
          violation(record_where(index, "key"), "key slots must be ascending valid codes followed by zeros");
        w.key.insert(code);
        prev = code;
      }
      w.dur = decode_duration(rec, 7, index);
      expect_reserved_zero(rec, index);
      return w;
    }
  }
  throw Error(ErrorCode::BadMagic, "unknown device kind");
}

}  // namespace

std::string_view to_string(DeviceKind kind) {
  switch (kind) {
    case DeviceKind::gamepad: return "gamepad";
    case DeviceKind::mouse: return "mouse";
    case DeviceKind::keyboard: return "keyboard";
  }
  return "unknown";
}

std::span<const std::string_view> key_names() { return kKeyNames; }

std::optional<int> key_code(std::string_view name) {
  auto it = std::find(kKeyNames.begin(), kKeyNames.end(), name);
  if (it == kKeyNames.end()) return std::nullopt;
  return static_cast<int>(it - kKeyNames.begin()) + 1;
}

std::string_view key_name(int code) {
  if (!KeySet::in_range(code)) return {};
  return kKeyNames[static_cast<std::size_t>(code - 1)];
}

DeviceKind kind_of(const ControlWord& word) {
  return static_cast<DeviceKind>(word.index() + 1);
}

int duration_of(const ControlWord& word) {
  return std::visit([](const auto& w) { return w.dur; }, word);
}

ControlWord with_duration(ControlWord word, int dur) {
  std::visit([dur](auto& w) { w.dur = dur; }, word);
  return word;
}

ControlWord neutral_word(DeviceKind kind) {
  switch (kind) {
    case DeviceKind::gamepad: return GamepadWord{};
    case DeviceKind::mouse: return MouseWord{};
    case DeviceKind::keyboard: return KeyboardWord{};
  }
  return GamepadWord{};
}

void validate(const ControlWord& word) {
  if (!valid_duration(duration_of(word)))
    violation("/dur", std::to_string(duration_of(word)) + " is not a valid duration");
  std::visit(
      [](const auto& w) {
        using W = std::decay_t<decltype(w)>;
        if constexpr (std::is_same_v<W, GamepadWord>) {
          if (!valid_dpad(static_cast<int>(w.dpad)))
            violation("/dpad", std::to_string(static_cast<int>(w.dpad)) + " outside 1..9");
          for (auto a : w.ang)
            if (a < kAxisMin) violation("/ang", "-128 outside -127..127");
        } else if constexpr (std::is_same_v<W, MouseWord>) {
          if (!MouseButtons::from_bits(w.btn.bits())) violation("/btn", "button bits outside 1..3");
          for (auto m : w.mov)
            if (m < kAxisMin) violation("/mov", "-128 outside -127..127");
        } else {
          if (!KeySet::from_bits(w.key.bits())) violation("/key", "key code outside the table");
          if (w.key.size() > kMaxKeys) violation("/key", "too many keys");
        }
      },
      word);
}

ControlSentence ControlSentence::from_words(std::vector<ControlWord> words) {
  if (words.empty()) throw Error(ErrorCode::EmptySentence, "a sentence needs at least one word");
  const DeviceKind kind = kind_of(words.front());
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::string at = "/" + std::to_string(i);
    try {
      validate(words[i]);
    } catch (const Error& e) {
      throw e.nested(at);
    }
    if (kind_of(words[i]) != kind)
      throw Error(ErrorCode::MixedKinds,
                  std::string(to_string(kind_of(words[i]))) + " word in a " + std::string(to_string(kind)) +
                      " sentence",
                  at);
    if (duration_of(words[i]) == kHold && i + 1 != words.size())
      throw Error(ErrorCode::HoldNotLast, "only the last word may hold (dur = -1)", at + "/dur");
  }
  return ControlSentence(std::move(words));
}

ControlWord word_from_json(const json& value, std::optional<DeviceKind> forced) {
  if (!value.is_object()) throw Error(ErrorCode::MalformedJson, "expected a JSON object");
  switch (infer_kind(value, forced)) {
    case DeviceKind::gamepad: {
      GamepadWord w;
      if_present(value, "dpad", w.dpad, [](const json& v, const std::string& at) {
        return static_cast<Dpad>(read_ranged(v, at, 1, 9));
      });
      if_present(value, "btn", w.btn, read_index_set<GamepadButtons>);
      if_present(value, "ang", w.ang, read_axes<4>);
      w.dur = read_duration(value);
      return w;
    }
    case DeviceKind::mouse: {
      MouseWord w;
      if_present(value, "btn", w.btn, read_index_set<MouseButtons>);
      if_present(value, "mov", w.mov, read_axes<2>);
      w.dur = read_duration(value);
      return w;
    }
    case DeviceKind::keyboard: {
      KeyboardWord w;
      if_present(value, "key", w.key, read_keys);
      if_present(value, "mod", w.mod, read_index_set<Modifiers>);
      w.dur = read_duration(value);
      return w;
    }
  }
  throw Error(ErrorCode::AmbiguousKind, "unreachable");
}

ControlSentence sentence_from_json(const json& value) {
  if (!value.is_array()) throw Error(ErrorCode::MalformedJson, "expected a JSON array of words");
  std::vector<ControlWord> words;
  words.reserve(value.size());
  for (std::size_t i = 0; i < value.size(); ++i) {
    try {
      words.push_back(word_from_json(value[i]));
    } catch (const Error& e) {
      throw e.nested("/" + std::to_string(i));
    }
  }
  return ControlSentence::from_words(std::move(words));
}

ControlWord parse_word(std::string_view text) { return word_from_json(parse_json(text)); }

ControlSentence parse_sentence(std::string_view text) { return sentence_from_json(parse_json(text)); }

std::string serialize_word(const ControlWord& word) {
  std::string out;
  out.reserve(48);
  std::visit(
      [&out](const auto& w) {
        using W = std::decay_t<decltype(w)>;
        if constexpr (std::is_same_v<W, GamepadWord>) {
          out += "{\"dpad\":";
          out += std::to_string(static_cast<int>(w.dpad));
          out += ",\"btn\":";
          append_indices(out, w.btn.indices());
          out += ",\"dur\":";
          out += std::to_string(w.dur);
          out += ",\"ang\":";
          append_axes(out, w.ang);
          out += '}';
        } else if constexpr (std::is_same_v<W, MouseWord>) {
          out += "{\"btn\":";
          append_indices(out, w.btn.indices());
          out += ",\"mov\":";
          append_axes(out, w.mov);
          out += ",\"dur\":";
          out += std::to_string(w.dur);
          out += '}';
        } else {
          out += "{\"key\":[";
          bool first = true;
          for (int code : w.key.indices()) {
            if (!first) out += ',';
            first = false;
            out += '"';
            out += key_name(code);
            out += '"';
          }
          out += "],\"mod\":";
          append_indices(out, w.mod.indices());
          out += ",\"dur\":";
          out += std::to_string(w.dur);
          out += '}';
        }
      },
      word);
  return out;
}

std::string serialize_sentence(const ControlSentence& sentence) {
  std::string out = "[";
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    if (i) out += ',';
    out += serialize_word(sentence[i]);
  }
  out += ']';
  return out;
}

std::size_t record_size(DeviceKind kind) {
  switch (kind) {
    case DeviceKind::gamepad: return 10;
    case DeviceKind::mouse: return 6;
    case DeviceKind::keyboard: return 10;
  }
  return 0;
}

std::vector<std::uint8_t> encode_binary(const ControlSentence& sentence) {
  std::vector<std::uint8_t> out;
  out.reserve(kBinaryHeaderSize + sentence.size() * record_size(sentence.kind()));
  out.push_back(kBinaryMagic);
  out.push_back(static_cast<std::uint8_t>(sentence.kind()));
  for (const auto& word : sentence) {
    std::visit(
        [&out](const auto& w) {
          using W = std::decay_t<decltype(w)>;
          if constexpr (std::is_same_v<W, GamepadWord>) {
            out.push_back(static_cast<std::uint8_t>(w.dpad));
            put_u16(out, w.btn.bits());
            for (auto a : w.ang) put_i8(out, a);
            put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(w.dur)));
            out.push_back(0);
          } else if constexpr (std::is_same_v<W, MouseWord>) {
            out.push_back(w.btn.bits());
            for (auto m : w.mov) put_i8(out, m);
            put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(w.dur)));
            out.push_back(0);
          } else {
            out.push_back(w.mod.bits());
            auto codes = w.key.indices();
            for (std::size_t i = 0; i < kMaxKeys; ++i)
              out.push_back(i < codes.size() ? static_cast<std::uint8_t>(codes[i]) : 0);
            put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(w.dur)));
            out.push_back(0);
          }
        },
        word);
  }
  return out;
}

ControlSentence decode_binary(std::span<const std::uint8_t> bytes) {
  if (bytes.empty() || bytes[0] != kBinaryMagic) throw Error(ErrorCode::BadMagic, "missing 'G' magic byte");
  if (bytes.size() < kBinaryHeaderSize) throw Error(ErrorCode::TruncatedRecord, "missing kind byte");
  const std::uint8_t kind_byte = bytes[1];
  if (kind_byte < 0x01 || kind_byte > 0x03)
    throw Error(ErrorCode::BadMagic, "unknown kind byte " + std::to_string(kind_byte));
  const auto kind = static_cast<DeviceKind>(kind_byte);
  const std::size_t rec = record_size(kind);
  auto body = bytes.subspan(kBinaryHeaderSize);
  if (body.size() % rec != 0)
    throw Error(ErrorCode::TruncatedRecord,
                std::to_string(body.size() % rec) + " trailing bytes do not form a " + std::to_string(rec) +
                    "-byte record");
  std::vector<ControlWord> words;
  words.reserve(body.size() / rec);
  for (std::size_t i = 0; i * rec < body.size(); ++i) words.push_back(decode_record(kind, body.subspan(i * rec, rec), i));
  return ControlSentence::from_words(std::move(words));
}

}  // namespace gcz::dsl
