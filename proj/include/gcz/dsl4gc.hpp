#pragma once

// DSL4GC control language: words, sentences, canonical JSON and the compact
// binary codec.

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "gcz/error.hpp"
#include "json.hpp"

namespace gcz::dsl {

enum class DeviceKind : std::uint8_t {
  gamepad = 0x01,
  mouse = 0x02,
  keyboard = 0x03,
};

std::string_view to_string(DeviceKind kind);

/// Duration value meaning "hold until superseded by the next word".
inline constexpr int kHold = -1;
/// Largest finite duration; durations travel as i16 in the binary records.
inline constexpr int kMaxDuration = 32767;

constexpr bool valid_duration(int dur) { return dur == kHold || (dur >= 1 && dur <= kMaxDuration); }

/// Set of small integer indices in [First, Last] packed into an unsigned word.
/// Bit (i - First) is set iff index i is a member.
template <typename Storage, int First, int Last>
class IndexSet {
  static_assert(Last - First < static_cast<int>(sizeof(Storage) * 8));

 public:
  using storage_type = Storage;
  static constexpr int first = First;
  static constexpr int last = Last;
  static constexpr Storage kValidMask =
      (Last - First + 1 == static_cast<int>(sizeof(Storage) * 8))
          ? static_cast<Storage>(~Storage{0})
          : static_cast<Storage>((Storage{1} << (Last - First + 1)) - 1);

  constexpr IndexSet() = default;

  static constexpr bool in_range(long long i) { return i >= First && i <= Last; }

  /// nullopt if `raw` has bits outside the valid range.
  static constexpr std::optional<IndexSet> from_bits(Storage raw) {
    if ((raw & ~kValidMask) != 0) return std::nullopt;
    IndexSet s;
    s.bits_ = raw;
    return s;
  }

  constexpr bool contains(int i) const { return in_range(i) && ((bits_ >> (i - First)) & 1u) != 0; }
  constexpr void insert(int i) { bits_ = static_cast<Storage>(bits_ | (Storage{1} << (i - First))); }
  constexpr void erase(int i) { bits_ = static_cast<Storage>(bits_ & ~(Storage{1} << (i - First))); }
  constexpr Storage bits() const { return bits_; }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr int size() const { return std::popcount(bits_); }

  std::vector<int> indices() const {
    std::vector<int> out;
    for (int i = First; i <= Last; ++i)
      if (contains(i)) out.push_back(i);
    return out;
  }

  friend constexpr bool operator==(const IndexSet&, const IndexSet&) = default;

 private:
  Storage bits_{0};
};

using GamepadButtons = IndexSet<std::uint16_t, 1, 16>;
using MouseButtons = IndexSet<std::uint8_t, 1, 3>;
/// HID modifier bit positions: 0=LCtrl 1=LShift 2=LAlt 3=LGui 4=RCtrl 5=RShift 6=RAlt 7=RGui.
using Modifiers = IndexSet<std::uint8_t, 0, 7>;
/// Key codes are 1-based indices into key_names().
using KeySet = IndexSet<std::uint64_t, 1, 60>;

/// Boot-protocol rollover limit.
inline constexpr int kMaxKeys = 6;

/// Numeric-keypad direction notation.
enum class Dpad : std::uint8_t {
  down_left = 1,
  down = 2,
  down_right = 3,
  left = 4,
  neutral = 5,
  right = 6,
  up_left = 7,
  up = 8,
  up_right = 9,
};

constexpr bool valid_dpad(long long v) { return v >= 1 && v <= 9; }

using Axes = std::array<std::int8_t, 4>;
using Motion = std::array<std::int8_t, 2>;
inline constexpr int kAxisMin = -127;
inline constexpr int kAxisMax = 127;

/// The fixed key-name table, indexed by key code - 1.
std::span<const std::string_view> key_names();
std::optional<int> key_code(std::string_view name);
std::string_view key_name(int code);

struct GamepadWord {
  Dpad dpad = Dpad::neutral;
  GamepadButtons btn;
  Axes ang{};
  int dur = 1;

  friend bool operator==(const GamepadWord&, const GamepadWord&) = default;
};

struct MouseWord {
  MouseButtons btn;
  Motion mov{};
  int dur = 1;

  friend bool operator==(const MouseWord&, const MouseWord&) = default;
};

struct KeyboardWord {
  KeySet key;
  Modifiers mod;
  int dur = 1;

  friend bool operator==(const KeyboardWord&, const KeyboardWord&) = default;
};

using ControlWord = std::variant<GamepadWord, MouseWord, KeyboardWord>;

DeviceKind kind_of(const ControlWord& word);
int duration_of(const ControlWord& word);
ControlWord with_duration(ControlWord word, int dur);
/// Word of the given kind with every field neutral and dur = 1.
ControlWord neutral_word(DeviceKind kind);

/// Throws InvariantViolation if a field is outside its range. Words built by
/// the parsers and decoders always pass.
void validate(const ControlWord& word);

/// Non-empty, homogeneous sequence of words; only the last may hold (dur = -1).
class ControlSentence {
 public:
  /// Validates every word and the sentence-level rules.
  static ControlSentence from_words(std::vector<ControlWord> words);

  const std::vector<ControlWord>& words() const noexcept { return words_; }
  DeviceKind kind() const noexcept { return kind_of(words_.front()); }
  std::size_t size() const noexcept { return words_.size(); }
  auto begin() const noexcept { return words_.begin(); }
  auto end() const noexcept { return words_.end(); }
  const ControlWord& operator[](std::size_t i) const { return words_[i]; }
  bool holds() const { return duration_of(words_.back()) == kHold; }

  friend bool operator==(const ControlSentence&, const ControlSentence&) = default;

 private:
  explicit ControlSentence(std::vector<ControlWord> words) : words_(std::move(words)) {}
  std::vector<ControlWord> words_;
};

ControlWord parse_word(std::string_view text);
ControlSentence parse_sentence(std::string_view text);

/// Parse an already-decoded JSON value. With `forced`, the discriminator field
/// may be omitted and the word is read as that kind.
ControlWord word_from_json(const nlohmann::json& value, std::optional<DeviceKind> forced = std::nullopt);
ControlSentence sentence_from_json(const nlohmann::json& value);

/// Canonical form: every field, fixed key order, no whitespace.
std::string serialize_word(const ControlWord& word);
std::string serialize_sentence(const ControlSentence& sentence);

inline constexpr std::uint8_t kBinaryMagic = 0x47;  // 'G'
inline constexpr std::size_t kBinaryHeaderSize = 2;
std::size_t record_size(DeviceKind kind);

std::vector<std::uint8_t> encode_binary(const ControlSentence& sentence);
ControlSentence decode_binary(std::span<const std::uint8_t> bytes);

}  // namespace gcz::dsl
