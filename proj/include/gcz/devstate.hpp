#pragma once

// Virtual-device state and its expansion onto the 60 fps frame clock.

#include <chrono>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <stop_token>
#include <variant>
#include <vector>

#include "gcz/dsl4gc.hpp"

namespace gcz::dev {

using dsl::ControlSentence;
using dsl::ControlWord;
using dsl::DeviceKind;

struct GamepadState {
  dsl::Dpad dpad = dsl::Dpad::neutral;
  dsl::GamepadButtons btn;
  dsl::Axes ang{};

  friend bool operator==(const GamepadState&, const GamepadState&) = default;
};

struct MouseState {
  dsl::MouseButtons btn;
  /// Displacement to emit during the current frame.
  dsl::Motion pending{};

  friend bool operator==(const MouseState&, const MouseState&) = default;
};

struct KeyboardState {
  dsl::KeySet key;
  dsl::Modifiers mod;

  friend bool operator==(const KeyboardState&, const KeyboardState&) = default;
};

using DeviceState = std::variant<GamepadState, MouseState, KeyboardState>;

DeviceKind kind_of(const DeviceState& state);
DeviceState neutral_state(DeviceKind kind);

/// Gamepad and keyboard words assert the whole state. Mouse words set the
/// buttons and add their motion to the frame's pending displacement
/// (saturating at the axis range).
DeviceState apply_word(const DeviceState& state, const ControlWord& word);

/// State carried into the next frame: mouse displacement is consumed, all
/// other fields persist.
DeviceState settle(const DeviceState& state);

/// The state as a word of the given duration.
ControlWord state_as_word(const DeviceState& state, int dur = 1);

/// nullopt iff the states are equal; otherwise a hold word asserting `next`.
/// For every kind, apply_word(settle(prev), *diff) == next; gamepad and
/// keyboard states are unchanged by settle.
std::optional<ControlWord> diff_states(const DeviceState& prev, const DeviceState& next);

inline constexpr int kFrameRate = 60;

struct Frame {
  std::uint64_t index = 0;
  DeviceState state;

  friend bool operator==(const Frame&, const Frame&) = default;
};

struct FrameStream {
  std::vector<Frame> frames;

  std::size_t size() const { return frames.size(); }
  friend bool operator==(const FrameStream&, const FrameStream&) = default;
};

/// One frame per unit of duration, then a single neutral release frame.
/// Throws UnboundedDuration if the sentence ends with a hold word.
FrameStream expand_sentence(const ControlSentence& sentence);

/// Written as `frame_index<TAB>canonical word JSON` per line (dur = 1).
void write_frame_log(std::ostream& out, const FrameStream& stream);
FrameStream read_frame_log(std::istream& in);

/// Supplies the clock with at most one new state per tick.
class TickSource {
 public:
  virtual ~TickSource() = default;
  virtual DeviceKind kind() const = 0;
  /// New state for this tick, or nullopt to re-deliver the held state.
  virtual std::optional<DeviceState> poll() = 0;
  virtual bool exhausted() const = 0;
};

class StreamSource final : public TickSource {
 public:
  StreamSource(DeviceKind kind, FrameStream stream) : kind_(kind), stream_(std::move(stream)) {}
  explicit StreamSource(const ControlSentence& sentence)
      : StreamSource(sentence.kind(), expand_sentence(sentence)) {}

  DeviceKind kind() const override { return kind_; }
  std::optional<DeviceState> poll() override;
  bool exhausted() const override { return next_ >= stream_.frames.size(); }

 private:
  DeviceKind kind_;
  FrameStream stream_;
  std::size_t next_ = 0;
};

/// Live input for the clock. Sentences are queued word by word (a finite
/// sentence also queues its release frame); the tick consumes them in order.
/// A hold word stays active until the next queued word supersedes it.
/// Thread-safe: producers push while the clock polls.
class LiveSource final : public TickSource {
 public:
  explicit LiveSource(DeviceKind kind, std::size_t capacity = 256);

  DeviceKind kind() const override { return kind_; }
  std::optional<DeviceState> poll() override;
  bool exhausted() const override;

  /// Throws KindMismatch for a sentence of another device kind.
  void push(const ControlSentence& sentence);
  /// No further input; the source is exhausted once the queue drains.
  void close();
  /// True when nothing is queued and no finite word is mid-play.
  bool idle() const;
  std::uint64_t dropped() const;

 private:
  void enqueue_locked(const ControlWord& word);

  DeviceKind kind_;
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::deque<ControlWord> queue_;
  std::optional<ControlWord> active_;
  int remaining_ = 0;
  DeviceState state_;
  std::uint64_t dropped_ = 0;
  bool closed_ = false;
};

class FrameSink {
 public:
  virtual ~FrameSink() = default;
  virtual void deliver(std::uint64_t frame_index, const DeviceState& state) = 0;
  virtual bool closed() const { return false; }
};

class CollectingSink final : public FrameSink {
 public:
  void deliver(std::uint64_t frame_index, const DeviceState& state) override {
    stream.frames.push_back({frame_index, state});
  }
  FrameStream stream;
};

class RecordingSink final : public FrameSink {
 public:
  explicit RecordingSink(std::ostream& out) : out_(out) {}
  void deliver(std::uint64_t frame_index, const DeviceState& state) override;
  bool closed() const override;

 private:
  std::ostream& out_;
};

struct ClockOptions {
  int rate = kFrameRate;
  /// Stop after this many deliveries.
  std::optional<std::uint64_t> max_ticks;
  std::stop_token stop;
};

struct ClockReport {
  std::uint64_t ticks = 0;
  std::chrono::nanoseconds period{};
  /// Delivery time of each tick, relative to the clock start.
  std::vector<std::chrono::nanoseconds> tick_times;
  /// Time from start until the end of the last delivered frame's period.
  std::chrono::nanoseconds elapsed{};

  /// Inter-delivery intervals in milliseconds.
  std::vector<double> intervals_ms() const;
};

/// Fixed-rate delivery: tick n is released at start + n * period, so the
/// long-run rate does not drift. Ticks with no new input re-deliver the held
/// state. Returns once the source is exhausted, max_ticks is reached, or stop
/// is requested. Throws SinkClosed if the sink closes.
ClockReport run_clock(TickSource& source, FrameSink& sink, const ClockOptions& options = {});

}  // namespace gcz::dev
