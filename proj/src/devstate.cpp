#include "gcz/devstate.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <string>
#include <thread>

namespace gcz::dev {

namespace {

std::int8_t saturating_add(std::int8_t a, std::int8_t b) {
  return static_cast<std::int8_t>(std::clamp(a + b, dsl::kAxisMin, dsl::kAxisMax));
}

[[noreturn]] void kind_mismatch(DeviceKind have, DeviceKind got) {
  throw Error(ErrorCode::KindMismatch,
              std::string(dsl::to_string(got)) + " does not apply to a " + std::string(dsl::to_string(have)) +
                  " device");
}

}  // namespace

DeviceKind kind_of(const DeviceState& state) { return static_cast<DeviceKind>(state.index() + 1); }

DeviceState neutral_state(DeviceKind kind) {
  switch (kind) {
    case DeviceKind::gamepad: return GamepadState{};
    case DeviceKind::mouse: return MouseState{};
    case DeviceKind::keyboard: return KeyboardState{};
  }
  return GamepadState{};
}

DeviceState apply_word(const DeviceState& state, const ControlWord& word) {
  if (kind_of(state) != dsl::kind_of(word)) kind_mismatch(kind_of(state), dsl::kind_of(word));
  switch (dsl::kind_of(word)) {
    case DeviceKind::gamepad: {
      const auto& w = std::get<dsl::GamepadWord>(word);
      return GamepadState{w.dpad, w.btn, w.ang};
    }
    case DeviceKind::mouse: {
      const auto& w = std::get<dsl::MouseWord>(word);
      const auto& s = std::get<MouseState>(state);
      return MouseState{w.btn, {saturating_add(s.pending[0], w.mov[0]), saturating_add(s.pending[1], w.mov[1])}};
    }
    case DeviceKind::keyboard: {
      const auto& w = std::get<dsl::KeyboardWord>(word);
      return KeyboardState{w.key, w.mod};
    }
  }
  return state;
}

DeviceState settle(const DeviceState& state) {
  if (const auto* m = std::get_if<MouseState>(&state)) return MouseState{m->btn, {}};
  return state;
}

ControlWord state_as_word(const DeviceState& state, int dur) {
  return std::visit(
      [dur](const auto& s) -> ControlWord {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, GamepadState>)
          return dsl::GamepadWord{s.dpad, s.btn, s.ang, dur};
        else if constexpr (std::is_same_v<S, MouseState>)
          return dsl::MouseWord{s.btn, s.pending, dur};
        else
          return dsl::KeyboardWord{s.key, s.mod, dur};
      },
      state);
}

std::optional<ControlWord> diff_states(const DeviceState& prev, const DeviceState& next) {
  if (kind_of(prev) != kind_of(next)) kind_mismatch(kind_of(prev), kind_of(next));
  if (prev == next) return std::nullopt;
  return state_as_word(next, dsl::kHold);
}

FrameStream expand_sentence(const ControlSentence& sentence) {
  if (sentence.holds())
    throw Error(ErrorCode::UnboundedDuration, "a sentence ending in a hold word cannot be expanded in batch",
                "/" + std::to_string(sentence.size() - 1) + "/dur");
  FrameStream out;
  DeviceState state = neutral_state(sentence.kind());
  std::uint64_t index = 0;
  for (const auto& word : sentence) {
    for (int i = 0; i < dsl::duration_of(word); ++i) {
      state = apply_word(settle(state), word);
      out.frames.push_back({index++, state});
    }
  }
  out.frames.push_back({index, neutral_state(sentence.kind())});
  return out;
}

void write_frame_log(std::ostream& out, const FrameStream& stream) {
  for (const auto& frame : stream.frames)
    out << frame.index << '\t' << dsl::serialize_word(state_as_word(frame.state)) << '\n';
}

FrameStream read_frame_log(std::istream& in) {
  FrameStream out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(ErrorCode::MalformedJson, "expected frame_index<TAB>word", where);
    std::uint64_t index = 0;
    try {
      index = std::stoull(line.substr(0, tab));
    } catch (const std::exception&) {
      throw Error(ErrorCode::MalformedJson, "bad frame index", where);
    }
    if (index != out.frames.size())
      throw Error(ErrorCode::InvariantViolation, "frame indices must count up from 0", where);
    ControlWord word;
    try {
      word = dsl::parse_word(std::string_view(line).substr(tab + 1));
    } catch (const Error& e) {
      throw Error(e.code(), e.detail(), where + e.where());
    }
    out.frames.push_back({index, apply_word(neutral_state(dsl::kind_of(word)), word)});
  }
  return out;
}

std::optional<DeviceState> StreamSource::poll() {
  if (exhausted()) return std::nullopt;
  return stream_.frames[next_++].state;
}

LiveSource::LiveSource(DeviceKind kind, std::size_t capacity)
    : kind_(kind), capacity_(std::max<std::size_t>(capacity, 1)), state_(neutral_state(kind)) {}

void LiveSource::enqueue_locked(const ControlWord& word) {
  if (queue_.size() >= capacity_) {
    auto victim = std::find_if(queue_.begin(), queue_.end(),
                               [](const ControlWord& w) { return dsl::duration_of(w) != dsl::kHold; });
    queue_.erase(victim == queue_.end() ? queue_.begin() : victim);
    ++dropped_;
  }
  queue_.push_back(word);
}

void LiveSource::push(const ControlSentence& sentence) {
  if (sentence.kind() != kind_) kind_mismatch(kind_, sentence.kind());
  std::lock_guard lock(mutex_);
  for (const auto& word : sentence) enqueue_locked(word);
  if (!sentence.holds()) enqueue_locked(dsl::neutral_word(kind_));
}

std::optional<DeviceState> LiveSource::poll() {
  std::lock_guard lock(mutex_);
  const bool holding = active_ && dsl::duration_of(*active_) == dsl::kHold;
  if (!(active_ && remaining_ > 0)) {
    if (!queue_.empty()) {
      active_ = queue_.front();
      queue_.pop_front();
      remaining_ = dsl::duration_of(*active_);
    } else if (!holding) {
      active_.reset();
      state_ = settle(state_);
      return std::nullopt;
    }
  }
  state_ = apply_word(settle(state_), *active_);
  if (remaining_ > 0 && --remaining_ == 0) active_.reset();
  return state_;
}

bool LiveSource::exhausted() const {
  std::lock_guard lock(mutex_);
  return closed_ && queue_.empty() && !(active_ && remaining_ > 0);
}

void LiveSource::close() {
  std::lock_guard lock(mutex_);
  closed_ = true;
}

bool LiveSource::idle() const {
  std::lock_guard lock(mutex_);
  return queue_.empty() && !(active_ && remaining_ > 0);
}

std::uint64_t LiveSource::dropped() const {
  std::lock_guard lock(mutex_);
  return dropped_;
}

void RecordingSink::deliver(std::uint64_t frame_index, const DeviceState& state) {
  out_ << frame_index << '\t' << dsl::serialize_word(state_as_word(state)) << '\n';
}

bool RecordingSink::closed() const { return !out_.good(); }

std::vector<double> ClockReport::intervals_ms() const {
  std::vector<double> out;
  for (std::size_t i = 1; i < tick_times.size(); ++i)
    out.push_back(std::chrono::duration<double, std::milli>(tick_times[i] - tick_times[i - 1]).count());
  return out;
}

ClockReport run_clock(TickSource& source, FrameSink& sink, const ClockOptions& options) {
  using clock = std::chrono::steady_clock;
  ClockReport report;
  report.period = std::chrono::nanoseconds(1'000'000'000LL / std::max(options.rate, 1));
  DeviceState held = neutral_state(source.kind());

  const auto start = clock::now();
  auto deadline = start;
  while (!source.exhausted() && !options.stop.stop_requested() &&
         !(options.max_ticks && report.ticks >= *options.max_ticks)) {
    std::this_thread::sleep_until(deadline);
    if (sink.closed()) throw Error(ErrorCode::SinkClosed, "sink closed at frame " + std::to_string(report.ticks));
    if (auto next = source.poll())
      held = *next;
    else
      held = settle(held);
    sink.deliver(report.ticks, held);
    report.tick_times.push_back(clock::now() - start);
    ++report.ticks;
    deadline = start + report.ticks * report.period;
  }
  if (report.ticks > 0 && !options.stop.stop_requested()) std::this_thread::sleep_until(deadline);
  report.elapsed = clock::now() - start;
  return report;
}

}  // namespace gcz::dev
