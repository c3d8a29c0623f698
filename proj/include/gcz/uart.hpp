#pragma once

// Serial frames for the hardware emulator link (115200 baud, 8N1).
//
//   gamepad  (10): AA 01 dpad btn_lo btn_hi ang0 ang1 ang2 ang3 chk
//   mouse     (6): AA 02 btn dx dy chk
//   keyboard (10): AA 03 mod key0..key5 chk
//
// chk is the XOR of every preceding byte of the frame, sync included.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gcz/devstate.hpp"

namespace gcz::transport {

inline constexpr std::uint8_t kUartSync = 0xAA;
inline constexpr std::size_t kMaxUartFrame = 10;

std::size_t uart_frame_size(dsl::DeviceKind kind);

class UartFrame {
 public:
  UartFrame() = default;
  std::span<const std::uint8_t> bytes() const { return {bytes_.data(), size_}; }
  std::size_t size() const { return size_; }
  std::uint8_t operator[](std::size_t i) const { return bytes_[i]; }

  friend bool operator==(const UartFrame& a, const UartFrame& b) {
    return a.size_ == b.size_ && std::equal(a.bytes_.begin(), a.bytes_.begin() + a.size_, b.bytes_.begin());
  }

 private:
  friend UartFrame encode_uart_frame(const dev::DeviceState& state);
  std::array<std::uint8_t, kMaxUartFrame> bytes_{};
  std::size_t size_ = 0;
};

std::uint8_t uart_checksum(std::span<const std::uint8_t> bytes_before_checksum);

UartFrame encode_uart_frame(const dev::DeviceState& state);

/// Decodes exactly one complete frame. Errors: BadSync, Truncated,
/// ChecksumMismatch, TrailingBytes (more bytes than the kind's frame),
/// InvariantViolation (well-formed frame carrying an out-of-range field).
dev::DeviceState decode_uart_frame(std::span<const std::uint8_t> bytes);

/// Incremental decoder with resynchronization: bytes that do not start a
/// valid frame are skipped up to the next sync byte.
class UartStreamDecoder {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  /// Next decoded state, if a complete valid frame is buffered.
  std::optional<dev::DeviceState> next();
  /// End of stream. Throws Truncated if a partial frame is pending.
  void finish();

  std::uint64_t frames() const { return frames_; }
  std::uint64_t skipped_bytes() const { return skipped_; }

 private:
  std::deque<std::uint8_t> buffer_;
  std::uint64_t frames_ = 0;
  std::uint64_t skipped_ = 0;
};

/// Raw serial device, configured 115200 8N1 when it is a terminal. Any other
/// path (regular file, FIFO) is written as-is.
class SerialPort {
 public:
  explicit SerialPort(const std::string& path);
  ~SerialPort();
  SerialPort(const SerialPort&) = delete;
  SerialPort& operator=(const SerialPort&) = delete;

  void write(std::span<const std::uint8_t> bytes);

 private:
  int fd_ = -1;
};

/// Clock sink that emits one frame per delivered state.
class UartSink final : public dev::FrameSink {
 public:
  using Writer = std::function<void(std::span<const std::uint8_t>)>;
  explicit UartSink(Writer writer) : writer_(std::move(writer)) {}
  void deliver(std::uint64_t frame_index, const dev::DeviceState& state) override;

 private:
  Writer writer_;
};

}  // namespace gcz::transport
