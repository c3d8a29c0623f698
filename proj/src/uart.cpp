#include "gcz/uart.hpp"

#include <fcntl.h>
#include <termios.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace gcz::transport {

namespace {

using dsl::DeviceKind;

bool valid_kind_byte(std::uint8_t b) { return b >= 0x01 && b <= 0x03; }

// Payload validity beyond the checksum; returns an error message or empty.
std::string check_payload(DeviceKind kind, const std::uint8_t* p) {
  switch (kind) {
    case DeviceKind::gamepad:
      if (!dsl::valid_dpad(p[0])) return "dpad " + std::to_string(p[0]) + " outside 1..9";
      for (int i = 3; i < 7; ++i)
        if (p[i] == 0x80) return "axis value -128 outside -127..127";
      return {};
    case DeviceKind::mouse:
      if (!dsl::MouseButtons::from_bits(p[0])) return "mouse button bits outside 1..3";
      if (p[1] == 0x80 || p[2] == 0x80) return "motion value -128 outside -127..127";
      return {};
    case DeviceKind::keyboard: {
      int prev = 0;
      bool padding = false;
      for (int i = 1; i <= dsl::kMaxKeys; ++i) {
        if (p[i] == 0) {
          padding = true;
          continue;
        }
        if (padding || p[i] <= prev || !dsl::KeySet::in_range(p[i]))
          return "key slots must be ascending valid codes followed by zeros";
        prev = p[i];
      }
      return {};
    }
  }
  return "unknown kind";
}

dev::DeviceState payload_to_state(DeviceKind kind, const std::uint8_t* p) {
  switch (kind) {
    case DeviceKind::gamepad: {
      dev::GamepadState s;
      s.dpad = static_cast<dsl::Dpad>(p[0]);
      s.btn = *dsl::GamepadButtons::from_bits(static_cast<std::uint16_t>(p[1] | (p[2] << 8)));
      for (int i = 0; i < 4; ++i) s.ang[static_cast<std::size_t>(i)] = static_cast<std::int8_t>(p[3 + i]);
      return s;
    }
    case DeviceKind::mouse: {
      dev::MouseState s;
      s.btn = *dsl::MouseButtons::from_bits(p[0]);
      s.pending = {static_cast<std::int8_t>(p[1]), static_cast<std::int8_t>(p[2])};
      return s;
    }
    case DeviceKind::keyboard: {
      dev::KeyboardState s;
      s.mod = *dsl::Modifiers::from_bits(p[0]);
      for (int i = 1; i <= dsl::kMaxKeys; ++i)
        if (p[i] != 0) s.key.insert(p[i]);
      return s;
    }
  }
  return dev::GamepadState{};
}

}  // namespace

std::size_t uart_frame_size(DeviceKind kind) {
  switch (kind) {
    case DeviceKind::gamepad: return 10;
    case DeviceKind::mouse: return 6;
    case DeviceKind::keyboard: return 10;
  }
  return 0;
}

std::uint8_t uart_checksum(std::span<const std::uint8_t> bytes) {
  std::uint8_t x = 0;
  for (auto b : bytes) x ^= b;
  return x;
}

UartFrame encode_uart_frame(const dev::DeviceState& state) {
  UartFrame f;
  auto& b = f.bytes_;
  std::size_t n = 0;
  b[n++] = kUartSync;
  b[n++] = static_cast<std::uint8_t>(dev::kind_of(state));
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, dev::GamepadState>) {
          b[n++] = static_cast<std::uint8_t>(s.dpad);
          b[n++] = static_cast<std::uint8_t>(s.btn.bits() & 0xff);
          b[n++] = static_cast<std::uint8_t>(s.btn.bits() >> 8);
          for (auto a : s.ang) b[n++] = static_cast<std::uint8_t>(a);
        } else if constexpr (std::is_same_v<S, dev::MouseState>) {
          b[n++] = s.btn.bits();
          b[n++] = static_cast<std::uint8_t>(s.pending[0]);
          b[n++] = static_cast<std::uint8_t>(s.pending[1]);
        } else {
          b[n++] = s.mod.bits();
          auto codes = s.key.indices();
          for (std::size_t i = 0; i < static_cast<std::size_t>(dsl::kMaxKeys); ++i)
            b[n++] = i < codes.size() ? static_cast<std::uint8_t>(codes[i]) : 0;
        }
      },
      state);
  b[n] = uart_checksum({b.data(), n});
  f.size_ = n + 1;
  return f;
}

dev::DeviceState decode_uart_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw Error(ErrorCode::Truncated, "empty frame");
  if (bytes[0] != kUartSync) throw Error(ErrorCode::BadSync, "frame does not start with 0xAA");
  if (bytes.size() < 2) throw Error(ErrorCode::Truncated, "missing kind byte");
  if (!valid_kind_byte(bytes[1])) throw Error(ErrorCode::BadSync, "unknown kind byte " + std::to_string(bytes[1]));
  const auto kind = static_cast<DeviceKind>(bytes[1]);
  const std::size_t size = uart_frame_size(kind);
  if (bytes.size() < size)
    throw Error(ErrorCode::Truncated, std::to_string(bytes.size()) + " of " + std::to_string(size) + " bytes");
  if (bytes.size() > size)
    throw Error(ErrorCode::TrailingBytes, std::to_string(bytes.size() - size) + " bytes after the frame");
  if (uart_checksum(bytes.first(size - 1)) != bytes[size - 1]) throw Error(ErrorCode::ChecksumMismatch, "bad checksum");
  if (auto problem = check_payload(kind, bytes.data() + 2); !problem.empty())
    throw Error(ErrorCode::InvariantViolation, problem);
  return payload_to_state(kind, bytes.data() + 2);
}

void UartStreamDecoder::feed(std::span<const std::uint8_t> bytes) { buffer_.insert(buffer_.end(), bytes.begin(), bytes.end()); }

std::optional<dev::DeviceState> UartStreamDecoder::next() {
  std::array<std::uint8_t, kMaxUartFrame> frame{};
  while (!buffer_.empty()) {
    if (buffer_.front() != kUartSync) {
      buffer_.pop_front();
      ++skipped_;
      continue;
    }
    if (buffer_.size() < 2) return std::nullopt;
    if (!valid_kind_byte(buffer_[1])) {
      buffer_.pop_front();
      ++skipped_;
      continue;
    }
    const auto kind = static_cast<DeviceKind>(buffer_[1]);
    const std::size_t size = uart_frame_size(kind);
    if (buffer_.size() < size) return std::nullopt;
    std::copy_n(buffer_.begin(), size, frame.begin());
    if (uart_checksum({frame.data(), size - 1}) != frame[size - 1] || !check_payload(kind, frame.data() + 2).empty()) {
      buffer_.pop_front();
      ++skipped_;
      continue;
    }
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(size));
    ++frames_;
    return payload_to_state(kind, frame.data() + 2);
  }
  return std::nullopt;
}

void UartStreamDecoder::finish() {
  while (!buffer_.empty() && buffer_.front() != kUartSync) {
    buffer_.pop_front();
    ++skipped_;
  }
  if (!buffer_.empty()) {
    const auto pending = buffer_.size();
    buffer_.clear();
    throw Error(ErrorCode::Truncated, "stream ended inside a frame (" + std::to_string(pending) + " bytes pending)");
  }
}

SerialPort::SerialPort(const std::string& path) {
  fd_ = ::open(path.c_str(), O_WRONLY | O_NOCTTY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error(ErrorCode::IoError, "cannot open serial path " + path + ": " + std::strerror(errno));
  if (::isatty(fd_)) {
    termios tio{};
    if (::tcgetattr(fd_, &tio) == 0) {
      ::cfmakeraw(&tio);
      ::cfsetispeed(&tio, B115200);
      ::cfsetospeed(&tio, B115200);
      tio.c_cflag &= ~static_cast<tcflag_t>(CSTOPB | PARENB | CSIZE);
      tio.c_cflag |= CS8 | CLOCAL;
      ::tcsetattr(fd_, TCSANOW, &tio);
    }
  }
}

SerialPort::~SerialPort() {
  if (fd_ >= 0) ::close(fd_);
}

void SerialPort::write(std::span<const std::uint8_t> bytes) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    ssize_t n = ::write(fd_, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::SinkClosed, std::string("serial write failed: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

void UartSink::deliver(std::uint64_t, const dev::DeviceState& state) {
  const auto frame = encode_uart_frame(state);
  writer_(frame.bytes());
}

}  // namespace gcz::transport
