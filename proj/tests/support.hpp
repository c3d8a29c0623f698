#pragma once

// Shared helpers for the test binaries: random valid words, free ports and a
// child-process runner.

#include <netinet/in.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "gcz/dsl4gc.hpp"
#include "gcz/error.hpp"

namespace gcz::test {

/// Code of the Error thrown by fn, or nullopt.
template <typename Fn>
std::optional<ErrorCode> error_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

/// what() of the Error thrown by fn, or empty.
template <typename Fn>
std::string message_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

inline std::mt19937_64& rng() {
  static std::mt19937_64 r(0x6c7a2d31);
  return r;
}

inline int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng()); }

inline int random_dur(bool allow_hold) {
  const int pick = uniform(0, 9);
  if (allow_hold && pick == 0) return dsl::kHold;
  if (pick == 1) return dsl::kMaxDuration;
  return pick < 5 ? uniform(1, 8) : uniform(1, dsl::kMaxDuration);
}

inline dsl::GamepadWord random_gamepad(bool allow_hold = false) {
  dsl::GamepadWord w;
  w.dpad = static_cast<dsl::Dpad>(uniform(1, 9));
  w.btn = *dsl::GamepadButtons::from_bits(static_cast<std::uint16_t>(uniform(0, 0xffff)));
  for (auto& a : w.ang) a = static_cast<std::int8_t>(uniform(-127, 127));
  w.dur = random_dur(allow_hold);
  return w;
}

inline dsl::MouseWord random_mouse(bool allow_hold = false) {
  dsl::MouseWord w;
  w.btn = *dsl::MouseButtons::from_bits(static_cast<std::uint8_t>(uniform(0, 7)));
  for (auto& m : w.mov) m = static_cast<std::int8_t>(uniform(-127, 127));
  w.dur = random_dur(allow_hold);
  return w;
}

inline dsl::KeyboardWord random_keyboard(bool allow_hold = false) {
  dsl::KeyboardWord w;
  const int n = uniform(0, dsl::kMaxKeys);
  while (w.key.size() < n) w.key.insert(uniform(1, 60));
  w.mod = *dsl::Modifiers::from_bits(static_cast<std::uint8_t>(uniform(0, 255)));
  w.dur = random_dur(allow_hold);
  return w;
}

inline dsl::ControlWord random_word(dsl::DeviceKind kind, bool allow_hold = false) {
  switch (kind) {
    case dsl::DeviceKind::gamepad: return random_gamepad(allow_hold);
    case dsl::DeviceKind::mouse: return random_mouse(allow_hold);
    case dsl::DeviceKind::keyboard: return random_keyboard(allow_hold);
  }
  return random_gamepad(allow_hold);
}

inline dsl::ControlSentence random_sentence(dsl::DeviceKind kind, int max_words = 5, bool finite = false) {
  const int n = uniform(1, max_words);
  std::vector<dsl::ControlWord> words;
  for (int i = 0; i < n; ++i) words.push_back(random_word(kind, !finite && i == n - 1));
  return dsl::ControlSentence::from_words(std::move(words));
}

inline constexpr dsl::DeviceKind kAllKinds[] = {dsl::DeviceKind::gamepad, dsl::DeviceKind::mouse,
                                                dsl::DeviceKind::keyboard};

inline const char* kHadouken = R"([
  {"dpad":2, "btn":[], "dur":2, "ang":[0,0,0,0]},
  {"dpad":3, "btn":[], "dur":2, "ang":[0,0,0,0]},
  {"dpad":6, "btn":[1], "dur":2, "ang":[0,0,0,0]}
])";

/// A port nobody listens on right now.
inline std::uint16_t free_port() {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

inline bool port_open(std::uint16_t port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  const bool ok = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0;
  ::close(fd);
  return ok;
}

inline bool wait_for_port(std::uint16_t port, std::chrono::milliseconds timeout = std::chrono::seconds(5)) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    if (port_open(port)) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  return false;
}

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "gcz-test-XXXXXX").string();
    path_ = ::mkdtemp(tmpl.data());
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::filesystem::path file(const std::string& name, const std::string& content = {}) const {
    auto p = path_ / name;
    std::ofstream(p) << content;
    return p;
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct ProcessResult {
  int exit_code = -1;
  int signal = 0;
  std::string out;
  std::string err;
};

/// Child process with stdout/stderr captured to files.
class Process {
 public:
  Process(std::vector<std::string> args, std::vector<std::string> env = {}) {
    out_ = dir_.path() / "stdout";
    err_ = dir_.path() / "stderr";
    std::fflush(nullptr);
    pid_ = ::fork();
    if (pid_ == 0) {
      if (!std::freopen(out_.c_str(), "w", stdout) || !std::freopen(err_.c_str(), "w", stderr)) std::_Exit(126);
      for (auto& e : env) ::putenv(e.data());
      std::vector<char*> argv;
      for (auto& a : args) argv.push_back(a.data());
      argv.push_back(nullptr);
      ::execv(argv[0], argv.data());
      std::_Exit(127);
    }
  }
  ~Process() {
    if (pid_ > 0 && !reaped_) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
    }
  }

  void signal(int sig) { ::kill(pid_, sig); }

  ProcessResult wait() {
    int status = 0;
    ::waitpid(pid_, &status, 0);
    reaped_ = true;
    ProcessResult r;
    if (WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
    if (WIFSIGNALED(status)) r.signal = WTERMSIG(status);
    r.out = slurp(out_);
    r.err = slurp(err_);
    return r;
  }

  std::string stdout_so_far() const { return slurp(out_); }

 private:
  TempDir dir_;
  std::filesystem::path out_;
  std::filesystem::path err_;
  pid_t pid_ = -1;
  bool reaped_ = false;
};

inline ProcessResult run_process(std::vector<std::string> args, std::vector<std::string> env = {}) {
  Process p(std::move(args), std::move(env));
  return p.wait();
}

}  // namespace gcz::test
