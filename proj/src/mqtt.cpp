#include "gcz/mqtt.hpp"

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fcntl.h>

namespace gcz::transport {

namespace mqtt {

namespace {

void append_string(std::vector<std::uint8_t>& out, std::string_view s) {
  out.push_back(static_cast<std::uint8_t>(s.size() >> 8));
  out.push_back(static_cast<std::uint8_t>(s.size() & 0xff));
  out.insert(out.end(), s.begin(), s.end());
}

std::vector<std::uint8_t> frame(std::uint8_t header, const std::vector<std::uint8_t>& body) {
  std::vector<std::uint8_t> out{header};
  append_remaining_length(out, body.size());
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

bool read_exact(int fd, std::uint8_t* data, std::size_t n) {
  std::size_t done = 0;
  while (done < n) {
    ssize_t r = ::recv(fd, data + done, n - done, 0);
    if (r == 0) return false;
    if (r < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    done += static_cast<std::size_t>(r);
  }
  return true;
}

}  // namespace

void append_remaining_length(std::vector<std::uint8_t>& out, std::size_t length) {
  do {
    std::uint8_t byte = length % 128;
    length /= 128;
    if (length > 0) byte |= 0x80;
    out.push_back(byte);
  } while (length > 0);
}

std::vector<std::uint8_t> encode_connect(std::string_view client_id) {
  std::vector<std::uint8_t> body;
  append_string(body, "MQTT");
  body.push_back(4);     // protocol level 3.1.1
  body.push_back(0x02);  // clean session
  body.push_back(0);     // keep-alive disabled
  body.push_back(0);
  append_string(body, client_id);
  return frame(kConnect << 4, body);
}

std::vector<std::uint8_t> encode_publish(std::string_view topic, std::string_view payload, int qos,
                                         std::uint16_t packet_id) {
  std::vector<std::uint8_t> body;
  append_string(body, topic);
  if (qos > 0) {
    body.push_back(static_cast<std::uint8_t>(packet_id >> 8));
    body.push_back(static_cast<std::uint8_t>(packet_id & 0xff));
  }
  body.insert(body.end(), payload.begin(), payload.end());
  return frame(static_cast<std::uint8_t>((kPublish << 4) | (qos << 1)), body);
}

std::vector<std::uint8_t> encode_puback(std::uint16_t packet_id) {
  return {kPuback << 4, 2, static_cast<std::uint8_t>(packet_id >> 8), static_cast<std::uint8_t>(packet_id & 0xff)};
}

std::vector<std::uint8_t> encode_subscribe(std::uint16_t packet_id, std::string_view topic) {
  std::vector<std::uint8_t> body{static_cast<std::uint8_t>(packet_id >> 8),
                                 static_cast<std::uint8_t>(packet_id & 0xff)};
  append_string(body, topic);
  body.push_back(1);  // requested QoS
  return frame((kSubscribe << 4) | 0x02, body);
}

std::vector<std::uint8_t> encode_disconnect() { return {kDisconnect << 4, 0}; }

bool read_packet(int fd, Packet& out) {
  std::uint8_t header = 0;
  if (!read_exact(fd, &header, 1)) return false;
  std::size_t length = 0;
  std::size_t multiplier = 1;
  for (int i = 0; i < 4; ++i) {
    std::uint8_t byte = 0;
    if (!read_exact(fd, &byte, 1)) return false;
    length += (byte & 0x7f) * multiplier;
    if ((byte & 0x80) == 0) break;
    multiplier *= 128;
    if (i == 3) return false;
  }
  out.type = header >> 4;
  out.flags = header & 0x0f;
  out.body.resize(length);
  return length == 0 || read_exact(fd, out.body.data(), length);
}

bool write_all(int fd, const std::vector<std::uint8_t>& bytes) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    ssize_t n = ::send(fd, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    done += static_cast<std::size_t>(n);
  }
  return true;
}

bool parse_publish(const Packet& packet, Publish& out) {
  const auto& b = packet.body;
  if (packet.type != kPublish || b.size() < 2) return false;
  const std::size_t topic_len = (b[0] << 8) | b[1];
  std::size_t at = 2 + topic_len;
  if (at > b.size()) return false;
  out.topic.assign(b.begin() + 2, b.begin() + static_cast<std::ptrdiff_t>(at));
  out.qos = (packet.flags >> 1) & 0x03;
  out.packet_id = 0;
  if (out.qos > 0) {
    if (at + 2 > b.size()) return false;
    out.packet_id = static_cast<std::uint16_t>((b[at] << 8) | b[at + 1]);
    at += 2;
  }
  out.payload.assign(b.begin() + static_cast<std::ptrdiff_t>(at), b.end());
  return true;
}

}  // namespace mqtt

BrokerAddress BrokerAddress::parse(std::string_view text) {
  if (text.starts_with("mqtt://")) text.remove_prefix(7);
  BrokerAddress a;
  auto colon = text.rfind(':');
  a.host = std::string(text.substr(0, colon));
  if (colon != std::string_view::npos) {
    const std::string port(text.substr(colon + 1));
    int p = 0;
    try {
      std::size_t used = 0;
      p = std::stoi(port, &used);
      if (used != port.size()) p = 0;
    } catch (const std::exception&) {
    }
    if (p < 1 || p > 65535) throw Error(ErrorCode::ConfigError, "bad broker port \"" + port + "\"");
    a.port = static_cast<std::uint16_t>(p);
  }
  if (a.host.empty()) throw Error(ErrorCode::ConfigError, "broker host must not be empty");
  return a;
}

namespace {

int connect_with_timeout(const BrokerAddress& broker, std::chrono::milliseconds timeout) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(broker.port);
  if (int rc = ::getaddrinfo(broker.host.c_str(), port.c_str(), &hints, &res); rc != 0)
    throw Error(ErrorCode::BrokerUnreachable, broker.host + ": " + ::gai_strerror(rc));
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);

  std::string last_error = "no addresses";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    const int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
    if (rc < 0 && errno == EINPROGRESS) {
      pollfd pfd{fd, POLLOUT, 0};
      rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
      int err = 0;
      socklen_t len = sizeof err;
      if (rc == 1 && ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) == 0 && err == 0)
        rc = 0;
      else {
        errno = rc == 0 ? ETIMEDOUT : err;
        rc = -1;
      }
    }
    if (rc == 0) {
      ::fcntl(fd, F_SETFL, flags);
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return fd;
    }
    last_error = std::strerror(errno);
    ::close(fd);
  }
  throw Error(ErrorCode::BrokerUnreachable, broker.host + ":" + port + ": " + last_error);
}

void set_receive_timeout(int fd, std::chrono::milliseconds timeout) {
  timeval tv{};
  tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
  tv.tv_usec = static_cast<suseconds_t>((timeout.count() % 1000) * 1000);
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
}

}  // namespace

MqttBus::MqttBus(Options options) : options_(std::move(options)) {}

MqttBus::~MqttBus() {
  std::unique_lock lock(mutex_);
  if (connected_) mqtt::write_all(fd_, mqtt::encode_disconnect());
  disconnect_locked(lock);
}

void MqttBus::disconnect_locked(std::unique_lock<std::mutex>& lock) {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  connected_ = false;
  if (reader_.joinable()) {
    std::thread reader = std::move(reader_);
    lock.unlock();
    reader.join();
    lock.lock();
  }
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
  awaiting_.clear();
  acked_.notify_all();
}

std::uint16_t MqttBus::next_packet_id_locked() {
  if (++packet_id_ == 0) packet_id_ = 1;
  return packet_id_;
}

void MqttBus::connect() {
  std::unique_lock lock(mutex_);
  ensure_connected_locked(lock);
}

void MqttBus::ensure_connected_locked(std::unique_lock<std::mutex>& lock) {
  if (connected_) return;
  disconnect_locked(lock);
  int fd = connect_with_timeout(options_.broker, options_.timeout);
  set_receive_timeout(fd, options_.timeout);
  mqtt::Packet connack;
  if (!mqtt::write_all(fd, mqtt::encode_connect(options_.client_id)) || !mqtt::read_packet(fd, connack) ||
      connack.type != mqtt::kConnack || connack.body.size() != 2 || connack.body[1] != 0) {
    ::close(fd);
    throw Error(ErrorCode::BrokerUnreachable, "broker refused or did not answer CONNECT");
  }
  set_receive_timeout(fd, std::chrono::milliseconds(0));
  fd_ = fd;
  connected_ = true;
  {
    std::lock_guard subs_lock(subs_mutex_);
    std::set<std::string> topics;
    for (const auto& [_, sub] : subs_) topics.insert(sub.first);
    for (const auto& t : topics) mqtt::write_all(fd_, mqtt::encode_subscribe(next_packet_id_locked(), t));
  }
  reader_ = std::thread([this, fd] { reader_loop(fd); });
}

void MqttBus::reader_loop(int fd) {
  mqtt::Packet packet;
  while (mqtt::read_packet(fd, packet)) {
    if (packet.type == mqtt::kPuback && packet.body.size() >= 2) {
      const auto id = static_cast<std::uint16_t>((packet.body[0] << 8) | packet.body[1]);
      std::lock_guard lock(mutex_);
      awaiting_.erase(id);
      acked_.notify_all();
    } else if (packet.type == mqtt::kPublish) {
      mqtt::Publish pub;
      if (!mqtt::parse_publish(packet, pub)) continue;
      if (pub.qos > 0) {
        std::lock_guard lock(mutex_);
        mqtt::write_all(fd, mqtt::encode_puback(pub.packet_id));
      }
      std::vector<std::shared_ptr<Handler>> targets;
      {
        std::lock_guard lock(subs_mutex_);
        for (const auto& [_, sub] : subs_)
          if (sub.first == pub.topic) targets.push_back(sub.second);
      }
      for (const auto& h : targets) (*h)(pub.topic, pub.payload);
    }
  }
  std::lock_guard lock(mutex_);
  if (fd == fd_) connected_ = false;
  acked_.notify_all();
}

void MqttBus::publish(const std::string& topic, const std::string& payload) {
  std::unique_lock lock(mutex_);
  ensure_connected_locked(lock);
  const auto id = next_packet_id_locked();
  awaiting_.insert(id);
  if (!mqtt::write_all(fd_, mqtt::encode_publish(topic, payload, 1, id))) {
    disconnect_locked(lock);
    throw Error(ErrorCode::BrokerUnreachable, "connection lost while publishing");
  }
  const bool acked = acked_.wait_for(lock, options_.timeout, [&] { return !awaiting_.count(id) || !connected_; });
  if (!acked || awaiting_.count(id)) {
    disconnect_locked(lock);
    throw Error(ErrorCode::BrokerUnreachable, "no PUBACK for packet " + std::to_string(id));
  }
}

std::uint64_t MqttBus::subscribe(const std::string& topic, Handler handler) {
  std::uint64_t id;
  {
    std::lock_guard lock(subs_mutex_);
    id = next_sub_++;
    subs_.emplace(id, std::make_pair(topic, std::make_shared<Handler>(std::move(handler))));
  }
  std::unique_lock lock(mutex_);
  if (connected_)
    mqtt::write_all(fd_, mqtt::encode_subscribe(next_packet_id_locked(), topic));
  else
    ensure_connected_locked(lock);
  return id;
}

void MqttBus::unsubscribe(std::uint64_t id) {
  std::lock_guard lock(subs_mutex_);
  subs_.erase(id);
}

}  // namespace gcz::transport
