#pragma once

// Minimal MQTT 3.1.1 client backing the topic bus with an external broker.
// Publishes at QoS 1 (waits for PUBACK), subscribes at QoS 1, clean session,
// no keep-alive. Reconnects lazily on the next publish after a drop.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "gcz/bus.hpp"

namespace gcz::transport {

namespace mqtt {

enum PacketType : std::uint8_t {
  kConnect = 1,
  kConnack = 2,
  kPublish = 3,
  kPuback = 4,
  kSubscribe = 8,
  kSuback = 9,
  kDisconnect = 14,
};

void append_remaining_length(std::vector<std::uint8_t>& out, std::size_t length);
std::vector<std::uint8_t> encode_connect(std::string_view client_id);
std::vector<std::uint8_t> encode_publish(std::string_view topic, std::string_view payload, int qos,
                                         std::uint16_t packet_id);
std::vector<std::uint8_t> encode_puback(std::uint16_t packet_id);
std::vector<std::uint8_t> encode_subscribe(std::uint16_t packet_id, std::string_view topic);
std::vector<std::uint8_t> encode_disconnect();

struct Packet {
  std::uint8_t type = 0;
  std::uint8_t flags = 0;
  std::vector<std::uint8_t> body;
};

/// Blocking read of one packet from a socket; false on EOF or error.
bool read_packet(int fd, Packet& out);
/// Blocking write of the whole buffer; false on error.
bool write_all(int fd, const std::vector<std::uint8_t>& bytes);

struct Publish {
  std::string topic;
  int qos = 0;
  std::uint16_t packet_id = 0;
  std::string payload;
};

/// Parses the body of a PUBLISH packet; false if malformed.
bool parse_publish(const Packet& packet, Publish& out);

}  // namespace mqtt

struct BrokerAddress {
  std::string host;
  std::uint16_t port = 1883;

  /// "host", "host:port" or "mqtt://host:port". Throws ConfigError.
  static BrokerAddress parse(std::string_view text);
};

class MqttBus final : public TopicBus {
 public:
  struct Options {
    BrokerAddress broker;
    std::string client_id = "gcz";
    std::chrono::milliseconds timeout{2000};
  };

  explicit MqttBus(Options options);
  ~MqttBus() override;

  void publish(const std::string& topic, const std::string& payload) override;
  std::uint64_t subscribe(const std::string& topic, Handler handler) override;
  void unsubscribe(std::uint64_t id) override;

  /// Connects now instead of on first use. Throws BrokerUnreachable.
  void connect();

 private:
  void ensure_connected_locked(std::unique_lock<std::mutex>& lock);
  void disconnect_locked(std::unique_lock<std::mutex>& lock);
  void reader_loop(int fd);
  std::uint16_t next_packet_id_locked();

  Options options_;
  std::mutex mutex_;
  std::condition_variable acked_;
  int fd_ = -1;
  bool connected_ = false;
  std::thread reader_;
  std::set<std::uint16_t> awaiting_;
  std::uint16_t packet_id_ = 0;

  std::mutex subs_mutex_;
  std::map<std::uint64_t, std::pair<std::string, std::shared_ptr<Handler>>> subs_;
  std::uint64_t next_sub_ = 1;
};

}  // namespace gcz::transport
