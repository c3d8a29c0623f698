#pragma once

// At-least-once topic bus carrying DSL4GC sentences to emulators, with
// sequence-numbered envelopes for duplicate suppression on the receiving end.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "gcz/dsl4gc.hpp"

namespace gcz::transport {

inline constexpr std::string_view kDefaultTopicPrefix = "gcz/emu";

/// `<prefix>/<device-id>`; the device id is non-empty and free of the
/// wildcard characters '+' and '#' and of '/'.
class TopicAddress {
 public:
  /// Throws BadTopic.
  static TopicAddress for_device(std::string_view device, std::string_view prefix = kDefaultTopicPrefix);

  const std::string& str() const { return topic_; }
  std::string_view device() const { return std::string_view(topic_).substr(topic_.size() - device_len_); }

  friend bool operator==(const TopicAddress&, const TopicAddress&) = default;

 private:
  std::string topic_;
  std::size_t device_len_ = 0;
};

class TopicBus {
 public:
  using Handler = std::function<void(const std::string& topic, const std::string& payload)>;

  virtual ~TopicBus() = default;
  /// Throws BrokerUnreachable when the message could not be handed over.
  virtual void publish(const std::string& topic, const std::string& payload) = 0;
  /// Exact-match topic subscription.
  virtual std::uint64_t subscribe(const std::string& topic, Handler handler) = 0;
  virtual void unsubscribe(std::uint64_t id) = 0;
};

/// In-process bus. Messages are delivered in publish order by a dispatcher
/// thread, so handlers never run on the publisher's thread.
class LoopbackBus final : public TopicBus {
 public:
  LoopbackBus();
  ~LoopbackBus() override;

  void publish(const std::string& topic, const std::string& payload) override;
  std::uint64_t subscribe(const std::string& topic, Handler handler) override;
  void unsubscribe(std::uint64_t id) override;

  /// Blocks until every published message has been delivered.
  void flush();

  /// Fault injection: deliver every k-th message twice (0 = never).
  void duplicate_every(std::uint64_t k);
  /// Fault injection: the next n publishes throw BrokerUnreachable.
  void fail_next(int n);

 private:
  void run();

  struct Pending {
    std::string topic;
    std::string payload;
  };

  std::mutex mutex_;
  std::condition_variable wake_;
  std::condition_variable drained_;
  std::deque<Pending> queue_;
  std::map<std::uint64_t, std::pair<std::string, std::shared_ptr<Handler>>> subs_;
  std::uint64_t next_sub_ = 1;
  std::uint64_t published_ = 0;
  std::uint64_t duplicate_every_ = 0;
  int fail_next_ = 0;
  bool busy_ = false;
  bool stopping_ = false;
  std::thread worker_;
};

/// `{"seq":<n>,"payload":<canonical sentence>}`
std::string make_envelope(std::uint64_t seq, const dsl::ControlSentence& sentence);

struct Envelope {
  std::uint64_t seq = 0;
  dsl::ControlSentence sentence;
};

/// Throws MalformedJson / SchemaError, or the sentence's DSL error.
Envelope parse_envelope(std::string_view payload);

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{10};
  std::chrono::milliseconds max_backoff{500};
};

/// Publishes sentences with a per-topic sequence number starting at 1.
/// Failed hand-overs are retried with capped exponential backoff; the
/// sequence number only advances on success.
class SentencePublisher {
 public:
  explicit SentencePublisher(TopicBus& bus, RetryPolicy retry = {});

  /// Returns the sequence number used. Throws BrokerUnreachable once
  /// `max_attempts` attempts have failed.
  std::uint64_t publish_sentence(const dsl::ControlSentence& sentence, const TopicAddress& address);

 private:
  TopicBus& bus_;
  RetryPolicy retry_;
  std::mutex mutex_;
  std::map<std::string, std::uint64_t, std::less<>> next_seq_;
};

/// Accepts strictly increasing sequence numbers; anything at or below the
/// last accepted one is a duplicate.
class SequenceFilter {
 public:
  bool accept(std::uint64_t seq);
  std::uint64_t last() const { return last_; }
  std::uint64_t duplicates() const { return duplicates_; }
  /// A gap was seen (an accepted seq skipped numbers).
  std::uint64_t gaps() const { return gaps_; }

 private:
  std::uint64_t last_ = 0;
  std::uint64_t duplicates_ = 0;
  std::uint64_t gaps_ = 0;
};

/// Subscriber side of an emulator topic: unwraps envelopes and drops
/// duplicate deliveries before calling the handler.
class SentenceSubscriber {
 public:
  using Handler = std::function<void(std::uint64_t seq, const dsl::ControlSentence& sentence)>;

  SentenceSubscriber(TopicBus& bus, const TopicAddress& address, Handler handler);
  ~SentenceSubscriber();
  SentenceSubscriber(const SentenceSubscriber&) = delete;
  SentenceSubscriber& operator=(const SentenceSubscriber&) = delete;

  std::uint64_t delivered() const;
  std::uint64_t duplicates() const;
  std::uint64_t gaps() const;
  std::uint64_t malformed() const;

 private:
  TopicBus& bus_;
  Handler handler_;
  mutable std::mutex mutex_;
  SequenceFilter filter_;
  std::uint64_t delivered_ = 0;
  std::uint64_t malformed_ = 0;
  std::uint64_t sub_id_ = 0;
};

}  // namespace gcz::transport
