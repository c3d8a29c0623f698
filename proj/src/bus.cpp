#include "gcz/bus.hpp"

#include <algorithm>

namespace gcz::transport {

using nlohmann::json;

TopicAddress TopicAddress::for_device(std::string_view device, std::string_view prefix) {
  if (device.empty()) throw Error(ErrorCode::BadTopic, "device id must not be empty");
  if (device.find_first_of(std::string_view("+#/\0", 4)) != std::string_view::npos)
    throw Error(ErrorCode::BadTopic, "device id \"" + std::string(device) + "\" contains '+', '#', '/' or NUL");
  if (prefix.empty() || prefix.find_first_of("+#") != std::string_view::npos)
    throw Error(ErrorCode::BadTopic, "bad topic prefix \"" + std::string(prefix) + "\"");
  TopicAddress a;
  a.topic_ = std::string(prefix);
  if (a.topic_.back() != '/') a.topic_ += '/';
  a.topic_ += device;
  a.device_len_ = device.size();
  return a;
}

LoopbackBus::LoopbackBus() : worker_([this] { run(); }) {}

LoopbackBus::~LoopbackBus() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  wake_.notify_all();
  worker_.join();
}

void LoopbackBus::publish(const std::string& topic, const std::string& payload) {
  {
    std::lock_guard lock(mutex_);
    if (fail_next_ > 0) {
      --fail_next_;
      throw Error(ErrorCode::BrokerUnreachable, "loopback bus: injected failure");
    }
    ++published_;
    queue_.push_back({topic, payload});
    if (duplicate_every_ != 0 && published_ % duplicate_every_ == 0) queue_.push_back({topic, payload});
  }
  wake_.notify_one();
}

std::uint64_t LoopbackBus::subscribe(const std::string& topic, Handler handler) {
  std::lock_guard lock(mutex_);
  const auto id = next_sub_++;
  subs_.emplace(id, std::make_pair(topic, std::make_shared<Handler>(std::move(handler))));
  return id;
}

void LoopbackBus::unsubscribe(std::uint64_t id) {
  std::unique_lock lock(mutex_);
  subs_.erase(id);
  // A handler may be mid-call on the dispatcher; wait it out unless we are it.
  if (std::this_thread::get_id() != worker_.get_id()) drained_.wait(lock, [this] { return !busy_; });
}

void LoopbackBus::flush() {
  std::unique_lock lock(mutex_);
  drained_.wait(lock, [this] { return queue_.empty() && !busy_; });
}

void LoopbackBus::duplicate_every(std::uint64_t k) {
  std::lock_guard lock(mutex_);
  duplicate_every_ = k;
}

void LoopbackBus::fail_next(int n) {
  std::lock_guard lock(mutex_);
  fail_next_ = n;
}

void LoopbackBus::run() {
  std::unique_lock lock(mutex_);
  for (;;) {
    wake_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
    if (queue_.empty() && stopping_) return;
    Pending msg = std::move(queue_.front());
    queue_.pop_front();
    std::vector<std::shared_ptr<Handler>> targets;
    for (const auto& [_, sub] : subs_)
      if (sub.first == msg.topic) targets.push_back(sub.second);
    busy_ = true;
    lock.unlock();
    for (const auto& h : targets) (*h)(msg.topic, msg.payload);
    lock.lock();
    busy_ = false;
    drained_.notify_all();
  }
}

std::string make_envelope(std::uint64_t seq, const dsl::ControlSentence& sentence) {
  return "{\"seq\":" + std::to_string(seq) + ",\"payload\":" + dsl::serialize_sentence(sentence) + "}";
}

Envelope parse_envelope(std::string_view payload) {
  json doc;
  try {
    doc = json::parse(payload);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::MalformedJson, e.what());
  }
  if (!doc.is_object() || !doc.contains("seq") || !doc["seq"].is_number_unsigned() || !doc.contains("payload"))
    throw Error(ErrorCode::SchemaError, "envelope must be {\"seq\":<u64>,\"payload\":<sentence>}");
  try {
    return Envelope{doc["seq"].get<std::uint64_t>(), dsl::sentence_from_json(doc["payload"])};
  } catch (const Error& e) {
    throw e.nested("/payload");
  }
}

SentencePublisher::SentencePublisher(TopicBus& bus, RetryPolicy retry) : bus_(bus), retry_(retry) {}

std::uint64_t SentencePublisher::publish_sentence(const dsl::ControlSentence& sentence, const TopicAddress& address) {
  std::lock_guard lock(mutex_);
  auto& next = next_seq_[address.str()];
  if (next == 0) next = 1;
  const std::string payload = make_envelope(next, sentence);
  auto backoff = retry_.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    try {
      bus_.publish(address.str(), payload);
      return next++;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::BrokerUnreachable) throw;
      if (attempt >= retry_.max_attempts)
        throw Error(ErrorCode::BrokerUnreachable,
                    "gave up after " + std::to_string(attempt) + " attempts: " + e.detail());
    }
    std::this_thread::sleep_for(backoff);
    backoff = std::min(backoff * 2, retry_.max_backoff);
  }
}

bool SequenceFilter::accept(std::uint64_t seq) {
  if (seq <= last_) {
    ++duplicates_;
    return false;
  }
  if (seq != last_ + 1) ++gaps_;
  last_ = seq;
  return true;
}

SentenceSubscriber::SentenceSubscriber(TopicBus& bus, const TopicAddress& address, Handler handler)
    : bus_(bus), handler_(std::move(handler)) {
  sub_id_ = bus_.subscribe(address.str(), [this](const std::string&, const std::string& payload) {
    std::optional<Envelope> env;
    try {
      env.emplace(parse_envelope(payload));
    } catch (const Error&) {
      std::lock_guard lock(mutex_);
      ++malformed_;
      return;
    }
    {
      std::lock_guard lock(mutex_);
      if (!filter_.accept(env->seq)) return;
      ++delivered_;
    }
    handler_(env->seq, env->sentence);
  });
}

SentenceSubscriber::~SentenceSubscriber() { bus_.unsubscribe(sub_id_); }

std::uint64_t SentenceSubscriber::delivered() const {
  std::lock_guard lock(mutex_);
  return delivered_;
}

std::uint64_t SentenceSubscriber::duplicates() const {
  std::lock_guard lock(mutex_);
  return filter_.duplicates();
}

std::uint64_t SentenceSubscriber::gaps() const {
  std::lock_guard lock(mutex_);
  return filter_.gaps();
}

std::uint64_t SentenceSubscriber::malformed() const {
  std::lock_guard lock(mutex_);
  return malformed_;
}

}  // namespace gcz::transport
