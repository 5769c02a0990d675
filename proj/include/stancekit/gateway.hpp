#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <unordered_map>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "stancekit/core.hpp"
#include "stancekit/detail/util.hpp"
#include "stancekit/digest.hpp"
#include "stancekit/errors.hpp"
#include "stancekit/prompt.hpp"

namespace stancekit {

enum class BackendKind { Http, Mock };

inline std::string_view to_string(BackendKind k) {
  return k == BackendKind::Http ? "http" : "mock";
}

inline BackendKind parse_backend_kind(std::string_view s) {
  std::string lower = detail::ascii_lower(detail::trim(s));
  if (lower == "http") return BackendKind::Http;
  if (lower == "mock") return BackendKind::Mock;
  throw UsageError(ErrorKind::InvalidConfig,
                   "backend kind must be 'http' or 'mock', got '" +
                       std::string(s) + "'");
}

// Deterministic test double. Scores each label by summing lexicon weights of
// standalone tokens found in the sentence under question, plus per-target
// additive overrides. Exemplar blocks in a prompt never influence the score:
// only the final question's quoted sentence is scanned.
struct MockRules {
  std::map<std::string, std::pair<StanceLabel, int>> lexicon;  // lowercase token
  StanceLabel default_label = StanceLabel::Neutral;
  std::map<std::string, std::array<double, 3>> bias_overrides;  // by target
};

struct BackendConfig {
  BackendKind kind = BackendKind::Mock;
  std::string endpoint_url;  // http only
  std::string model_name;
  double temperature = 0.0;
  std::uint32_t max_tokens = 256;
  std::uint32_t timeout_ms = 30000;
  std::uint32_t max_retries = 3;
  double max_requests_per_second = 4.0;
  std::string api_key_env_var = "STANCE_HARNESS_API_KEY";
  MockRules mock;
};

inline void validate(const BackendConfig& c) {
  if (c.temperature < 0.0 || c.temperature > 2.0) {
    throw UsageError(ErrorKind::InvalidConfig,
                     "temperature must be in [0, 2]");
  }
  if (c.max_tokens == 0) {
    throw UsageError(ErrorKind::InvalidConfig, "max_tokens must be positive");
  }
  if (c.timeout_ms == 0) {
    throw UsageError(ErrorKind::InvalidConfig, "timeout_ms must be positive");
  }
  if (!(c.max_requests_per_second > 0.0)) {
    throw UsageError(ErrorKind::InvalidConfig,
                     "max_requests_per_second must be positive");
  }
  if (c.kind == BackendKind::Http) {
    if (c.endpoint_url.empty() || c.model_name.empty()) {
      throw UsageError(ErrorKind::InvalidConfig,
                       "http backend requires endpoint_url and model_name");
    }
  }
}

// The bytes hashed into a cache key: a fixed-order JSON rendering of the
// request-shaping parameters plus the messages. Stable across platforms.
inline std::string canonical_request(const PromptSpec& p,
                                     const BackendConfig& c) {
  nlohmann::ordered_json j;
  j["kind"] = std::string(to_string(c.kind));
  j["model"] = c.model_name;
  j["temperature"] = c.temperature;
  j["max_tokens"] = c.max_tokens;
  nlohmann::ordered_json msgs = nlohmann::ordered_json::array();
  for (const Message& m : p.messages) {
    nlohmann::ordered_json mj;
    mj["role"] = std::string(to_string(m.role));
    mj["content"] = m.content;
    msgs.push_back(std::move(mj));
  }
  j["messages"] = std::move(msgs);
  return j.dump();
}

inline std::string request_digest(const PromptSpec& p,
                                  const BackendConfig& c) {
  return sha256_hex(canonical_request(p, c));
}

struct CacheEntry {
  std::string key;
  std::string raw_output;
  std::string backend_id;
  std::string created_at;  // UTC, ISO 8601
  std::string model_name;
  double temperature = 0.0;
  std::uint32_t max_tokens = 0;
};

// ---------------------------------------------------------------------------
// Token bucket
// ---------------------------------------------------------------------------

class TokenBucket {
 public:
  TokenBucket(double rate_per_second, double capacity)
      : rate_(rate_per_second),
        capacity_(capacity),
        tokens_(capacity),
        last_(Clock::now()) {}

  // Advances the bucket to `now`, takes a token if one is available and
  // returns zero, otherwise returns the wait until the next token. Split out
  // from the blocking path so tests can drive it with a synthetic clock.
  std::chrono::duration<double> acquire_at(
      std::chrono::steady_clock::time_point now) {
    std::lock_guard<std::mutex> lock(mu_);
    double elapsed = std::chrono::duration<double>(now - last_).count();
    if (elapsed > 0) {
      tokens_ = std::min(capacity_, tokens_ + elapsed * rate_);
      last_ = now;
    }
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return std::chrono::duration<double>(0);
    }
    return std::chrono::duration<double>((1.0 - tokens_) / rate_);
  }

  void acquire() {
    for (;;) {
      auto wait = acquire_at(Clock::now());
      if (wait.count() <= 0) return;
      std::this_thread::sleep_for(wait);
    }
  }

 private:
  using Clock = std::chrono::steady_clock;
  std::mutex mu_;
  double rate_;
  double capacity_;
  double tokens_;
  Clock::time_point last_;
};

// ---------------------------------------------------------------------------
// Mock evaluation
// ---------------------------------------------------------------------------

namespace detail {

struct QuestionParts {
  std::string sentence;
  std::string target;
  bool parsed = false;
};

// Pulls the quoted sentence and target out of the last direct question in
// the message. When the message does not look like one, the whole message
// stands in for the sentence and no target is detected.
inline QuestionParts extract_question(const std::string& message) {
  static constexpr std::string_view kQuestionMark = "Question: ";
  static constexpr std::string_view kPrefix =
      "What is the attitude of the sentence: \"";
  static constexpr std::string_view kTargetSep = "\" to the target \"";
  static constexpr std::string_view kSuffix = "\" select from";

  std::string_view segment = message;
  std::size_t last_q = message.rfind(kQuestionMark);
  if (last_q != std::string::npos) {
    segment = std::string_view(message).substr(last_q + kQuestionMark.size());
  }
  QuestionParts parts;
  std::size_t start = segment.find(kPrefix);
  std::size_t suffix = segment.rfind(kSuffix);
  if (start != std::string_view::npos && suffix != std::string_view::npos &&
      suffix > start) {
    std::string_view inner =
        segment.substr(start + kPrefix.size(), suffix - start - kPrefix.size());
    std::size_t sep = inner.rfind(kTargetSep);
    if (sep != std::string_view::npos) {
      parts.sentence = std::string(inner.substr(0, sep));
      parts.target = std::string(inner.substr(sep + kTargetSep.size()));
      parts.parsed = true;
      return parts;
    }
  }
  parts.sentence = std::string(segment);
  return parts;
}

inline std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (is_word_char(c)) {
      cur.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a')
                                         : c);
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace detail

inline std::string mock_reply(const MockRules& rules,
                              const std::string& final_user_message) {
  detail::QuestionParts parts = detail::extract_question(final_user_message);
  std::array<double, 3> scores{0.0, 0.0, 0.0};
  for (const std::string& token : detail::word_tokens(parts.sentence)) {
    auto it = rules.lexicon.find(token);
    if (it != rules.lexicon.end()) {
      scores[label_index(it->second.first)] += it->second.second;
    }
  }
  if (parts.parsed) {
    auto it = rules.bias_overrides.find(parts.target);
    if (it != rules.bias_overrides.end()) {
      for (int i = 0; i < 3; ++i) scores[i] += it->second[i];
    }
  }
  StanceLabel label = rules.default_label;
  if (scores != std::array<double, 3>{0.0, 0.0, 0.0}) {
    int best = 0;
    for (int i = 1; i < 3; ++i) {
      if (scores[i] > scores[best]) best = i;  // ties keep canonical order
    }
    label = kAllLabels[static_cast<std::size_t>(best)];
  }
  return "The attitude is " + std::string(to_string(label)) +
         " because of the wording.";
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

class Gateway {
 public:
  struct Completion {
    std::string text;
    std::string backend_id;
  };

  struct CachedResult {
    std::string text;
    bool hit = false;  // false only for the call that invoked the backend
    std::string backend_id;
  };

  explicit Gateway(BackendConfig cfg)
      : cfg_(std::move(cfg)),
        bucket_(cfg_.max_requests_per_second,
                std::max(1.0, cfg_.max_requests_per_second)) {
    validate(cfg_);
  }

  const BackendConfig& config() const { return cfg_; }

  // Number of requests actually issued to the backend (one per mock
  // evaluation; one per HTTP POST, retries included).
  std::uint64_t backend_calls() const { return backend_calls_.load(); }

  std::string complete(const PromptSpec& p) { return complete_meta(p).text; }

  Completion complete_meta(const PromptSpec& p) {
    if (p.messages.empty() || p.messages.back().role != Role::User) {
      throw UsageError(ErrorKind::InvalidConfig,
                       "prompt must end with a user message");
    }
    if (cfg_.kind == BackendKind::Mock) {
      backend_calls_.fetch_add(1);
      return {mock_reply(cfg_.mock, p.final_user_content()), "mock"};
    }
    return http_complete(p);
  }

  // Disk-cached completion. Safe under concurrent callers: reads are plain
  // file reads, writes go through a temp-file rename, and concurrent misses
  // on the same key collapse to a single backend call.
  CachedResult cached_complete(const PromptSpec& p,
                               const std::filesystem::path& cache_dir) {
    std::string key = request_digest(p, cfg_);
    if (std::optional<CacheEntry> entry = read_cache_entry(cache_dir, key)) {
      return {entry->raw_output, true, entry->backend_id};
    }

    std::promise<Completion> promise;
    std::shared_future<Completion> flight;
    bool leader = false;
    {
      std::lock_guard<std::mutex> lock(inflight_mu_);
      auto it = inflight_.find(key);
      if (it == inflight_.end()) {
        flight = promise.get_future().share();
        inflight_.emplace(key, flight);
        leader = true;
      } else {
        flight = it->second;
      }
    }
    if (!leader) {
      Completion done = flight.get();  // rethrows the leader's failure
      return {done.text, true, done.backend_id};
    }
    try {
      Completion done = complete_meta(p);
      write_cache_entry(cache_dir, key, done);
      promise.set_value(done);
      finish_flight(key);
      return {done.text, false, done.backend_id};
    } catch (...) {
      promise.set_exception(std::current_exception());
      finish_flight(key);
      throw;
    }
  }

  static std::filesystem::path cache_path(
      const std::filesystem::path& cache_dir, const std::string& key) {
    return cache_dir / key.substr(0, 2) / (key + ".json");
  }

 private:
  void finish_flight(const std::string& key) {
    std::lock_guard<std::mutex> lock(inflight_mu_);
    inflight_.erase(key);
  }

  std::optional<CacheEntry> read_cache_entry(
      const std::filesystem::path& cache_dir, const std::string& key) {
    std::filesystem::path path = cache_path(cache_dir, key);
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream oss;
    oss << in.rdbuf();
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(oss.str());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(ErrorKind::CacheCorrupt,
                      key + ": invalid JSON: " + e.what());
    }
    CacheEntry entry;
    try {
      entry.key = j.at("key").get<std::string>();
      entry.raw_output = j.at("raw_output").get<std::string>();
      entry.backend_id = j.at("backend_id").get<std::string>();
      entry.created_at = j.at("created_at").get<std::string>();
      const auto& params = j.at("request_params");
      entry.model_name = params.at("model_name").get<std::string>();
      entry.temperature = params.at("temperature").get<double>();
      entry.max_tokens = params.at("max_tokens").get<std::uint32_t>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(ErrorKind::CacheCorrupt, key + ": " + e.what());
    }
    if (entry.key != key) {
      throw DataError(ErrorKind::CacheCorrupt,
                      key + ": entry holds key " + entry.key);
    }
    return entry;
  }

  void write_cache_entry(const std::filesystem::path& cache_dir,
                         const std::string& key, const Completion& done) {
    nlohmann::ordered_json j;
    j["key"] = key;
    j["raw_output"] = done.text;
    j["backend_id"] = done.backend_id;
    j["created_at"] = detail::iso8601_utc(std::chrono::system_clock::now());
    nlohmann::ordered_json params;
    params["model_name"] = cfg_.model_name;
    params["temperature"] = cfg_.temperature;
    params["max_tokens"] = cfg_.max_tokens;
    j["request_params"] = std::move(params);
    detail::atomic_write_file(cache_path(cache_dir, key), j.dump());
  }

  struct ParsedUrl {
    std::string base;  // scheme://host[:port]
    std::string path;  // /path, defaulting to /
  };

  static ParsedUrl parse_endpoint(const std::string& url) {
    std::size_t scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
      throw UsageError(ErrorKind::InvalidConfig,
                       "endpoint_url must include a scheme: " + url);
    }
    std::size_t path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
  }

  Completion http_complete(const PromptSpec& p) {
    const char* key_value = std::getenv(cfg_.api_key_env_var.c_str());
    if (key_value == nullptr || *key_value == '\0') {
      throw BackendError(ErrorKind::MissingApiKey,
                         "environment variable " + cfg_.api_key_env_var +
                             " is not set");
    }
    ParsedUrl url = parse_endpoint(cfg_.endpoint_url);

    nlohmann::ordered_json body;
    body["model"] = cfg_.model_name;
    nlohmann::ordered_json msgs = nlohmann::ordered_json::array();
    for (const Message& m : p.messages) {
      nlohmann::ordered_json mj;
      mj["role"] = std::string(to_string(m.role));
      mj["content"] = m.content;
      msgs.push_back(std::move(mj));
    }
    body["messages"] = std::move(msgs);
    body["temperature"] = cfg_.temperature;
    body["max_tokens"] = cfg_.max_tokens;
    std::string payload = body.dump();

    httplib::Headers headers = {
        {"Authorization", "Bearer " + std::string(key_value)}};

    int last_status = 0;
    for (std::uint32_t attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) backoff_sleep(attempt - 1);
      bucket_.acquire();
      httplib::Client client(url.base);
      client.set_connection_timeout(0, cfg_.timeout_ms * 1000);
      client.set_read_timeout(cfg_.timeout_ms / 1000,
                              (cfg_.timeout_ms % 1000) * 1000);
      client.set_write_timeout(cfg_.timeout_ms / 1000,
                               (cfg_.timeout_ms % 1000) * 1000);
      backend_calls_.fetch_add(1);
      httplib::Result res =
          client.Post(url.path, headers, payload, "application/json");
      if (!res) {
        throw BackendError(ErrorKind::Timeout,
                           "transport failure: " + httplib::to_string(res.error()));
      }
      last_status = res->status;
      if (res->status == 429 || res->status >= 500) continue;
      if (res->status != 200) {
        throw BackendError(ErrorKind::HttpStatus,
                           "HTTP " + std::to_string(res->status) + ": " +
                               res->body.substr(0, 200));
      }
      return parse_completion_body(res->body);
    }
    throw BackendError(ErrorKind::RetriesExhausted,
                       std::to_string(cfg_.max_retries + 1) +
                           " attempts failed, last status HTTP " +
                           std::to_string(last_status));
  }

  Completion parse_completion_body(const std::string& body) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(ErrorKind::MalformedResponse,
                         std::string("response is not JSON: ") + e.what());
    }
    if (!j.contains("choices") || !j["choices"].is_array() ||
        j["choices"].empty()) {
      throw BackendError(ErrorKind::MalformedResponse,
                         "response has no choices[0]");
    }
    const nlohmann::json& first = j["choices"][0];
    if (!first.contains("message") || !first["message"].contains("content") ||
        !first["message"]["content"].is_string()) {
      throw BackendError(ErrorKind::MalformedResponse,
                         "response has no choices[0].message.content string");
    }
    Completion done;
    done.text = first["message"]["content"].get<std::string>();
    done.backend_id = j.contains("model") && j["model"].is_string()
                          ? j["model"].get<std::string>()
                          : cfg_.model_name;
    return done;
  }

  // Exponential backoff: base 500 ms, factor 2, jitter +-20%.
  void backoff_sleep(std::uint32_t completed_attempts) {
    double base_ms = 500.0 * std::pow(2.0, completed_attempts);
    thread_local std::mt19937_64 rng{std::random_device{}()};
    std::uniform_real_distribution<double> jitter(0.8, 1.2);
    std::this_thread::sleep_for(
        std::chrono::duration<double, std::milli>(base_ms * jitter(rng)));
  }

  BackendConfig cfg_;
  TokenBucket bucket_;
  std::atomic<std::uint64_t> backend_calls_{0};
  std::mutex inflight_mu_;
  std::unordered_map<std::string, std::shared_future<Completion>> inflight_;
};

}  // namespace stancekit
