#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace nienie {
class FlatConfig;
}

namespace nienie::guidance {

enum class Tone { supportive, neutral, motivational };
enum class MessageSource { template_text, remote };

std::string_view to_string(Tone tone);
std::string_view to_string(MessageSource source);  // "template" / "remote"
std::optional<Tone> parse_tone(std::string_view text);

inline constexpr std::size_t kMaxMessageChars = 140;
inline constexpr double kDefaultMinIntervalS = 10.0;

struct GuidanceContext {
  double sync_score_recent = 0.0;  // last scored block
  double stress_trend = 0.0;       // smoothed score slope, per second, over the last 60 s
  double mean_peak_intensity = 0.0;
  std::optional<double> seconds_since_last_message;  // empty before the first message
};

struct GuidanceMessage {
  Tone tone = Tone::neutral;
  std::string text;
  MessageSource source = MessageSource::template_text;
  std::int64_t created_at_ms = 0;
  std::optional<std::string> policy;  // ramp preset suggested by the remote advisor
};

// Throws invalid_argument for sync outside [0, 1] or a non-finite trend.
void validate(const GuidanceContext& ctx);

// sync >= 0.7 and trend <= 0 -> supportive; sync < 0.4 -> motivational;
// otherwise neutral.
Tone select_tone(const GuidanceContext& ctx);

bool gate_rate(const GuidanceContext& ctx, double min_interval_s = kDefaultMinIntervalS);

std::span<const std::string_view> templates(Tone tone);

// Deterministic per (tone, seed).
GuidanceMessage render_template(Tone tone, const GuidanceContext& ctx, std::uint64_t seed,
                                std::int64_t created_at_ms = 0);

// Length in Unicode code points.
std::size_t utf8_length(std::string_view text);

// First line, control characters removed, whitespace trimmed, cut at the last
// word boundary that fits max_chars. Empty result -> nullopt.
std::optional<std::string> sanitize(std::string_view raw, std::size_t max_chars = kMaxMessageChars);

// Message text invariant: non-empty, single line, no control characters,
// at most kMaxMessageChars code points.
bool valid_text(std::string_view text);

// Least-squares slope (per second) of (t_ms, value) points; 0 with fewer than
// two distinct times.
double trend_slope(std::span<const std::int64_t> t_ms, std::span<const double> values);

struct RemoteConfig {
  std::string url;  // full endpoint, e.g. http://127.0.0.1:8080/v1/chat/completions
  std::string api_key;
  std::string model = "gpt-4o-mini";
  double timeout_s = 2.0;

  bool enabled() const { return !url.empty(); }
  // Keys llm_url, llm_key, llm_model, llm_timeout_s (NIENIE_LLM_* override).
  static RemoteConfig from_config(const FlatConfig& cfg);
  // NIENIE_LLM_URL / NIENIE_LLM_KEY only.
  static RemoteConfig from_env();
};

// Prompt text: tone and aggregate scores only, never raw samples.
std::string build_prompt(Tone tone, const GuidanceContext& ctx);
std::string build_request_body(Tone tone, const GuidanceContext& ctx, const RemoteConfig& cfg);

struct RemoteReply {
  std::optional<std::string> text;
  std::optional<std::string> policy;
};

// Extracts choices[0].message.content. Content may itself be a JSON object
// {"message": ..., "policy": ...}; unknown policies are discarded.
RemoteReply parse_completion(std::string_view body);

// Blocking call with the configured timeout. Every failure (transport, status,
// parse, sanitizer) falls back to render_template with source = template.
GuidanceMessage generate_remote(Tone tone, const GuidanceContext& ctx, const RemoteConfig& cfg,
                                std::uint64_t seed, std::int64_t created_at_ms);

// Off-critical-path message generation for one session. Without a remote
// endpoint, requests complete synchronously from the template table. With one,
// each request runs on a worker thread; at most one is in flight.
class GuidanceService {
 public:
  using Callback = std::function<void()>;

  explicit GuidanceService(RemoteConfig remote = {});
  ~GuidanceService();
  GuidanceService(const GuidanceService&) = delete;
  GuidanceService& operator=(const GuidanceService&) = delete;

  // Called (from the worker thread) whenever a message becomes ready.
  void set_notify(Callback cb);

  // Returns false when a request is already in flight.
  bool request(Tone tone, const GuidanceContext& ctx, std::uint64_t seed, std::int64_t created_at_ms);
  bool busy() const;
  std::vector<GuidanceMessage> poll();
  // Waits until nothing is in flight or the timeout passes.
  bool wait_idle(std::chrono::milliseconds timeout);
  bool remote_enabled() const { return remote_.enabled(); }

 private:
  RemoteConfig remote_;
  Callback notify_;
  mutable std::mutex mu_;
  std::condition_variable idle_cv_;
  std::deque<GuidanceMessage> ready_;
  bool in_flight_ = false;
  std::vector<std::thread> workers_;
};

}  // namespace nienie::guidance
