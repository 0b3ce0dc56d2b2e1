#include "nienie/guidance.hpp"

#include <array>
#include <cmath>
#include <cstdlib>
#include <regex>

#include <httplib.h>
#include <json.hpp>

#include "nienie/config.hpp"
#include "nienie/error.hpp"
#include "nienie/rhythm.hpp"

namespace nienie::guidance {

using nlohmann::json;

std::string_view to_string(Tone tone) {
  switch (tone) {
    case Tone::supportive:
      return "supportive";
    case Tone::neutral:
      return "neutral";
    case Tone::motivational:
      return "motivational";
  }
  return "neutral";
}

std::string_view to_string(MessageSource source) {
  return source == MessageSource::remote ? "remote" : "template";
}

std::optional<Tone> parse_tone(std::string_view text) {
  if (text == "supportive") return Tone::supportive;
  if (text == "neutral") return Tone::neutral;
  if (text == "motivational") return Tone::motivational;
  return std::nullopt;
}

void validate(const GuidanceContext& ctx) {
  if (!(ctx.sync_score_recent >= 0.0 && ctx.sync_score_recent <= 1.0))
    fail(ErrorCode::invalid_argument, "sync score must lie in [0, 1]");
  if (!std::isfinite(ctx.stress_trend)) fail(ErrorCode::invalid_argument, "stress trend must be finite");
  if (ctx.seconds_since_last_message && !(*ctx.seconds_since_last_message >= 0.0))
    fail(ErrorCode::invalid_argument, "seconds since last message must be non-negative");
}

Tone select_tone(const GuidanceContext& ctx) {
  validate(ctx);
  if (ctx.sync_score_recent >= 0.7 && ctx.stress_trend <= 0.0) return Tone::supportive;
  if (ctx.sync_score_recent < 0.4) return Tone::motivational;
  return Tone::neutral;
}

bool gate_rate(const GuidanceContext& ctx, double min_interval_s) {
  return !ctx.seconds_since_last_message || *ctx.seconds_since_last_message >= min_interval_s;
}

namespace {

constexpr std::array<std::string_view, 4> kSupportive = {
    "Nice and even. Stay with this pace.",
    "That timing is working. Keep the same steady squeezes.",
    "Smooth rhythm. Let each release be as calm as the squeeze.",
    "You are right on the beat. Hold this rhythm a little longer.",
};

constexpr std::array<std::string_view, 4> kNeutral = {
    "Squeeze as the cue lands, then let go fully.",
    "Follow the ring: squeeze when it closes, release when it opens.",
    "Listen for the beat and match each squeeze to it.",
    "The cycles will stretch out soon. Let your hands follow.",
};

// every motivational variant steers toward a slower, re-synchronized pace
constexpr std::array<std::string_view, 4> kMotivational = {
    "Slow down a little and wait for the next cue before you squeeze.",
    "Ease off the pace and let the beat lead you back in.",
    "No rush. Let the next cue set the pace for you.",
    "Pause for a breath, then squeeze again right on the cue.",
};

std::uint64_t mix(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::span<const std::string_view> templates(Tone tone) {
  switch (tone) {
    case Tone::supportive:
      return kSupportive;
    case Tone::neutral:
      return kNeutral;
    case Tone::motivational:
      return kMotivational;
  }
  return kNeutral;
}

GuidanceMessage render_template(Tone tone, const GuidanceContext&, std::uint64_t seed, std::int64_t created_at_ms) {
  auto table = templates(tone);
  const auto idx = static_cast<std::size_t>(mix(seed ^ (static_cast<std::uint64_t>(tone) << 56)) % table.size());
  GuidanceMessage msg;
  msg.tone = tone;
  msg.text = std::string(table[idx]);
  msg.source = MessageSource::template_text;
  msg.created_at_ms = created_at_ms;
  return msg;
}

std::size_t utf8_length(std::string_view text) {
  std::size_t n = 0;
  for (unsigned char c : text) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

namespace {

// Byte length of the UTF-8 sequence starting with lead byte c (1 for invalid).
std::size_t seq_len(unsigned char c) {
  if (c >= 0xF0 && c < 0xF8) return 4;
  if (c >= 0xE0) return 3;
  if (c >= 0xC0) return 2;
  return 1;
}

bool is_space(char c) { return c == ' ' || c == '\t'; }

}  // namespace

std::optional<std::string> sanitize(std::string_view raw, std::size_t max_chars) {
  // first non-empty line
  std::string_view line;
  while (!raw.empty()) {
    const auto nl = raw.find_first_of("\r\n");
    line = raw.substr(0, nl);
    if (line.find_first_not_of(" \t") != std::string_view::npos || nl == std::string_view::npos) break;
    raw.remove_prefix(nl + 1);
  }

  std::string clean;
  clean.reserve(line.size());
  for (std::size_t i = 0; i < line.size();) {
    const auto c = static_cast<unsigned char>(line[i]);
    const std::size_t n = std::min(seq_len(c), line.size() - i);
    if (n == 1) {
      if (c >= 0x80) {  // stray continuation or invalid lead byte
        ++i;
        continue;
      }
      if (c == '\t') clean.push_back(' ');
      else if (c >= 0x20 && c != 0x7F) clean.push_back(static_cast<char>(c));
      ++i;
      continue;
    }
    // C1 controls U+0080..U+009F are encoded as C2 80..C2 9F
    const bool c1 = n == 2 && c == 0xC2 && static_cast<unsigned char>(line[i + 1]) < 0xA0;
    if (!c1) clean.append(line.substr(i, n));
    i += n;
  }

  auto trimmed = [](std::string s) {
    const auto b = s.find_first_not_of(' ');
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(' ');
    return s.substr(b, e - b + 1);
  };
  clean = trimmed(std::move(clean));
  if (clean.empty()) return std::nullopt;
  if (utf8_length(clean) <= max_chars) return clean;

  // byte offset just past max_chars code points
  std::size_t cut = 0;
  for (std::size_t chars = 0; cut < clean.size() && chars < max_chars; ++chars)
    cut += seq_len(static_cast<unsigned char>(clean[cut]));
  // if the cut lands inside a word, back up to the last space
  if (!is_space(clean[cut])) {
    const auto sp = clean.rfind(' ', cut);
    if (sp == std::string::npos) return std::nullopt;
    cut = sp;
  }
  auto out = trimmed(clean.substr(0, cut));
  if (out.empty()) return std::nullopt;
  return out;
}

bool valid_text(std::string_view text) {
  if (text.empty() || utf8_length(text) > kMaxMessageChars) return false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c < 0x20 || c == 0x7F) return false;
    if (c == 0xC2 && i + 1 < text.size() && static_cast<unsigned char>(text[i + 1]) < 0xA0) return false;
  }
  return true;
}

double trend_slope(std::span<const std::int64_t> t_ms, std::span<const double> values) {
  if (t_ms.size() != values.size()) fail(ErrorCode::invalid_argument, "trend inputs differ in length");
  const std::size_t n = t_ms.size();
  if (n < 2) return 0.0;
  double mt = 0.0;
  double mv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mt += static_cast<double>(t_ms[i]) / 1000.0;
    mv += values[i];
  }
  mt /= static_cast<double>(n);
  mv /= static_cast<double>(n);
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dt = static_cast<double>(t_ms[i]) / 1000.0 - mt;
    sxx += dt * dt;
    sxy += dt * (values[i] - mv);
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

RemoteConfig RemoteConfig::from_config(const FlatConfig& cfg) {
  RemoteConfig out;
  out.url = cfg.get_or("llm_url", "");
  out.api_key = cfg.get_or("llm_key", "");
  out.model = cfg.get_or("llm_model", out.model);
  out.timeout_s = cfg.get_double("llm_timeout_s", out.timeout_s);
  return out;
}

RemoteConfig RemoteConfig::from_env() { return from_config(FlatConfig{}); }

std::string build_prompt(Tone tone, const GuidanceContext& ctx) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "Write one %s coaching line for a squeeze-and-release rhythm exercise. "
                "Recent rhythm sync (0-1): %.2f. Stress trend per minute: %+.3f. Mean squeeze peak (0-1): %.2f. "
                "At most 140 characters, plain text. You may instead answer with JSON "
                "{\"message\": \"...\", \"policy\": \"standard|gentle|deep|brief\"} to suggest a ramp preset.",
                std::string(to_string(tone)).c_str(), ctx.sync_score_recent, ctx.stress_trend * 60.0,
                ctx.mean_peak_intensity);
  return buf;
}

std::string build_request_body(Tone tone, const GuidanceContext& ctx, const RemoteConfig& cfg) {
  json body = {
      {"model", cfg.model},
      {"max_tokens", 64},
      {"temperature", 0.7},
      {"messages",
       json::array({
           {{"role", "system"}, {"content", "You coach a short biofeedback rhythm game. Reply with a single short line."}},
           {{"role", "user"}, {"content", build_prompt(tone, ctx)}},
       })},
  };
  return body.dump();
}

RemoteReply parse_completion(std::string_view body) {
  RemoteReply reply;
  json doc = json::parse(body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) return reply;
  const auto choices = doc.find("choices");
  if (choices == doc.end() || !choices->is_array() || choices->empty()) return reply;
  const json& first = (*choices)[0];
  if (!first.is_object() || !first.contains("message") || !first["message"].is_object()) return reply;
  const json& content = first["message"].value("content", json());
  if (!content.is_string()) return reply;
  std::string text = content.get<std::string>();

  const auto lead = text.find_first_not_of(" \t\r\n");
  if (lead != std::string::npos && text[lead] == '{') {
    json inner = json::parse(text, nullptr, false);
    if (!inner.is_discarded() && inner.is_object() && inner.contains("message") && inner["message"].is_string()) {
      text = inner["message"].get<std::string>();
      if (inner.contains("policy") && inner["policy"].is_string()) {
        auto name = inner["policy"].get<std::string>();
        if (rhythm::ramp_policy_for(name)) reply.policy = name;
      }
    }
  }
  reply.text = std::move(text);
  return reply;
}

namespace {

struct Endpoint {
  std::string origin;
  std::string path;
};

std::optional<Endpoint> split_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) return std::nullopt;
  return Endpoint{m[1].str(), m[2].matched ? m[2].str() : std::string("/")};
}

}  // namespace

GuidanceMessage generate_remote(Tone tone, const GuidanceContext& ctx, const RemoteConfig& cfg, std::uint64_t seed,
                                std::int64_t created_at_ms) {
  auto fallback = [&] { return render_template(tone, ctx, seed, created_at_ms); };
  if (!cfg.enabled()) return fallback();
  auto ep = split_url(cfg.url);
  if (!ep) return fallback();
  try {
    httplib::Client client(ep->origin);
    const auto secs = static_cast<time_t>(cfg.timeout_s);
    const auto usecs = static_cast<time_t>((cfg.timeout_s - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (!cfg.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg.api_key);
    auto res = client.Post(ep->path, headers, build_request_body(tone, ctx, cfg), "application/json");
    if (!res || res->status != 200) return fallback();
    auto reply = parse_completion(res->body);
    if (!reply.text) return fallback();
    auto text = sanitize(*reply.text);
    if (!text) return fallback();
    GuidanceMessage msg;
    msg.tone = tone;
    msg.text = std::move(*text);
    msg.source = MessageSource::remote;
    msg.created_at_ms = created_at_ms;
    msg.policy = reply.policy;
    return msg;
  } catch (...) {
    return fallback();
  }
}

GuidanceService::GuidanceService(RemoteConfig remote) : remote_(std::move(remote)) {}

GuidanceService::~GuidanceService() {
  for (auto& w : workers_) {
    if (w.joinable()) w.join();
  }
}

void GuidanceService::set_notify(Callback cb) {
  std::lock_guard lock(mu_);
  notify_ = std::move(cb);
}

bool GuidanceService::request(Tone tone, const GuidanceContext& ctx, std::uint64_t seed, std::int64_t created_at_ms) {
  Callback notify;
  {
    std::lock_guard lock(mu_);
    if (in_flight_) return false;
    if (!remote_.enabled()) {
      ready_.push_back(render_template(tone, ctx, seed, created_at_ms));
    } else {
      in_flight_ = true;
    }
    notify = notify_;
  }
  if (!remote_.enabled()) {
    if (notify) notify();
    return true;
  }
  // finished workers only; the in-flight flag guarantees none is running
  for (auto& w : workers_) {
    if (w.joinable()) w.join();
  }
  workers_.clear();
  workers_.emplace_back([this, tone, ctx, seed, created_at_ms] {
    auto msg = generate_remote(tone, ctx, remote_, seed, created_at_ms);
    Callback cb;
    {
      std::lock_guard lock(mu_);
      ready_.push_back(std::move(msg));
      in_flight_ = false;
      cb = notify_;
    }
    idle_cv_.notify_all();
    if (cb) cb();
  });
  return true;
}

bool GuidanceService::busy() const {
  std::lock_guard lock(mu_);
  return in_flight_;
}

std::vector<GuidanceMessage> GuidanceService::poll() {
  std::lock_guard lock(mu_);
  std::vector<GuidanceMessage> out(std::make_move_iterator(ready_.begin()), std::make_move_iterator(ready_.end()));
  ready_.clear();
  return out;
}

bool GuidanceService::wait_idle(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  return idle_cv_.wait_for(lock, timeout, [this] { return !in_flight_; });
}

}  // namespace nienie::guidance
