#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nienie/guidance.hpp"
#include "nienie/model.hpp"
#include "nienie/rhythm.hpp"
#include "nienie/stress.hpp"
#include "nienie/types.hpp"

namespace nienie::session {

using Json = nlohmann::json;

inline constexpr int kLogSchemaVersion = 1;

enum class Mode { live, simulated, replay };
enum class Phase { calibrating, active, cooldown, ended };

std::string_view to_string(Mode mode);
std::string_view to_string(Phase phase);
std::optional<Mode> parse_mode(std::string_view text);
std::optional<Phase> parse_phase(std::string_view text);

struct SessionConfig {
  std::string session_id = "session";
  std::uint64_t seed = 0;
  Mode mode = Mode::simulated;
  double session_length_s = 180.0;
  double calibration_s = 60.0;
  double replan_interval_s = 30.0;
  double cooldown_s = 0.0;          // tail of session_length_s with no cues
  std::int64_t cue_lead_ms = 500;   // beats are announced this far ahead
  std::int64_t input_grace_ms = 0;  // extra horizon for late-arriving live input
  std::int64_t tolerance_ms = 250;
  double guidance_interval_s = guidance::kDefaultMinIntervalS;
  double trend_window_s = 60.0;
  double smoothing_alpha = 0.3;
  double k_sensitivity = 1.0;
  double squeeze_fraction = 0.4;
  rhythm::RampPolicy ramp;
  rhythm::DetectorConfig detector;

  std::int64_t active_start_ms() const;
  std::int64_t active_end_ms() const;
  std::int64_t end_ms() const;
  void validate() const;

  Json to_json() const;
  static SessionConfig from_json(const Json& j);
};

// One log line. Every record carries the session id, a strictly increasing
// sequence number and a non-decreasing session-relative time.
struct LogRecord {
  std::string session;
  std::uint64_t seq = 0;
  std::int64_t t_ms = 0;
  std::string type;
  Json payload;

  Json to_json() const;
  static LogRecord from_json(const Json& j);
};

class EventLog {
 public:
  using Listener = std::function<void(const LogRecord&)>;

  explicit EventLog(std::string session_id = "session") : session_(std::move(session_id)) {}

  const LogRecord& append(std::int64_t t_ms, std::string type, Json payload);
  void set_listener(Listener l) { listener_ = std::move(l); }

  const std::vector<LogRecord>& records() const { return records_; }
  const std::string& session_id() const { return session_; }
  std::size_t size() const { return records_.size(); }

  std::string to_jsonl() const;
  static EventLog from_jsonl(std::string_view text);
  void save(const std::string& path) const;
  static EventLog load(const std::string& path);

 private:
  std::string session_;
  std::vector<LogRecord> records_;
  Listener listener_;
};

// Drives calibration, the active rhythm phase and cooldown for one session in
// logical time. All inputs must arrive with non-decreasing timestamps; timed
// work (cues, block scoring, replans, phase changes) runs when time advances.
class SessionEngine {
 public:
  SessionEngine(SessionConfig config, std::shared_ptr<const StressModel> model,
                guidance::GuidanceService* guidance = nullptr);

  EventLog& log() { return log_; }
  const EventLog& log() const { return log_; }
  const SessionConfig& config() const { return config_; }
  Phase phase() const { return phase_; }
  std::int64_t now() const { return now_; }
  const std::optional<rhythm::RhythmPlan>& plan() const { return plan_; }
  const std::optional<stress::StressEstimate>& latest_estimate() const { return latest_; }
  rhythm::AdherenceReport cumulative() const { return cumulative_.report(config_.tolerance_ms); }
  const std::vector<guidance::GuidanceMessage>& messages() const { return messages_; }
  const stress::LatencyStats& latency() const { return stream_.latency(); }

  // Writes the start record. Called once before any input.
  void start(Json extra = Json::object());
  void advance_to(std::int64_t t_ms);
  void on_sample(std::int64_t t_ms, const Sample& sample);
  // Returns false (and changes nothing) if t_ms is earlier than the engine clock.
  bool on_squeeze(std::int64_t t_ms, double intensity);
  // A finished guidance message; emitted only if the phase and rate gate allow.
  void on_guidance(const guidance::GuidanceMessage& message, std::int64_t t_ms);
  void disconnect(std::int64_t t_ms, const std::string& reason);
  // Runs timed work up to the configured end and closes the session.
  void finish();

  // Cues (squeeze/release/rest) in [from_ms, to_ms) that the current plan
  // schedules inside the active phase.
  std::vector<rhythm::Cue> cues_between(std::int64_t from_ms, std::int64_t to_ms) const;
  // Due time of the first cue at or after t_ms inside the active phase.
  std::optional<std::int64_t> next_cue_due(std::int64_t t_ms) const;
  std::int64_t squeeze_window_at(std::int64_t due_ms) const;
  // Whether the most recent squeeze cue whose window has closed by t_ms was
  // answered by an onset within tolerance. False before the first such cue.
  bool adherent_at(std::int64_t t_ms) const;

  std::size_t guidance_dropped() const { return guidance_dropped_; }

 private:
  enum class Action { block_end, active_end, replan, active_start, cue, session_end };

  void run_action(Action a, std::int64_t t);
  std::optional<std::pair<std::int64_t, Action>> next_action() const;
  void set_phase(Phase p, std::int64_t t);
  void begin_active(std::int64_t t);
  void replan(std::int64_t t, bool initial);
  void score_block(std::int64_t block_start, std::int64_t block_end, std::int64_t beats_until, bool partial,
                   std::int64_t t);
  void maybe_request_guidance(std::int64_t t, double block_sync);
  void pump_guidance(std::int64_t t);
  void emit_guidance(const guidance::GuidanceMessage& msg, std::int64_t t);
  void check_time(std::int64_t t_ms, const char* what) const;

  SessionConfig config_;
  std::shared_ptr<const StressModel> model_;
  guidance::GuidanceService* guidance_;
  EventLog log_;
  stress::StressStream stream_;
  stress::StressScorer scorer_;
  rhythm::SqueezeDetector detector_;

  Phase phase_ = Phase::calibrating;
  bool started_ = false;
  std::int64_t now_ = 0;
  std::vector<stress::StressEstimate> calibration_estimates_;
  std::optional<stress::StressEstimate> latest_;
  std::vector<std::int64_t> smoothed_t_;
  std::vector<double> smoothed_v_;

  std::optional<rhythm::RhythmPlan> plan_;
  std::int64_t cue_cursor_ms_ = 0;       // next cue lookup starts here
  std::int64_t scored_until_ms_ = 0;     // blocks ending at or before this are scored
  std::int64_t next_replan_ms_ = 0;
  std::optional<std::string> pending_policy_;
  std::vector<std::int64_t> squeeze_cues_;  // emitted squeeze due times
  std::vector<std::int64_t> onsets_;
  std::vector<rhythm::SqueezeEvent> finished_events_;
  rhythm::AdherenceAccumulator cumulative_;

  std::vector<guidance::GuidanceMessage> messages_;
  std::optional<std::int64_t> last_message_ms_;
  std::uint64_t guidance_requests_ = 0;
  std::size_t guidance_dropped_ = 0;
};

// ---------------------------------------------------------------------------
// simulated user

// First-order stress physiology. While the user squeezes on the beat the
// elevation decays toward 0 at recovery_rate; otherwise it relaxes toward
// set_point at recovery_rate / 4. The emitted sample is
// baseline + elevation * direction + AR(1) noise. A modeling assumption,
// not a physiological claim.
struct Physiology {
  Sample baseline = {2.0, 33.5, 70.0};
  Sample direction = {6.0, 1.0, 25.0};
  double elevation = 0.8;      // initial
  double set_point = 1.5;      // where an unregulated user drifts
  double recovery_rate = 0.02; // per second
  Sample noise_sd = {0.6, 0.15, 3.0};
  double noise_rho = 0.9;      // per second

  Json to_json() const;
  static Physiology from_json(const Json& j);
};

struct SimulatedUser {
  double skill = 0.9;  // probability of squeezing on a cue
  double reaction_mean_ms = 120.0;
  double reaction_sd_ms = 60.0;
  double peak_intensity = 0.9;
  Physiology physiology;

  void validate() const;
  Json to_json() const;
  static SimulatedUser from_json(const Json& j);
};

struct SqueezePulse {
  std::int64_t onset_ms = 0;
  std::int64_t release_ms = 0;
  double peak = 0.0;

  // Held at peak on a ~30 Hz grid from onset, then 0 at release.
  std::vector<rhythm::SqueezeSample> samples() const;
};

// With probability skill, a pulse whose onset is the cue time plus a normal
// reaction delay clamped to +-3 sd, lasting one squeeze window. Both random
// draws happen for every cue, so paired seeds stay aligned across skills.
std::optional<SqueezePulse> step_simulated_user(const SimulatedUser& user, const rhythm::Cue& cue,
                                                std::int64_t squeeze_window_ms, std::mt19937_64& rng);

struct PhysiologyState {
  double elevation = 0.0;
  Sample noise = {0.0, 0.0, 0.0};
};

PhysiologyState init_physiology(const Physiology& p, std::mt19937_64& rng);
// Advances the state by dt_s and returns the resulting sample.
Sample step_physiology(const Physiology& p, PhysiologyState& state, bool adherent, double dt_s,
                       std::mt19937_64& rng);
// Noise-free part of the sample for a given elevation.
Sample physiology_mean(const Physiology& p, double elevation);

struct SimulationOptions {
  // 0 runs as fast as possible; otherwise logical ms per wall ms.
  double time_scale = 0.0;
  guidance::GuidanceService* guidance = nullptr;
};

// Headless closed loop: server-side physiology at 1 Hz, a simulated user
// answering announced cues. Deterministic for a fixed seed when guidance is
// template-only.
EventLog run_simulated(const SessionConfig& config, std::shared_ptr<const StressModel> model,
                       const SimulatedUser& user, const SimulationOptions& options = {});

// Re-feeds the recorded inputs (samples, squeezes, guidance, disconnects) of a
// log through a fresh engine configured from its start record.
EventLog replay(const EventLog& recorded, std::shared_ptr<const StressModel> model);

struct SessionSummary {
  std::array<double, 4> quarter_means{};  // smoothed stress over active-phase quarters
  rhythm::AdherenceReport adherence;
  std::size_t message_count = 0;
  double calibrating_s = 0.0;
  double active_s = 0.0;
  double cooldown_s = 0.0;
  bool disconnected = false;

  Json to_json() const;
};

// Throws a validation error when phase records are missing or the active phase
// is empty.
SessionSummary evaluate_session(const EventLog& log);

}  // namespace nienie::session
