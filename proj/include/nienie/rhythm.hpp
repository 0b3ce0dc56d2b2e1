#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace nienie::rhythm {

inline constexpr std::int64_t kMinPeriodMs = 600;
inline constexpr std::int64_t kMaxPeriodMs = 6000;

// One squeeze/release cycle; times in ms relative to the pattern start.
struct Beat {
  std::int64_t squeeze_ms = 0;
  std::int64_t release_ms = 0;

  friend bool operator==(const Beat&, const Beat&) = default;
};

struct RhythmPattern {
  std::int64_t cycle_period_ms = 2000;
  double squeeze_fraction = 0.4;
  int reps = 5;

  // Squeeze window length, within [1, period - 1].
  std::int64_t squeeze_window_ms() const;
  std::int64_t duration_ms() const { return cycle_period_ms * reps; }
  std::vector<Beat> beats() const;
  // Throws an invalid_argument error when an invariant is broken.
  void validate() const;
};

// Linear map from calm (2000 ms) to maximal stress (1000 ms), 5 reps.
RhythmPattern generate_pattern(double smoothed_stress);

// Lengthening schedule. A constrained set of named presets is the only way an
// external advisor can change it.
struct RampPolicy {
  std::int64_t target_period_ms = 4000;
  std::int64_t step_ms = 200;
  int cycles_per_step = 3;
};

std::optional<RampPolicy> ramp_policy_for(std::string_view preset);
std::span<const std::string_view> ramp_presets();

struct PlanBlock {
  std::int64_t start_ms = 0;
  RhythmPattern pattern;

  std::int64_t end_ms() const { return start_ms + pattern.duration_ms(); }
};

struct RhythmPlan {
  std::vector<PlanBlock> blocks;  // contiguous, in time order
  RampPolicy ramp;

  bool empty() const { return blocks.empty(); }
  std::int64_t start_ms() const { return blocks.empty() ? 0 : blocks.front().start_ms; }
  std::int64_t end_ms() const { return blocks.empty() ? 0 : blocks.back().end_ms(); }
  std::size_t beat_count() const;
  // Absolute beat times across all blocks.
  std::vector<Beat> beats() const;
};

// Ramp blocks of cycles_per_step cycles each, lengthening by step_ms until the
// target, followed by one block of initial.reps cycles at the target period.
RhythmPlan plan_ramp(const RhythmPattern& initial, const RampPolicy& policy = {}, std::int64_t start_ms = 0);

enum class CueKind { squeeze, release, rest, end };

std::string_view to_string(CueKind kind);

struct Cue {
  CueKind kind = CueKind::end;
  std::int64_t due_ms = 0;
  int block = -1;
  int beat = -1;

  friend bool operator==(const Cue&, const Cue&) = default;
};

// First cue due at or after now_ms: squeeze/release cues for each beat, one
// rest cue at the plan end, and an end marker past it. Due times are exact
// integer offsets from block starts, so lookups never accumulate drift.
Cue next_cue(const RhythmPlan& plan, std::int64_t now_ms);

// All cues with from_ms <= due_ms < to_ms, in time order (no end marker).
std::vector<Cue> cues_between(const RhythmPlan& plan, std::int64_t from_ms, std::int64_t to_ms);

struct SqueezeSample {
  std::int64_t t_ms = 0;
  double intensity = 0.0;
};

struct SqueezeEvent {
  std::int64_t onset_ms = 0;
  double peak_intensity = 0.0;
  std::int64_t release_ms = 0;

  friend bool operator==(const SqueezeEvent&, const SqueezeEvent&) = default;
};

struct DetectorConfig {
  double on_threshold = 0.5;
  double off_threshold = 0.3;
  std::int64_t min_gap_ms = 150;
};

// Streaming hysteresis detector. An event opens on intensity >= on_threshold
// and closes on intensity < off_threshold. A new opening less than min_gap_ms
// after the previous onset is merged into that event instead.
class SqueezeDetector {
 public:
  explicit SqueezeDetector(DetectorConfig config = {});

  struct Update {
    std::optional<std::int64_t> onset;      // a new (unmerged) onset at this sample
    std::optional<SqueezeEvent> finished;   // an event that can no longer merge
  };

  // Timestamps must be non-decreasing.
  Update push(const SqueezeSample& sample);
  // Closes an open event at the last sample and finalizes any pending one.
  std::optional<SqueezeEvent> flush();

  bool is_open() const { return open_; }
  std::optional<std::int64_t> last_time() const { return last_t_; }

 private:
  DetectorConfig config_;
  bool open_ = false;
  SqueezeEvent current_;
  std::optional<SqueezeEvent> pending_;
  std::optional<std::int64_t> last_t_;
};

std::vector<SqueezeEvent> detect_squeeze_events(std::span<const SqueezeSample> stream, DetectorConfig config = {});

struct AdherenceReport {
  int beats_total = 0;
  int beats_hit = 0;
  double mean_abs_timing_error_ms = 0.0;
  double sync_score = 0.0;
};

// (hits / total) * max(0, 1 - mean_abs_err / tolerance); 0 when nothing hit.
double sync_score(int beats_hit, int beats_total, double mean_abs_err_ms, std::int64_t tolerance_ms);

struct BeatMatch {
  std::size_t beat = 0;
  std::size_t event = 0;
  std::int64_t error_ms = 0;  // onset - beat
};

struct MatchResult {
  AdherenceReport report;
  std::vector<BeatMatch> matches;
};

// Greedy one-to-one matching: beats in time order each take the nearest
// unmatched onset within +-tolerance (ties go to the earlier onset). Both inputs
// must be sorted ascending.
MatchResult match_onsets(std::span<const std::int64_t> beat_onsets, std::span<const std::int64_t> event_onsets,
                         std::int64_t tolerance_ms = 250);

AdherenceReport score_adherence(std::span<const SqueezeEvent> events, std::span<const Beat> beats,
                                std::int64_t tolerance_ms = 250);

// Running totals across scored blocks.
class AdherenceAccumulator {
 public:
  void add(const AdherenceReport& block);
  AdherenceReport report(std::int64_t tolerance_ms = 250) const;

 private:
  int total_ = 0;
  int hit_ = 0;
  double abs_err_sum_ = 0.0;
};

}  // namespace nienie::rhythm
