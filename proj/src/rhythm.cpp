#include "nienie/rhythm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>

#include "nienie/error.hpp"

namespace nienie::rhythm {

std::int64_t RhythmPattern::squeeze_window_ms() const {
  const auto w = static_cast<std::int64_t>(std::llround(squeeze_fraction * static_cast<double>(cycle_period_ms)));
  return std::clamp<std::int64_t>(w, 1, cycle_period_ms - 1);
}

std::vector<Beat> RhythmPattern::beats() const {
  std::vector<Beat> out;
  out.reserve(static_cast<std::size_t>(std::max(reps, 0)));
  const std::int64_t w = squeeze_window_ms();
  for (int n = 0; n < reps; ++n) {
    const std::int64_t onset = n * cycle_period_ms;
    out.push_back({onset, onset + w});
  }
  return out;
}

void RhythmPattern::validate() const {
  if (cycle_period_ms < kMinPeriodMs || cycle_period_ms > kMaxPeriodMs)
    fail(ErrorCode::invalid_argument, "cycle period " + std::to_string(cycle_period_ms) + " ms is outside [600, 6000]");
  if (!(squeeze_fraction > 0.0 && squeeze_fraction < 1.0))
    fail(ErrorCode::invalid_argument, "squeeze_fraction must lie in (0, 1)");
  if (reps < 1) fail(ErrorCode::invalid_argument, "reps must be >= 1");
}

RhythmPattern generate_pattern(double smoothed_stress) {
  if (!(smoothed_stress >= 0.0 && smoothed_stress <= 1.0))
    fail(ErrorCode::invalid_argument, "stress must lie in [0, 1]");
  RhythmPattern p;
  p.cycle_period_ms = static_cast<std::int64_t>(std::llround(2000.0 - 1000.0 * smoothed_stress));
  p.reps = 5;
  return p;
}

namespace {

constexpr std::array<std::string_view, 4> kPresetNames = {"standard", "gentle", "deep", "brief"};

}  // namespace

std::optional<RampPolicy> ramp_policy_for(std::string_view preset) {
  if (preset == "standard") return RampPolicy{4000, 200, 3};
  if (preset == "gentle") return RampPolicy{4000, 100, 3};
  if (preset == "deep") return RampPolicy{5000, 200, 3};
  if (preset == "brief") return RampPolicy{3000, 200, 2};
  return std::nullopt;
}

std::span<const std::string_view> ramp_presets() { return kPresetNames; }

std::size_t RhythmPlan::beat_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks) n += static_cast<std::size_t>(b.pattern.reps);
  return n;
}

std::vector<Beat> RhythmPlan::beats() const {
  std::vector<Beat> out;
  out.reserve(beat_count());
  for (const auto& b : blocks) {
    for (const Beat& beat : b.pattern.beats()) out.push_back({b.start_ms + beat.squeeze_ms, b.start_ms + beat.release_ms});
  }
  return out;
}

RhythmPlan plan_ramp(const RhythmPattern& initial, const RampPolicy& policy, std::int64_t start_ms) {
  initial.validate();
  if (policy.target_period_ms < initial.cycle_period_ms)
    fail(ErrorCode::invalid_argument, "ramp target period is below the initial period");
  if (policy.target_period_ms > kMaxPeriodMs)
    fail(ErrorCode::invalid_argument, "ramp target period exceeds " + std::to_string(kMaxPeriodMs) + " ms");
  if (policy.target_period_ms > initial.cycle_period_ms && (policy.step_ms <= 0 || policy.cycles_per_step < 1))
    fail(ErrorCode::invalid_argument, "ramp step and cycles_per_step must be positive");

  RhythmPlan plan;
  plan.ramp = policy;
  std::int64_t cursor = start_ms;
  std::int64_t period = initial.cycle_period_ms;
  while (period < policy.target_period_ms) {
    RhythmPattern p = initial;
    p.cycle_period_ms = period;
    p.reps = policy.cycles_per_step;
    plan.blocks.push_back({cursor, p});
    cursor += p.duration_ms();
    period = std::min(period + policy.step_ms, policy.target_period_ms);
  }
  RhythmPattern last = initial;
  last.cycle_period_ms = policy.target_period_ms;
  plan.blocks.push_back({cursor, last});
  return plan;
}

std::string_view to_string(CueKind kind) {
  switch (kind) {
    case CueKind::squeeze:
      return "squeeze";
    case CueKind::release:
      return "release";
    case CueKind::rest:
      return "rest";
    case CueKind::end:
      return "end";
  }
  return "end";
}

Cue next_cue(const RhythmPlan& plan, std::int64_t now_ms) {
  if (plan.empty()) fail(ErrorCode::invalid_argument, "cue lookup on an empty plan");
  // first block that ends after now
  auto it = std::upper_bound(plan.blocks.begin(), plan.blocks.end(), now_ms,
                             [](std::int64_t t, const PlanBlock& b) { return t < b.end_ms(); });
  for (; it != plan.blocks.end(); ++it) {
    const RhythmPattern& p = it->pattern;
    const std::int64_t w = p.squeeze_window_ms();
    const std::int64_t rel = now_ms - it->start_ms;
    const int first = rel <= 0 ? 0 : static_cast<int>(rel / p.cycle_period_ms);
    const int block = static_cast<int>(it - plan.blocks.begin());
    for (int n = first; n < p.reps; ++n) {
      const std::int64_t onset = it->start_ms + n * p.cycle_period_ms;
      if (onset >= now_ms) return {CueKind::squeeze, onset, block, n};
      if (onset + w >= now_ms) return {CueKind::release, onset + w, block, n};
    }
  }
  if (now_ms <= plan.end_ms()) return {CueKind::rest, plan.end_ms(), static_cast<int>(plan.blocks.size()) - 1, -1};
  return {CueKind::end, plan.end_ms(), -1, -1};
}

std::vector<Cue> cues_between(const RhythmPlan& plan, std::int64_t from_ms, std::int64_t to_ms) {
  std::vector<Cue> out;
  if (plan.empty()) return out;
  std::int64_t t = from_ms;
  while (t < to_ms) {
    Cue c = next_cue(plan, t);
    if (c.kind == CueKind::end || c.due_ms >= to_ms) break;
    out.push_back(c);
    t = c.due_ms + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// squeeze detection

SqueezeDetector::SqueezeDetector(DetectorConfig config) : config_(config) {
  if (config_.off_threshold > config_.on_threshold)
    fail(ErrorCode::invalid_argument, "off threshold must not exceed the on threshold");
}

SqueezeDetector::Update SqueezeDetector::push(const SqueezeSample& s) {
  if (last_t_ && s.t_ms < *last_t_) fail(ErrorCode::invalid_argument, "squeeze timestamps must be non-decreasing");
  last_t_ = s.t_ms;
  Update up;
  if (pending_ && s.t_ms - pending_->onset_ms >= config_.min_gap_ms) {
    up.finished = pending_;
    pending_.reset();
  }
  if (!open_) {
    if (s.intensity >= config_.on_threshold) {
      if (pending_) {
        current_ = *pending_;
        pending_.reset();
        current_.peak_intensity = std::max(current_.peak_intensity, s.intensity);
      } else {
        current_ = {s.t_ms, s.intensity, s.t_ms};
        up.onset = s.t_ms;
      }
      open_ = true;
    }
    return up;
  }
  current_.peak_intensity = std::max(current_.peak_intensity, s.intensity);
  if (s.intensity < config_.off_threshold) {
    current_.release_ms = std::max(s.t_ms, current_.onset_ms + 1);
    open_ = false;
    pending_ = current_;
  }
  return up;
}

std::optional<SqueezeEvent> SqueezeDetector::flush() {
  if (open_) {
    current_.release_ms = std::max(last_t_.value_or(current_.onset_ms), current_.onset_ms + 1);
    open_ = false;
    pending_ = current_;
  }
  auto out = pending_;
  pending_.reset();
  return out;
}

std::vector<SqueezeEvent> detect_squeeze_events(std::span<const SqueezeSample> stream, DetectorConfig config) {
  SqueezeDetector det(config);
  std::vector<SqueezeEvent> out;
  for (const auto& s : stream) {
    auto up = det.push(s);
    if (up.finished) out.push_back(*up.finished);
  }
  if (auto last = det.flush()) out.push_back(*last);
  return out;
}

// ---------------------------------------------------------------------------
// adherence

double sync_score(int beats_hit, int beats_total, double mean_abs_err_ms, std::int64_t tolerance_ms) {
  if (beats_total <= 0 || beats_hit <= 0) return 0.0;
  const double rate = static_cast<double>(beats_hit) / static_cast<double>(beats_total);
  return rate * std::max(0.0, 1.0 - mean_abs_err_ms / static_cast<double>(tolerance_ms));
}

MatchResult match_onsets(std::span<const std::int64_t> beat_onsets, std::span<const std::int64_t> event_onsets,
                         std::int64_t tolerance_ms) {
  if (beat_onsets.empty()) fail(ErrorCode::invalid_argument, "adherence scoring needs at least one beat");
  if (tolerance_ms <= 0) fail(ErrorCode::invalid_argument, "tolerance must be positive");
  MatchResult out;
  std::vector<bool> used(event_onsets.size(), false);
  std::int64_t err_sum = 0;
  for (std::size_t b = 0; b < beat_onsets.size(); ++b) {
    std::optional<std::size_t> best;
    std::int64_t best_err = 0;
    for (std::size_t e = 0; e < event_onsets.size(); ++e) {
      if (used[e]) continue;
      const std::int64_t err = event_onsets[e] - beat_onsets[b];
      if (std::llabs(err) > tolerance_ms) continue;
      if (!best || std::llabs(err) < std::llabs(best_err)) {
        best = e;
        best_err = err;
      }
    }
    if (best) {
      used[*best] = true;
      out.matches.push_back({b, *best, best_err});
      err_sum += std::llabs(best_err);
    }
  }
  AdherenceReport& r = out.report;
  r.beats_total = static_cast<int>(beat_onsets.size());
  r.beats_hit = static_cast<int>(out.matches.size());
  r.mean_abs_timing_error_ms = r.beats_hit == 0 ? 0.0 : static_cast<double>(err_sum) / r.beats_hit;
  r.sync_score = sync_score(r.beats_hit, r.beats_total, r.mean_abs_timing_error_ms, tolerance_ms);
  return out;
}

AdherenceReport score_adherence(std::span<const SqueezeEvent> events, std::span<const Beat> beats,
                                std::int64_t tolerance_ms) {
  std::vector<std::int64_t> b;
  b.reserve(beats.size());
  for (const auto& beat : beats) b.push_back(beat.squeeze_ms);
  std::vector<std::int64_t> e;
  e.reserve(events.size());
  for (const auto& ev : events) e.push_back(ev.onset_ms);
  std::sort(b.begin(), b.end());
  std::sort(e.begin(), e.end());
  return match_onsets(b, e, tolerance_ms).report;
}

void AdherenceAccumulator::add(const AdherenceReport& block) {
  total_ += block.beats_total;
  hit_ += block.beats_hit;
  abs_err_sum_ += block.mean_abs_timing_error_ms * block.beats_hit;
}

AdherenceReport AdherenceAccumulator::report(std::int64_t tolerance_ms) const {
  AdherenceReport r;
  r.beats_total = total_;
  r.beats_hit = hit_;
  r.mean_abs_timing_error_ms = hit_ == 0 ? 0.0 : abs_err_sum_ / hit_;
  r.sync_score = sync_score(hit_, total_, r.mean_abs_timing_error_ms, tolerance_ms);
  return r;
}

}  // namespace nienie::rhythm
