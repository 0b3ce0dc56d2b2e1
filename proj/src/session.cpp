#include "nienie/session.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "nienie/error.hpp"
#include "nienie/random.hpp"

namespace nienie::session {

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::live:
      return "live";
    case Mode::simulated:
      return "simulated";
    case Mode::replay:
      return "replay";
  }
  return "simulated";
}

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::calibrating:
      return "calibrating";
    case Phase::active:
      return "active";
    case Phase::cooldown:
      return "cooldown";
    case Phase::ended:
      return "ended";
  }
  return "ended";
}

std::optional<Mode> parse_mode(std::string_view text) {
  for (Mode m : {Mode::live, Mode::simulated, Mode::replay}) {
    if (to_string(m) == text) return m;
  }
  return std::nullopt;
}

std::optional<Phase> parse_phase(std::string_view text) {
  for (Phase p : {Phase::calibrating, Phase::active, Phase::cooldown, Phase::ended}) {
    if (to_string(p) == text) return p;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// config

std::int64_t SessionConfig::active_start_ms() const { return std::llround(calibration_s * 1000.0); }
std::int64_t SessionConfig::active_end_ms() const { return std::llround((session_length_s - cooldown_s) * 1000.0); }
std::int64_t SessionConfig::end_ms() const { return std::llround(session_length_s * 1000.0); }

void SessionConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::invalid_argument, "session config: " + what); };
  if (session_id.empty()) bad("session_id is empty");
  if (!(session_length_s > 0.0) || !std::isfinite(session_length_s)) bad("session_length_s must be positive");
  // the stress stream needs two full windows (at 40 s / 20 s) to calibrate
  if (!(calibration_s >= 60.0)) bad("calibration_s must be at least 60 s (two stress windows)");
  if (!(cooldown_s >= 0.0)) bad("cooldown_s must be non-negative");
  if (!(calibration_s < session_length_s - cooldown_s)) bad("calibration must end before the active phase ends");
  if (!(replan_interval_s * 1000.0 >= static_cast<double>(ramp.target_period_ms)))
    bad("replan_interval_s must cover at least one full rhythm cycle");
  if (cue_lead_ms < 0 || input_grace_ms < 0) bad("cue_lead_ms and input_grace_ms must be non-negative");
  if (tolerance_ms <= 0) bad("tolerance_ms must be positive");
  if (!(guidance_interval_s >= 0.0)) bad("guidance_interval_s must be non-negative");
  if (!(trend_window_s > 0.0)) bad("trend_window_s must be positive");
  if (!(smoothing_alpha > 0.0 && smoothing_alpha <= 1.0)) bad("smoothing_alpha must lie in (0, 1]");
  if (!(k_sensitivity > 0.0)) bad("k_sensitivity must be positive");
  if (!(squeeze_fraction > 0.0 && squeeze_fraction < 1.0)) bad("squeeze_fraction must lie in (0, 1)");
  if (ramp.target_period_ms < 2000 || ramp.target_period_ms > rhythm::kMaxPeriodMs)
    bad("ramp target must lie in [2000, 6000] ms");
  if (ramp.step_ms <= 0 || ramp.cycles_per_step < 1) bad("ramp step and cycles_per_step must be positive");
  if (detector.off_threshold > detector.on_threshold) bad("detector off threshold exceeds on threshold");
}

Json SessionConfig::to_json() const {
  return Json{
      {"session_id", session_id},
      {"seed", seed},
      {"mode", std::string(to_string(mode))},
      {"session_length_s", session_length_s},
      {"calibration_s", calibration_s},
      {"replan_interval_s", replan_interval_s},
      {"cooldown_s", cooldown_s},
      {"cue_lead_ms", cue_lead_ms},
      {"input_grace_ms", input_grace_ms},
      {"tolerance_ms", tolerance_ms},
      {"guidance_interval_s", guidance_interval_s},
      {"trend_window_s", trend_window_s},
      {"smoothing_alpha", smoothing_alpha},
      {"k_sensitivity", k_sensitivity},
      {"squeeze_fraction", squeeze_fraction},
      {"ramp", {{"target_period_ms", ramp.target_period_ms}, {"step_ms", ramp.step_ms},
                {"cycles_per_step", ramp.cycles_per_step}}},
      {"detector", {{"on_threshold", detector.on_threshold}, {"off_threshold", detector.off_threshold},
                    {"min_gap_ms", detector.min_gap_ms}}},
  };
}

SessionConfig SessionConfig::from_json(const Json& j) {
  SessionConfig c;
  c.session_id = j.value("session_id", c.session_id);
  c.seed = j.value("seed", c.seed);
  if (auto m = parse_mode(j.value("mode", std::string("simulated")))) c.mode = *m;
  else fail(ErrorCode::format, "session config: unknown mode");
  c.session_length_s = j.value("session_length_s", c.session_length_s);
  c.calibration_s = j.value("calibration_s", c.calibration_s);
  c.replan_interval_s = j.value("replan_interval_s", c.replan_interval_s);
  c.cooldown_s = j.value("cooldown_s", c.cooldown_s);
  c.cue_lead_ms = j.value("cue_lead_ms", c.cue_lead_ms);
  c.input_grace_ms = j.value("input_grace_ms", c.input_grace_ms);
  c.tolerance_ms = j.value("tolerance_ms", c.tolerance_ms);
  c.guidance_interval_s = j.value("guidance_interval_s", c.guidance_interval_s);
  c.trend_window_s = j.value("trend_window_s", c.trend_window_s);
  c.smoothing_alpha = j.value("smoothing_alpha", c.smoothing_alpha);
  c.k_sensitivity = j.value("k_sensitivity", c.k_sensitivity);
  c.squeeze_fraction = j.value("squeeze_fraction", c.squeeze_fraction);
  if (j.contains("ramp")) {
    const auto& r = j["ramp"];
    c.ramp.target_period_ms = r.value("target_period_ms", c.ramp.target_period_ms);
    c.ramp.step_ms = r.value("step_ms", c.ramp.step_ms);
    c.ramp.cycles_per_step = r.value("cycles_per_step", c.ramp.cycles_per_step);
  }
  if (j.contains("detector")) {
    const auto& d = j["detector"];
    c.detector.on_threshold = d.value("on_threshold", c.detector.on_threshold);
    c.detector.off_threshold = d.value("off_threshold", c.detector.off_threshold);
    c.detector.min_gap_ms = d.value("min_gap_ms", c.detector.min_gap_ms);
  }
  return c;
}

// ---------------------------------------------------------------------------
// event log

Json LogRecord::to_json() const {
  return Json{{"v", kLogSchemaVersion}, {"session", session}, {"seq", seq},
              {"t_ms", t_ms},           {"type", type},       {"payload", payload}};
}

LogRecord LogRecord::from_json(const Json& j) {
  if (!j.is_object()) fail(ErrorCode::format, "log record is not a JSON object");
  const int v = j.value("v", 0);
  if (v != kLogSchemaVersion) {
    fail(ErrorCode::version_mismatch, "unsupported log schema version " + std::to_string(v) + " (expected " +
                                          std::to_string(kLogSchemaVersion) + ")");
  }
  try {
    LogRecord r;
    r.session = j.at("session").get<std::string>();
    r.seq = j.at("seq").get<std::uint64_t>();
    r.t_ms = j.at("t_ms").get<std::int64_t>();
    r.type = j.at("type").get<std::string>();
    r.payload = j.value("payload", Json::object());
    return r;
  } catch (const Json::exception& e) {
    fail(ErrorCode::format, std::string("malformed log record: ") + e.what());
  }
}

const LogRecord& EventLog::append(std::int64_t t_ms, std::string type, Json payload) {
  if (!records_.empty() && t_ms < records_.back().t_ms)
    fail(ErrorCode::validation, "log time went backwards at record type '" + type + "'");
  LogRecord r;
  r.session = session_;
  r.seq = records_.size();
  r.t_ms = t_ms;
  r.type = std::move(type);
  r.payload = std::move(payload);
  records_.push_back(std::move(r));
  if (listener_) listener_(records_.back());
  return records_.back();
}

std::string EventLog::to_jsonl() const {
  std::string out;
  for (const auto& r : records_) {
    out += r.to_json().dump();
    out += '\n';
  }
  return out;
}

EventLog EventLog::from_jsonl(std::string_view text) {
  EventLog log;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded()) fail(ErrorCode::format, "log line " + std::to_string(line_no) + " is not valid JSON");
    LogRecord r = LogRecord::from_json(j);
    if (log.records_.empty()) log.session_ = r.session;
    if (r.session != log.session_) fail(ErrorCode::validation, "log mixes sessions");
    if (r.seq != log.records_.size())
      fail(ErrorCode::validation, "log sequence gap at line " + std::to_string(line_no));
    if (!log.records_.empty() && r.t_ms < log.records_.back().t_ms)
      fail(ErrorCode::validation, "log time goes backwards at line " + std::to_string(line_no));
    log.records_.push_back(std::move(r));
  }
  return log;
}

void EventLog::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write log '" + path + "'");
  out << to_jsonl();
  if (!out) fail(ErrorCode::io, "failed writing log '" + path + "'");
}

EventLog EventLog::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open log '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_jsonl(ss.str());
}

// ---------------------------------------------------------------------------
// engine

SessionEngine::SessionEngine(SessionConfig config, std::shared_ptr<const StressModel> model,
                             guidance::GuidanceService* guidance)
    : config_(std::move(config)),
      model_(std::move(model)),
      guidance_(guidance),
      log_(config_.session_id),
      stream_(model_),
      scorer_(config_.smoothing_alpha),
      detector_(config_.detector) {
  config_.validate();
}

void SessionEngine::start(Json extra) {
  if (started_) fail(ErrorCode::invalid_argument, "session already started");
  started_ = true;
  Json payload = extra.is_object() ? std::move(extra) : Json::object();
  payload["schema"] = kLogSchemaVersion;
  payload["config"] = config_.to_json();
  log_.append(0, "start", std::move(payload));
  log_.append(0, "phase", {{"phase", "calibrating"}});
}

void SessionEngine::check_time(std::int64_t t_ms, const char* what) const {
  if (t_ms < now_) {
    fail(ErrorCode::validation, std::string(what) + " at " + std::to_string(t_ms) + " ms is earlier than session time " +
                                    std::to_string(now_) + " ms");
  }
}

std::optional<std::pair<std::int64_t, SessionEngine::Action>> SessionEngine::next_action() const {
  std::optional<std::pair<std::int64_t, Action>> best;
  auto consider = [&](std::int64_t t, Action a) {
    if (!best || t < best->first || (t == best->first && a < best->second)) best = std::make_pair(t, a);
  };
  const std::int64_t active_end = config_.active_end_ms();
  switch (phase_) {
    case Phase::calibrating:
      consider(config_.active_start_ms(), Action::active_start);
      break;
    case Phase::active:
      consider(active_end, Action::active_end);
      if (next_replan_ms_ < active_end) consider(next_replan_ms_, Action::replan);
      if (plan_) {
        for (const auto& b : plan_->blocks) {
          if (b.end_ms() > scored_until_ms_) {
            if (b.end_ms() <= active_end) consider(b.end_ms(), Action::block_end);
            break;
          }
        }
        if (cue_cursor_ms_ < active_end) {
          const auto c = rhythm::next_cue(*plan_, cue_cursor_ms_);
          if (c.kind != rhythm::CueKind::end && c.due_ms < active_end) consider(c.due_ms, Action::cue);
        }
      }
      break;
    case Phase::cooldown:
      consider(config_.end_ms(), Action::session_end);
      break;
    case Phase::ended:
      break;
  }
  return best;
}

void SessionEngine::advance_to(std::int64_t t_ms) {
  if (!started_) start();
  check_time(t_ms, "advance");
  while (auto next = next_action()) {
    if (next->first > t_ms) break;
    now_ = next->first;
    run_action(next->second, next->first);
  }
  now_ = t_ms;
  pump_guidance(t_ms);
}

void SessionEngine::set_phase(Phase p, std::int64_t t) {
  if (p <= phase_)
    fail(ErrorCode::validation, "phase transitions only move forward");
  phase_ = p;
  log_.append(t, "phase", {{"phase", std::string(to_string(p))}});
}

void SessionEngine::run_action(Action a, std::int64_t t) {
  switch (a) {
    case Action::active_start:
      begin_active(t);
      break;
    case Action::block_end: {
      for (const auto& b : plan_->blocks) {
        if (b.end_ms() > scored_until_ms_) {
          score_block(b.start_ms, b.end_ms(), b.end_ms(), false, t);
          scored_until_ms_ = b.end_ms();
          break;
        }
      }
      break;
    }
    case Action::replan:
      replan(t, false);
      next_replan_ms_ += std::llround(config_.replan_interval_s * 1000.0);
      break;
    case Action::cue: {
      const auto c = rhythm::next_cue(*plan_, cue_cursor_ms_);
      Json payload{{"kind", std::string(rhythm::to_string(c.kind))}, {"due_ms", c.due_ms}, {"block", c.block},
                   {"beat", c.beat}};
      if (c.block >= 0) payload["period_ms"] = plan_->blocks[static_cast<std::size_t>(c.block)].pattern.cycle_period_ms;
      log_.append(t, "cue", std::move(payload));
      if (c.kind == rhythm::CueKind::squeeze) squeeze_cues_.push_back(c.due_ms);
      cue_cursor_ms_ = c.due_ms + 1;
      break;
    }
    case Action::active_end: {
      // score what has had a full tolerance window inside the active phase
      if (plan_) {
        for (const auto& b : plan_->blocks) {
          if (b.end_ms() > scored_until_ms_ && b.start_ms < t) {
            score_block(b.start_ms, t, t - config_.tolerance_ms, true, t);
            break;
          }
        }
      }
      scored_until_ms_ = t;
      set_phase(Phase::cooldown, t);
      break;
    }
    case Action::session_end:
      set_phase(Phase::ended, t);
      break;
  }
}

void SessionEngine::begin_active(std::int64_t t) {
  set_phase(Phase::active, t);
  std::vector<double> raws;
  for (const auto& e : calibration_estimates_) raws.push_back(e.raw_score);
  Json cal{{"windows", raws.size()}};
  stress::CalibrationProfile profile;
  if (raws.size() >= 2) {
    profile = stress::calibrate(raws, config_.calibration_s, config_.k_sensitivity);
  } else {
    // too few windows (e.g. dropped live samples): an uncalibrated unit scale
    profile.baseline_mean = raws.empty() ? 0.5 : raws.front();
    profile.baseline_std = 1.0;
    profile.k_sensitivity = config_.k_sensitivity;
    cal["degraded"] = true;
  }
  scorer_.set_profile(profile);
  // warm the smoother with the calibration windows so the active phase starts
  // from the user's own recent level
  for (auto e : calibration_estimates_) {
    scorer_.score(e);
    smoothed_t_.push_back(e.t_ms);
    smoothed_v_.push_back(*e.smoothed);
  }
  cal["baseline_mean"] = profile.baseline_mean;
  cal["baseline_std"] = profile.baseline_std;
  cal["k"] = profile.k_sensitivity;
  if (auto s = scorer_.last_smoothed()) cal["smoothed"] = *s;
  log_.append(t, "calibration", std::move(cal));

  scored_until_ms_ = t;
  cue_cursor_ms_ = t;
  next_replan_ms_ = t + std::llround(config_.replan_interval_s * 1000.0);
  replan(t, true);
}

void SessionEngine::replan(std::int64_t t, bool initial) {
  double s = 0.5;
  if (auto sm = scorer_.last_smoothed()) s = *sm;
  else if (latest_) s = latest_->raw_score;
  s = std::clamp(s, 0.0, 1.0);
  rhythm::RhythmPattern pattern = rhythm::generate_pattern(s);
  pattern.squeeze_fraction = config_.squeeze_fraction;

  rhythm::RampPolicy policy = config_.ramp;
  std::string policy_name = "config";
  if (pending_policy_) {
    if (auto p = rhythm::ramp_policy_for(*pending_policy_)) {
      policy = *p;
      policy_name = *pending_policy_;
    }
    pending_policy_.reset();
  }

  // never move a beat that may already have been announced
  const std::int64_t horizon = t + config_.cue_lead_ms + config_.input_grace_ms;
  std::int64_t effective = horizon;
  if (initial || !plan_ || plan_->end_ms() < horizon) {
    plan_ = rhythm::plan_ramp(pattern, policy, horizon);
  } else {
    auto& blocks = plan_->blocks;
    auto it = std::find_if(blocks.begin(), blocks.end(), [&](const rhythm::PlanBlock& b) { return b.start_ms >= horizon; });
    effective = it == blocks.end() ? plan_->end_ms() : it->start_ms;
    blocks.erase(it, blocks.end());
    auto tail = rhythm::plan_ramp(pattern, policy, effective);
    blocks.insert(blocks.end(), tail.blocks.begin(), tail.blocks.end());
    plan_->ramp = policy;
  }

  Json blocks = Json::array();
  for (const auto& b : plan_->blocks) {
    if (b.start_ms >= effective) blocks.push_back({b.start_ms, b.pattern.cycle_period_ms, b.pattern.reps});
  }
  log_.append(t, "plan",
              {{"stress", s},
               {"period_ms", pattern.cycle_period_ms},
               {"effective_ms", effective},
               {"policy", policy_name},
               {"target_period_ms", policy.target_period_ms},
               {"step_ms", policy.step_ms},
               {"cycles_per_step", policy.cycles_per_step},
               {"blocks", std::move(blocks)}});
}

void SessionEngine::score_block(std::int64_t block_start, std::int64_t block_end, std::int64_t beats_until,
                                bool partial, std::int64_t t) {
  const std::int64_t tol = config_.tolerance_ms;
  std::vector<std::int64_t> beats;
  for (const auto& b : plan_->beats()) {
    if (b.squeeze_ms >= block_start && b.squeeze_ms < block_end && b.squeeze_ms <= beats_until)
      beats.push_back(b.squeeze_ms);
  }
  if (beats.empty()) return;
  auto lo = std::lower_bound(onsets_.begin(), onsets_.end(), block_start - tol);
  auto hi = std::lower_bound(onsets_.begin(), onsets_.end(), block_end);
  std::vector<std::int64_t> events(lo, hi);
  auto result = rhythm::match_onsets(beats, events, tol);
  cumulative_.add(result.report);

  double peak_sum = 0.0;
  int peak_n = 0;
  for (const auto& e : finished_events_) {
    if (e.onset_ms >= block_start - tol && e.onset_ms < block_end) {
      peak_sum += e.peak_intensity;
      ++peak_n;
    }
  }
  const double mean_peak = peak_n > 0 ? peak_sum / peak_n : 0.0;

  Json matches = Json::array();
  for (const auto& m : result.matches) {
    matches.push_back({{"beat_ms", beats[m.beat]}, {"onset_ms", events[m.event]}, {"error_ms", m.error_ms}});
  }
  const auto cum = cumulative_.report(tol);
  const auto& r = result.report;
  log_.append(t, "adherence",
              {{"block_start_ms", block_start},
               {"block_end_ms", block_end},
               {"partial", partial},
               {"beats_total", r.beats_total},
               {"beats_hit", r.beats_hit},
               {"mean_abs_timing_error_ms", r.mean_abs_timing_error_ms},
               {"sync_score", r.sync_score},
               {"mean_peak_intensity", mean_peak},
               {"matches", std::move(matches)},
               {"cumulative",
                {{"beats_total", cum.beats_total},
                 {"beats_hit", cum.beats_hit},
                 {"mean_abs_timing_error_ms", cum.mean_abs_timing_error_ms},
                 {"sync_score", cum.sync_score}}}});

  if (!partial) {
    guidance::GuidanceContext ctx;
    ctx.sync_score_recent = std::clamp(r.sync_score, 0.0, 1.0);
    ctx.mean_peak_intensity = mean_peak;
    const std::int64_t from = t - std::llround(config_.trend_window_s * 1000.0);
    std::vector<std::int64_t> ts;
    std::vector<double> vs;
    for (std::size_t i = 0; i < smoothed_t_.size(); ++i) {
      if (smoothed_t_[i] >= from) {
        ts.push_back(smoothed_t_[i]);
        vs.push_back(smoothed_v_[i]);
      }
    }
    ctx.stress_trend = guidance::trend_slope(ts, vs);
    if (last_message_ms_) ctx.seconds_since_last_message = static_cast<double>(t - *last_message_ms_) / 1000.0;
    if (guidance_ && guidance::gate_rate(ctx, config_.guidance_interval_s) && !guidance_->busy()) {
      auto rng = make_stream(config_.seed, "templates/" + std::to_string(guidance_requests_++));
      guidance_->request(guidance::select_tone(ctx), ctx, rng(), t);
    }
  }
}

void SessionEngine::pump_guidance(std::int64_t t) {
  if (!guidance_) return;
  for (const auto& msg : guidance_->poll()) emit_guidance(msg, t);
}

void SessionEngine::emit_guidance(const guidance::GuidanceMessage& msg, std::int64_t t) {
  const auto gap_ms = std::llround(config_.guidance_interval_s * 1000.0);
  if (phase_ != Phase::active || (last_message_ms_ && t - *last_message_ms_ < gap_ms) ||
      !guidance::valid_text(msg.text)) {
    ++guidance_dropped_;
    return;
  }
  Json payload{{"tone", std::string(guidance::to_string(msg.tone))},
               {"text", msg.text},
               {"source", std::string(guidance::to_string(msg.source))},
               {"created_at_ms", msg.created_at_ms}};
  if (msg.policy) {
    payload["policy"] = *msg.policy;
    pending_policy_ = msg.policy;
  }
  log_.append(t, "guidance", std::move(payload));
  messages_.push_back(msg);
  last_message_ms_ = t;
}

void SessionEngine::on_guidance(const guidance::GuidanceMessage& message, std::int64_t t_ms) {
  advance_to(t_ms);
  emit_guidance(message, t_ms);
}

void SessionEngine::on_sample(std::int64_t t_ms, const Sample& sample) {
  advance_to(t_ms);
  if (phase_ == Phase::ended) return;
  for (double v : sample) {
    if (!std::isfinite(v)) fail(ErrorCode::validation, "non-finite physiological sample at " + std::to_string(t_ms) + " ms");
  }
  log_.append(t_ms, "sample", {{"eda", sample[0]}, {"temp", sample[1]}, {"hr", sample[2]}});
  auto est = stream_.push_sample(t_ms, sample);
  if (!est) return;
  scorer_.score(*est);
  if (phase_ == Phase::calibrating) calibration_estimates_.push_back(*est);
  if (est->smoothed) {
    smoothed_t_.push_back(est->t_ms);
    smoothed_v_.push_back(*est->smoothed);
  }
  Json payload{{"probs", {est->probs[0], est->probs[1], est->probs[2]}}, {"raw", est->raw_score}};
  if (est->adjusted) payload["adjusted"] = *est->adjusted;
  if (est->smoothed) payload["smoothed"] = *est->smoothed;
  log_.append(t_ms, "estimate", std::move(payload));
  latest_ = std::move(est);
}

bool SessionEngine::on_squeeze(std::int64_t t_ms, double intensity) {
  if (!started_) start();
  if (t_ms < now_ || phase_ == Phase::ended) return false;
  if (!std::isfinite(intensity)) fail(ErrorCode::validation, "non-finite squeeze intensity");
  intensity = std::clamp(intensity, 0.0, 1.0);
  advance_to(t_ms);
  log_.append(t_ms, "squeeze", {{"intensity", intensity}});
  auto up = detector_.push({t_ms, intensity});
  if (up.onset) onsets_.push_back(*up.onset);
  if (up.finished) finished_events_.push_back(*up.finished);
  return true;
}

void SessionEngine::disconnect(std::int64_t t_ms, const std::string& reason) {
  advance_to(t_ms);
  if (phase_ == Phase::ended) return;
  log_.append(t_ms, "disconnect", {{"reason", reason}});
  if (phase_ == Phase::active && plan_) {
    for (const auto& b : plan_->blocks) {
      if (b.end_ms() > scored_until_ms_ && b.start_ms < t_ms) {
        score_block(b.start_ms, t_ms, t_ms - config_.tolerance_ms, true, t_ms);
        break;
      }
    }
    scored_until_ms_ = t_ms;
  }
  if (phase_ != Phase::cooldown) set_phase(Phase::cooldown, t_ms);
  set_phase(Phase::ended, t_ms);
}

void SessionEngine::finish() {
  if (phase_ == Phase::ended) return;
  advance_to(std::max(now_, config_.end_ms()));
  if (phase_ != Phase::ended) set_phase(Phase::ended, now_);
}

std::vector<rhythm::Cue> SessionEngine::cues_between(std::int64_t from_ms, std::int64_t to_ms) const {
  if (!plan_ || phase_ != Phase::active) return {};
  return rhythm::cues_between(*plan_, from_ms, std::min(to_ms, config_.active_end_ms()));
}

std::optional<std::int64_t> SessionEngine::next_cue_due(std::int64_t t_ms) const {
  if (!plan_ || phase_ != Phase::active) return std::nullopt;
  const auto c = rhythm::next_cue(*plan_, t_ms);
  if (c.kind == rhythm::CueKind::end || c.due_ms >= config_.active_end_ms()) return std::nullopt;
  return c.due_ms;
}

std::int64_t SessionEngine::squeeze_window_at(std::int64_t due_ms) const {
  if (!plan_) return 0;
  for (const auto& b : plan_->blocks) {
    if (due_ms >= b.start_ms && due_ms < b.end_ms()) return b.pattern.squeeze_window_ms();
  }
  return 0;
}

bool SessionEngine::adherent_at(std::int64_t t_ms) const {
  const std::int64_t tol = config_.tolerance_ms;
  auto it = std::upper_bound(squeeze_cues_.begin(), squeeze_cues_.end(), t_ms - tol);
  if (it == squeeze_cues_.begin()) return false;
  const std::int64_t due = *std::prev(it);
  auto on = std::lower_bound(onsets_.begin(), onsets_.end(), due - tol);
  return on != onsets_.end() && *on <= due + tol;
}

// ---------------------------------------------------------------------------
// evaluation

Json SessionSummary::to_json() const {
  return Json{{"quarter_means", quarter_means},
              {"sync_score", adherence.sync_score},
              {"beats_total", adherence.beats_total},
              {"beats_hit", adherence.beats_hit},
              {"mean_abs_timing_error_ms", adherence.mean_abs_timing_error_ms},
              {"message_count", message_count},
              {"phase_durations_s", {{"calibrating", calibrating_s}, {"active", active_s}, {"cooldown", cooldown_s}}},
              {"disconnected", disconnected}};
}

SessionSummary evaluate_session(const EventLog& log) {
  std::optional<std::int64_t> cal_t, active_t, cooldown_t, ended_t;
  for (const auto& r : log.records()) {
    if (r.type != "phase") continue;
    const auto p = parse_phase(r.payload.value("phase", std::string()));
    if (!p) fail(ErrorCode::validation, "log has an unknown phase record");
    switch (*p) {
      case Phase::calibrating:
        cal_t = r.t_ms;
        break;
      case Phase::active:
        active_t = r.t_ms;
        break;
      case Phase::cooldown:
        cooldown_t = r.t_ms;
        break;
      case Phase::ended:
        ended_t = r.t_ms;
        break;
    }
  }
  if (!cal_t || !ended_t) fail(ErrorCode::validation, "log is missing phase records (incomplete session?)");
  if (!active_t) fail(ErrorCode::validation, "session has an empty active phase");
  const std::int64_t a0 = *active_t;
  const std::int64_t a1 = cooldown_t ? *cooldown_t : *ended_t;
  if (a1 <= a0) fail(ErrorCode::validation, "session has an empty active phase");

  SessionSummary s;
  s.calibrating_s = static_cast<double>(a0 - *cal_t) / 1000.0;
  s.active_s = static_cast<double>(a1 - a0) / 1000.0;
  s.cooldown_s = static_cast<double>(*ended_t - a1) / 1000.0;

  std::array<std::vector<double>, 4> quarters;
  std::optional<double> hold;
  rhythm::AdherenceAccumulator acc;
  const std::int64_t span = a1 - a0;
  for (const auto& r : log.records()) {
    if (r.type == "calibration" && r.payload.contains("smoothed")) {
      hold = r.payload["smoothed"].get<double>();
    } else if (r.type == "estimate" && r.payload.contains("smoothed")) {
      const double v = r.payload["smoothed"].get<double>();
      if (r.t_ms < a0) {
        hold = v;
      } else if (r.t_ms < a1) {
        const auto q = std::min<std::int64_t>(3, (r.t_ms - a0) * 4 / span);
        quarters[static_cast<std::size_t>(q)].push_back(v);
      }
    } else if (r.type == "adherence") {
      rhythm::AdherenceReport rep;
      rep.beats_total = r.payload.value("beats_total", 0);
      rep.beats_hit = r.payload.value("beats_hit", 0);
      rep.mean_abs_timing_error_ms = r.payload.value("mean_abs_timing_error_ms", 0.0);
      acc.add(rep);
    } else if (r.type == "guidance") {
      ++s.message_count;
    } else if (r.type == "disconnect") {
      s.disconnected = true;
    }
  }
  std::int64_t tol = 250;
  if (!log.records().empty() && log.records().front().type == "start")
    tol = log.records().front().payload.value("config", Json::object()).value("tolerance_ms", tol);
  s.adherence = acc.report(tol);

  for (std::size_t q = 0; q < 4; ++q) {
    if (quarters[q].empty()) {
      if (!hold) fail(ErrorCode::validation, "no smoothed stress available for active quarter " + std::to_string(q + 1));
      s.quarter_means[q] = *hold;
      continue;
    }
    double sum = 0.0;
    for (double v : quarters[q]) sum += v;
    s.quarter_means[q] = sum / static_cast<double>(quarters[q].size());
    hold = quarters[q].back();
  }
  return s;
}

}  // namespace nienie::session
