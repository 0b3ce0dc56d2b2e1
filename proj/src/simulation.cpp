#include <algorithm>
#include <chrono>
#include <cmath>
#include <queue>
#include <thread>

#include "nienie/error.hpp"
#include "nienie/random.hpp"
#include "nienie/session.hpp"

namespace nienie::session {

namespace {

Json sample_json(const Sample& s) { return Json::array({s[0], s[1], s[2]}); }

Sample sample_from(const Json& j, const Sample& fallback) {
  if (!j.is_array() || j.size() != 3) return fallback;
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

Json Physiology::to_json() const {
  return Json{{"baseline", sample_json(baseline)},   {"direction", sample_json(direction)},
              {"elevation", elevation},              {"set_point", set_point},
              {"recovery_rate", recovery_rate},      {"noise_sd", sample_json(noise_sd)},
              {"noise_rho", noise_rho}};
}

Physiology Physiology::from_json(const Json& j) {
  Physiology p;
  if (!j.is_object()) return p;
  p.baseline = sample_from(j.value("baseline", Json()), p.baseline);
  p.direction = sample_from(j.value("direction", Json()), p.direction);
  p.elevation = j.value("elevation", p.elevation);
  p.set_point = j.value("set_point", p.set_point);
  p.recovery_rate = j.value("recovery_rate", p.recovery_rate);
  p.noise_sd = sample_from(j.value("noise_sd", Json()), p.noise_sd);
  p.noise_rho = j.value("noise_rho", p.noise_rho);
  return p;
}

void SimulatedUser::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::invalid_argument, "simulated user: " + what); };
  if (!(skill >= 0.0 && skill <= 1.0)) bad("skill must lie in [0, 1]");
  if (!(reaction_sd_ms >= 0.0) || !std::isfinite(reaction_mean_ms)) bad("reaction parameters are invalid");
  if (!(peak_intensity > 0.0 && peak_intensity <= 1.0)) bad("peak_intensity must lie in (0, 1]");
  if (!(physiology.recovery_rate >= 0.0)) bad("recovery rate must be non-negative");
  if (!(physiology.noise_rho >= 0.0 && physiology.noise_rho < 1.0)) bad("noise_rho must lie in [0, 1)");
  for (double sd : physiology.noise_sd) {
    if (!(sd >= 0.0)) bad("noise_sd must be non-negative");
  }
}

Json SimulatedUser::to_json() const {
  return Json{{"skill", skill},
              {"reaction_mean_ms", reaction_mean_ms},
              {"reaction_sd_ms", reaction_sd_ms},
              {"peak_intensity", peak_intensity},
              {"physiology", physiology.to_json()}};
}

SimulatedUser SimulatedUser::from_json(const Json& j) {
  SimulatedUser u;
  if (!j.is_object()) return u;
  u.skill = j.value("skill", u.skill);
  u.reaction_mean_ms = j.value("reaction_mean_ms", u.reaction_mean_ms);
  u.reaction_sd_ms = j.value("reaction_sd_ms", u.reaction_sd_ms);
  u.peak_intensity = j.value("peak_intensity", u.peak_intensity);
  if (j.contains("physiology")) u.physiology = Physiology::from_json(j["physiology"]);
  return u;
}

std::vector<rhythm::SqueezeSample> SqueezePulse::samples() const {
  std::vector<rhythm::SqueezeSample> out;
  constexpr std::int64_t kTickMs = 33;
  for (std::int64_t t = onset_ms; t < release_ms; t += kTickMs) out.push_back({t, peak});
  out.push_back({release_ms, 0.0});
  return out;
}

std::optional<SqueezePulse> step_simulated_user(const SimulatedUser& user, const rhythm::Cue& cue,
                                                std::int64_t squeeze_window_ms, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double u = unit(rng);
  const double z = std::clamp(normal(rng), -3.0, 3.0);
  if (cue.kind != rhythm::CueKind::squeeze || !(u < user.skill)) return std::nullopt;
  SqueezePulse p;
  p.onset_ms = cue.due_ms + std::llround(user.reaction_mean_ms + user.reaction_sd_ms * z);
  p.release_ms = p.onset_ms + std::max<std::int64_t>(squeeze_window_ms, 1);
  p.peak = user.peak_intensity;
  return p;
}

Sample physiology_mean(const Physiology& p, double elevation) {
  Sample s{};
  for (std::size_t c = 0; c < s.size(); ++c) s[c] = p.baseline[c] + elevation * p.direction[c];
  return s;
}

PhysiologyState init_physiology(const Physiology& p, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  PhysiologyState st;
  st.elevation = p.elevation;
  for (std::size_t c = 0; c < st.noise.size(); ++c) st.noise[c] = p.noise_sd[c] * normal(rng);
  return st;
}

Sample step_physiology(const Physiology& p, PhysiologyState& state, bool adherent, double dt_s,
                       std::mt19937_64& rng) {
  if (!(dt_s > 0.0)) fail(ErrorCode::invalid_argument, "physiology step needs dt > 0");
  if (adherent) {
    state.elevation *= std::exp(-p.recovery_rate * dt_s);
  } else {
    const double k = std::exp(-p.recovery_rate / 4.0 * dt_s);
    state.elevation = p.set_point + (state.elevation - p.set_point) * k;
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  const double rho = std::pow(p.noise_rho, dt_s);
  const double innov = std::sqrt(1.0 - rho * rho);
  for (std::size_t c = 0; c < state.noise.size(); ++c)
    state.noise[c] = rho * state.noise[c] + innov * p.noise_sd[c] * normal(rng);
  Sample s = physiology_mean(p, state.elevation);
  for (std::size_t c = 0; c < s.size(); ++c) s[c] += state.noise[c];
  return s;
}

namespace {

struct Pending {
  std::int64_t t;
  std::uint64_t order;
  double intensity;
  bool operator>(const Pending& o) const { return t != o.t ? t > o.t : order > o.order; }
};

}  // namespace

EventLog run_simulated(const SessionConfig& config, std::shared_ptr<const StressModel> model,
                       const SimulatedUser& user, const SimulationOptions& options) {
  user.validate();
  SessionEngine engine(config, std::move(model), options.guidance);
  engine.start({{"user", user.to_json()}});

  auto user_rng = make_stream(config.seed, "user");
  auto phys_rng = make_stream(config.seed, "physiology");
  PhysiologyState phys = init_physiology(user.physiology, phys_rng);

  std::priority_queue<Pending, std::vector<Pending>, std::greater<>> squeezes;
  std::uint64_t order = 0;
  std::int64_t last_release = -1;
  std::int64_t announced_until = -1;  // cues due at or before this were handed to the user
  std::int64_t next_sample = 0;
  const std::int64_t end = config.end_ms();
  const std::int64_t lead = config.cue_lead_ms;

  const auto wall0 = std::chrono::steady_clock::now();
  auto pace = [&](std::int64_t t) {
    if (options.time_scale <= 0.0) return;
    const auto due = wall0 + std::chrono::microseconds(std::llround(static_cast<double>(t) * 1000.0 / options.time_scale));
    std::this_thread::sleep_until(due);
  };

  while (true) {
    std::optional<std::int64_t> t;
    auto consider = [&](std::int64_t c) {
      if (c < end && (!t || c < *t)) t = c;
    };
    consider(next_sample);
    if (!squeezes.empty()) consider(squeezes.top().t);
    if (auto due = engine.next_cue_due(announced_until + 1)) consider(std::max(*due - lead, engine.now()));
    if (!t) break;
    pace(*t);
    engine.advance_to(*t);

    // hand newly visible cues to the user
    for (const auto& cue : engine.cues_between(announced_until + 1, *t + lead + 1)) {
      if (cue.kind != rhythm::CueKind::squeeze) continue;
      auto pulse = step_simulated_user(user, cue, engine.squeeze_window_at(cue.due_ms), user_rng);
      if (!pulse) continue;
      pulse->onset_ms = std::max(pulse->onset_ms, *t);
      // still squeezing from the previous cue: the new squeeze is skipped
      if (pulse->onset_ms <= last_release || pulse->onset_ms >= end) continue;
      pulse->release_ms = std::max(pulse->release_ms, pulse->onset_ms + 1);
      for (const auto& s : pulse->samples()) squeezes.push({s.t_ms, order++, s.intensity});
      last_release = pulse->release_ms;
    }
    announced_until = std::max(announced_until, *t + lead);

    if (next_sample == *t) {
      Sample x = next_sample == 0 ? physiology_mean(user.physiology, phys.elevation)
                                  : step_physiology(user.physiology, phys, engine.adherent_at(*t), 1.0, phys_rng);
      if (next_sample == 0) {
        for (std::size_t c = 0; c < x.size(); ++c) x[c] += phys.noise[c];
      }
      engine.on_sample(*t, x);
      next_sample += 1000;
    }
    while (!squeezes.empty() && squeezes.top().t == *t) {
      engine.on_squeeze(*t, squeezes.top().intensity);
      squeezes.pop();
    }
  }
  engine.finish();
  return engine.log();
}

EventLog replay(const EventLog& recorded, std::shared_ptr<const StressModel> model) {
  const auto& recs = recorded.records();
  if (recs.empty() || recs.front().type != "start")
    fail(ErrorCode::validation, "log does not begin with a start record");
  const Json& start = recs.front().payload;
  if (start.value("schema", 0) != kLogSchemaVersion)
    fail(ErrorCode::version_mismatch, "unsupported log schema in start record");
  SessionConfig cfg = SessionConfig::from_json(start.value("config", Json::object()));
  SessionEngine engine(cfg, std::move(model), nullptr);
  Json extra = start;
  extra.erase("schema");
  extra.erase("config");
  engine.start(std::move(extra));

  for (std::size_t i = 1; i < recs.size(); ++i) {
    const auto& r = recs[i];
    const Json& p = r.payload;
    if (r.type == "sample") {
      engine.on_sample(r.t_ms, {p.at("eda").get<double>(), p.at("temp").get<double>(), p.at("hr").get<double>()});
    } else if (r.type == "squeeze") {
      engine.on_squeeze(r.t_ms, p.at("intensity").get<double>());
    } else if (r.type == "guidance") {
      guidance::GuidanceMessage msg;
      auto tone = guidance::parse_tone(p.value("tone", std::string()));
      if (!tone) fail(ErrorCode::format, "guidance record has an unknown tone");
      msg.tone = *tone;
      msg.text = p.value("text", std::string());
      msg.source = p.value("source", std::string()) == "remote" ? guidance::MessageSource::remote
                                                                 : guidance::MessageSource::template_text;
      msg.created_at_ms = p.value("created_at_ms", r.t_ms);
      if (p.contains("policy")) msg.policy = p["policy"].get<std::string>();
      engine.on_guidance(msg, r.t_ms);
    } else if (r.type == "disconnect") {
      engine.disconnect(r.t_ms, p.value("reason", std::string("disconnect")));
    }
  }
  engine.finish();
  return engine.log();
}

}  // namespace nienie::session
