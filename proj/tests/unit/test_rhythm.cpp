#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "nienie/error.hpp"
#include "nienie/rhythm.hpp"

using namespace nienie;
using namespace nienie::rhythm;

namespace {

// Every cue of a plan, built block by block.
std::vector<Cue> all_cues(const RhythmPlan& plan) {
  std::vector<Cue> out;
  for (std::size_t b = 0; b < plan.blocks.size(); ++b) {
    const auto& blk = plan.blocks[b];
    const std::int64_t P = blk.pattern.cycle_period_ms;
    const std::int64_t w = blk.pattern.squeeze_window_ms();
    for (int n = 0; n < blk.pattern.reps; ++n) {
      out.push_back({CueKind::squeeze, blk.start_ms + n * P, static_cast<int>(b), n});
      out.push_back({CueKind::release, blk.start_ms + n * P + w, static_cast<int>(b), n});
    }
  }
  out.push_back({CueKind::rest, plan.end_ms(), static_cast<int>(plan.blocks.size()) - 1, -1});
  return out;
}

struct Cost {
  int hits = 0;
  std::int64_t err = 0;
};

// Exhaustive search over injective beat -> onset assignments within tolerance:
// most hits first, then least total absolute error.
Cost brute_force(const std::vector<std::int64_t>& beats, const std::vector<std::int64_t>& onsets, std::int64_t tol) {
  Cost best;
  std::vector<bool> used(onsets.size(), false);
  std::function<void(std::size_t, Cost)> go = [&](std::size_t i, Cost c) {
    if (i == beats.size()) {
      if (c.hits > best.hits || (c.hits == best.hits && c.err < best.err)) best = c;
      return;
    }
    go(i + 1, c);
    for (std::size_t j = 0; j < onsets.size(); ++j) {
      const std::int64_t e = std::llabs(onsets[j] - beats[i]);
      if (used[j] || e > tol) continue;
      used[j] = true;
      go(i + 1, {c.hits + 1, c.err + e});
      used[j] = false;
    }
  };
  go(0, {});
  return best;
}

std::vector<SqueezeSample> stream(std::initializer_list<std::pair<std::int64_t, double>> xs) {
  std::vector<SqueezeSample> out;
  for (auto [t, v] : xs) out.push_back({t, v});
  return out;
}

}  // namespace

TEST_CASE("pattern period and squeeze window follow the stress mapping") {
  for (int i = 0; i <= 100; ++i) {
    const double s = i / 100.0;
    const auto p = generate_pattern(s);
    const auto P = static_cast<std::int64_t>(std::llround(2000.0 - 1000.0 * s));
    CHECK(p.cycle_period_ms == P);
    CHECK(p.reps == 5);
    CHECK(p.squeeze_window_ms() == std::clamp<std::int64_t>(std::llround(0.4 * static_cast<double>(P)), 1, P - 1));
  }
  CHECK(generate_pattern(0.0).cycle_period_ms == 2000);
  CHECK(generate_pattern(1.0).cycle_period_ms == 1000);
  CHECK_THROWS_AS(generate_pattern(-0.01), Error);
  CHECK_THROWS_AS(generate_pattern(1.01), Error);
  CHECK_THROWS_AS(generate_pattern(std::nan("")), Error);
}

TEST_CASE("beats are evenly spaced squeeze/release pairs") {
  const auto p = generate_pattern(0.5);
  const auto beats = p.beats();
  REQUIRE(beats.size() == 5);
  for (std::size_t k = 0; k < beats.size(); ++k) {
    CHECK(beats[k].squeeze_ms == static_cast<std::int64_t>(k) * 1500);
    CHECK(beats[k].release_ms == beats[k].squeeze_ms + 600);
  }
  RhythmPattern bad;
  bad.cycle_period_ms = 100;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = RhythmPattern{};
  bad.squeeze_fraction = 1.2;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("ramp blocks lengthen to the target and finish with a full block") {
  const auto initial = generate_pattern(0.7);  // 1300 ms
  const auto plan = plan_ramp(initial, {4000, 200, 3}, 5000);
  std::int64_t period = 1300, cursor = 5000;
  std::size_t k = 0;
  for (; period < 4000; ++k) {
    REQUIRE(k < plan.blocks.size());
    CHECK(plan.blocks[k].start_ms == cursor);
    CHECK(plan.blocks[k].pattern.cycle_period_ms == period);
    CHECK(plan.blocks[k].pattern.reps == 3);
    cursor += 3 * period;
    period = std::min<std::int64_t>(period + 200, 4000);
  }
  REQUIRE(plan.blocks.size() == k + 1);
  CHECK(plan.blocks.back().pattern.cycle_period_ms == 4000);
  CHECK(plan.blocks.back().pattern.reps == 5);
  CHECK(plan.blocks.back().start_ms == cursor);
  // monotone non-decreasing periods, contiguous blocks
  for (std::size_t b = 1; b < plan.blocks.size(); ++b) {
    CHECK(plan.blocks[b].pattern.cycle_period_ms >= plan.blocks[b - 1].pattern.cycle_period_ms);
    CHECK(plan.blocks[b].start_ms == plan.blocks[b - 1].end_ms());
  }
  CHECK(plan.beat_count() == 3 * k + 5);
}

TEST_CASE("ramp presets and validation") {
  for (auto name : ramp_presets()) CHECK(ramp_policy_for(name).has_value());
  CHECK(ramp_policy_for("gentle")->step_ms == 100);
  CHECK(ramp_policy_for("deep")->target_period_ms == 5000);
  CHECK(ramp_policy_for("brief")->cycles_per_step == 2);
  CHECK_FALSE(ramp_policy_for("frantic").has_value());
  const auto initial = generate_pattern(0.0);
  CHECK_THROWS_AS(plan_ramp(initial, {1500, 200, 3}), Error);
  CHECK_THROWS_AS(plan_ramp(initial, {7000, 200, 3}), Error);
  CHECK_THROWS_AS(plan_ramp(initial, {4000, 0, 3}), Error);
  // already at target: a single block
  CHECK(plan_ramp(generate_pattern(0.0), {2000, 200, 3}).blocks.size() == 1);
}

TEST_CASE("cue lookup agrees with the enumerated schedule") {
  const auto plan = plan_ramp(generate_pattern(0.9), {3000, 300, 2}, 1000);
  const auto cues = all_cues(plan);
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::int64_t> t(0, plan.end_ms() + 2000);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::int64_t now = trial < 50 ? cues[static_cast<std::size_t>(trial) % cues.size()].due_ms : t(rng);
    auto it = std::find_if(cues.begin(), cues.end(), [&](const Cue& c) { return c.due_ms >= now; });
    const Cue got = next_cue(plan, now);
    if (it == cues.end()) {
      CHECK(got.kind == CueKind::end);
    } else {
      CHECK(got == *it);
    }
  }
  for (int trial = 0; trial < 300; ++trial) {
    std::int64_t a = t(rng), b = t(rng);
    if (a > b) std::swap(a, b);
    std::vector<Cue> want;
    for (const auto& c : cues)
      if (c.due_ms >= a && c.due_ms < b) want.push_back(c);
    CHECK(cues_between(plan, a, b) == want);
  }
}

TEST_CASE("cue due times do not drift over long plans") {
  RhythmPattern p;
  p.cycle_period_ms = 1001;
  p.reps = 1000;
  const auto plan = plan_ramp(p, {1001, 100, 1}, 7);
  CHECK(next_cue(plan, 7 + 999 * 1001).due_ms == 7 + 999 * 1001);
}

TEST_CASE("greedy matching equals brute-force minimum-cost matching") {
  std::mt19937_64 rng(2024);
  const std::int64_t tol = 250;
  for (int trial = 0; trial < 1000; ++trial) {
    std::uniform_int_distribution<int> nb(1, 6), no(0, 8);
    std::uniform_int_distribution<std::int64_t> gap(2 * tol, 3 * tol), jitter(-2 * tol, 2 * tol);
    std::vector<std::int64_t> beats;
    std::int64_t t = 0;
    for (int i = nb(rng); i > 0; --i) beats.push_back(t += gap(rng));
    std::vector<std::int64_t> onsets;
    std::uniform_int_distribution<std::size_t> pick(0, beats.size() - 1);
    for (int i = no(rng); i > 0; --i) onsets.push_back(beats[pick(rng)] + jitter(rng));
    if (trial % 10 == 0 && beats.size() > 1) onsets.push_back((beats[0] + beats[1]) / 2);  // equidistant
    std::sort(onsets.begin(), onsets.end());

    const auto got = match_onsets(beats, onsets, tol);
    const auto want = brute_force(beats, onsets, tol);
    CHECK(got.report.beats_hit == want.hits);
    std::int64_t err = 0;
    for (const auto& m : got.matches) err += std::llabs(m.error_ms);
    CHECK(err == want.err);
    CHECK(got.report.beats_total == static_cast<int>(beats.size()));
  }
}

TEST_CASE("uniform +100 ms offset scores exactly 0.6") {
  std::vector<std::int64_t> beats, onsets;
  for (int i = 0; i < 20; ++i) {
    beats.push_back(i * 2000);
    onsets.push_back(i * 2000 + 100);
  }
  const auto r = match_onsets(beats, onsets, 250).report;
  CHECK(r.beats_hit == 20);
  CHECK(r.mean_abs_timing_error_ms == 100.0);
  CHECK(r.sync_score == 0.6);
}

TEST_CASE("matching edge cases") {
  const std::vector<std::int64_t> beats{1000, 3000};
  CHECK(match_onsets(beats, std::vector<std::int64_t>{}).report.sync_score == 0.0);
  // exactly at tolerance counts
  CHECK(match_onsets(beats, std::vector<std::int64_t>{1250}).report.beats_hit == 1);
  CHECK(match_onsets(beats, std::vector<std::int64_t>{1251}).report.beats_hit == 0);
  // one onset can satisfy only one beat
  const std::vector<std::int64_t> close{1000, 1100};
  CHECK(match_onsets(close, std::vector<std::int64_t>{1050}).report.beats_hit == 1);
  // ties go to the earlier onset
  const auto tie = match_onsets(std::vector<std::int64_t>{1000}, std::vector<std::int64_t>{900, 1100});
  REQUIRE(tie.matches.size() == 1);
  CHECK(tie.matches[0].error_ms == -100);
  CHECK_THROWS_AS(match_onsets(std::vector<std::int64_t>{}, beats), Error);
  CHECK_THROWS_AS(match_onsets(beats, beats, 0), Error);
  CHECK(sync_score(5, 5, 300.0, 250) == 0.0);
  CHECK(sync_score(0, 5, 0.0, 250) == 0.0);
}

TEST_CASE("hysteresis detector: open, hold through chatter, close") {
  const auto ev = detect_squeeze_events(stream({{0, 0.0}, {33, 0.45}, {66, 0.55}, {99, 0.9}, {132, 0.35},
                                               {165, 0.45}, {198, 0.29}, {231, 0.0}}));
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].onset_ms == 66);
  CHECK(ev[0].release_ms == 198);
  CHECK(ev[0].peak_intensity == 0.9);
}

TEST_CASE("reopening within the refractory gap merges") {
  const auto merged = detect_squeeze_events(stream({{0, 0.8}, {33, 0.1}, {100, 0.7}, {400, 0.0}}));
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].onset_ms == 0);
  CHECK(merged[0].release_ms == 400);
  const auto separate = detect_squeeze_events(stream({{0, 0.8}, {33, 0.1}, {150, 0.7}, {400, 0.0}}));
  REQUIRE(separate.size() == 2);
  CHECK(separate[1].onset_ms == 150);
}

TEST_CASE("streaming detector reports onsets immediately and flushes open events") {
  SqueezeDetector d;
  CHECK_FALSE(d.push({0, 0.2}).onset.has_value());
  CHECK(d.push({33, 0.6}).onset == 33);
  CHECK(d.is_open());
  d.push({66, 0.7});
  const auto last = d.flush();
  REQUIRE(last.has_value());
  CHECK(last->onset_ms == 33);
  CHECK(last->release_ms == 66);
  CHECK_THROWS_AS(d.push({10, 0.1}), Error);
  CHECK_THROWS_AS(SqueezeDetector(DetectorConfig{0.3, 0.5, 150}), Error);
}

TEST_CASE("score_adherence uses event onsets and the accumulator pools blocks") {
  const auto beats = generate_pattern(0.0).beats();
  std::vector<SqueezeEvent> events;
  for (const auto& b : beats) events.push_back({b.squeeze_ms + 50, 0.8, b.release_ms});
  events.pop_back();
  const auto r = score_adherence(events, beats);
  CHECK(r.beats_hit == 4);
  CHECK(r.sync_score == doctest::Approx(0.8 * 0.8));
  AdherenceAccumulator acc;
  acc.add(r);
  acc.add({5, 5, 150.0, 0.0});
  const auto total = acc.report();
  CHECK(total.beats_total == 10);
  CHECK(total.beats_hit == 9);
  CHECK(total.mean_abs_timing_error_ms == doctest::Approx((4 * 50.0 + 5 * 150.0) / 9.0));
  CHECK(total.sync_score == doctest::Approx(0.9 * (1.0 - total.mean_abs_timing_error_ms / 250.0)));
}
