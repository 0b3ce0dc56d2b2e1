#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "nienie/error.hpp"
#include "nienie/signal.hpp"
#include "support.hpp"

using namespace nienie;
using namespace nienie::ingest;

namespace {

std::vector<double> random_samples(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Expands each sample into `rep` copies and mean-pools blocks of `block`: an
// independent route to the fractional box average when src/dst = block/rep.
std::vector<double> box_oracle(const std::vector<double>& x, std::size_t rep, std::size_t block) {
  std::vector<double> fine;
  for (double v : x)
    for (std::size_t k = 0; k < rep; ++k) fine.push_back(v);
  std::vector<double> out;
  for (std::size_t j = 0; (j + 1) * block <= fine.size(); ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < block; ++k) s += fine[j * block + k];
    out.push_back(s / static_cast<double>(block));
  }
  return out;
}

RawRecording small_recording() {
  RawRecording rec;
  rec.subject_id = "S1";
  const std::size_t n = 120;
  for (auto c : kChannels) {
    ChannelData ch;
    ch.spec.name = c;
    ch.spec.rate = c == Channel::hr ? SampleRate{1, 1} : SampleRate{4, 1};
    ch.spec.units = std::string(default_units(c));
    ch.samples = random_samples(n * static_cast<std::size_t>(ch.spec.rate.hz()), 10 + static_cast<int>(c));
    rec.channels[c] = ch;
  }
  rec.segments = {{Label::baseline, 0.0, 60.0}, {Label::stress, 60.0, 120.0}};
  return rec;
}

}  // namespace

TEST_CASE("integer-ratio downsampling mean-pools blocks") {
  const auto x = random_samples(403, 1);
  const auto y = resample_channel(x, {4, 1}, {1, 1});
  REQUIRE(y.size() == 100);
  const auto want = box_oracle(x, 1, 4);
  for (std::size_t j = 0; j < y.size(); ++j) CHECK(y[j] == doctest::Approx(want[j]).epsilon(1e-12));
}

TEST_CASE("fractional downsampling matches the expanded box oracle") {
  // 2.5 Hz -> 1 Hz: 5 half-samples per output
  const auto x = random_samples(101, 2);
  const auto y = resample_channel(x, {5, 2}, {1, 1});
  const auto want = box_oracle(x, 2, 5);
  REQUIRE(y.size() == 40);
  for (std::size_t j = 0; j < y.size(); ++j) CHECK(y[j] == doctest::Approx(want[j]).epsilon(1e-12));
}

TEST_CASE("upsampling interpolates linearly and holds the last value") {
  const std::vector<double> x{0.0, 2.0, 6.0};
  const auto y = resample_channel(x, {1, 2}, {1, 1});  // 0.5 Hz -> 1 Hz
  REQUIRE(y.size() == 6);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 1.0);
  CHECK(y[2] == 2.0);
  CHECK(y[3] == 4.0);
  CHECK(y[4] == 6.0);
  CHECK(y[5] == 6.0);
}

TEST_CASE("equal rates pass samples through") {
  const auto x = random_samples(17, 3);
  CHECK(resample_channel(x, {1, 1}, {1, 1}) == x);
  CHECK_THROWS_AS(resample_channel({}, {1, 1}, {1, 1}), Error);
}

TEST_CASE("truncate_and_stack aligns channels and maps segments") {
  auto rec = small_recording();
  rec.channels[Channel::hr].samples.resize(100);  // shortest channel wins
  const auto series = truncate_and_stack(rec);
  CHECK(series.length() == 100);
  CHECK(series.data.cols() == 3);
  REQUIRE(series.segments.size() == 2);
  CHECK(series.segments[0] == SegmentIndex{Label::baseline, 0, 60});
  CHECK(series.segments[1] == SegmentIndex{Label::stress, 60, 100});
  const auto eda = resample_channel(rec.channels[Channel::eda].samples, {4, 1}, {1, 1});
  CHECK(series.data(7, 0) == eda[7]);
  CHECK(series.data(7, 2) == rec.channels[Channel::hr].samples[7]);
}

TEST_CASE("validation rejects broken recordings") {
  auto rec = small_recording();
  rec.segments = {{Label::baseline, 0.0, 70.0}, {Label::stress, 60.0, 120.0}};  // overlap
  CHECK_THROWS_AS(validate(rec), Error);
  rec = small_recording();
  rec.channels[Channel::eda].samples[3] = std::nan("");
  CHECK_THROWS_AS(validate(rec), Error);
  rec = small_recording();
  rec.channels.erase(Channel::temp);
  CHECK_THROWS_AS(validate(rec), Error);
}

TEST_CASE("csv_dir and jsonl round trips preserve the canonical series") {
  const auto rec = small_recording();
  const auto dir = testing::temp_dir("signal_io");
  for (auto fmt : {RecordingFormat::csv_dir, RecordingFormat::jsonl}) {
    const auto path = (dir / (fmt == RecordingFormat::jsonl ? "rec.jsonl" : "S1")).string();
    save_recording(rec, path, fmt);
    const auto back = load_recording(path, fmt);
    CHECK(back.segments == rec.segments);
    const auto a = truncate_and_stack(rec);
    const auto b = truncate_and_stack(back);
    REQUIRE(a.length() == b.length());
    CHECK((a.data - b.data).cwiseAbs().maxCoeff() < 1e-9);
  }
  CHECK_THROWS_AS(load_recording((dir / "missing").string(), RecordingFormat::csv_dir), Error);
  CHECK_THROWS_AS(parse_format("xml"), Error);
}

TEST_CASE("schedule parsing") {
  const auto s = parse_schedule("baseline:600,stress:300.5,amusement:10");
  REQUIRE(s.size() == 3);
  CHECK(s[1].label == Label::stress);
  CHECK(s[1].duration_s == 300.5);
  CHECK_THROWS_AS(parse_schedule("calm:60"), Error);
  CHECK_THROWS_AS(parse_schedule("stress:-1"), Error);
  CHECK_THROWS_AS(parse_schedule(""), Error);
}

TEST_CASE("synthetic recordings are seeded and class-separated on average") {
  const auto sched = parse_schedule("baseline:300,stress:300,amusement:300");
  const auto a = truncate_and_stack(synth_recording(5, sched));
  const auto b = truncate_and_stack(synth_recording(5, sched));
  const auto c = truncate_and_stack(synth_recording(6, sched));
  CHECK(a.data == b.data);
  CHECK(a.data != c.data);
  REQUIRE(a.length() == 900);
  // hr means follow the documented class means within a few noise sd
  const double base = a.data.block(0, 2, 300, 1).mean();
  const double str = a.data.block(300, 2, 300, 1).mean();
  const double amu = a.data.block(600, 2, 300, 1).mean();
  CHECK(base < amu);
  CHECK(amu < str);
  CHECK(std::abs(str - 95.0) < 8.0);
}
