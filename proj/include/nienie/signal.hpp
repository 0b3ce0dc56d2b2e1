#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "nienie/types.hpp"

namespace nienie::ingest {

// Positive rational sample rate in Hz.
struct SampleRate {
  std::int64_t num = 1;
  std::int64_t den = 1;

  double hz() const { return static_cast<double>(num) / static_cast<double>(den); }

  // Nearest rational with denominator <= 1000; throws for non-positive input.
  static SampleRate from_hz(double hz);

  friend bool operator==(const SampleRate& a, const SampleRate& b) { return a.num * b.den == b.num * a.den; }
};

struct ChannelSpec {
  Channel name = Channel::eda;
  SampleRate rate;
  std::string units;
};

struct ChannelData {
  ChannelSpec spec;
  std::vector<double> samples;
};

// Labeled time interval [start_s, end_s) in seconds.
struct Segment {
  Label label = Label::baseline;
  double start_s = 0.0;
  double end_s = 0.0;

  friend bool operator==(const Segment&, const Segment&) = default;
};

struct RawRecording {
  std::string subject_id;
  std::map<Channel, ChannelData> channels;  // iteration order is [eda, temp, hr]
  std::vector<Segment> segments;
};

// Throws a validation error naming the first broken invariant.
void validate(const RawRecording& rec);

enum class RecordingFormat { csv_dir, jsonl };

RecordingFormat parse_format(std::string_view text);

// csv_dir: <dir>/{eda,temp,hr}.csv with header `t_s,value` plus
// <dir>/segments.csv with header `label,start_s,end_s`. The subject id is the
// directory name.
// jsonl: one JSON object per line; a `recording` header, one `channel` object
// per channel and one `segment` object per labeled interval.
RawRecording load_recording(const std::string& path, RecordingFormat format);
void save_recording(const RawRecording& rec, const std::string& path, RecordingFormat format);

// Output length is floor(len * dst / src). Integer-ratio downsampling mean-pools
// blocks; other downsampling ratios average over fractional boxes; upsampling
// interpolates linearly and holds the last value past the end.
std::vector<double> resample_channel(std::span<const double> samples, SampleRate src, SampleRate dst);

// Half-open range of sample indices [begin, end) carrying one label.
struct SegmentIndex {
  Label label = Label::baseline;
  std::size_t begin = 0;
  std::size_t end = 0;

  friend bool operator==(const SegmentIndex&, const SegmentIndex&) = default;
};

// Uniform 1 Hz series, T x 3, columns [eda, temp, hr].
struct CanonicalSeries {
  static constexpr int kRateHz = 1;

  Eigen::MatrixXd data;
  std::vector<SegmentIndex> segments;
  std::vector<std::string> warnings;

  std::size_t length() const { return static_cast<std::size_t>(data.rows()); }
};

// Resamples every channel to 1 Hz, truncates to the shortest channel and maps
// segment times to sample indices clipped to [0, T).
CanonicalSeries truncate_and_stack(const RawRecording& rec);

struct ScheduleEntry {
  Label label = Label::baseline;
  double duration_s = 0.0;
};

// Parses "baseline:600,stress:600,amusement:600".
std::vector<ScheduleEntry> parse_schedule(std::string_view text);

// Generator configuration for synthetic recordings. Class means are indexed by
// Label and hold [eda uS, temp degC, hr bpm]. Noise is AR(1) per native sample
// with stationary standard deviation noise_fraction * (smallest gap between
// class means of that channel). A slow AR(1) drift with time constant
// drift_tau_s and stationary deviation drift_fraction * gap is shared across
// segments.
struct SynthParams {
  std::array<Sample, 3> class_means = {{
      {2.0, 33.5, 70.0},  // baseline
      {8.0, 34.5, 95.0},  // stress
      {4.0, 34.0, 80.0},  // amusement
  }};
  double noise_rho = 0.9;
  double noise_fraction = 0.3;
  double drift_fraction = 0.2;
  double drift_tau_s = 300.0;
  SampleRate eda_rate{4, 1};
  SampleRate temp_rate{4, 1};
  SampleRate hr_rate{1, 1};

  // Smallest positive difference between class means of a channel.
  double class_gap(Channel channel) const;
};

RawRecording synth_recording(std::uint64_t seed, std::span<const ScheduleEntry> schedule,
                             const SynthParams& params = {});

}  // namespace nienie::ingest
