#include "nienie/signal.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "nienie/error.hpp"
#include "nienie/random.hpp"
#include "text_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace nienie::ingest {

namespace {

using Wide = __int128;

std::string channel_error(Channel c, std::size_t index) {
  return "non-finite sample at (" + std::string(to_string(c)) + ", " + std::to_string(index) + ")";
}

std::size_t output_length(std::size_t len, SampleRate src, SampleRate dst) {
  Wide n = static_cast<Wide>(len) * dst.num * src.den;
  Wide d = static_cast<Wide>(dst.den) * src.num;
  return static_cast<std::size_t>(n / d);
}

void check_rate(SampleRate r, const char* what) {
  if (r.num <= 0 || r.den <= 0) fail(ErrorCode::invalid_argument, std::string(what) + " sample rate must be positive");
}

}  // namespace

SampleRate SampleRate::from_hz(double hz) {
  if (!std::isfinite(hz) || hz <= 0.0) fail(ErrorCode::invalid_argument, "sample rate must be positive");
  for (std::int64_t den = 1; den <= 1000; ++den) {
    double scaled = hz * static_cast<double>(den);
    auto num = static_cast<std::int64_t>(std::llround(scaled));
    if (num > 0 && std::abs(scaled - static_cast<double>(num)) <= 1e-6 * static_cast<double>(den)) {
      auto g = std::gcd(num, den);
      return {num / g, den / g};
    }
  }
  auto num = static_cast<std::int64_t>(std::llround(hz * 1e6));
  auto g = std::gcd(num, std::int64_t{1000000});
  return {num / g, 1000000 / g};
}

RecordingFormat parse_format(std::string_view text) {
  if (text == "csv_dir" || text == "csv") return RecordingFormat::csv_dir;
  if (text == "jsonl") return RecordingFormat::jsonl;
  fail(ErrorCode::invalid_argument, "unknown recording format '" + std::string(text) + "'");
}

void validate(const RawRecording& rec) {
  for (Channel c : kChannels) {
    auto it = rec.channels.find(c);
    if (it == rec.channels.end()) fail(ErrorCode::validation, "missing channel '" + std::string(to_string(c)) + "'");
    const ChannelData& ch = it->second;
    if (ch.spec.name != c) fail(ErrorCode::validation, "channel key/name mismatch for " + std::string(to_string(c)));
    if (ch.spec.rate.num <= 0 || ch.spec.rate.den <= 0)
      fail(ErrorCode::validation, "channel '" + std::string(to_string(c)) + "' has a non-positive sample rate");
    if (ch.samples.empty()) fail(ErrorCode::validation, "channel '" + std::string(to_string(c)) + "' is empty");
    for (std::size_t i = 0; i < ch.samples.size(); ++i) {
      if (!std::isfinite(ch.samples[i])) fail(ErrorCode::validation, channel_error(c, i));
    }
  }
  for (std::size_t i = 0; i < rec.segments.size(); ++i) {
    const Segment& s = rec.segments[i];
    if (!std::isfinite(s.start_s) || !std::isfinite(s.end_s) || s.start_s < 0.0)
      fail(ErrorCode::validation, "segment " + std::to_string(i) + " has an invalid start or end");
    if (s.end_s < s.start_s)
      fail(ErrorCode::validation, "reversed segment interval at index " + std::to_string(i));
    if (i > 0 && s.start_s < rec.segments[i - 1].end_s)
      fail(ErrorCode::validation, "segment overlap between index " + std::to_string(i - 1) + " and " +
                                      std::to_string(i));
  }
}

// ---------------------------------------------------------------------------
// csv_dir

namespace {

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    auto t = detail::trim(line);
    if (!t.empty()) lines.emplace_back(t);
  }
  return lines;
}

ChannelData load_channel_csv(const fs::path& path, Channel c) {
  auto lines = read_lines(path);
  if (lines.empty() || lines.front() != "t_s,value")
    fail(ErrorCode::format, path.string() + ": expected header 't_s,value'");
  if (lines.size() < 3)
    fail(ErrorCode::format, path.string() + ": at least two samples are needed to infer the sample rate");
  std::vector<double> times;
  ChannelData ch;
  ch.spec.name = c;
  ch.spec.units = std::string(default_units(c));
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto fields = detail::split(lines[i], ',');
    if (fields.size() != 2) fail(ErrorCode::format, path.string() + ": line " + std::to_string(i + 1) + " malformed");
    auto t = detail::parse_double(fields[0]);
    auto v = detail::parse_double(fields[1]);
    if (!t || !v) fail(ErrorCode::format, path.string() + ": line " + std::to_string(i + 1) + " is not numeric");
    if (!std::isfinite(*v)) fail(ErrorCode::validation, channel_error(c, i - 1));
    times.push_back(*t);
    ch.samples.push_back(*v);
  }
  double dt = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
  if (!(dt > 0.0)) fail(ErrorCode::format, path.string() + ": timestamps must increase");
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (std::abs((times[i] - times[i - 1]) - dt) > 1e-6 * std::max(1.0, dt))
      fail(ErrorCode::format, path.string() + ": non-uniform timestamps at row " + std::to_string(i + 1));
  }
  ch.spec.rate = SampleRate::from_hz(1.0 / dt);
  return ch;
}

RawRecording load_csv_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorCode::io, "not a directory: " + dir.string());
  RawRecording rec;
  rec.subject_id = dir.filename().string();
  if (rec.subject_id.empty()) rec.subject_id = dir.parent_path().filename().string();
  for (Channel c : kChannels) {
    fs::path p = dir / (std::string(to_string(c)) + ".csv");
    if (!fs::exists(p)) fail(ErrorCode::validation, "missing channel '" + std::string(to_string(c)) + "'");
    rec.channels.emplace(c, load_channel_csv(p, c));
  }
  fs::path seg_path = dir / "segments.csv";
  if (fs::exists(seg_path)) {
    auto lines = read_lines(seg_path);
    if (lines.empty() || lines.front() != "label,start_s,end_s")
      fail(ErrorCode::format, seg_path.string() + ": expected header 'label,start_s,end_s'");
    for (std::size_t i = 1; i < lines.size(); ++i) {
      auto f = detail::split(lines[i], ',');
      if (f.size() != 3) fail(ErrorCode::format, seg_path.string() + ": line " + std::to_string(i + 1) + " malformed");
      auto lv = detail::parse_double(f[0]);
      auto s = detail::parse_double(f[1]);
      auto e = detail::parse_double(f[2]);
      std::optional<Label> label;
      if (lv && *lv == std::floor(*lv)) label = label_from_int(static_cast<long long>(*lv));
      if (!label || !s || !e)
        fail(ErrorCode::format, seg_path.string() + ": line " + std::to_string(i + 1) + " malformed");
      rec.segments.push_back({*label, *s, *e});
    }
  }
  validate(rec);
  return rec;
}

void save_csv_dir(const RawRecording& rec, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& [c, ch] : rec.channels) {
    std::ofstream out(dir / (std::string(to_string(c)) + ".csv"), std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write channel file in " + dir.string());
    out << "t_s,value\n";
    for (std::size_t i = 0; i < ch.samples.size(); ++i) {
      double t = static_cast<double>(static_cast<Wide>(i) * ch.spec.rate.den) / static_cast<double>(ch.spec.rate.num);
      out << detail::format_double(t) << ',' << detail::format_double(ch.samples[i]) << '\n';
    }
  }
  std::ofstream seg(dir / "segments.csv", std::ios::trunc);
  if (!seg) fail(ErrorCode::io, "cannot write segments in " + dir.string());
  seg << "label,start_s,end_s\n";
  for (const auto& s : rec.segments) {
    seg << static_cast<int>(s.label) << ',' << detail::format_double(s.start_s) << ','
        << detail::format_double(s.end_s) << '\n';
  }
}

// ---------------------------------------------------------------------------
// jsonl

SampleRate parse_rate(const json& j) {
  if (j.is_number()) return SampleRate::from_hz(j.get<double>());
  if (j.is_string()) {
    auto parts = detail::split(j.get<std::string>(), '/');
    if (parts.size() == 2) {
      auto n = detail::parse_double(parts[0]);
      auto d = detail::parse_double(parts[1]);
      if (n && d && *n > 0 && *d > 0 && *n == std::floor(*n) && *d == std::floor(*d)) {
        auto num = static_cast<std::int64_t>(*n);
        auto den = static_cast<std::int64_t>(*d);
        auto g = std::gcd(num, den);
        return {num / g, den / g};
      }
    }
  }
  fail(ErrorCode::format, "invalid sample_rate_hz");
}

json rate_to_json(SampleRate r) {
  if (r.den == 1) return r.num;
  return std::to_string(r.num) + "/" + std::to_string(r.den);
}

RawRecording load_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  RawRecording rec;
  rec.subject_id = path.stem().string();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrorCode::format, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    const std::string type = j.value("type", "");
    try {
      if (type == "recording") {
        rec.subject_id = j.value("subject_id", rec.subject_id);
      } else if (type == "channel") {
        auto name = parse_channel(j.at("name").get<std::string>());
        if (!name) fail(ErrorCode::format, path.string() + ":" + std::to_string(line_no) + ": unknown channel");
        if (rec.channels.contains(*name))
          fail(ErrorCode::validation, "duplicate channel '" + std::string(to_string(*name)) + "'");
        ChannelData ch;
        ch.spec.name = *name;
        ch.spec.rate = parse_rate(j.at("sample_rate_hz"));
        ch.spec.units = j.value("units", std::string(default_units(*name)));
        const auto& arr = j.at("samples");
        if (!arr.is_array()) fail(ErrorCode::format, "channel samples must be an array");
        ch.samples.reserve(arr.size());
        for (std::size_t i = 0; i < arr.size(); ++i) {
          if (!arr[i].is_number()) fail(ErrorCode::validation, channel_error(*name, i));
          double v = arr[i].get<double>();
          if (!std::isfinite(v)) fail(ErrorCode::validation, channel_error(*name, i));
          ch.samples.push_back(v);
        }
        rec.channels.emplace(*name, std::move(ch));
      } else if (type == "segment") {
        auto label = label_from_int(j.at("label").get<long long>());
        if (!label) fail(ErrorCode::format, path.string() + ":" + std::to_string(line_no) + ": bad label");
        rec.segments.push_back({*label, j.at("start_s").get<double>(), j.at("end_s").get<double>()});
      } else {
        fail(ErrorCode::format, path.string() + ":" + std::to_string(line_no) + ": unknown record type '" + type + "'");
      }
    } catch (const json::exception& e) {
      fail(ErrorCode::format, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  validate(rec);
  return rec;
}

void save_jsonl(const RawRecording& rec, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << json{{"type", "recording"}, {"subject_id", rec.subject_id}, {"version", 1}}.dump() << '\n';
  for (const auto& [c, ch] : rec.channels) {
    json j{{"type", "channel"},
           {"name", std::string(to_string(c))},
           {"sample_rate_hz", rate_to_json(ch.spec.rate)},
           {"units", ch.spec.units},
           {"samples", ch.samples}};
    out << j.dump() << '\n';
  }
  for (const auto& s : rec.segments) {
    out << json{{"type", "segment"}, {"label", static_cast<int>(s.label)}, {"start_s", s.start_s}, {"end_s", s.end_s}}
               .dump()
        << '\n';
  }
}

}  // namespace

RawRecording load_recording(const std::string& path, RecordingFormat format) {
  if (!fs::exists(path)) fail(ErrorCode::io, "no such file or directory: " + path);
  return format == RecordingFormat::csv_dir ? load_csv_dir(path) : load_jsonl(path);
}

void save_recording(const RawRecording& rec, const std::string& path, RecordingFormat format) {
  validate(rec);
  if (format == RecordingFormat::csv_dir) {
    save_csv_dir(rec, path);
  } else {
    save_jsonl(rec, path);
  }
}

// ---------------------------------------------------------------------------
// resampling

std::vector<double> resample_channel(std::span<const double> samples, SampleRate src, SampleRate dst) {
  check_rate(src, "source");
  check_rate(dst, "destination");
  if (samples.empty()) fail(ErrorCode::invalid_argument, "cannot resample an empty channel");

  const std::size_t len = samples.size();
  const std::size_t out_len = output_length(len, src, dst);
  if (src == dst) return {samples.begin(), samples.end()};

  // Source samples per output sample, as a rational.
  const Wide step_num = static_cast<Wide>(src.num) * dst.den;
  const Wide step_den = static_cast<Wide>(src.den) * dst.num;
  std::vector<double> out(out_len);

  if (step_num > step_den && step_num % step_den == 0) {
    const auto block = static_cast<std::size_t>(step_num / step_den);
    for (std::size_t j = 0; j < out_len; ++j) {
      double sum = 0.0;
      for (std::size_t k = 0; k < block; ++k) sum += samples[j * block + k];
      out[j] = sum / static_cast<double>(block);
    }
    return out;
  }

  if (step_num > step_den) {
    // Fractional box average over [j*step, (j+1)*step).
    const double step = static_cast<double>(step_num) / static_cast<double>(step_den);
    for (std::size_t j = 0; j < out_len; ++j) {
      const double lo = static_cast<double>(static_cast<Wide>(j) * step_num) / static_cast<double>(step_den);
      const double hi = lo + step;
      double acc = 0.0;
      double weight = 0.0;
      for (auto i = static_cast<std::size_t>(std::floor(lo)); i < len && static_cast<double>(i) < hi; ++i) {
        double w = std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
        if (w <= 0.0) continue;
        acc += w * samples[i];
        weight += w;
      }
      out[j] = acc / weight;
    }
    return out;
  }

  // Upsampling by linear interpolation at source position j * step.
  for (std::size_t j = 0; j < out_len; ++j) {
    const Wide pos_num = static_cast<Wide>(j) * step_num;
    const auto i0 = static_cast<std::size_t>(pos_num / step_den);
    const double frac = static_cast<double>(pos_num % step_den) / static_cast<double>(step_den);
    if (i0 + 1 >= len) {
      out[j] = samples[len - 1];
    } else {
      out[j] = samples[i0] + frac * (samples[i0 + 1] - samples[i0]);
    }
  }
  return out;
}

CanonicalSeries truncate_and_stack(const RawRecording& rec) {
  validate(rec);
  const SampleRate canonical{CanonicalSeries::kRateHz, 1};
  std::array<std::vector<double>, kNumChannels> resampled;
  std::size_t T = std::numeric_limits<std::size_t>::max();
  for (Channel c : kChannels) {
    const ChannelData& ch = rec.channels.at(c);
    resampled[static_cast<int>(c)] = resample_channel(ch.samples, ch.spec.rate, canonical);
    T = std::min(T, resampled[static_cast<int>(c)].size());
  }
  if (T == 0) fail(ErrorCode::validation, "recording is shorter than one canonical sample after truncation");

  CanonicalSeries series;
  series.data.resize(static_cast<Eigen::Index>(T), kNumChannels);
  for (int c = 0; c < kNumChannels; ++c) {
    for (std::size_t t = 0; t < T; ++t) series.data(static_cast<Eigen::Index>(t), c) = resampled[c][t];
  }

  // Sample i covers [i, i+1) s and belongs to a segment when start <= i < end.
  auto to_index = [](double s) { return static_cast<std::size_t>(std::max(0.0, std::ceil(s - 1e-9))); };
  for (std::size_t k = 0; k < rec.segments.size(); ++k) {
    const Segment& s = rec.segments[k];
    std::size_t begin = to_index(s.start_s);
    std::size_t end = to_index(s.end_s);
    if (begin >= T) {
      series.warnings.push_back("segment " + std::to_string(k) + " starts at or beyond T=" + std::to_string(T) +
                                " and was dropped");
      continue;
    }
    if (end > T) {
      series.warnings.push_back("segment " + std::to_string(k) + " clipped from " + std::to_string(end) + " to T=" +
                                std::to_string(T));
      end = T;
    }
    if (end > begin) series.segments.push_back({s.label, begin, end});
  }
  return series;
}

// ---------------------------------------------------------------------------
// synthetic recordings

std::vector<ScheduleEntry> parse_schedule(std::string_view text) {
  std::vector<ScheduleEntry> out;
  for (auto item : detail::split(text, ',')) {
    item = detail::trim(item);
    if (item.empty()) continue;
    auto parts = detail::split(item, ':');
    if (parts.size() != 2) fail(ErrorCode::invalid_argument, "schedule entry '" + std::string(item) + "' is not label:seconds");
    auto label = parse_label(detail::trim(parts[0]));
    auto dur = detail::parse_double(parts[1]);
    if (!label || !dur) fail(ErrorCode::invalid_argument, "schedule entry '" + std::string(item) + "' is malformed");
    if (!(*dur > 0.0) || !std::isfinite(*dur))
      fail(ErrorCode::invalid_argument, "schedule entry '" + std::string(item) + "' needs a positive duration");
    out.push_back({*label, *dur});
  }
  if (out.empty()) fail(ErrorCode::invalid_argument, "empty schedule");
  return out;
}

double SynthParams::class_gap(Channel channel) const {
  std::array<double, 3> v{};
  for (int k = 0; k < 3; ++k) v[k] = class_means[k][static_cast<int>(channel)];
  std::sort(v.begin(), v.end());
  double gap = std::numeric_limits<double>::infinity();
  for (int k = 1; k < 3; ++k) {
    if (v[k] - v[k - 1] > 0.0) gap = std::min(gap, v[k] - v[k - 1]);
  }
  return std::isfinite(gap) ? gap : 1.0;
}

RawRecording synth_recording(std::uint64_t seed, std::span<const ScheduleEntry> schedule, const SynthParams& params) {
  if (schedule.empty()) fail(ErrorCode::invalid_argument, "schedule must be non-empty");
  RawRecording rec;
  rec.subject_id = "synth-" + std::to_string(seed);
  double cursor = 0.0;
  for (const auto& e : schedule) {
    if (!std::isfinite(e.duration_s) || e.duration_s <= 0.0)
      fail(ErrorCode::invalid_argument, "schedule durations must be positive");
    rec.segments.push_back({e.label, cursor, cursor + e.duration_s});
    cursor += e.duration_s;
  }
  const double total_s = cursor;

  for (Channel c : kChannels) {
    const int ci = static_cast<int>(c);
    const SampleRate rate = c == Channel::eda ? params.eda_rate : c == Channel::temp ? params.temp_rate : params.hr_rate;
    check_rate(rate, "synthetic");
    const double gap = params.class_gap(c);
    const double noise_sd = params.noise_fraction * gap;
    const double drift_sd = params.drift_fraction * gap;
    const double dt = 1.0 / rate.hz();
    const double drift_rho = std::exp(-dt / params.drift_tau_s);
    const double rho = params.noise_rho;

    auto rng = make_stream(seed, "synth/" + std::string(to_string(c)));
    std::normal_distribution<double> normal(0.0, 1.0);

    const auto n = static_cast<std::size_t>(std::floor(total_s * rate.hz() + 1e-9));
    ChannelData ch;
    ch.spec = {c, rate, std::string(default_units(c))};
    ch.samples.resize(n);
    double noise = noise_sd * normal(rng);
    double drift = drift_sd * normal(rng);
    std::size_t seg = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) * dt;
      while (seg + 1 < rec.segments.size() && t >= rec.segments[seg].end_s) ++seg;
      if (i > 0) {
        noise = rho * noise + std::sqrt(1.0 - rho * rho) * noise_sd * normal(rng);
        drift = drift_rho * drift + std::sqrt(1.0 - drift_rho * drift_rho) * drift_sd * normal(rng);
      }
      const double mean = params.class_means[static_cast<int>(rec.segments[seg].label)][ci];
      ch.samples[i] = mean + noise + drift;
    }
    rec.channels.emplace(c, std::move(ch));
  }
  return rec;
}

}  // namespace nienie::ingest
