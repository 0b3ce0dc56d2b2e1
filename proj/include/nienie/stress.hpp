#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "nienie/model.hpp"
#include "nienie/types.hpp"

namespace nienie::stress {

struct StressEstimate {
  std::int64_t t_ms = 0;  // timestamp of the sample that completed the window
  Eigen::VectorXd probs;  // [baseline, stress, amusement]
  double raw_score = 0.0;
  std::optional<double> adjusted;  // absent until the user is calibrated
  std::optional<double> smoothed;
};

// Per-window inference timing in microseconds.
class LatencyStats {
 public:
  void record(double micros);
  std::size_t count() const { return count_; }
  double max() const { return max_; }
  double mean() const { return count_ == 0 ? 0.0 : sum_ / static_cast<double>(count_); }
  // Median of the most recent kKeep measurements.
  double median() const;

 private:
  static constexpr std::size_t kKeep = 4096;
  std::vector<double> recent_;
  std::size_t next_ = 0;
  std::size_t count_ = 0;
  double sum_ = 0.0;
  double max_ = 0.0;
};

// Rolling buffer of the latest canonical samples. An estimate is emitted
// exactly when samples_seen >= window_len and
// (samples_seen - window_len) % stride == 0, so the emitted windows are the
// ones slide_windows would produce over the same series.
class StressStream {
 public:
  StressStream(std::shared_ptr<const StressModel> model, std::size_t window_len = 40, std::size_t stride = 20);

  // Rejects non-finite samples with a validation error and leaves the buffer
  // unchanged.
  std::optional<StressEstimate> push_sample(std::int64_t t_ms, const Sample& sample);

  std::uint64_t samples_seen() const { return samples_seen_; }
  std::size_t stride_phase() const;
  std::size_t buffered() const { return filled_; }
  const LatencyStats& latency() const { return latency_; }

  // Buffered samples in chronological order (filled x channels).
  Eigen::MatrixXd window() const;

 private:
  std::shared_ptr<const StressModel> model_;
  std::size_t window_len_;
  std::size_t stride_;
  std::vector<Sample> ring_;
  std::size_t head_ = 0;
  std::size_t filled_ = 0;
  std::uint64_t samples_seen_ = 0;
  LatencyStats latency_;
};

// p(stress), clamped to [0, 1].
double raw_stress_score(const Eigen::VectorXd& probs);

inline constexpr double kMinBaselineStd = 1e-3;

struct CalibrationProfile {
  double baseline_mean = 0.0;
  double baseline_std = kMinBaselineStd;
  double duration_s = 60.0;
  double k_sensitivity = 1.0;
};

// Population mean and standard deviation of the raw scores; the deviation is
// clamped below at kMinBaselineStd. Needs at least two scores.
CalibrationProfile calibrate(std::span<const double> raw_scores, double duration_s = 60.0, double k_sensitivity = 1.0);

double logistic(double z);

// logistic(k * (raw - mean) / std)
double adjusted_score(double raw, const CalibrationProfile& profile);

// alpha * adjusted + (1 - alpha) * prev; the first value passes through.
double smooth(std::optional<double> prev, double adjusted, double alpha = 0.3);

// Calibration-aware scoring state for one session.
class StressScorer {
 public:
  explicit StressScorer(double alpha = 0.3) : alpha_(alpha) {}

  void set_profile(const CalibrationProfile& profile) { profile_ = profile; }
  const std::optional<CalibrationProfile>& profile() const { return profile_; }
  std::optional<double> last_smoothed() const { return smoothed_; }

  // Fills adjusted/smoothed once a profile is set; otherwise leaves them empty.
  void score(StressEstimate& estimate);

 private:
  double alpha_;
  std::optional<CalibrationProfile> profile_;
  std::optional<double> smoothed_;
};

}  // namespace nienie::stress
