#include "nienie/stress.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "nienie/error.hpp"

namespace nienie::stress {

void LatencyStats::record(double micros) {
  if (recent_.size() < kKeep) {
    recent_.push_back(micros);
  } else {
    recent_[next_] = micros;
  }
  next_ = (next_ + 1) % kKeep;
  ++count_;
  sum_ += micros;
  max_ = std::max(max_, micros);
}

double LatencyStats::median() const {
  if (recent_.empty()) return 0.0;
  std::vector<double> v = recent_;
  auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(v.begin(), mid);
  return 0.5 * (lower + upper);
}

StressStream::StressStream(std::shared_ptr<const StressModel> model, std::size_t window_len, std::size_t stride)
    : model_(std::move(model)), window_len_(window_len), stride_(stride), ring_(window_len) {
  if (!model_) fail(ErrorCode::invalid_argument, "stress stream needs a loaded model");
  if (window_len == 0 || stride == 0) fail(ErrorCode::invalid_argument, "window_len and stride must be positive");
  if (model_->norm.mean.size() != kNumChannels)
    fail(ErrorCode::invalid_argument, "model is missing normalization stats for the canonical channels");
}

std::size_t StressStream::stride_phase() const {
  if (samples_seen_ < window_len_) return 0;
  return static_cast<std::size_t>((samples_seen_ - window_len_) % stride_);
}

Eigen::MatrixXd StressStream::window() const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(filled_), kNumChannels);
  const std::size_t first = (head_ + window_len_ - filled_) % window_len_;
  for (std::size_t k = 0; k < filled_; ++k) {
    const Sample& s = ring_[(first + k) % window_len_];
    for (int c = 0; c < kNumChannels; ++c) out(static_cast<Eigen::Index>(k), c) = s[static_cast<std::size_t>(c)];
  }
  return out;
}

std::optional<StressEstimate> StressStream::push_sample(std::int64_t t_ms, const Sample& sample) {
  for (std::size_t c = 0; c < sample.size(); ++c) {
    if (!std::isfinite(sample[c])) {
      fail(ErrorCode::validation, "non-finite sample rejected (channel " +
                                      std::string(to_string(kChannels[c])) + ", t_ms " + std::to_string(t_ms) + ")");
    }
  }
  ring_[head_] = sample;
  head_ = (head_ + 1) % window_len_;
  filled_ = std::min(filled_ + 1, window_len_);
  ++samples_seen_;
  if (samples_seen_ < window_len_ || (samples_seen_ - window_len_) % stride_ != 0) return std::nullopt;

  const auto started = std::chrono::steady_clock::now();
  StressEstimate est;
  est.t_ms = t_ms;
  est.probs = model_->predict_proba(window());
  est.raw_score = raw_stress_score(est.probs);
  const auto elapsed = std::chrono::steady_clock::now() - started;
  latency_.record(std::chrono::duration<double, std::micro>(elapsed).count());
  return est;
}

double raw_stress_score(const Eigen::VectorXd& probs) {
  if (probs.size() <= static_cast<Eigen::Index>(Label::stress))
    fail(ErrorCode::invalid_argument, "probability vector has no stress entry");
  return std::clamp(probs(static_cast<Eigen::Index>(Label::stress)), 0.0, 1.0);
}

CalibrationProfile calibrate(std::span<const double> raw_scores, double duration_s, double k_sensitivity) {
  if (raw_scores.size() < 2) fail(ErrorCode::invalid_argument, "calibration needs at least 2 estimates");
  if (!(duration_s > 0.0)) fail(ErrorCode::invalid_argument, "calibration duration must be positive");
  double mean = 0.0;
  for (double r : raw_scores) mean += r;
  mean /= static_cast<double>(raw_scores.size());
  double var = 0.0;
  for (double r : raw_scores) var += (r - mean) * (r - mean);
  var /= static_cast<double>(raw_scores.size());
  return {mean, std::max(std::sqrt(var), kMinBaselineStd), duration_s, k_sensitivity};
}

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double adjusted_score(double raw, const CalibrationProfile& profile) {
  return logistic(profile.k_sensitivity * (raw - profile.baseline_mean) / profile.baseline_std);
}

double smooth(std::optional<double> prev, double adjusted, double alpha) {
  if (!prev) return adjusted;
  return alpha * adjusted + (1.0 - alpha) * *prev;
}

void StressScorer::score(StressEstimate& estimate) {
  if (!profile_) return;
  estimate.adjusted = adjusted_score(estimate.raw_score, *profile_);
  smoothed_ = smooth(smoothed_, *estimate.adjusted, alpha_);
  estimate.smoothed = smoothed_;
}

}  // namespace nienie::stress
