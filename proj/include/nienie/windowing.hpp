#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nienie/signal.hpp"
#include "nienie/types.hpp"

namespace nienie::windowing {

inline constexpr std::size_t kWindowLen = 40;
inline constexpr std::size_t kStep = 20;

struct Window {
  std::size_t start = 0;
  Eigen::MatrixXd values;  // window_len x channels
};

// max(0, floor((T - window_len) / step) + 1)
std::size_t window_count(std::size_t series_len, std::size_t window_len = kWindowLen, std::size_t step = kStep);

// Windows start at 0, step, 2*step, ... while start + window_len <= T.
std::vector<Window> slide_windows(const ingest::CanonicalSeries& series, std::size_t window_len = kWindowLen,
                                  std::size_t step = kStep);

enum class BoundaryPolicy {
  majority,         // label by the segment owning most samples; ties go to the earlier segment
  drop_straddling,  // keep only windows lying entirely inside one segment
};

struct LabelAssignment {
  std::vector<std::size_t> kept;  // indices into the input window list
  std::vector<Label> labels;      // parallel to kept
  std::size_t dropped = 0;
};

LabelAssignment assign_labels(std::span<const std::size_t> starts, std::size_t window_len,
                              std::span<const ingest::SegmentIndex> segments,
                              BoundaryPolicy policy = BoundaryPolicy::majority);

struct WindowedDataset {
  std::vector<Eigen::MatrixXd> inputs;  // each window_len x channels
  std::vector<Label> labels;
  std::size_t window_len = kWindowLen;
  std::size_t step = kStep;

  std::size_t size() const { return inputs.size(); }
  std::size_t channels() const { return inputs.empty() ? kNumChannels : static_cast<std::size_t>(inputs[0].cols()); }
};

struct DatasetBuild {
  WindowedDataset dataset;
  std::size_t dropped = 0;
};

DatasetBuild build_dataset(const ingest::CanonicalSeries& series, std::size_t window_len = kWindowLen,
                           std::size_t step = kStep, BoundaryPolicy policy = BoundaryPolicy::majority);

// Concatenates datasets that share window geometry.
void append(WindowedDataset& into, const WindowedDataset& from);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Shuffles each class with a seeded generator and takes the first
// floor(test_frac * n) members as test. Both lists are returned sorted.
SplitIndices stratified_split(std::span<const Label> labels, double test_frac, std::uint64_t seed);

inline constexpr double kNormEpsilon = 1e-6;

struct NormStats {
  Eigen::VectorXd mean;  // per channel
  Eigen::VectorXd std;   // per channel, >= kNormEpsilon
};

// Population moments over every time step of the selected windows.
NormStats fit_norm(const std::vector<Eigen::MatrixXd>& windows, std::span<const std::size_t> indices);
NormStats fit_norm(const std::vector<Eigen::MatrixXd>& windows);

Eigen::MatrixXd normalize(const Eigen::MatrixXd& window, const NormStats& stats);
Eigen::MatrixXd denormalize(const Eigen::MatrixXd& window, const NormStats& stats);
void apply_norm(std::vector<Eigen::MatrixXd>& windows, const NormStats& stats);

// "NNWD" container: magic, u16 version, u32 N, u32 window_len, u32 channels,
// row-major f32 inputs, one label byte per window. Little-endian.
inline constexpr std::uint16_t kDatasetVersion = 1;

std::vector<char> encode_dataset(const WindowedDataset& ds);
WindowedDataset decode_dataset(std::span<const char> bytes);
void save_dataset(const WindowedDataset& ds, const std::string& path);
WindowedDataset load_dataset(const std::string& path);

}  // namespace nienie::windowing
