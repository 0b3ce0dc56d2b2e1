#include "nienie/windowing.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "nienie/binary_io.hpp"
#include "nienie/error.hpp"

namespace nienie::windowing {

std::size_t window_count(std::size_t series_len, std::size_t window_len, std::size_t step) {
  if (window_len == 0 || step == 0) fail(ErrorCode::invalid_argument, "window_len and step must be positive");
  if (series_len < window_len) return 0;
  return (series_len - window_len) / step + 1;
}

std::vector<Window> slide_windows(const ingest::CanonicalSeries& series, std::size_t window_len, std::size_t step) {
  const std::size_t n = window_count(series.length(), window_len, step);
  std::vector<Window> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t start = k * step;
    out.push_back({start, series.data.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(window_len))});
  }
  return out;
}

LabelAssignment assign_labels(std::span<const std::size_t> starts, std::size_t window_len,
                              std::span<const ingest::SegmentIndex> segments, BoundaryPolicy policy) {
  if (segments.empty()) fail(ErrorCode::invalid_argument, "cannot assign labels without segments");
  LabelAssignment out;
  for (std::size_t w = 0; w < starts.size(); ++w) {
    const std::size_t lo = starts[w];
    const std::size_t hi = lo + window_len;
    std::size_t best_overlap = 0;
    std::size_t best = 0;
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const std::size_t a = std::max(lo, segments[s].begin);
      const std::size_t b = std::min(hi, segments[s].end);
      const std::size_t overlap = b > a ? b - a : 0;
      // strict > keeps the earlier segment on ties
      if (overlap > best_overlap) {
        best_overlap = overlap;
        best = s;
      }
    }
    const bool keep = policy == BoundaryPolicy::majority ? best_overlap > 0 : best_overlap == window_len;
    if (!keep) {
      ++out.dropped;
      continue;
    }
    out.kept.push_back(w);
    out.labels.push_back(segments[best].label);
  }
  return out;
}

DatasetBuild build_dataset(const ingest::CanonicalSeries& series, std::size_t window_len, std::size_t step,
                           BoundaryPolicy policy) {
  auto windows = slide_windows(series, window_len, step);
  std::vector<std::size_t> starts;
  starts.reserve(windows.size());
  for (const auto& w : windows) starts.push_back(w.start);
  auto assignment = assign_labels(starts, window_len, series.segments, policy);

  DatasetBuild out;
  out.dataset.window_len = window_len;
  out.dataset.step = step;
  out.dropped = assignment.dropped;
  for (std::size_t k = 0; k < assignment.kept.size(); ++k) {
    out.dataset.inputs.push_back(std::move(windows[assignment.kept[k]].values));
    out.dataset.labels.push_back(assignment.labels[k]);
  }
  return out;
}

void append(WindowedDataset& into, const WindowedDataset& from) {
  if (into.size() == 0) {
    into.window_len = from.window_len;
    into.step = from.step;
  } else if (from.size() > 0 && (from.window_len != into.window_len || from.channels() != into.channels())) {
    fail(ErrorCode::invalid_argument, "cannot append datasets with different window geometry");
  }
  into.inputs.insert(into.inputs.end(), from.inputs.begin(), from.inputs.end());
  into.labels.insert(into.labels.end(), from.labels.begin(), from.labels.end());
}

SplitIndices stratified_split(std::span<const Label> labels, double test_frac, std::uint64_t seed) {
  if (!(test_frac >= 0.0 && test_frac <= 1.0)) fail(ErrorCode::invalid_argument, "test_frac must lie in [0, 1]");
  std::map<Label, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  SplitIndices split;
  std::mt19937_64 rng(seed);
  for (auto& [label, members] : by_class) {
    if (members.size() < 2) {
      fail(ErrorCode::validation,
           "class '" + std::string(to_string(label)) + "' has fewer than 2 members; cannot stratify");
    }
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::floor(test_frac * static_cast<double>(members.size()) + 1e-9));
    split.test.insert(split.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    split.train.insert(split.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

NormStats fit_norm(const std::vector<Eigen::MatrixXd>& windows, std::span<const std::size_t> indices) {
  if (indices.empty()) fail(ErrorCode::invalid_argument, "cannot fit normalization on an empty training set");
  const Eigen::Index channels = windows[indices[0]].cols();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(channels);
  double count = 0.0;
  for (std::size_t i : indices) {
    sum += windows[i].colwise().sum().transpose();
    count += static_cast<double>(windows[i].rows());
  }
  NormStats stats;
  stats.mean = sum / count;
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(channels);
  for (std::size_t i : indices) {
    sq += (windows[i].rowwise() - stats.mean.transpose()).array().square().colwise().sum().matrix().transpose();
  }
  stats.std = (sq / count).array().sqrt().max(kNormEpsilon).matrix();
  return stats;
}

NormStats fit_norm(const std::vector<Eigen::MatrixXd>& windows) {
  std::vector<std::size_t> all(windows.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return fit_norm(windows, all);
}

Eigen::MatrixXd normalize(const Eigen::MatrixXd& window, const NormStats& stats) {
  return ((window.rowwise() - stats.mean.transpose()).array().rowwise() / stats.std.transpose().array()).matrix();
}

Eigen::MatrixXd denormalize(const Eigen::MatrixXd& window, const NormStats& stats) {
  return ((window.array().rowwise() * stats.std.transpose().array()).rowwise() + stats.mean.transpose().array())
      .matrix();
}

void apply_norm(std::vector<Eigen::MatrixXd>& windows, const NormStats& stats) {
  for (auto& w : windows) w = normalize(w, stats);
}

// ---------------------------------------------------------------------------
// NNWD container

std::vector<char> encode_dataset(const WindowedDataset& ds) {
  io::ByteWriter w;
  w.bytes("NNWD");
  w.u16(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.window_len));
  w.u32(static_cast<std::uint32_t>(ds.channels()));
  for (const auto& x : ds.inputs) {
    if (static_cast<std::size_t>(x.rows()) != ds.window_len || static_cast<std::size_t>(x.cols()) != ds.channels())
      fail(ErrorCode::invalid_argument, "dataset window has inconsistent shape");
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (Eigen::Index c = 0; c < x.cols(); ++c) w.f32(static_cast<float>(x(r, c)));
    }
  }
  for (Label l : ds.labels) w.u8(static_cast<std::uint8_t>(l));
  return std::move(w.data());
}

WindowedDataset decode_dataset(std::span<const char> bytes) {
  io::ByteReader r(bytes, "NNWD dataset");
  if (r.bytes(4) != "NNWD") fail(ErrorCode::format, "not an NNWD dataset (bad magic)");
  const auto version = r.u16();
  if (version != kDatasetVersion) {
    fail(ErrorCode::version_mismatch,
         "unsupported NNWD version " + std::to_string(version) + " (expected " + std::to_string(kDatasetVersion) + ")");
  }
  const std::size_t n = r.u32();
  WindowedDataset ds;
  ds.window_len = r.u32();
  const std::size_t channels = r.u32();
  if (ds.window_len == 0 || channels == 0) fail(ErrorCode::format, "NNWD dataset has an empty window shape");
  const std::size_t need = n * ds.window_len * channels * 4 + n;
  if (r.remaining() != need) fail(ErrorCode::format, "NNWD dataset payload has the wrong size");
  ds.inputs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(ds.window_len), static_cast<Eigen::Index>(channels));
    for (Eigen::Index row = 0; row < x.rows(); ++row) {
      for (Eigen::Index c = 0; c < x.cols(); ++c) x(row, c) = static_cast<double>(r.f32());
    }
    if (!x.allFinite()) fail(ErrorCode::validation, "NNWD window " + std::to_string(i) + " has non-finite values");
    ds.inputs.push_back(std::move(x));
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto label = label_from_int(r.u8());
    if (!label) fail(ErrorCode::format, "NNWD label out of range at window " + std::to_string(i));
    ds.labels.push_back(*label);
  }
  return ds;
}

void save_dataset(const WindowedDataset& ds, const std::string& path) { io::write_file(path, encode_dataset(ds)); }

WindowedDataset load_dataset(const std::string& path) { return decode_dataset(io::read_file(path)); }

}  // namespace nienie::windowing
