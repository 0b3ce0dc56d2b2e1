#include <algorithm>
#include <map>

#include "doctest.h"
#include "nienie/error.hpp"
#include "nienie/windowing.hpp"
#include "support.hpp"

using namespace nienie;
using namespace nienie::windowing;
using ingest::CanonicalSeries;
using ingest::SegmentIndex;

namespace {

CanonicalSeries ramp_series(std::size_t T, std::vector<SegmentIndex> segments = {}) {
  CanonicalSeries s;
  s.data.resize(static_cast<Eigen::Index>(T), 3);
  for (Eigen::Index t = 0; t < s.data.rows(); ++t) s.data.row(t) << t, 100.0 + t, -static_cast<double>(t);
  if (segments.empty()) segments = {{Label::baseline, 0, T}};
  s.segments = std::move(segments);
  return s;
}

// Independent majority vote: counts samples per segment over the window.
std::optional<Label> majority_oracle(std::size_t start, std::size_t len, const std::vector<SegmentIndex>& segs) {
  std::size_t best = 0;
  std::optional<Label> label;
  for (const auto& s : segs) {
    std::size_t n = 0;
    for (std::size_t i = start; i < start + len; ++i) n += (i >= s.begin && i < s.end);
    if (n > best) {
      best = n;
      label = s.label;
    }
  }
  return label;
}

}  // namespace

TEST_CASE("window counts and starts") {
  const std::map<std::size_t, std::size_t> want{{39, 0}, {40, 1}, {100, 4}, {1000, 49}};
  for (auto [T, n] : want) {
    CHECK(window_count(T) == n);
    const auto w = slide_windows(ramp_series(T));
    REQUIRE(w.size() == n);
    for (std::size_t k = 0; k < w.size(); ++k) {
      CHECK(w[k].start == 20 * k);
      CHECK(w[k].values.rows() == 40);
      CHECK(w[k].values(0, 0) == static_cast<double>(20 * k));
      CHECK(w[k].values(39, 1) == 100.0 + static_cast<double>(20 * k + 39));
    }
  }
  CHECK(window_count(0) == 0);
}

TEST_CASE("window count matches the closed form for many lengths") {
  for (std::size_t T = 0; T < 500; ++T) {
    const std::size_t want = T < 40 ? 0 : (T - 40) / 20 + 1;
    CHECK(window_count(T) == want);
  }
}

TEST_CASE("majority labels agree with a sample-counting oracle") {
  const std::vector<SegmentIndex> segs{{Label::baseline, 0, 50}, {Label::stress, 50, 130}, {Label::amusement, 130, 200}};
  const auto series = ramp_series(200, segs);
  const auto build = build_dataset(series);
  const auto windows = slide_windows(series);
  REQUIRE(build.dataset.size() == windows.size());
  for (std::size_t k = 0; k < windows.size(); ++k) CHECK(build.dataset.labels[k] == *majority_oracle(windows[k].start, 40, segs));
}

TEST_CASE("majority ties go to the earlier segment") {
  const std::vector<SegmentIndex> segs{{Label::stress, 0, 20}, {Label::amusement, 20, 40}};
  std::vector<std::size_t> starts{0};
  const auto a = assign_labels(starts, 40, segs, BoundaryPolicy::majority);
  REQUIRE(a.labels.size() == 1);
  CHECK(a.labels[0] == Label::stress);
}

TEST_CASE("drop_straddling keeps only windows inside one segment") {
  const std::vector<SegmentIndex> segs{{Label::baseline, 0, 60}, {Label::stress, 60, 140}};
  const auto build = build_dataset(ramp_series(140, segs), 40, 20, BoundaryPolicy::drop_straddling);
  // starts 0,20 | 40 straddles | 60,80,100
  CHECK(build.dataset.size() == 5);
  CHECK(build.dropped == 1);
  CHECK(std::count(build.dataset.labels.begin(), build.dataset.labels.end(), Label::stress) == 3);
}

TEST_CASE("unlabeled windows are dropped") {
  const std::vector<SegmentIndex> segs{{Label::baseline, 100, 200}};
  const auto build = build_dataset(ramp_series(200, segs), 40, 20, BoundaryPolicy::majority);
  for (auto l : build.dataset.labels) CHECK(l == Label::baseline);
  CHECK(build.dropped > 0);
}

TEST_CASE("stratified split: per-class test counts and disjointness") {
  std::vector<Label> labels;
  for (int i = 0; i < 204; ++i) labels.push_back(Label::baseline);
  for (int i = 0; i < 204; ++i) labels.push_back(Label::stress);
  for (int i = 0; i < 203; ++i) labels.push_back(Label::amusement);
  const auto split = stratified_split(labels, 0.2, 42);
  std::map<Label, int> test_counts;
  for (auto i : split.test) ++test_counts[labels[i]];
  CHECK(test_counts[Label::baseline] == 40);
  CHECK(test_counts[Label::stress] == 40);
  CHECK(test_counts[Label::amusement] == 40);
  CHECK(split.train.size() + split.test.size() == labels.size());
  CHECK(std::is_sorted(split.test.begin(), split.test.end()));
  std::vector<std::size_t> both;
  std::set_intersection(split.train.begin(), split.train.end(), split.test.begin(), split.test.end(),
                        std::back_inserter(both));
  CHECK(both.empty());
  CHECK(stratified_split(labels, 0.2, 42).test == split.test);
  CHECK(stratified_split(labels, 0.2, 43).test != split.test);
  CHECK_THROWS_AS(stratified_split(labels, 1.5, 0), Error);
}

TEST_CASE("normalization statistics and inverse") {
  std::vector<Eigen::MatrixXd> w{Eigen::MatrixXd::Constant(4, 3, 1.0), Eigen::MatrixXd::Constant(4, 3, 3.0)};
  w[1](0, 2) = 3.0;
  const auto stats = fit_norm(w);
  CHECK(stats.mean(0) == doctest::Approx(2.0));
  CHECK(stats.std(0) == doctest::Approx(1.0));
  const auto z = normalize(w[0], stats);
  CHECK(z(0, 0) == doctest::Approx(-1.0));
  CHECK((denormalize(z, stats) - w[0]).cwiseAbs().maxCoeff() < 1e-12);
  // constant channel: std is floored, no division by zero
  std::vector<Eigen::MatrixXd> flat{Eigen::MatrixXd::Constant(4, 3, 5.0)};
  CHECK(fit_norm(flat).std(1) == kNormEpsilon);
  // fitting on a subset ignores the rest
  std::vector<std::size_t> only_first{0};
  CHECK(fit_norm(w, only_first).mean(0) == doctest::Approx(1.0));
}

TEST_CASE("NNWD round trip and corruption") {
  const auto build = build_dataset(ramp_series(200, {{Label::stress, 0, 200}}));
  const auto bytes = encode_dataset(build.dataset);
  const auto back = decode_dataset(bytes);
  REQUIRE(back.size() == build.dataset.size());
  CHECK(back.labels == build.dataset.labels);
  for (std::size_t k = 0; k < back.size(); ++k)
    CHECK((back.inputs[k] - build.dataset.inputs[k]).cwiseAbs().maxCoeff() < 1e-3);  // f32 storage

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_dataset(bad_magic), Error);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 7);
  CHECK_THROWS_AS(decode_dataset(truncated), Error);
  auto future = bytes;
  future[4] = 99;
  try {
    decode_dataset(future);
    FAIL("future version accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::version_mismatch);
  }
  auto bad_label = bytes;
  bad_label.back() = 7;
  CHECK_THROWS_AS(decode_dataset(bad_label), Error);

  const auto dir = testing::temp_dir("nnwd");
  save_dataset(build.dataset, (dir / "d.nnwd").string());
  CHECK(load_dataset((dir / "d.nnwd").string()).labels == build.dataset.labels);
}
