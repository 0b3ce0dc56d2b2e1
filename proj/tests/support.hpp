#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include "nienie/lstm.hpp"
#include "nienie/model.hpp"

namespace nienie::testing {

// Untrained but well-formed model whose normalization matches the synthetic
// channel ranges; enough to drive the session machinery.
inline std::shared_ptr<const StressModel> tiny_model(std::uint64_t seed = 1, Eigen::Index hidden = 8) {
  auto m = std::make_shared<StressModel>();
  m->params = lstm::init_params(kNumChannels, hidden, seed);
  m->norm.mean = Eigen::Vector3d(4.0, 34.0, 80.0);
  m->norm.std = Eigen::Vector3d(2.5, 0.4, 10.0);
  return m;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("nienie_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace nienie::testing
