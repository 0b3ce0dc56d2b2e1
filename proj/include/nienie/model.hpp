#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nienie/lstm.hpp"
#include "nienie/windowing.hpp"

namespace nienie {

// A trained classifier together with the training-split normalization it
// expects. Inputs are raw canonical windows; normalization happens inside.
struct StressModel {
  lstm::ModelParams params;
  windowing::NormStats norm;

  Eigen::VectorXd predict_proba(const Eigen::MatrixXd& raw_window) const;
};

// "NNLM" model file, little-endian:
//   magic "NNLM", u16 version, 4-byte gate order tag "IFGO",
//   u32 D, u32 H, u32 C,
//   f64 tensors in order layer1 {w_ih, w_hh, bias}, layer2 {...}, head_w,
//   head_b (matrices row-major),
//   f64 norm mean[D], norm std[D],
//   u32 CRC-32 of every preceding byte.
inline constexpr std::uint16_t kModelVersion = 1;

std::vector<char> encode_model(const StressModel& model);
StressModel decode_model(std::span<const char> bytes);
void save_model(const StressModel& model, const std::string& path);
StressModel load_model(const std::string& path);

}  // namespace nienie
