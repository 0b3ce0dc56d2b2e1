#include "nienie/model.hpp"

#include "nienie/binary_io.hpp"
#include "nienie/error.hpp"

namespace nienie {

namespace {

constexpr char kGateOrder[] = "IFGO";

void put_tensor(io::ByteWriter& w, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.f64(m(r, c));
}

void put_tensor(io::ByteWriter& w, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) w.f64(v(i));
}

void get_tensor(io::ByteReader& r, Eigen::MatrixXd& m) {
  for (Eigen::Index row = 0; row < m.rows(); ++row)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(row, c) = r.f64();
}

void get_tensor(io::ByteReader& r, Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = r.f64();
}

}  // namespace

Eigen::VectorXd StressModel::predict_proba(const Eigen::MatrixXd& raw_window) const {
  if (raw_window.rows() < 1 || raw_window.cols() != params.input_size())
    fail(ErrorCode::invalid_argument, "window must have at least one row and " +
                                          std::to_string(params.input_size()) + " columns");
  return lstm::predict_proba(params, windowing::normalize(raw_window, norm));
}

std::vector<char> encode_model(const StressModel& model) {
  model.params.check_shapes();
  const auto D = model.params.input_size();
  if (model.norm.mean.size() != D || model.norm.std.size() != D)
    fail(ErrorCode::invalid_argument, "normalization stats do not match the model input size");
  io::ByteWriter w;
  w.bytes("NNLM");
  w.u16(kModelVersion);
  w.bytes(kGateOrder);
  w.u32(static_cast<std::uint32_t>(D));
  w.u32(static_cast<std::uint32_t>(model.params.hidden_size()));
  w.u32(static_cast<std::uint32_t>(model.params.num_classes()));
  lstm::for_each_tensor([&](const auto& t) { put_tensor(w, t); }, model.params);
  put_tensor(w, model.norm.mean);
  put_tensor(w, model.norm.std);
  const std::uint32_t crc = io::crc32(w.data());
  w.u32(crc);
  return std::move(w.data());
}

StressModel decode_model(std::span<const char> bytes) {
  io::ByteReader r(bytes, "NNLM model");
  if (r.bytes(4) != "NNLM") fail(ErrorCode::format, "not an NNLM model file (bad magic)");
  const auto version = r.u16();
  if (version != kModelVersion) {
    fail(ErrorCode::version_mismatch,
         "unsupported NNLM version " + std::to_string(version) + " (expected " + std::to_string(kModelVersion) + ")");
  }
  if (r.bytes(4) != kGateOrder) fail(ErrorCode::format, "unsupported gate order tag");
  const auto D = static_cast<Eigen::Index>(r.u32());
  const auto H = static_cast<Eigen::Index>(r.u32());
  const auto C = static_cast<Eigen::Index>(r.u32());
  if (D <= 0 || H <= 0 || C <= 0 || D > 4096 || H > 4096 || C > 4096)
    fail(ErrorCode::format, "NNLM header has implausible dimensions");

  StressModel model;
  model.params = lstm::ModelParams::zeros(D, H, C);
  const std::size_t expected =
      (static_cast<std::size_t>(model.params.parameter_count()) + 2 * static_cast<std::size_t>(D)) * 8 + 4;
  if (r.remaining() < expected) fail(ErrorCode::format, "NNLM model file is truncated");
  if (r.remaining() > expected) fail(ErrorCode::format, "NNLM model file has trailing bytes");

  const std::size_t body = bytes.size() - 4;
  io::ByteReader tail(bytes.subspan(body), "NNLM checksum");
  if (io::crc32(bytes.first(body)) != tail.u32()) fail(ErrorCode::checksum, "NNLM checksum mismatch");

  lstm::for_each_tensor([&](auto& t) { get_tensor(r, t); }, model.params);
  model.norm.mean.resize(D);
  model.norm.std.resize(D);
  get_tensor(r, model.norm.mean);
  get_tensor(r, model.norm.std);
  if (!model.params.all_finite() || !model.norm.mean.allFinite() || !model.norm.std.allFinite())
    fail(ErrorCode::validation, "NNLM model contains non-finite values");
  return model;
}

void save_model(const StressModel& model, const std::string& path) { io::write_file(path, encode_model(model)); }

StressModel load_model(const std::string& path) { return decode_model(io::read_file(path)); }

}  // namespace nienie
