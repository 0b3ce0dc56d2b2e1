#include "nienie/lstm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "nienie/error.hpp"
#include "nienie/random.hpp"

namespace nienie::lstm {

namespace {

template <class Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& z) {
  return (1.0 + (-z).exp()).inverse();
}

LstmLayerParams zero_layer(Index input_size, Index hidden) {
  return {MatrixXd::Zero(4 * hidden, input_size), MatrixXd::Zero(4 * hidden, hidden), VectorXd::Zero(4 * hidden)};
}

void check_layer(const LstmLayerParams& p, Index input_size, Index hidden, const char* name) {
  if (p.w_ih.rows() != 4 * hidden || p.w_ih.cols() != input_size || p.w_hh.rows() != 4 * hidden ||
      p.w_hh.cols() != hidden || p.bias.size() != 4 * hidden) {
    fail(ErrorCode::validation, std::string("inconsistent tensor shapes in ") + name);
  }
}

void layer_forward(const LstmLayerParams& p, const MatrixXd& x, Index steps, Index batch, LayerCache& out,
                   int layer_no) {
  const Index H = p.hidden_size();
  out.gates.noalias() = p.w_ih * x;
  out.gates.colwise() += p.bias;
  out.cell.resize(H, steps * batch);
  out.hidden.resize(H, steps * batch);

  for (Index t = 0; t < steps; ++t) {
    auto z = out.gates.middleCols(t * batch, batch);
    if (t > 0) z.noalias() += p.w_hh * out.hidden.middleCols((t - 1) * batch, batch);
    z.topRows(H) = sigmoid(z.topRows(H).array()).matrix();
    z.middleRows(H, H) = sigmoid(z.middleRows(H, H).array()).matrix();
    z.middleRows(2 * H, H) = z.middleRows(2 * H, H).array().tanh().matrix();
    z.bottomRows(H) = sigmoid(z.bottomRows(H).array()).matrix();

    auto c = out.cell.middleCols(t * batch, batch);
    c = (z.topRows(H).array() * z.middleRows(2 * H, H).array()).matrix();
    if (t > 0) c.array() += z.middleRows(H, H).array() * out.cell.middleCols((t - 1) * batch, batch).array();
    auto h = out.hidden.middleCols(t * batch, batch);
    h = (z.bottomRows(H).array() * c.array().tanh()).matrix();
    if (!h.allFinite() || !c.allFinite()) {
      fail(ErrorCode::numeric,
           "non-finite activation in layer " + std::to_string(layer_no) + " at timestep " + std::to_string(t));
    }
  }
}

// dh_above holds dL/dh_t arriving from the layer above (or the head) for every
// step. Writes parameter gradients into g and, when dx is given, dL/dx_t.
void layer_backward(const LstmLayerParams& p, const MatrixXd& x, const LayerCache& cache, const MatrixXd& dh_above,
                    Index steps, Index batch, LstmLayerParams& g, MatrixXd* dx) {
  const Index H = p.hidden_size();
  MatrixXd dz(4 * H, steps * batch);
  MatrixXd dh_next = MatrixXd::Zero(H, batch);
  MatrixXd dc_next = MatrixXd::Zero(H, batch);
  Eigen::ArrayXXd dh(H, batch), dc(H, batch), tanh_c(H, batch);

  for (Index t = steps - 1; t >= 0; --t) {
    const auto gates = cache.gates.middleCols(t * batch, batch);
    const auto i = gates.topRows(H).array();
    const auto f = gates.middleRows(H, H).array();
    const auto gg = gates.middleRows(2 * H, H).array();
    const auto o = gates.bottomRows(H).array();
    tanh_c = cache.cell.middleCols(t * batch, batch).array().tanh();

    dh = dh_above.middleCols(t * batch, batch).array() + dh_next.array();
    dc = dh * o * (1.0 - tanh_c.square()) + dc_next.array();

    auto dzt = dz.middleCols(t * batch, batch);
    dzt.topRows(H) = (dc * gg * i * (1.0 - i)).matrix();
    if (t > 0) {
      dzt.middleRows(H, H) = (dc * cache.cell.middleCols((t - 1) * batch, batch).array() * f * (1.0 - f)).matrix();
    } else {
      dzt.middleRows(H, H).setZero();
    }
    dzt.middleRows(2 * H, H) = (dc * i * (1.0 - gg.square())).matrix();
    dzt.bottomRows(H) = (dh * tanh_c * o * (1.0 - o)).matrix();

    dh_next.noalias() = p.w_hh.transpose() * dzt;
    dc_next = (dc * f).matrix();
  }

  g.w_ih.noalias() = dz * x.transpose();
  g.bias = dz.rowwise().sum();
  g.w_hh.setZero(4 * H, H);
  if (steps > 1) {
    g.w_hh.noalias() = dz.rightCols((steps - 1) * batch) * cache.hidden.leftCols((steps - 1) * batch).transpose();
  }
  if (dx != nullptr) dx->noalias() = p.w_ih.transpose() * dz;
}

}  // namespace

ModelParams ModelParams::zeros(Index input_size, Index hidden, Index classes) {
  return {zero_layer(input_size, hidden), zero_layer(hidden, hidden), MatrixXd::Zero(classes, hidden),
          VectorXd::Zero(classes)};
}

bool ModelParams::all_finite() const {
  bool ok = true;
  for_each_tensor([&](const auto& t) { ok = ok && t.allFinite(); }, *this);
  return ok;
}

Index ModelParams::parameter_count() const {
  Index n = 0;
  for_each_tensor([&](const auto& t) { n += t.size(); }, *this);
  return n;
}

void ModelParams::check_shapes() const {
  const Index D = input_size();
  const Index H = hidden_size();
  if (D <= 0 || H <= 0) fail(ErrorCode::validation, "model has empty dimensions");
  check_layer(layer1, D, H, "layer1");
  check_layer(layer2, H, H, "layer2");
  if (head_w.cols() != H || head_b.size() != head_w.rows() || head_w.rows() <= 0)
    fail(ErrorCode::validation, "inconsistent tensor shapes in head");
}

double squared_norm(const ModelParams& p) {
  double s = 0.0;
  for_each_tensor([&](const auto& t) { s += t.squaredNorm(); }, p);
  return s;
}

ModelParams init_params(Index input_size, Index hidden, std::uint64_t seed, double init_scale, Index classes) {
  ModelParams p = ModelParams::zeros(input_size, hidden, classes);
  auto rng = make_stream(seed, "lstm/init");
  const double k = init_scale / std::sqrt(static_cast<double>(hidden));
  std::uniform_real_distribution<double> dist(-k, k);
  auto fill = [&](MatrixXd& m) {
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
  };
  fill(p.layer1.w_ih);
  fill(p.layer1.w_hh);
  fill(p.layer2.w_ih);
  fill(p.layer2.w_hh);
  fill(p.head_w);
  p.layer1.bias.segment(hidden, hidden).setOnes();
  p.layer2.bias.segment(hidden, hidden).setOnes();
  return p;
}

MatrixXd pack_batch(std::span<const MatrixXd* const> windows) {
  if (windows.empty()) fail(ErrorCode::invalid_argument, "empty batch");
  const Index T = windows[0]->rows();
  const Index D = windows[0]->cols();
  const auto B = static_cast<Index>(windows.size());
  MatrixXd packed(D, T * B);
  for (Index b = 0; b < B; ++b) {
    const MatrixXd& w = *windows[static_cast<std::size_t>(b)];
    if (w.rows() != T || w.cols() != D) fail(ErrorCode::invalid_argument, "batch windows differ in shape");
    for (Index t = 0; t < T; ++t) packed.col(t * B + b) = w.row(t).transpose();
  }
  return packed;
}

MatrixXd pack_batch(const std::vector<MatrixXd>& windows, std::span<const std::size_t> indices) {
  std::vector<const MatrixXd*> ptrs;
  ptrs.reserve(indices.size());
  for (std::size_t i : indices) ptrs.push_back(&windows.at(i));
  return pack_batch(ptrs);
}

MatrixXd forward_batch(const ModelParams& params, const MatrixXd& packed, Index steps, ForwardCache* cache) {
  if (steps <= 0 || packed.cols() % steps != 0) fail(ErrorCode::invalid_argument, "packed batch does not divide into steps");
  if (packed.rows() != params.input_size()) {
    fail(ErrorCode::invalid_argument, "shape mismatch: model expects " + std::to_string(params.input_size()) +
                                          " input channels, got " + std::to_string(packed.rows()));
  }
  if (!packed.allFinite()) fail(ErrorCode::invalid_argument, "input window contains non-finite values");
  const Index batch = packed.cols() / steps;

  ForwardCache local;
  ForwardCache& c = cache != nullptr ? *cache : local;
  c.steps = steps;
  c.batch = batch;
  c.inputs = packed;
  layer_forward(params.layer1, c.inputs, steps, batch, c.layer1, 1);
  layer_forward(params.layer2, c.layer1.hidden, steps, batch, c.layer2, 2);
  MatrixXd logits = params.head_w * c.layer2.hidden.rightCols(batch);
  logits.colwise() += params.head_b;
  return logits;
}

ForwardResult lstm_forward(const ModelParams& params, const MatrixXd& window) {
  ForwardResult out;
  const MatrixXd* ptr = &window;
  MatrixXd logits = forward_batch(params, pack_batch(std::span<const MatrixXd* const>(&ptr, 1)), window.rows(), &out.cache);
  out.logits = logits.col(0);
  return out;
}

VectorXd softmax(const VectorXd& logits) {
  VectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

LossGrad softmax_xent(const VectorXd& logits, int label) {
  if (label < 0 || label >= logits.size()) fail(ErrorCode::invalid_argument, "label outside the class range");
  if (!logits.allFinite()) fail(ErrorCode::numeric, "non-finite logits");
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  LossGrad out;
  out.loss = std::max(0.0, lse - logits(label));
  out.dlogits = (logits.array() - lse).exp().matrix();
  out.dlogits(label) -= 1.0;
  return out;
}

Gradients backward_bptt(const ModelParams& params, std::span<const Label> labels, const ForwardCache& cache,
                        double clip_norm) {
  const Index B = cache.batch;
  const Index T = cache.steps;
  if (B <= 0 || static_cast<Index>(labels.size()) != B) {
    fail(ErrorCode::invalid_argument, "cache/batch mismatch: cache holds " + std::to_string(B) + " samples, got " +
                                          std::to_string(labels.size()) + " labels");
  }
  if (cache.layer2.hidden.rows() != params.hidden_size() || cache.inputs.rows() != params.input_size())
    fail(ErrorCode::invalid_argument, "cache/batch mismatch: cache was produced by a different model shape");
  const Index H = params.hidden_size();

  Gradients out;
  out.grads = ModelParams::zeros(params.input_size(), H, params.num_classes());

  const MatrixXd h_last = cache.layer2.hidden.rightCols(B);
  MatrixXd logits = params.head_w * h_last;
  logits.colwise() += params.head_b;

  MatrixXd dlogits(params.num_classes(), B);
  double loss = 0.0;
  for (Index b = 0; b < B; ++b) {
    auto lg = softmax_xent(logits.col(b), static_cast<int>(labels[static_cast<std::size_t>(b)]));
    loss += lg.loss;
    dlogits.col(b) = lg.dlogits;
  }
  const double inv_b = 1.0 / static_cast<double>(B);
  dlogits *= inv_b;
  out.loss = loss * inv_b;

  out.grads.head_w.noalias() = dlogits * h_last.transpose();
  out.grads.head_b = dlogits.rowwise().sum();

  MatrixXd dh2 = MatrixXd::Zero(H, T * B);
  dh2.rightCols(B).noalias() = params.head_w.transpose() * dlogits;
  MatrixXd dh1(H, T * B);
  layer_backward(params.layer2, cache.layer1.hidden, cache.layer2, dh2, T, B, out.grads.layer2, &dh1);
  layer_backward(params.layer1, cache.inputs, cache.layer1, dh1, T, B, out.grads.layer1, nullptr);

  if (!out.grads.all_finite()) fail(ErrorCode::numeric, "non-finite gradient");
  out.norm = std::sqrt(squared_norm(out.grads));
  if (clip_norm > 0.0 && out.norm > clip_norm) {
    const double scale = clip_norm / out.norm;
    for_each_tensor([&](auto& t) { t *= scale; }, out.grads);
    out.clipped = true;
  }
  return out;
}

AdamState AdamState::for_params(const ModelParams& params, AdamConfig config) {
  AdamState s;
  s.m = ModelParams::zeros(params.input_size(), params.hidden_size(), params.num_classes());
  s.v = s.m;
  s.config = config;
  return s;
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state) {
  if (state.t < 0) fail(ErrorCode::invalid_argument, "Adam step counter is negative");
  bool shapes_ok = true;
  bool finite = true;
  for_each_tensor(
      [&](const auto& p, const auto& g, const auto& m, const auto& v) {
        shapes_ok = shapes_ok && p.rows() == g.rows() && p.cols() == g.cols() && p.rows() == m.rows() &&
                    p.cols() == m.cols() && p.rows() == v.rows() && p.cols() == v.cols();
        finite = finite && g.allFinite();
      },
      std::as_const(params), grads, std::as_const(state.m), std::as_const(state.v));
  if (!shapes_ok) fail(ErrorCode::invalid_argument, "Adam shapes do not match the parameters");
  if (!finite) fail(ErrorCode::numeric, "non-finite gradient entries passed to Adam");

  const AdamConfig& c = state.config;
  state.t += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for_each_tensor(
      [&](auto& p, const auto& g, auto& m, auto& v) {
        m.array() = c.beta1 * m.array() + (1.0 - c.beta1) * g.array();
        v.array() = c.beta2 * v.array() + (1.0 - c.beta2) * g.array().square();
        p.array() -= c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
      },
      params, grads, state.m, state.v);
}

TrainResult train(const windowing::WindowedDataset& dataset, const windowing::SplitIndices& split,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  if (config.epochs < 1) fail(ErrorCode::invalid_argument, "epochs must be >= 1");
  if (config.batch_size < 1) fail(ErrorCode::invalid_argument, "batch_size must be >= 1");
  if (config.hidden < 1) fail(ErrorCode::invalid_argument, "hidden size must be >= 1");
  if (split.train.empty()) fail(ErrorCode::invalid_argument, "empty train split");
  for (std::size_t i : split.train) {
    if (i >= dataset.size()) fail(ErrorCode::invalid_argument, "split index out of range");
  }

  const auto D = static_cast<Index>(dataset.channels());
  const auto T = static_cast<Index>(dataset.window_len);
  TrainResult result;
  result.params = init_params(D, config.hidden, config.seed, config.init_scale);
  AdamState state = AdamState::for_params(result.params, AdamConfig{config.lr});

  auto rng = make_stream(config.seed, "lstm/shuffle");
  std::vector<std::size_t> order = split.train;
  std::vector<Label> batch_labels;
  ForwardCache cache;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::span<const std::size_t> idx(order.data() + start, end - start);
      batch_labels.clear();
      for (std::size_t i : idx) batch_labels.push_back(dataset.labels[i]);
      forward_batch(result.params, pack_batch(dataset.inputs, idx), T, &cache);
      Gradients g = backward_bptt(result.params, batch_labels, cache, config.grad_clip_norm);
      adam_step(result.params, g.grads, state);
      loss_sum += g.loss * static_cast<double>(idx.size());
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    stats.test_accuracy = split.test.empty() ? std::numeric_limits<double>::quiet_NaN()
                                             : evaluate(result.params, dataset, split.test).accuracy;
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

VectorXd predict_proba(const ModelParams& params, const MatrixXd& window) {
  const MatrixXd* ptr = &window;
  MatrixXd logits = forward_batch(params, pack_batch(std::span<const MatrixXd* const>(&ptr, 1)), window.rows(), nullptr);
  return softmax(logits.col(0));
}

Confusion evaluate(const ModelParams& params, const windowing::WindowedDataset& dataset,
                   std::span<const std::size_t> indices) {
  const Index C = params.num_classes();
  Confusion out;
  out.counts = Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>::Zero(C, C);
  if (indices.empty()) return out;
  constexpr std::size_t kChunk = 256;
  long correct = 0;
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    auto idx = indices.subspan(start, std::min(kChunk, indices.size() - start));
    MatrixXd logits =
        forward_batch(params, pack_batch(dataset.inputs, idx), static_cast<Index>(dataset.window_len), nullptr);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      Index pred = 0;
      logits.col(static_cast<Index>(b)).maxCoeff(&pred);
      const auto truth = static_cast<Index>(dataset.labels[idx[b]]);
      out.counts(truth, pred) += 1;
      if (truth == pred) ++correct;
    }
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(indices.size());
  return out;
}

}  // namespace nienie::lstm
