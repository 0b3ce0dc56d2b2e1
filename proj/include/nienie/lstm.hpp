#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "nienie/types.hpp"
#include "nienie/windowing.hpp"

namespace nienie::lstm {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// One LSTM layer. Gate row blocks are stacked in the fixed order
// [input i, forget f, cell g, output o]:
//   z = w_ih x_t + w_hh h_{t-1} + bias
//   i = sigmoid(z_i)  f = sigmoid(z_f)  g = tanh(z_g)  o = sigmoid(z_o)
//   c_t = f * c_{t-1} + i * g
//   h_t = o * tanh(c_t)
struct LstmLayerParams {
  MatrixXd w_ih;  // 4H x D
  MatrixXd w_hh;  // 4H x H
  VectorXd bias;  // 4H

  Index input_size() const { return w_ih.cols(); }
  Index hidden_size() const { return w_hh.cols(); }
};

// Two stacked layers and a dense head over the layer-2 hidden state at the
// final time step.
struct ModelParams {
  LstmLayerParams layer1;
  LstmLayerParams layer2;
  MatrixXd head_w;  // C x H
  VectorXd head_b;  // C

  Index input_size() const { return layer1.input_size(); }
  Index hidden_size() const { return layer1.hidden_size(); }
  Index num_classes() const { return head_w.rows(); }

  static ModelParams zeros(Index input_size, Index hidden, Index classes = kNumClasses);

  bool all_finite() const;
  Index parameter_count() const;
  // Throws a validation error if the tensor shapes are inconsistent.
  void check_shapes() const;
};

// Calls f(tensor_a, tensor_b, ...) for each parameter tensor, in
// serialization order.
template <class F, class... Ps>
void for_each_tensor(F&& f, Ps&&... ps) {
  f(ps.layer1.w_ih...);
  f(ps.layer1.w_hh...);
  f(ps.layer1.bias...);
  f(ps.layer2.w_ih...);
  f(ps.layer2.w_hh...);
  f(ps.layer2.bias...);
  f(ps.head_w...);
  f(ps.head_b...);
}

double squared_norm(const ModelParams& p);

// Uniform(-k, k) with k = init_scale / sqrt(H) for every weight matrix and the
// head; forget-gate biases start at 1, all other biases at 0.
ModelParams init_params(Index input_size, Index hidden, std::uint64_t seed, double init_scale = 1.0,
                        Index classes = kNumClasses);

// Per-layer activations kept for backpropagation. Column block t of each
// matrix (width B) holds time step t.
struct LayerCache {
  MatrixXd gates;   // 4H x (T*B), activated [i, f, g, o]
  MatrixXd cell;    // H x (T*B)
  MatrixXd hidden;  // H x (T*B)
};

struct ForwardCache {
  Index steps = 0;
  Index batch = 0;
  MatrixXd inputs;  // D x (T*B)
  LayerCache layer1;
  LayerCache layer2;
};

// Packs windows (each T x D) into the D x (T*B) time-major layout.
MatrixXd pack_batch(std::span<const MatrixXd* const> windows);
MatrixXd pack_batch(const std::vector<MatrixXd>& windows, std::span<const std::size_t> indices);

// Returns C x B logits. Fills `cache` when given. Throws a numeric error naming
// the time step if an activation becomes non-finite.
MatrixXd forward_batch(const ModelParams& params, const MatrixXd& packed, Index steps, ForwardCache* cache);

struct ForwardResult {
  VectorXd logits;
  ForwardCache cache;
};

ForwardResult lstm_forward(const ModelParams& params, const MatrixXd& window);

// Max-subtracted softmax.
VectorXd softmax(const VectorXd& logits);

struct LossGrad {
  double loss = 0.0;
  VectorXd dlogits;  // softmax(logits) - onehot(label)
};

LossGrad softmax_xent(const VectorXd& logits, int label);

struct Gradients {
  ModelParams grads;   // batch-averaged, clipped
  double loss = 0.0;   // mean cross-entropy over the batch
  double norm = 0.0;   // global norm before clipping
  bool clipped = false;
};

// Backpropagation through time for the batch held in `cache`. Gradients are
// averaged over the batch; when clip_norm > 0 and the global norm exceeds it,
// all gradients are rescaled to that norm.
Gradients backward_bptt(const ModelParams& params, std::span<const Label> labels, const ForwardCache& cache,
                        double clip_norm);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::int64_t t = 0;
  AdamConfig config;

  static AdamState for_params(const ModelParams& params, AdamConfig config = {});
};

// One bias-corrected Adam update in place. Throws before touching anything if a
// gradient entry is non-finite.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  double grad_clip_norm = 5.0;
  double init_scale = 1.0;
  int hidden = 128;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Minibatch training on an already-normalized dataset. Initialization and
// shuffling draw from separate substreams of config.seed, so a fixed seed gives
// a bit-identical parameter trajectory.
TrainResult train(const windowing::WindowedDataset& dataset, const windowing::SplitIndices& split,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

VectorXd predict_proba(const ModelParams& params, const MatrixXd& window);

// Row = true class, column = predicted class.
struct Confusion {
  Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic> counts;
  double accuracy = 0.0;
};

Confusion evaluate(const ModelParams& params, const windowing::WindowedDataset& dataset,
                   std::span<const std::size_t> indices);

}  // namespace nienie::lstm
