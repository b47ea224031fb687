// Multilayer perceptrons: forward, exact backward, SGD with decoupled weight
// decay, and the softmax cross-entropy loss. Batches are row-major (one
// sample per row); a layer computes act(x Wᵀ + b) with W of shape out×in.
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fuselab/matrix.hpp"
#include "fuselab/rng.hpp"

namespace fuselab {

enum class Activation : std::uint8_t {
  identity,
  relu,
  softmax_logits,  // marker for a logits output layer; forward is identity
};

struct DenseLayer {
  Matrix weight;             // out_dim x in_dim
  std::vector<double> bias;  // out_dim
  Activation act = Activation::identity;

  std::size_t in_dim() const { return weight.cols; }
  std::size_t out_dim() const { return weight.rows; }
};

struct Mlp {
  std::vector<DenseLayer> layers;

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }
  bool empty() const { return layers.empty(); }
  // Checks consecutive dimension compatibility and finite parameters.
  void validate() const;
};

// He-uniform (fan-in) initialization. dims = {in, h1, ..., out}; acts has one
// entry per layer.
Mlp make_mlp(const std::vector<std::size_t>& dims,
             const std::vector<Activation>& acts, RandomStream& stream,
             double weight_scale = 1.0);

struct LayerGrads {
  Matrix weight;
  std::vector<double> bias;
};

struct MlpGrads {
  std::vector<LayerGrads> layers;
};

struct MlpBackward {
  MlpGrads grads;
  Matrix input_grad;
};

// Returns all activations: [input, layer1 out, ..., final out].
std::vector<Matrix> forward(const Mlp& mlp, const Matrix& input);

// Final output only.
Matrix forward_last(const Mlp& mlp, const Matrix& input);

// loss_grad is dL/d(output), same shape as the final activation. Gradients
// are summed over the batch (softmax_cross_entropy already folds in 1/B).
MlpBackward backward(const Mlp& mlp, const std::vector<Matrix>& activations,
                     const Matrix& loss_grad);

MlpGrads zero_grads_like(const Mlp& mlp);
void accumulate(MlpGrads& acc, const MlpGrads& g, double alpha = 1.0);

struct SgdConfig {
  double learning_rate = 0.01;
  double weight_decay = 0.0;
  double decay_factor = 0.9;       // learning-rate decay multiplier
  std::size_t decay_every = 100;   // epochs between decays

  double effective_rate(std::size_t epoch) const;
  void validate() const;
};

// W <- (1 - mu*lambda) W - mu dW; biases skip the decay term. mu is the
// epoch-scheduled rate.
void sgd_step(Mlp& mlp, const MlpGrads& grads, const SgdConfig& cfg,
              std::size_t epoch);

struct SoftmaxCeResult {
  double loss = 0.0;  // mean over the batch
  Matrix grad;        // (softmax - onehot) / batch
};

SoftmaxCeResult softmax_cross_entropy(const Matrix& logits,
                                      const std::vector<int>& labels);

// Row-wise softmax with max-subtraction.
Matrix softmax_rows(const Matrix& logits);

// argmax per row.
std::vector<int> argmax_rows(const Matrix& m);

double accuracy(const Matrix& logits, const std::vector<int>& labels);

}  // namespace fuselab
