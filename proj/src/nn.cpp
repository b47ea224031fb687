#include "fuselab/nn.hpp"

#include <cmath>
#include <string>

#include "fuselab/error.hpp"

namespace fuselab {

void Mlp::validate() const {
  if (layers.empty()) throw Error::config("mlp: no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.bias.size() != l.out_dim())
      throw Error::config("mlp: bias length mismatch at layer " + std::to_string(i));
    if (!l.weight.all_finite())
      throw Error::config("mlp: non-finite weight at layer " + std::to_string(i));
    for (double b : l.bias)
      if (!std::isfinite(b))
        throw Error::config("mlp: non-finite bias at layer " + std::to_string(i));
    if (i > 0 && l.in_dim() != layers[i - 1].out_dim())
      throw Error::config("mlp: dimension mismatch between layers " +
                          std::to_string(i - 1) + " and " + std::to_string(i));
  }
}

Mlp make_mlp(const std::vector<std::size_t>& dims,
             const std::vector<Activation>& acts, RandomStream& stream,
             double weight_scale) {
  if (dims.size() < 2 || acts.size() != dims.size() - 1)
    throw Error::config("make_mlp: need dims {in,...,out} and one act per layer");
  Mlp mlp;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer l;
    l.weight = Matrix(dims[i + 1], dims[i]);
    const double bound =
        weight_scale * std::sqrt(6.0 / static_cast<double>(dims[i]));
    for (double& w : l.weight.data) w = stream.uniform(-bound, bound);
    l.bias.assign(dims[i + 1], 0.0);
    l.act = acts[i];
    mlp.layers.push_back(std::move(l));
  }
  return mlp;
}

std::vector<Matrix> forward(const Mlp& mlp, const Matrix& input) {
  if (mlp.empty()) throw Error::config("forward: empty mlp");
  if (input.cols != mlp.in_dim())
    throw Error::config("forward: input has " + std::to_string(input.cols) +
                        " cols, expected " + std::to_string(mlp.in_dim()));
  std::vector<Matrix> acts;
  acts.reserve(mlp.layers.size() + 1);
  acts.push_back(input);
  for (const auto& layer : mlp.layers) {
    Matrix z = matmul_nt(acts.back(), layer.weight);
    add_row_vector(z, layer.bias);
    if (layer.act == Activation::relu)
      for (double& v : z.data) v = v > 0.0 ? v : 0.0;
    acts.push_back(std::move(z));
  }
  return acts;
}

Matrix forward_last(const Mlp& mlp, const Matrix& input) {
  return forward(mlp, input).back();
}

MlpBackward backward(const Mlp& mlp, const std::vector<Matrix>& activations,
                     const Matrix& loss_grad) {
  if (activations.size() != mlp.layers.size() + 1)
    throw Error::config("backward: activation list does not match mlp");
  if (!loss_grad.same_shape(activations.back()))
    throw Error::config("backward: loss gradient shape mismatch");

  MlpBackward out;
  out.grads.layers.resize(mlp.layers.size());
  Matrix g = loss_grad;
  for (std::size_t li = mlp.layers.size(); li-- > 0;) {
    const auto& layer = mlp.layers[li];
    const Matrix& input = activations[li];
    const Matrix& output = activations[li + 1];
    if (layer.act == Activation::relu) {
      // Post-activations are zero exactly where the unit was clamped.
      for (std::size_t i = 0; i < g.size(); ++i)
        if (output.data[i] <= 0.0) g.data[i] = 0.0;
    }
    out.grads.layers[li].weight = matmul_tn(g, input);  // out_dim x in_dim
    out.grads.layers[li].bias = column_sums(g);
    g = matmul(g, layer.weight);  // gradient w.r.t. the layer input
  }
  out.input_grad = std::move(g);
  return out;
}

MlpGrads zero_grads_like(const Mlp& mlp) {
  MlpGrads g;
  g.layers.resize(mlp.layers.size());
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    g.layers[i].weight = Matrix(mlp.layers[i].out_dim(), mlp.layers[i].in_dim());
    g.layers[i].bias.assign(mlp.layers[i].out_dim(), 0.0);
  }
  return g;
}

void accumulate(MlpGrads& acc, const MlpGrads& g, double alpha) {
  if (acc.layers.size() != g.layers.size())
    throw Error::config("accumulate: grad layer count mismatch");
  for (std::size_t i = 0; i < acc.layers.size(); ++i) {
    add_scaled(acc.layers[i].weight, g.layers[i].weight, alpha);
    for (std::size_t j = 0; j < acc.layers[i].bias.size(); ++j)
      acc.layers[i].bias[j] += alpha * g.layers[i].bias[j];
  }
}

double SgdConfig::effective_rate(std::size_t epoch) const {
  double rate = learning_rate;
  if (decay_every > 0) {
    const std::size_t steps = epoch / decay_every;
    for (std::size_t i = 0; i < steps; ++i) rate *= decay_factor;
  }
  return rate;
}

void SgdConfig::validate() const {
  if (learning_rate <= 0.0) throw Error::config("sgd: learning_rate must be > 0");
  if (weight_decay < 0.0) throw Error::config("sgd: weight_decay must be >= 0");
  if (decay_factor <= 0.0 || decay_factor > 1.0)
    throw Error::config("sgd: decay_factor must lie in (0,1]");
}

void sgd_step(Mlp& mlp, const MlpGrads& grads, const SgdConfig& cfg,
              std::size_t epoch) {
  cfg.validate();
  if (grads.layers.size() != mlp.layers.size())
    throw Error::config("sgd_step: grad layer count mismatch");
  const double mu = cfg.effective_rate(epoch);
  const double keep = 1.0 - mu * cfg.weight_decay;
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    auto& layer = mlp.layers[i];
    const auto& g = grads.layers[i];
    if (!layer.weight.same_shape(g.weight) || layer.bias.size() != g.bias.size())
      throw Error::config("sgd_step: grad shape mismatch at layer " +
                          std::to_string(i));
    for (std::size_t j = 0; j < layer.weight.size(); ++j)
      layer.weight.data[j] = keep * layer.weight.data[j] - mu * g.weight.data[j];
    for (std::size_t j = 0; j < layer.bias.size(); ++j)
      layer.bias[j] -= mu * g.bias[j];
  }
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits;
  for (std::size_t r = 0; r < p.rows; ++r) {
    double* row = p.row_ptr(r);
    double mx = row[0];
    for (std::size_t c = 1; c < p.cols; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < p.cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    for (std::size_t c = 0; c < p.cols; ++c) row[c] /= sum;
  }
  return p;
}

SoftmaxCeResult softmax_cross_entropy(const Matrix& logits,
                                      const std::vector<int>& labels) {
  if (labels.size() != logits.rows)
    throw Error::input("softmax_cross_entropy: one label per row required");
  const auto C = logits.cols;
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= C)
      throw Error::input("softmax_cross_entropy: label out of range");

  SoftmaxCeResult res;
  res.grad = softmax_rows(logits);
  const double inv_b = 1.0 / static_cast<double>(logits.rows);
  double loss = 0.0;
  for (std::size_t r = 0; r < logits.rows; ++r) {
    double* row = res.grad.row_ptr(r);
    const auto y = static_cast<std::size_t>(labels[r]);
    // log(p_y) recomputed in a stable form from the logits row.
    const double* lrow = logits.row_ptr(r);
    double mx = lrow[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, lrow[c]);
    double lse = 0.0;
    for (std::size_t c = 0; c < C; ++c) lse += std::exp(lrow[c] - mx);
    loss += (mx + std::log(lse)) - lrow[y];
    row[y] -= 1.0;
    for (std::size_t c = 0; c < C; ++c) row[c] *= inv_b;
  }
  res.loss = loss * inv_b;
  return res;
}

std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(m.rows, 0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = m.row_ptr(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < m.cols; ++c)
      if (row[c] > row[best]) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const Matrix& logits, const std::vector<int>& labels) {
  if (labels.size() != logits.rows)
    throw Error::input("accuracy: one label per row required");
  if (logits.rows == 0) return 0.0;
  const auto pred = argmax_rows(logits);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labels[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace fuselab
