#include "fuselab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "fuselab/error.hpp"
#include "fuselab/svd.hpp"

namespace fuselab::diag {

namespace {

std::vector<int> head_indices(std::size_t n, std::size_t cap) {
  std::vector<int> idx(std::min(n, cap));
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

// Forward-mode push of per-sample direction rows V through mlp layers
// [0, upto), masking by the recorded activations.
Matrix push_forward(const Mlp& mlp, const std::vector<Matrix>& acts, Matrix v,
                    std::size_t upto) {
  for (std::size_t l = 0; l < upto; ++l) {
    v = matmul_nt(v, mlp.layers[l].weight);
    if (mlp.layers[l].act == Activation::relu) {
      const Matrix& out = acts[l + 1];
      for (std::size_t i = 0; i < v.size(); ++i)
        if (out.data[i] <= 0.0) v.data[i] = 0.0;
    }
  }
  return v;
}

struct ForwardCache {
  Batch batch;
  std::vector<std::vector<Matrix>> enc_acts;
  std::vector<std::vector<Matrix>> h_acts;
  std::vector<std::vector<Matrix>> hinv_acts;
  Matrix fusion_in;
  std::vector<Matrix> fus_acts;
};

ForwardCache run_forward(const FusionModel& model,
                         const synth::MultimodalDataset& ds, std::size_t cap) {
  ForwardCache fc;
  fc.batch = take_batch(ds, head_indices(ds.num_samples(), cap));
  std::vector<Matrix> encs;
  for (std::size_t i = 0; i < model.num_modalities(); ++i) {
    fc.enc_acts.push_back(forward(model.encoders[i], fc.batch.modalities[i]));
    if (model.ebr) {
      fc.h_acts.push_back(forward(model.ebr->h[i], fc.enc_acts[i].back()));
      fc.hinv_acts.push_back(forward(model.ebr->h_inv[i], fc.h_acts[i].back()));
      encs.push_back(fc.hinv_acts[i].back());
    } else {
      encs.push_back(fc.enc_acts[i].back());
    }
  }
  fc.fusion_in = fusion_input(model, encs);
  fc.fus_acts = forward(model.fusion, fc.fusion_in);
  return fc;
}

}  // namespace

FeatureSet encoded_features(const FusionModel& model,
                            const synth::MultimodalDataset& ds,
                            std::size_t fusion_layer, std::size_t sample_cap) {
  ds.require_ledger("encoded_features");
  if (fusion_layer >= model.fusion.layers.size())
    throw Error::input("encoded_features: fusion layer out of range");
  ForwardCache fc = run_forward(model, ds, sample_cap);
  const std::size_t B = fc.batch.size();
  const std::size_t dim = model.fusion.layers[fusion_layer].in_dim();

  FeatureSet fs;
  fs.dim = dim;
  for (const auto& entry : ds.ledger) {
    const auto mi = static_cast<std::size_t>(entry.modality);
    Matrix v(B, entry.probe.size());
    for (std::size_t r = 0; r < B; ++r)
      std::copy(entry.probe.begin(), entry.probe.end(), v.row_ptr(r));
    v = push_forward(model.encoders[mi], fc.enc_acts[mi], std::move(v),
                     model.encoders[mi].layers.size());
    if (model.ebr) {
      v = push_forward(model.ebr->h[mi], fc.h_acts[mi], std::move(v),
                       model.ebr->h[mi].layers.size());
      v = push_forward(model.ebr->h_inv[mi], fc.hinv_acts[mi], std::move(v),
                       model.ebr->h_inv[mi].layers.size());
    }
    // Lift into the fusion input space.
    Matrix lifted(B, model.fusion.in_dim());
    if (model.kind == FusionKind::concat_mlp) {
      const std::size_t off = fusion_block_offset(model, mi);
      for (std::size_t r = 0; r < B; ++r)
        std::copy(v.row_ptr(r), v.row_ptr(r) + v.cols, lifted.row_ptr(r) + off);
    } else {
      lifted = v;
      scale(lifted, 1.0 / static_cast<double>(model.num_modalities()));
    }
    lifted = push_forward(model.fusion, fc.fus_acts, std::move(lifted), fusion_layer);

    Feature f;
    f.modality = entry.modality;
    f.latent = entry.latent;
    f.role = entry.role;
    auto mean = column_means(lifted);
    const double nrm = norm2(mean);
    if (nrm > 1e-10) {
      for (double& x : mean) x /= nrm;
      f.direction = std::move(mean);
    }
    fs.features.push_back(std::move(f));
  }
  return fs;
}

double collision_bound(std::size_t m, const std::vector<std::size_t>& dims) {
  if (dims.empty()) throw Error::input("collision_bound: empty dims");
  if (m != dims.size())
    throw Error::input("collision_bound: m must equal len(dims)");
  if (m == 1) return 0.0;
  double min_dim = static_cast<double>(*std::min_element(dims.begin(), dims.end()));
  double total = 0.0;
  for (auto d : dims) total += static_cast<double>(d);
  const double b = static_cast<double>(m) * static_cast<double>(m - 1) *
                   min_dim * min_dim / (total * total);
  return std::clamp(b, 0.0, 1.0);
}

CollisionRows collision_rows(const Matrix& weights, const FeatureSet& features,
                             double tau) {
  if (weights.cols != features.dim)
    throw Error::config("collision_rows: feature/weight dimension mismatch");
  CollisionRows out;
  out.polysemantic.assign(weights.rows, 0);
  std::size_t count = 0;
  for (std::size_t r = 0; r < weights.rows; ++r) {
    std::set<int> modalities;
    for (const auto& f : features) {
      if (f.direction.empty()) continue;
      if (abs_cosine(weights.row_ptr(r), f.direction.data(), weights.cols) > tau)
        modalities.insert(f.modality);
    }
    if (modalities.size() >= 2) {
      out.polysemantic[r] = 1;
      ++count;
    }
  }
  out.fraction = weights.rows == 0
                     ? 0.0
                     : static_cast<double>(count) / static_cast<double>(weights.rows);
  return out;
}

double empirical_collision_fraction(const FusionModel& model,
                                    const synth::MultimodalDataset& ds,
                                    std::size_t fusion_layer, double tau_enc) {
  const auto fs = encoded_features(model, ds, fusion_layer);
  return collision_rows(model.fusion.layers[fusion_layer].weight, fs, tau_enc)
      .fraction;
}

Matrix agop_of_layer(const DenseLayer& layer, const Matrix& input) {
  if (input.cols != layer.in_dim())
    throw Error::config("agop_of_layer: input dim mismatch");
  // J(x) = D(x) W with D the relu mask, so the sample mean of J^T J is
  // W^T diag(active rate) W; identity layers reduce to W^T W.
  std::vector<double> rate(layer.out_dim(), 1.0);
  if (layer.act == Activation::relu) {
    Matrix z = matmul_nt(input, layer.weight);
    add_row_vector(z, layer.bias);
    std::fill(rate.begin(), rate.end(), 0.0);
    for (std::size_t r = 0; r < z.rows; ++r) {
      const double* p = z.row_ptr(r);
      for (std::size_t c = 0; c < z.cols; ++c)
        if (p[c] > 0.0) rate[c] += 1.0;
    }
    for (double& v : rate)
      v /= static_cast<double>(std::max<std::size_t>(1, z.rows));
  }
  Matrix scaled = layer.weight;
  for (std::size_t r = 0; r < scaled.rows; ++r) {
    double* p = scaled.row_ptr(r);
    for (std::size_t c = 0; c < scaled.cols; ++c) p[c] *= rate[r];
  }
  return matmul_tn(layer.weight, scaled);
}

Matrix agop(const FusionModel& model, const Batch& batch, std::size_t fusion_layer) {
  if (fusion_layer >= model.fusion.layers.size())
    throw Error::input("agop: fusion layer out of range");
  auto encs = encode(model, batch);
  Matrix x = fusion_input(model, encs);
  for (std::size_t l = 0; l < fusion_layer; ++l) {
    auto acts = forward(Mlp{{model.fusion.layers[l]}}, x);
    x = acts.back();
  }
  return agop_of_layer(model.fusion.layers[fusion_layer], x);
}

Matrix agop(const FusionModel& model, const synth::MultimodalDataset& ds,
            std::size_t fusion_layer, std::size_t sample_cap) {
  return agop(model, take_batch(ds, head_indices(ds.num_samples(), sample_cap)),
              fusion_layer);
}

GradientRankSummary gradient_rank_trace(const train::TrainTrace& trace) {
  GradientRankSummary s;
  s.layer_names = trace.layer_names;
  for (const auto& e : trace.epochs) s.per_epoch.push_back(e.grad_rank);
  if (!s.per_epoch.empty()) {
    s.first_epoch = s.per_epoch.front();
    s.final_epoch = s.per_epoch.back();
  }
  s.final_agop_rank = trace.final_agop_rank;
  // Ratio over the fusion-head layers (they are the AGOP reference).
  double num = 0.0, den = 0.0;
  std::size_t fi = 0;
  for (std::size_t l = 0; l < s.layer_names.size(); ++l) {
    if (s.layer_names[l].rfind("fusion.", 0) != 0) continue;
    if (fi < s.final_agop_rank.size() && !s.final_epoch.empty()) {
      num += static_cast<double>(s.final_epoch[l]);
      den += static_cast<double>(s.final_agop_rank[fi]);
    }
    ++fi;
  }
  s.final_to_agop_ratio = den > 0.0 ? num / den : 0.0;
  return s;
}

SubspaceProbe make_subspace_probe(std::size_t layer,
                                  const std::vector<std::vector<double>>& dirs) {
  if (dirs.empty()) throw Error::input("make_subspace_probe: no directions");
  const std::size_t dim = dirs[0].size();
  std::vector<std::vector<double>> basis;
  for (const auto& d : dirs) {
    if (d.size() != dim)
      throw Error::input("make_subspace_probe: direction length mismatch");
    std::vector<double> v = d;
    for (int pass = 0; pass < 2; ++pass) {  // twice for numerical stability
      for (const auto& b : basis) {
        double proj = 0.0;
        for (std::size_t i = 0; i < dim; ++i) proj += v[i] * b[i];
        for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * b[i];
      }
    }
    const double nrm = norm2(v);
    if (nrm < 1e-10) continue;  // dependent direction
    for (double& x : v) x /= nrm;
    basis.push_back(std::move(v));
  }
  if (basis.empty())
    throw Error::input("make_subspace_probe: directions span nothing");
  SubspaceProbe p;
  p.layer = layer;
  p.basis = Matrix(dim, basis.size());
  for (std::size_t c = 0; c < basis.size(); ++c)
    for (std::size_t r = 0; r < dim; ++r) p.basis(r, c) = basis[c][r];
  return p;
}

double gamma(const SubspaceProbe& probe, const FeatureSet& features,
             double tau_enc) {
  if (probe.basis.rows != features.dim)
    throw Error::config("gamma: probe/feature dimension mismatch");
  std::size_t count = 0;
  for (const auto& f : features.features) {
    if (f.direction.empty()) continue;
    double ss = 0.0;
    for (std::size_t c = 0; c < probe.basis.cols; ++c) {
      double proj = 0.0;
      for (std::size_t r = 0; r < probe.basis.rows; ++r)
        proj += probe.basis(r, c) * f.direction[r];
      ss += proj * proj;
    }
    if (std::sqrt(ss) >= tau_enc) ++count;
  }
  return static_cast<double>(count) / static_cast<double>(probe.basis.cols);
}

AgopGap agop_gap(const SubspaceProbe& probe, const Matrix& agop_matrix,
                 double gamma_value, std::size_t epoch_n) {
  if (agop_matrix.rows != agop_matrix.cols)
    throw Error::config("agop_gap: AGOP must be square");
  if (probe.basis.rows != agop_matrix.rows)
    throw Error::config("agop_gap: probe/AGOP dimension mismatch");
  const std::size_t d = agop_matrix.rows;
  const std::size_t k = probe.basis.cols;

  double tr = 0.0;
  for (std::size_t i = 0; i < d; ++i) tr += agop_matrix(i, i);
  const double inv_tr = tr > 1e-300 ? 1.0 / tr : 0.0;
  const double inv_k = 1.0 / static_cast<double>(k);

  // || P/k - A/tr(A) ||_F with P = B B^T.
  Matrix proj = matmul_nt(probe.basis, probe.basis);  // d x d
  double ss = 0.0;
  for (std::size_t i = 0; i < proj.size(); ++i) {
    const double v = proj.data[i] * inv_k - agop_matrix.data[i] * inv_tr;
    ss += v * v;
  }

  AgopGap out;
  out.gap = std::sqrt(ss);
  if (gamma_value > 0.0 && epoch_n > 0) {
    out.bound_defined = true;
    out.bound = std::pow(gamma_value, -1.0 / static_cast<double>(epoch_n));
  }
  return out;
}

namespace {

// Gradient of the semantic loss w.r.t. every modality's raw input.
std::vector<Matrix> input_gradients(const FusionModel& model, const Batch& batch) {
  std::vector<std::vector<Matrix>> enc_acts, h_acts, hinv_acts;
  std::vector<Matrix> encs;
  for (std::size_t i = 0; i < model.num_modalities(); ++i) {
    enc_acts.push_back(forward(model.encoders[i], batch.modalities[i]));
    if (model.ebr) {
      h_acts.push_back(forward(model.ebr->h[i], enc_acts[i].back()));
      hinv_acts.push_back(forward(model.ebr->h_inv[i], h_acts[i].back()));
      encs.push_back(hinv_acts[i].back());
    } else {
      encs.push_back(enc_acts[i].back());
    }
  }
  Matrix fin = fusion_input(model, encs);
  auto fus_acts = forward(model.fusion, fin);
  auto cls_acts = forward(model.classifier, fus_acts.back());
  auto ce = softmax_cross_entropy(cls_acts.back(), batch.labels);
  auto cls_bw = backward(model.classifier, cls_acts, ce.grad);
  auto fus_bw = backward(model.fusion, fus_acts, cls_bw.input_grad);

  std::vector<Matrix> out;
  std::size_t off = 0;
  for (std::size_t i = 0; i < model.num_modalities(); ++i) {
    Matrix d;
    if (model.kind == FusionKind::concat_mlp) {
      d = slice_cols(fus_bw.input_grad, off, off + model.encoding_dim(i));
      off += model.encoding_dim(i);
    } else {
      d = fus_bw.input_grad;
      scale(d, 1.0 / static_cast<double>(model.num_modalities()));
    }
    if (model.ebr) {
      auto hinv_bw = backward(model.ebr->h_inv[i], hinv_acts[i], d);
      auto h_bw = backward(model.ebr->h[i], h_acts[i], hinv_bw.input_grad);
      d = std::move(h_bw.input_grad);
    }
    auto enc_bw = backward(model.encoders[i], enc_acts[i], d);
    out.push_back(std::move(enc_bw.input_grad));
  }
  return out;
}

}  // namespace

double interference_score(const FusionModel& model,
                          const synth::MultimodalDataset& ds,
                          std::size_t sample_cap) {
  ds.require_ledger("interference_score");
  std::vector<const synth::LedgerEntry*> conj;
  for (const auto& e : ds.ledger)
    if (e.role == synth::LatentRole::conjugate_predictive) conj.push_back(&e);
  if (conj.empty())
    throw Error::state("interference_score: dataset has no conjugate pairs");

  Batch batch = take_batch(ds, head_indices(ds.num_samples(), sample_cap));
  auto grads = input_gradients(model, batch);
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto* e : conj) {
    const Matrix& g = grads[static_cast<std::size_t>(e->modality)];
    for (std::size_t r = 0; r < g.rows; ++r) {
      double d = 0.0;
      const double* p = g.row_ptr(r);
      for (std::size_t c = 0; c < g.cols; ++c) d += p[c] * e->probe[c];
      sum += std::fabs(d);
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

EntanglementRatio entanglement_ratio_rows(const Matrix& poly_rows,
                                          const FeatureSet& features) {
  double pred_sum = 0.0, noisy_sum = 0.0;
  std::size_t pred_n = 0, noisy_n = 0;
  for (std::size_t r = 0; r < poly_rows.rows; ++r) {
    for (const auto& f : features.features) {
      if (f.direction.empty()) continue;
      const double c =
          abs_cosine(poly_rows.row_ptr(r), f.direction.data(), poly_rows.cols);
      if (synth::is_predictive_role(f.role)) {
        pred_sum += c;
        ++pred_n;
      } else {
        noisy_sum += c;
        ++noisy_n;
      }
    }
  }
  EntanglementRatio out;
  out.polysemantic_rows = poly_rows.rows;
  if (poly_rows.rows == 0 || pred_n == 0 || noisy_n == 0) return out;
  const double pred_mean = pred_sum / static_cast<double>(pred_n);
  const double noisy_mean = noisy_sum / static_cast<double>(noisy_n);
  if (noisy_mean <= 1e-300) return out;
  out.defined = true;
  out.ratio = pred_mean / noisy_mean;
  return out;
}

EntanglementRatio entanglement_ratio(const FusionModel& model,
                                     const synth::MultimodalDataset& ds,
                                     std::size_t fusion_layer, double tau_enc) {
  const auto fs = encoded_features(model, ds, fusion_layer);
  bool has_pred = false, has_noisy = false;
  for (const auto& f : fs.features) {
    has_pred |= synth::is_predictive_role(f.role);
    has_noisy |= !synth::is_predictive_role(f.role);
  }
  if (!has_pred || !has_noisy)
    throw Error::state("entanglement_ratio: need noisy and predictive features");
  const Matrix& w = model.fusion.layers[fusion_layer].weight;
  const auto col = collision_rows(w, fs, tau_enc);
  std::vector<int> rows;
  for (std::size_t r = 0; r < w.rows; ++r)
    if (col.polysemantic[r]) rows.push_back(static_cast<int>(r));
  if (rows.empty()) return {};  // undefined, zero polysemantic rows
  return entanglement_ratio_rows(take_rows(w, rows), fs);
}

double linear_cka(const Matrix& a, const Matrix& b, bool* degenerate) {
  if (a.rows != b.rows) throw Error::input("linear_cka: row count mismatch");
  if (degenerate) *degenerate = false;
  const Matrix ac = center_columns(a);
  const Matrix bc = center_columns(b);
  const double num_f = frobenius_norm(matmul_tn(ac, bc));
  const double da = frobenius_norm(matmul_tn(ac, ac));
  const double db = frobenius_norm(matmul_tn(bc, bc));
  if (da <= 1e-300 || db <= 1e-300) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return std::clamp(num_f * num_f / (da * db), 0.0, 1.0);
}

namespace {

// Solves (A + eps I) x = b for SPD A in place; plain Cholesky.
std::vector<double> ridge_solve(Matrix a, std::vector<double> b, double eps) {
  const std::size_t n = a.rows;
  for (std::size_t i = 0; i < n; ++i) a(i, i) += eps;
  // Cholesky factorization a = L L^T.
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
    if (d <= 0.0) throw Error::input("ridge_solve: matrix not positive definite");
    a(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
      a(i, j) = s / a(j, j);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {  // forward
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= a(i, k) * b[k];
    b[i] = s / a(i, i);
  }
  for (std::size_t i = n; i-- > 0;) {  // backward
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a(k, i) * b[k];
    b[i] = s / a(i, i);
  }
  return b;
}

}  // namespace

double vif_mean(const Matrix& rep) {
  if (rep.rows <= rep.cols)
    throw Error::input("vif_mean: need more samples than features");
  constexpr double kRidge = 1e-8;
  constexpr double kCap = 1e6;
  const Matrix x = center_columns(rep);
  const Matrix g = matmul_tn(x, x);
  const std::size_t p = x.cols;
  double total = 0.0;
  for (std::size_t j = 0; j < p; ++j) {
    const double gjj = g(j, j);
    if (gjj <= 1e-12) {
      total += 1.0;  // constant column: nothing to inflate
      continue;
    }
    Matrix sub(p - 1, p - 1);
    std::vector<double> rhs(p - 1);
    std::size_t ri = 0;
    for (std::size_t r = 0; r < p; ++r) {
      if (r == j) continue;
      std::size_t ci = 0;
      for (std::size_t c = 0; c < p; ++c) {
        if (c == j) continue;
        sub(ri, ci++) = g(r, c);
      }
      rhs[ri++] = g(r, j);
    }
    const auto beta = ridge_solve(std::move(sub), rhs, kRidge);
    double explained = 0.0;
    for (std::size_t k = 0; k < beta.size(); ++k) explained += beta[k] * rhs[k];
    double r2 = explained / gjj;
    r2 = std::clamp(r2, 0.0, 1.0);
    const double vif = r2 >= 1.0 - 1.0 / kCap ? kCap : 1.0 / (1.0 - r2);
    total += std::min(vif, kCap);
  }
  return total / static_cast<double>(p);
}

double macro_ovr_auc(const Matrix& probs, const std::vector<int>& labels) {
  if (labels.size() != probs.rows)
    throw Error::input("macro_ovr_auc: one label per row required");
  const std::size_t C = probs.cols;
  double total = 0.0;
  std::size_t classes = 0;
  std::vector<std::size_t> order(probs.rows);
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t pos = 0;
    for (int y : labels)
      if (static_cast<std::size_t>(y) == c) ++pos;
    const std::size_t neg = probs.rows - pos;
    if (pos == 0 || neg == 0) continue;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return probs(a, c) < probs(b, c);
    });
    // Rank sum of positives with average ranks over ties.
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j + 1 < order.size() &&
             probs(order[j + 1], c) == probs(order[i], c))
        ++j;
      const double avg_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k)
        if (static_cast<std::size_t>(labels[order[k]]) == c) rank_sum += avg_rank;
      i = j + 1;
    }
    const double auc =
        (rank_sum - static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0) /
        (static_cast<double>(pos) * static_cast<double>(neg));
    total += auc;
    ++classes;
  }
  if (classes == 0) throw Error::input("macro_ovr_auc: no class has both outcomes");
  return total / static_cast<double>(classes);
}

namespace {

Matrix normalize_rows_padded(const Matrix& rows, std::size_t dim) {
  Matrix out(rows.rows, dim);
  for (std::size_t r = 0; r < rows.rows; ++r) {
    const double* p = rows.row_ptr(r);
    double nrm = 0.0;
    for (std::size_t c = 0; c < rows.cols; ++c) nrm += p[c] * p[c];
    nrm = std::sqrt(nrm);
    if (nrm <= 1e-300) continue;
    double* q = out.row_ptr(r);
    for (std::size_t c = 0; c < rows.cols; ++c) q[c] = p[c] / nrm;
  }
  return out;
}

}  // namespace

ModalityProbeCe modality_probe_ce(const WeightSamples& unimodal_samples,
                                  const FusionModel& model,
                                  const ModalityProbeConfig& cfg) {
  const std::size_t m = model.num_modalities();
  if (m < 2) throw Error::input("modality_probe_ce: need >= 2 modalities");
  if (unimodal_samples.rows.rows != unimodal_samples.modality.size() ||
      unimodal_samples.rows.rows == 0)
    throw Error::input("modality_probe_ce: bad weight samples");
  {
    std::set<int> mods(unimodal_samples.modality.begin(),
                       unimodal_samples.modality.end());
    if (mods.size() < 2)
      throw Error::input("modality_probe_ce: samples must span >= 2 modalities");
  }

  std::size_t dim = unimodal_samples.rows.cols;
  for (std::size_t i = 0; i < m; ++i) dim = std::max(dim, model.encoding_dim(i));

  const Matrix train_x = normalize_rows_padded(unimodal_samples.rows, dim);
  const auto& train_y = unimodal_samples.modality;

  RandomStream stream(cfg.seed);
  auto init = stream.split("probe-init");
  Mlp net = make_mlp({dim, cfg.hidden1, cfg.hidden2, m},
                     {Activation::relu, Activation::relu, Activation::softmax_logits},
                     init);
  SgdConfig sgd{cfg.learning_rate, 0.0, 1.0, 0};
  auto shuffle = stream.split("probe-shuffle");
  const std::size_t n = train_x.rows;
  double train_ce = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    shuffle.shuffle(idx);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      std::vector<int> bidx(idx.begin() + static_cast<long>(start),
                            idx.begin() + static_cast<long>(stop));
      Matrix xb = take_rows(train_x, bidx);
      std::vector<int> yb;
      for (int r : bidx) yb.push_back(train_y[static_cast<std::size_t>(r)]);
      auto acts = forward(net, xb);
      auto ce = softmax_cross_entropy(acts.back(), yb);
      sum += ce.loss;
      ++batches;
      auto bw = backward(net, acts, ce.grad);
      sgd_step(net, bw.grads, sgd, epoch);
    }
    train_ce = sum / static_cast<double>(batches);
  }

  // Evaluate on the fusion head's first-layer rows, block by block.
  const Matrix& w0 = model.fusion.layers[0].weight;
  double ce_sum = 0.0;
  std::size_t ce_count = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t off = fusion_block_offset(model, i);
    Matrix block = slice_cols(w0, off, off + model.encoding_dim(i));
    Matrix xb = normalize_rows_padded(block, dim);
    auto logits = forward_last(net, xb);
    const std::vector<int> yb(xb.rows, static_cast<int>(i));
    ce_sum += softmax_cross_entropy(logits, yb).loss * static_cast<double>(xb.rows);
    ce_count += xb.rows;
  }

  ModalityProbeCe out;
  out.train_ce = train_ce;
  out.ce = ce_sum / static_cast<double>(ce_count);
  return out;
}

DiagnosticsReport compute_report(const FusionModel& model,
                                 const synth::MultimodalDataset& ds,
                                 const ReportOptions& opts) {
  DiagnosticsReport rep;
  rep.tau_enc = opts.tau_enc;
  rep.epoch_n = opts.epoch_n;

  std::vector<std::size_t> dims;
  for (std::size_t i = 0; i < model.num_modalities(); ++i)
    dims.push_back(model.encoding_dim(i));
  rep.collision_bound = collision_bound(model.num_modalities(), dims);

  for (std::size_t l = 0; l < model.fusion.layers.size(); ++l)
    rep.agop.push_back(agop(model, ds, l));

  if (ds.has_ledger()) {
    const auto fs = encoded_features(model, ds, opts.fusion_layer);
    rep.empirical_collision_fraction =
        collision_rows(model.fusion.layers[opts.fusion_layer].weight, fs,
                       opts.tau_enc)
            .fraction;

    // Single-feature probes, then cross-modal pair probes.
    std::vector<SubspaceProbe> probes;
    for (const auto& f : fs.features) {
      if (f.direction.empty()) continue;
      probes.push_back(make_subspace_probe(opts.fusion_layer, {f.direction}));
    }
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < fs.features.size() && pairs < opts.max_pair_probes;
         ++a) {
      for (std::size_t b = a + 1;
           b < fs.features.size() && pairs < opts.max_pair_probes; ++b) {
        const auto& fa = fs.features[a];
        const auto& fb = fs.features[b];
        if (fa.modality == fb.modality) continue;
        if (fa.direction.empty() || fb.direction.empty()) continue;
        std::vector<double> sum(fs.dim);
        for (std::size_t i = 0; i < fs.dim; ++i)
          sum[i] = fa.direction[i] + fb.direction[i];
        const double nrm = norm2(sum);
        if (nrm < 1e-10) continue;
        for (double& v : sum) v /= nrm;
        probes.push_back(make_subspace_probe(opts.fusion_layer, {sum}));
        ++pairs;
      }
    }
    for (const auto& p : probes) {
      const double g = gamma(p, fs, opts.tau_enc);
      const auto gap = agop_gap(p, rep.agop[opts.fusion_layer], g, opts.epoch_n);
      rep.subspaces.push_back(
          {g, gap.gap, gap.bound_defined, gap.bound, p.basis.cols});
    }

    bool has_conj = false;
    for (const auto& e : ds.ledger)
      has_conj |= e.role == synth::LatentRole::conjugate_predictive;
    if (has_conj) {
      rep.interference_score = interference_score(model, ds);
      rep.interference_defined = true;
    }
    rep.entanglement = entanglement_ratio(model, ds, opts.fusion_layer, opts.tau_enc);
  }

  Batch eval = take_batch(ds, head_indices(ds.num_samples(), 1000));
  auto encs = encode(model, eval);
  auto fp = fuse_predict_encodings(model, encs);
  for (const auto& e : encs) rep.cka.push_back(linear_cka(e, fp.fused));
  rep.vif_mean = vif_mean(fp.fused);

  if (opts.unimodal_samples) {
    ModalityProbeConfig pc;
    pc.seed = opts.seed;
    rep.modality_probe_ce = modality_probe_ce(*opts.unimodal_samples, model, pc).ce;
  }
  return rep;
}

}  // namespace fuselab::diag
