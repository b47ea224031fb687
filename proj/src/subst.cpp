#include "fuselab/subst.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fuselab/diagnostics.hpp"
#include "fuselab/error.hpp"
#include "fuselab/nn.hpp"
#include "fuselab/rng.hpp"

namespace fuselab::subst {

const char* policy_name(Policy p) {
  switch (p) {
    case Policy::ebr_ranked: return "ebr_ranked";
    case Policy::zeros: return "zeros";
    case Policy::random_noise: return "random";
    case Policy::nearest_rep: return "nearest_rep";
    case Policy::train_average: return "train_average";
    case Policy::late_fusion_drop: return "late_fusion_drop";
  }
  return "?";
}

Policy parse_policy(const std::string& s) {
  if (s == "ebr_ranked") return Policy::ebr_ranked;
  if (s == "zeros") return Policy::zeros;
  if (s == "random") return Policy::random_noise;
  if (s == "nearest_rep") return Policy::nearest_rep;
  if (s == "train_average") return Policy::train_average;
  if (s == "late_fusion_drop") return Policy::late_fusion_drop;
  throw Error::usage("unknown substitution policy '" + s + "'");
}

ModalityRanking rank_modalities(const FusionModel& model,
                                const synth::MultimodalDataset& ds,
                                std::size_t reference) {
  model.require_ebr("rank_modalities");
  if (reference >= model.num_modalities())
    throw Error::input("rank_modalities: reference out of range");
  Batch batch = full_batch(ds);
  Matrix z_ref = ebr_latent(model, batch, reference);

  ModalityRanking out;
  out.reference = reference;
  std::vector<std::pair<double, std::size_t>> sims;
  for (std::size_t i = 0; i < model.num_modalities(); ++i) {
    if (i == reference) continue;
    Matrix z = ebr_latent(model, batch, i);
    double s = 0.0;
    for (std::size_t r = 0; r < z.rows; ++r) {
      double xy = 0.0, xx = 0.0, yy = 0.0;
      const double* a = z.row_ptr(r);
      const double* b = z_ref.row_ptr(r);
      for (std::size_t c = 0; c < z.cols; ++c) {
        xy += a[c] * b[c];
        xx += a[c] * a[c];
        yy += b[c] * b[c];
      }
      if (xx > 0.0 && yy > 0.0) s += xy / std::sqrt(xx * yy);
    }
    sims.push_back({s / static_cast<double>(z.rows), i});
  }
  std::stable_sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (const auto& [s, i] : sims) {
    out.order.push_back(i);
    out.similarity.push_back(s);
  }
  return out;
}

SubstitutionContext make_substitution_context(const FusionModel& model,
                                              const synth::MultimodalDataset& train,
                                              std::size_t reference,
                                              std::size_t num_classes) {
  SubstitutionContext ctx;
  if (model.has_ebr()) ctx.ranking = rank_modalities(model, train, reference);
  ctx.ranking.reference = reference;

  Batch batch = full_batch(train);
  auto encs = encode(model, batch);
  const std::size_t m = model.num_modalities();
  ctx.mean_encoding.resize(m);
  ctx.class_mean_encoding.assign(m, std::vector<Matrix>(num_classes));
  for (std::size_t i = 0; i < m; ++i) {
    const Matrix& e = encs[i];
    Matrix mean(1, e.cols);
    std::vector<Matrix> cmeans(num_classes, Matrix(1, e.cols));
    std::vector<double> counts(num_classes, 0.0);
    for (std::size_t r = 0; r < e.rows; ++r) {
      const double* p = e.row_ptr(r);
      const auto y = static_cast<std::size_t>(batch.labels[r]);
      counts[y] += 1.0;
      for (std::size_t c = 0; c < e.cols; ++c) {
        mean(0, c) += p[c];
        cmeans[y](0, c) += p[c];
      }
    }
    scale(mean, 1.0 / static_cast<double>(e.rows));
    for (std::size_t y = 0; y < num_classes; ++y) {
      if (counts[y] > 0.0) scale(cmeans[y], 1.0 / counts[y]);
      else cmeans[y] = mean;  // unseen class falls back to the global mean
    }
    ctx.mean_encoding[i] = std::move(mean);
    ctx.class_mean_encoding[i] = std::move(cmeans);
  }
  return ctx;
}

namespace {

void check_mask(const Batch& batch, const synth::MissingnessMask& mask,
                std::size_t m) {
  if (mask.n != batch.size() || mask.m != m)
    throw Error::input("substitute: mask shape mismatch");
  for (std::size_t s = 0; s < mask.n; ++s) {
    bool any_present = false;
    for (std::size_t j = 0; j < m; ++j) any_present |= !mask.is_absent(s, j);
    if (!any_present)
      throw Error::input("substitute: sample with every modality absent");
  }
}

// Position of each modality in [reference, ranked...]; substitution picks the
// closest position, breaking ties by similarity then lower index.
std::vector<std::size_t> ranking_positions(const ModalityRanking& r, std::size_t m) {
  std::vector<std::size_t> pos(m, 0);
  pos[r.reference] = 0;
  for (std::size_t k = 0; k < r.order.size(); ++k) pos[r.order[k]] = k + 1;
  return pos;
}

double ranking_similarity(const ModalityRanking& r, std::size_t modality) {
  if (modality == r.reference) return 1.0;
  for (std::size_t k = 0; k < r.order.size(); ++k)
    if (r.order[k] == modality) return r.similarity[k];
  return -1.0;
}

}  // namespace

Substituted substitute(const FusionModel& model, const Batch& batch,
                       const synth::MissingnessMask& mask,
                       const SubstitutionContext& ctx, Policy policy) {
  const std::size_t m = model.num_modalities();
  check_mask(batch, mask, m);
  if (policy == Policy::ebr_ranked) model.require_ebr("substitute(ebr_ranked)");

  Substituted out;
  out.encodings = encode(model, batch);
  out.fusion_scale.assign(batch.size(), 1.0);

  // Shared latents, computed lazily for the proxy policy.
  std::vector<Matrix> latents(m);
  if (policy == Policy::ebr_ranked)
    for (std::size_t j = 0; j < m; ++j) latents[j] = ebr_latent(model, batch, j);

  const auto pos = ranking_positions(ctx.ranking, m);
  RandomStream noise(RandomStream(ctx.seed).split("random-fill").seed());

  for (std::size_t s = 0; s < batch.size(); ++s) {
    std::vector<std::size_t> present;
    for (std::size_t j = 0; j < m; ++j)
      if (!mask.is_absent(s, j)) present.push_back(j);

    for (std::size_t i = 0; i < m; ++i) {
      if (!mask.is_absent(s, i)) continue;
      double* slot = out.encodings[i].row_ptr(s);
      const std::size_t d = out.encodings[i].cols;
      switch (policy) {
        case Policy::zeros:
          std::fill(slot, slot + d, 0.0);
          break;
        case Policy::random_noise:
          for (std::size_t c = 0; c < d; ++c) slot[c] = noise.normal();
          break;
        case Policy::train_average: {
          const Matrix& mean = ctx.mean_encoding[i];
          std::copy(mean.row_ptr(0), mean.row_ptr(0) + d, slot);
          break;
        }
        case Policy::nearest_rep: {
          std::size_t best = present[0];
          double best_score = -2.0;
          for (std::size_t j : present) {
            if (out.encodings[j].cols != d)
              throw Error::config("nearest_rep: encoder dims must match");
            double xy = 0.0, xx = 0.0, yy = 0.0;
            const double* a = out.encodings[j].row_ptr(s);
            const double* b = ctx.mean_encoding[i].row_ptr(0);
            for (std::size_t c = 0; c < d; ++c) {
              xy += a[c] * b[c];
              xx += a[c] * a[c];
              yy += b[c] * b[c];
            }
            const double score =
                (xx > 0.0 && yy > 0.0) ? xy / std::sqrt(xx * yy) : -1.0;
            if (score > best_score) {
              best_score = score;
              best = j;
            }
          }
          const double* src = out.encodings[best].row_ptr(s);
          std::copy(src, src + d, slot);
          break;
        }
        case Policy::late_fusion_drop:
          std::fill(slot, slot + d, 0.0);
          break;
        case Policy::ebr_ranked: {
          // Nearest available modality in the ranked list by position.
          std::size_t best = present[0];
          long best_dist = 1L << 30;
          double best_sim = -2.0;
          for (std::size_t j : present) {
            const long dist = std::labs(static_cast<long>(pos[j]) -
                                        static_cast<long>(pos[i]));
            const double sim = ranking_similarity(ctx.ranking, j);
            if (dist < best_dist ||
                (dist == best_dist &&
                 (sim > best_sim || (sim == best_sim && j < best)))) {
              best_dist = dist;
              best_sim = sim;
              best = j;
            }
          }
          Matrix zrow(1, latents[best].cols);
          std::copy(latents[best].row_ptr(s),
                    latents[best].row_ptr(s) + latents[best].cols,
                    zrow.row_ptr(0));
          Matrix proxy = forward_last(model.ebr->h_inv[i], zrow);
          std::copy(proxy.row_ptr(0), proxy.row_ptr(0) + d, slot);
          break;
        }
      }
    }
    if (policy == Policy::late_fusion_drop)
      out.fusion_scale[s] =
          static_cast<double>(m) / static_cast<double>(present.size());
  }
  return out;
}

namespace {

Matrix predict_from(const FusionModel& model, const Substituted& sub) {
  Matrix fin = fusion_input(model, sub.encodings);
  for (std::size_t r = 0; r < fin.rows; ++r) {
    if (sub.fusion_scale[r] == 1.0) continue;
    double* p = fin.row_ptr(r);
    for (std::size_t c = 0; c < fin.cols; ++c) p[c] *= sub.fusion_scale[r];
  }
  return forward_last(model.classifier, forward_last(model.fusion, fin));
}

}  // namespace

Matrix predict_masked(const FusionModel& model, const Batch& batch,
                      const synth::MissingnessMask& mask,
                      const SubstitutionContext& ctx, Policy policy) {
  Substituted sub = substitute(model, batch, mask, ctx, policy);
  Matrix logits = predict_from(model, sub);
  if (policy == Policy::train_average && ctx.average_uses_class) {
    // Second pass: refill the gaps with the centroid of the predicted class.
    const auto pred = argmax_rows(logits);
    for (std::size_t s = 0; s < batch.size(); ++s) {
      for (std::size_t i = 0; i < model.num_modalities(); ++i) {
        if (!mask.is_absent(s, i)) continue;
        const Matrix& cmean =
            ctx.class_mean_encoding[i][static_cast<std::size_t>(pred[s])];
        std::copy(cmean.row_ptr(0), cmean.row_ptr(0) + cmean.cols,
                  sub.encodings[i].row_ptr(s));
      }
    }
    logits = predict_from(model, sub);
  }
  return logits;
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

MissingnessReport evaluate_missingness(const FusionModel& model,
                                       const synth::MultimodalDataset& test,
                                       const std::vector<double>& rates,
                                       const SubstitutionContext& ctx,
                                       Policy policy, std::uint64_t mask_seed) {
  for (double r : rates)
    if (r < 0.0 || r >= 1.0)
      throw Error::input("evaluate_missingness: rates must lie in [0,1)");

  MissingnessReport rep;
  rep.policy = policy;
  Batch batch = full_batch(test);
  RandomStream root(mask_seed);
  std::vector<double> accs, aucs;
  for (std::size_t k = 0; k < rates.size(); ++k) {
    auto stream = root.split("mask").split(k);
    const auto mask =
        synth::sample_mask(test.num_samples(), model.num_modalities(), rates[k], stream);
    Matrix logits = predict_masked(model, batch, mask, ctx, policy);
    RateMetrics m;
    m.rate = rates[k];
    m.accuracy = accuracy(logits, batch.labels);
    m.auc = diag::macro_ovr_auc(softmax_rows(logits), batch.labels);
    accs.push_back(m.accuracy);
    aucs.push_back(m.auc);
    rep.per_rate.push_back(m);
  }
  const auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  rep.mean_accuracy = mean(accs);
  rep.std_accuracy = sample_std(accs);
  rep.mean_auc = mean(aucs);
  rep.std_auc = sample_std(aucs);
  return rep;
}

}  // namespace fuselab::subst
