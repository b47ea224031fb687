// Test-time missing-modality handling: similarity ranking over the shared
// latents, substitution policies for absent modalities, and the masked
// evaluation loop.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fuselab/model.hpp"
#include "fuselab/synth.hpp"

namespace fuselab::subst {

enum class Policy : std::uint8_t {
  ebr_ranked,
  zeros,
  random_noise,
  nearest_rep,
  train_average,
  late_fusion_drop,
};

const char* policy_name(Policy p);
Policy parse_policy(const std::string& s);

struct ModalityRanking {
  std::size_t reference = 0;
  std::vector<std::size_t> order;   // other modalities, most similar first
  std::vector<double> similarity;   // aligned with order
};

// Mean cosine between each modality's shared latent and the reference's,
// over all samples. Needs EBR.
ModalityRanking rank_modalities(const FusionModel& model,
                                const synth::MultimodalDataset& ds,
                                std::size_t reference);

// Per-class and unconditional training-set encoding statistics used by the
// centroid-based policies.
struct SubstitutionContext {
  ModalityRanking ranking;
  std::vector<Matrix> mean_encoding;        // per modality, 1 x enc_dim
  std::vector<std::vector<Matrix>> class_mean_encoding;  // [modality][class]
  bool average_uses_class = true;  // train_average conditions on the predicted class
  std::uint64_t seed = 99;         // for the random policy
};

SubstitutionContext make_substitution_context(const FusionModel& model,
                                              const synth::MultimodalDataset& train,
                                              std::size_t reference,
                                              std::size_t num_classes);

struct Substituted {
  std::vector<Matrix> encodings;     // present entries bitwise untouched
  std::vector<double> fusion_scale;  // per sample; != 1 only for late fusion drop
};

Substituted substitute(const FusionModel& model, const Batch& batch,
                       const synth::MissingnessMask& mask,
                       const SubstitutionContext& ctx, Policy policy);

// Logits under a mask (applies the per-sample fusion rescale when present).
Matrix predict_masked(const FusionModel& model, const Batch& batch,
                      const synth::MissingnessMask& mask,
                      const SubstitutionContext& ctx, Policy policy);

struct RateMetrics {
  double rate = 0.0;
  double accuracy = 0.0;
  double auc = 0.0;
};

struct MissingnessReport {
  Policy policy = Policy::zeros;
  std::vector<RateMetrics> per_rate;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_auc = 0.0;
  double std_auc = 0.0;
};

MissingnessReport evaluate_missingness(const FusionModel& model,
                                       const synth::MultimodalDataset& test,
                                       const std::vector<double>& rates,
                                       const SubstitutionContext& ctx,
                                       Policy policy, std::uint64_t mask_seed);

// Sample standard deviation (n-1); the aggregate across rates.
double sample_std(const std::vector<double>& v);

}  // namespace fuselab::subst
