// Numerical evaluation of the theory: collision bound and its empirical
// counterpart, AGOP and the polysemantic-gap bound, degree-of-polysemanticity
// probes, conjugate-feature interference, entanglement ratios, CKA, VIF, and
// the weight-space modality classifier.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "fuselab/matrix.hpp"
#include "fuselab/model.hpp"
#include "fuselab/synth.hpp"
#include "fuselab/train.hpp"

namespace fuselab::diag {

inline constexpr double kDefaultTauEnc = 0.5;

// A ledger feature pushed forward into the input space of a probed fusion
// layer (average input-Jacobian through the encoder chain, zero-padded into
// the concatenated encoding, then through any earlier fusion layers).
struct Feature {
  int modality = 0;
  int latent = 0;
  synth::LatentRole role = synth::LatentRole::noisy;
  std::vector<double> direction;  // unit vector; empty if the feature dies
};

struct FeatureSet {
  std::size_t dim = 0;
  std::vector<Feature> features;
};

FeatureSet encoded_features(const FusionModel& model,
                            const synth::MultimodalDataset& ds,
                            std::size_t fusion_layer = 0,
                            std::size_t sample_cap = 256);

// Lower bound on the cross-modal collision probability for m modalities with
// the given encoder output dims: m(m-1) (min dim)^2 / (sum dims)^2.
double collision_bound(std::size_t m, const std::vector<std::size_t>& dims);

struct CollisionRows {
  std::vector<std::uint8_t> polysemantic;  // per weight row
  double fraction = 0.0;
};

// Row-level estimator: a row collides when features from >= 2 distinct
// modalities align with it above tau.
CollisionRows collision_rows(const Matrix& weights, const FeatureSet& features,
                             double tau);

double empirical_collision_fraction(const FusionModel& model,
                                    const synth::MultimodalDataset& ds,
                                    std::size_t fusion_layer = 0,
                                    double tau_enc = kDefaultTauEnc);

// Average gradient outer product of one fusion-head layer: the sample mean of
// J(x)^T J(x) with J the Jacobian of the layer output w.r.t. its input.
Matrix agop(const FusionModel& model, const Batch& batch, std::size_t fusion_layer);
Matrix agop(const FusionModel& model, const synth::MultimodalDataset& ds,
            std::size_t fusion_layer, std::size_t sample_cap = 1000);
// Closed form for one dense layer given its input batch.
Matrix agop_of_layer(const DenseLayer& layer, const Matrix& input);

struct GradientRankSummary {
  std::vector<std::string> layer_names;
  std::vector<std::vector<std::size_t>> per_epoch;  // [epoch][layer]
  std::vector<std::size_t> first_epoch;
  std::vector<std::size_t> final_epoch;
  std::vector<std::size_t> final_agop_rank;  // per fusion layer
  double final_to_agop_ratio = 0.0;  // mean final gradient rank / mean AGOP rank
};

GradientRankSummary gradient_rank_trace(const train::TrainTrace& trace);

// A subspace of a layer's input space with the features assigned to it.
struct SubspaceProbe {
  std::size_t layer = 0;
  Matrix basis;  // dim x k, orthonormal columns
  std::vector<int> member_features;
};

// Orthonormalizes the given directions (Gram-Schmidt, near-dependent columns
// dropped).
SubspaceProbe make_subspace_probe(std::size_t layer,
                                  const std::vector<std::vector<double>>& dirs);

// Degree of polysemanticity: features whose projection onto the basis has
// norm >= tau, divided by the subspace dimension.
double gamma(const SubspaceProbe& probe, const FeatureSet& features,
             double tau_enc = kDefaultTauEnc);

struct AgopGap {
  double gap = 0.0;
  bool bound_defined = false;
  double bound = 0.0;  // gamma^(-1/n), undefined when gamma = 0
};

// Frobenius distance between the trace-normalized probe projector and the
// trace-normalized AGOP, next to the bound for iteration n.
AgopGap agop_gap(const SubspaceProbe& probe, const Matrix& agop_matrix,
                 double gamma_value, std::size_t epoch_n);

// Mean |directional derivative| of the semantic loss along the
// conjugate-predictive probe directions, pushed through the model from input
// space.
double interference_score(const FusionModel& model,
                          const synth::MultimodalDataset& ds,
                          std::size_t sample_cap = 512);

struct EntanglementRatio {
  bool defined = false;
  double ratio = 0.0;
  std::size_t polysemantic_rows = 0;
};

// Alignment of cross-modal polysemantic rows with predictive vs noisy
// features (mean |cosine| per group; 1.0 means equally aligned).
EntanglementRatio entanglement_ratio(const FusionModel& model,
                                     const synth::MultimodalDataset& ds,
                                     std::size_t fusion_layer = 0,
                                     double tau_enc = kDefaultTauEnc);
// Fixture-level form over pre-selected rows.
EntanglementRatio entanglement_ratio_rows(const Matrix& poly_rows,
                                          const FeatureSet& features);

// Centered linear CKA in [0,1]. degenerate (zero-variance input) reports as
// 0 with the flag set.
double linear_cka(const Matrix& a, const Matrix& b, bool* degenerate = nullptr);

// Mean variance inflation factor across columns; ridge eps 1e-8, capped at
// 1e6. Requires more rows than columns.
double vif_mean(const Matrix& rep);

// Macro one-vs-rest AUC from class probabilities.
double macro_ovr_auc(const Matrix& probs, const std::vector<int>& labels);

// ---- weight-space modality classifier (cross-modal polysemanticity CE) ----

struct WeightSamples {
  Matrix rows;                // one weight row per sample
  std::vector<int> modality;  // source modality per row
};

struct ModalityProbeConfig {
  std::size_t hidden1 = 32;
  std::size_t hidden2 = 16;
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double learning_rate = 0.01;
  std::uint64_t seed = 7;
};

struct ModalityProbeCe {
  double ce = 0.0;        // mean CE on the fusion head's block-restricted rows
  double train_ce = 0.0;  // final training CE of the classifier itself
};

// Trains a two-layer relu classifier on unimodal weight rows (labels = source
// modality) and evaluates its CE on the fusion head's first-layer rows
// restricted to each modality's input block. Rows are unit-normalized.
ModalityProbeCe modality_probe_ce(const WeightSamples& unimodal_samples,
                                  const FusionModel& model,
                                  const ModalityProbeConfig& cfg = {});

// ---- aggregate report ----

struct ProbeReport {
  double gamma_value = 0.0;
  double gap = 0.0;
  bool bound_defined = false;
  double bound = 0.0;
  std::size_t dim = 0;
};

struct DiagnosticsReport {
  double collision_bound = 0.0;
  double empirical_collision_fraction = 0.0;
  std::vector<Matrix> agop;  // per fusion-head layer
  std::vector<ProbeReport> subspaces;
  double interference_score = 0.0;
  bool interference_defined = false;
  EntanglementRatio entanglement;
  std::vector<double> cka;  // per modality vs fused
  double vif_mean = 0.0;
  std::optional<double> modality_probe_ce;  // filled only when samples given
  double tau_enc = kDefaultTauEnc;
  std::size_t epoch_n = 0;
};

struct ReportOptions {
  double tau_enc = kDefaultTauEnc;
  std::size_t fusion_layer = 0;
  std::size_t epoch_n = 1;            // iteration count for the gamma bound
  std::size_t max_pair_probes = 24;   // cap on gamma>=2 probes
  const WeightSamples* unimodal_samples = nullptr;
  std::uint64_t seed = 7;
};

DiagnosticsReport compute_report(const FusionModel& model,
                                 const synth::MultimodalDataset& ds,
                                 const ReportOptions& opts = {});

}  // namespace fuselab::diag
