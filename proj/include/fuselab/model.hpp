// The fusion model family: per-modality encoders, a fusion head over the
// concatenated encodings, a classifier, and the optional basis-reallocation
// attachment (per-modality encoder-decoder heads plus a shared modality
// discriminator).
#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "fuselab/matrix.hpp"
#include "fuselab/nn.hpp"
#include "fuselab/rng.hpp"
#include "fuselab/synth.hpp"

namespace fuselab {

struct Batch {
  std::vector<Matrix> modalities;
  std::vector<int> labels;

  std::size_t size() const { return modalities.empty() ? 0 : modalities[0].rows; }
  std::size_t num_modalities() const { return modalities.size(); }
};

Batch full_batch(const synth::MultimodalDataset& ds);
Batch take_batch(const synth::MultimodalDataset& ds, const std::vector<int>& idx);

enum class FusionKind : std::uint8_t {
  concat_mlp,   // default: fusion head consumes the concatenated encodings
  mean_pool_mlp // spot-check variant: consumes the mean of the encodings
};

struct EbrAttachment {
  std::vector<Mlp> h;      // encoder-side heads, one per modality
  std::vector<Mlp> h_inv;  // decoders back to each encoder's output space
  Mlp psi;                 // modality discriminator over the shared latent
  std::size_t latent_dim = 0;
};

struct FusionModel {
  std::vector<Mlp> encoders;
  Mlp fusion;
  Mlp classifier;
  FusionKind kind = FusionKind::concat_mlp;
  std::optional<EbrAttachment> ebr;

  std::size_t num_modalities() const { return encoders.size(); }
  std::size_t num_classes() const { return classifier.out_dim(); }
  std::size_t encoding_dim(std::size_t i) const { return encoders[i].out_dim(); }
  std::size_t fused_dim() const { return fusion.out_dim(); }
  bool has_ebr() const { return ebr.has_value(); }
  void validate() const;
  void require_ebr(const char* op) const;
};

// Desk-scale builder. width_factor scales every hidden width.
FusionModel make_fusion_model(const std::vector<std::size_t>& obs_dims,
                              std::size_t num_classes, double width_factor,
                              RandomStream& stream, bool with_ebr,
                              FusionKind kind = FusionKind::concat_mlp);

// Attaches near-identity EBR heads to an existing model so the encodings are
// (approximately) unchanged at attach time.
void attach_ebr(FusionModel& model, double width_factor, RandomStream& stream);

// Per-modality encodings. With EBR attached the encoding of modality i is
// h_i_inv(h_i(f_i(x_i))); without, f_i(x_i).
std::vector<Matrix> encode(const FusionModel& model, const Batch& batch);

// Fusion-head input assembled from encodings (concat or mean pool).
Matrix fusion_input(const FusionModel& model, const std::vector<Matrix>& encodings);

struct FusePredict {
  Matrix fused;
  Matrix logits;
};

FusePredict fuse_predict(const FusionModel& model, const Batch& batch);
FusePredict fuse_predict_encodings(const FusionModel& model,
                                   const std::vector<Matrix>& encodings);

// Shared EBR latent of one modality: h_i(f_i(x_i)).
Matrix ebr_latent(const FusionModel& model, const Batch& batch, std::size_t modality);

// Discriminator logits over modalities.
Matrix discriminate(const FusionModel& model, const Matrix& latents);

// Column offset of modality i inside the concatenated fusion input.
std::size_t fusion_block_offset(const FusionModel& model, std::size_t modality);

}  // namespace fuselab
