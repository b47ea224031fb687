#include "fuselab/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fuselab/error.hpp"

namespace fuselab {

Batch full_batch(const synth::MultimodalDataset& ds) {
  Batch b;
  b.modalities = ds.observations;
  b.labels = ds.labels;
  return b;
}

Batch take_batch(const synth::MultimodalDataset& ds, const std::vector<int>& idx) {
  Batch b;
  b.modalities.reserve(ds.num_modalities());
  for (const auto& obs : ds.observations) b.modalities.push_back(take_rows(obs, idx));
  b.labels.reserve(idx.size());
  for (int i : idx) b.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
  return b;
}

void FusionModel::validate() const {
  if (encoders.empty()) throw Error::config("fusion model: no encoders");
  for (const auto& e : encoders) e.validate();
  fusion.validate();
  classifier.validate();
  std::size_t n = 0;
  if (kind == FusionKind::concat_mlp) {
    for (const auto& e : encoders) n += e.out_dim();
  } else {
    n = encoders[0].out_dim();
    for (const auto& e : encoders)
      if (e.out_dim() != n)
        throw Error::config("fusion model: mean-pool fusion needs equal encoder dims");
  }
  if (fusion.in_dim() != n)
    throw Error::config("fusion model: fusion input dim " +
                        std::to_string(fusion.in_dim()) + " != encoder sum " +
                        std::to_string(n));
  if (classifier.in_dim() != fusion.out_dim())
    throw Error::config("fusion model: classifier input dim mismatch");
  if (ebr) {
    if (ebr->h.size() != encoders.size() || ebr->h_inv.size() != encoders.size())
      throw Error::config("ebr: need one h/h_inv per modality");
    for (std::size_t i = 0; i < encoders.size(); ++i) {
      ebr->h[i].validate();
      ebr->h_inv[i].validate();
      if (ebr->h[i].in_dim() != encoders[i].out_dim())
        throw Error::config("ebr: h input dim mismatch at modality " + std::to_string(i));
      if (ebr->h[i].out_dim() != ebr->latent_dim)
        throw Error::config("ebr: h outputs must share the latent dim");
      if (ebr->h_inv[i].in_dim() != ebr->latent_dim ||
          ebr->h_inv[i].out_dim() != encoders[i].out_dim())
        throw Error::config("ebr: h_inv dims mismatch at modality " + std::to_string(i));
    }
    ebr->psi.validate();
    if (ebr->psi.in_dim() != ebr->latent_dim ||
        ebr->psi.out_dim() != encoders.size())
      throw Error::config("ebr: psi must map latent dim to one logit per modality");
  }
}

void FusionModel::require_ebr(const char* op) const {
  if (!ebr)
    throw Error::state(std::string(op) + ": EBR attachment required but absent");
}

namespace {

std::size_t scaled(std::size_t w, double f) {
  return std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(w * f)));
}

// Adds the identity on the top-left square block; combined with a small
// random init this makes h_inv(h(x)) start out close to x.
void add_identity_block(Matrix& w) {
  const std::size_t k = std::min(w.rows, w.cols);
  for (std::size_t i = 0; i < k; ++i) w(i, i) += 1.0;
}

}  // namespace

FusionModel make_fusion_model(const std::vector<std::size_t>& obs_dims,
                              std::size_t num_classes, double width_factor,
                              RandomStream& stream, bool with_ebr,
                              FusionKind kind) {
  if (obs_dims.empty()) throw Error::config("make_fusion_model: no modalities");
  if (num_classes < 2) throw Error::config("make_fusion_model: need >= 2 classes");

  const std::size_t enc_h = scaled(48, width_factor);
  const std::size_t enc_out = scaled(16, width_factor);
  const std::size_t fus_h = scaled(64, width_factor);
  const std::size_t fus_out = scaled(32, width_factor);

  FusionModel model;
  model.kind = kind;
  auto enc_stream = stream.split("encoders");
  for (std::size_t i = 0; i < obs_dims.size(); ++i) {
    auto s = enc_stream.split(i);
    model.encoders.push_back(make_mlp({obs_dims[i], enc_h, enc_out},
                                      {Activation::relu, Activation::relu}, s));
  }
  const std::size_t fus_in =
      kind == FusionKind::concat_mlp ? enc_out * obs_dims.size() : enc_out;
  auto fus_stream = stream.split("fusion");
  model.fusion = make_mlp({fus_in, fus_h, fus_out},
                          {Activation::relu, Activation::relu}, fus_stream);
  auto cls_stream = stream.split("classifier");
  model.classifier = make_mlp({fus_out, num_classes},
                              {Activation::softmax_logits}, cls_stream);
  if (with_ebr) attach_ebr(model, width_factor, stream);
  model.validate();
  return model;
}

void attach_ebr(FusionModel& model, double width_factor, RandomStream& stream) {
  if (model.ebr) throw Error::state("attach_ebr: already attached");
  EbrAttachment ebr;
  const std::size_t latent = scaled(32, width_factor);
  const std::size_t h_hidden = scaled(64, width_factor);
  const std::size_t psi_h1 = scaled(32, width_factor);
  const std::size_t psi_h2 = scaled(16, width_factor);
  ebr.latent_dim = latent;

  auto ebr_stream = stream.split("ebr");
  constexpr double kSmall = 0.05;  // keeps the attach-time pass-through tight
  for (std::size_t i = 0; i < model.num_modalities(); ++i) {
    const std::size_t enc_out = model.encoding_dim(i);
    auto hs = ebr_stream.split(2 * i);
    Mlp h = make_mlp({enc_out, h_hidden, latent},
                     {Activation::relu, Activation::relu}, hs, kSmall);
    add_identity_block(h.layers[0].weight);
    add_identity_block(h.layers[1].weight);
    auto is = ebr_stream.split(2 * i + 1);
    Mlp h_inv = make_mlp({latent, h_hidden, enc_out},
                         {Activation::relu, Activation::relu}, is, kSmall);
    add_identity_block(h_inv.layers[0].weight);
    add_identity_block(h_inv.layers[1].weight);
    ebr.h.push_back(std::move(h));
    ebr.h_inv.push_back(std::move(h_inv));
  }
  auto ps = ebr_stream.split("psi");
  ebr.psi = make_mlp({latent, psi_h1, psi_h2, model.num_modalities()},
                     {Activation::relu, Activation::relu, Activation::softmax_logits},
                     ps);
  model.ebr = std::move(ebr);
}

std::vector<Matrix> encode(const FusionModel& model, const Batch& batch) {
  if (batch.num_modalities() != model.num_modalities())
    throw Error::config("encode: batch has " +
                        std::to_string(batch.num_modalities()) +
                        " modalities, model expects " +
                        std::to_string(model.num_modalities()));
  std::vector<Matrix> out;
  out.reserve(model.num_modalities());
  for (std::size_t i = 0; i < model.num_modalities(); ++i) {
    Matrix e = forward_last(model.encoders[i], batch.modalities[i]);
    if (model.ebr) {
      e = forward_last(model.ebr->h[i], e);
      e = forward_last(model.ebr->h_inv[i], e);
    }
    out.push_back(std::move(e));
  }
  return out;
}

Matrix fusion_input(const FusionModel& model, const std::vector<Matrix>& encodings) {
  if (model.kind == FusionKind::concat_mlp) return hstack(encodings);
  Matrix mean = encodings[0];
  for (std::size_t i = 1; i < encodings.size(); ++i)
    add_scaled(mean, encodings[i], 1.0);
  scale(mean, 1.0 / static_cast<double>(encodings.size()));
  return mean;
}

FusePredict fuse_predict_encodings(const FusionModel& model,
                                   const std::vector<Matrix>& encodings) {
  FusePredict out;
  out.fused = forward_last(model.fusion, fusion_input(model, encodings));
  out.logits = forward_last(model.classifier, out.fused);
  return out;
}

FusePredict fuse_predict(const FusionModel& model, const Batch& batch) {
  return fuse_predict_encodings(model, encode(model, batch));
}

Matrix ebr_latent(const FusionModel& model, const Batch& batch, std::size_t modality) {
  model.require_ebr("ebr_latent");
  if (modality >= model.num_modalities())
    throw Error::input("ebr_latent: modality out of range");
  Matrix e = forward_last(model.encoders[modality], batch.modalities[modality]);
  return forward_last(model.ebr->h[modality], e);
}

Matrix discriminate(const FusionModel& model, const Matrix& latents) {
  model.require_ebr("discriminate");
  if (latents.cols != model.ebr->latent_dim)
    throw Error::config("discriminate: latent dim mismatch");
  return forward_last(model.ebr->psi, latents);
}

std::size_t fusion_block_offset(const FusionModel& model, std::size_t modality) {
  if (model.kind != FusionKind::concat_mlp)
    throw Error::state("fusion_block_offset: only defined for concat fusion");
  std::size_t off = 0;
  for (std::size_t i = 0; i < modality; ++i) off += model.encoding_dim(i);
  return off;
}

}  // namespace fuselab
