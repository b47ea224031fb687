#include "fuselab/train.hpp"

#include <algorithm>
#include <cmath>

#include "fuselab/diagnostics.hpp"
#include "fuselab/error.hpp"
#include "fuselab/svd.hpp"

namespace fuselab::train {

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::vanilla: return "vanilla";
    case Mode::kd: return "kd";
    case Mode::ebr: return "ebr";
  }
  return "?";
}

const char* kd_sequence_name(KdSequence s) {
  switch (s) {
    case KdSequence::weakest_to_strongest: return "weakest_to_strongest";
    case KdSequence::strongest_to_weakest: return "strongest_to_weakest";
    case KdSequence::strongest_only: return "strongest_only";
    case KdSequence::random_order: return "random";
    case KdSequence::simultaneous: return "simultaneous";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "vanilla") return Mode::vanilla;
  if (s == "kd") return Mode::kd;
  if (s == "ebr") return Mode::ebr;
  throw Error::usage("unknown mode '" + s + "'");
}

KdSequence parse_kd_sequence(const std::string& s) {
  if (s == "weakest_to_strongest") return KdSequence::weakest_to_strongest;
  if (s == "strongest_to_weakest") return KdSequence::strongest_to_weakest;
  if (s == "strongest_only") return KdSequence::strongest_only;
  if (s == "random") return KdSequence::random_order;
  if (s == "simultaneous") return KdSequence::simultaneous;
  throw Error::usage("unknown kd sequence '" + s + "'");
}

void TrainConfig::validate() const {
  sgd.validate();
  if (batch_size < 1) throw Error::config("train: batch_size must be >= 1");
  if (beta < 0.0) throw Error::config("train: beta must be >= 0");
  if (kd_weight < 0.0) throw Error::config("train: kd_weight must be >= 0");
  if (ebr_interleave < 1) throw Error::config("train: ebr_interleave must be >= 1");
}

std::vector<std::size_t> strength_order(const synth::MultimodalDataset& ds) {
  ds.require_ledger("strength_order");
  std::vector<std::size_t> order(ds.num_modalities());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ds.modality_specs[a].strength < ds.modality_specs[b].strength;
  });
  return order;
}

std::size_t designated_weakest(const synth::MultimodalDataset& ds,
                               const TrainConfig& cfg) {
  if (cfg.weakest_override >= 0) {
    const auto w = static_cast<std::size_t>(cfg.weakest_override);
    if (w >= ds.num_modalities())
      throw Error::config("train: weakest_override out of range");
    return w;
  }
  return strength_order(ds)[0];
}

CosineAlign cosine_align(const Matrix& a, const Matrix& b, double weight) {
  if (!a.same_shape(b)) throw Error::config("cosine_align: shape mismatch");
  CosineAlign out;
  out.d_a = Matrix(a.rows, a.cols);
  out.d_b = Matrix(b.rows, b.cols);
  if (a.rows == 0) return out;
  const double inv_b = 1.0 / static_cast<double>(a.rows);
  constexpr double kEps = 1e-8;
  double loss = 0.0, csum = 0.0;
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double* x = a.row_ptr(r);
    const double* y = b.row_ptr(r);
    double xy = 0.0, xx = 0.0, yy = 0.0;
    for (std::size_t c = 0; c < a.cols; ++c) {
      xy += x[c] * y[c];
      xx += x[c] * x[c];
      yy += y[c] * y[c];
    }
    const double nx = std::sqrt(xx) + kEps;
    const double ny = std::sqrt(yy) + kEps;
    const double cos = xy / (nx * ny);
    loss += 1.0 - cos;
    csum += cos;
    const double s = -weight * inv_b;  // d(1-cos)/d· = -dcos/d·
    double* gx = out.d_a.row_ptr(r);
    double* gy = out.d_b.row_ptr(r);
    for (std::size_t c = 0; c < a.cols; ++c) {
      gx[c] = s * (y[c] / (nx * ny) - cos * x[c] / (nx * nx));
      gy[c] = s * (x[c] / (nx * ny) - cos * y[c] / (ny * ny));
    }
  }
  out.loss = weight * loss * inv_b;
  out.mean_cosine = csum * inv_b;
  return out;
}

namespace {

struct ChainActs {
  std::vector<Matrix> enc;
  std::vector<Matrix> h;
  std::vector<Matrix> hinv;

  const Matrix& encoding() const { return hinv.empty() ? enc.back() : hinv.back(); }
};

ChainActs chain_forward(const FusionModel& model, const Batch& batch, std::size_t i) {
  ChainActs ca;
  ca.enc = forward(model.encoders[i], batch.modalities[i]);
  if (model.ebr) {
    ca.h = forward(model.ebr->h[i], ca.enc.back());
    ca.hinv = forward(model.ebr->h_inv[i], ca.h.back());
  }
  return ca;
}

struct SemState {
  std::vector<ChainActs> chains;
  Matrix fusion_in;
  std::vector<Matrix> fus_acts;
  std::vector<Matrix> cls_acts;
  SoftmaxCeResult ce;
};

SemState sem_forward(const FusionModel& model, const Batch& batch) {
  SemState s;
  s.chains.reserve(model.num_modalities());
  std::vector<Matrix> encs;
  for (std::size_t i = 0; i < model.num_modalities(); ++i) {
    s.chains.push_back(chain_forward(model, batch, i));
    encs.push_back(s.chains.back().encoding());
  }
  s.fusion_in = fusion_input(model, encs);
  s.fus_acts = forward(model.fusion, s.fusion_in);
  s.cls_acts = forward(model.classifier, s.fus_acts.back());
  s.ce = softmax_cross_entropy(s.cls_acts.back(), batch.labels);
  return s;
}

std::vector<Matrix> split_encoding_grad(const FusionModel& model,
                                        const Matrix& d_fusion_in) {
  std::vector<Matrix> out;
  if (model.kind == FusionKind::concat_mlp) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < model.num_modalities(); ++i) {
      const std::size_t d = model.encoding_dim(i);
      out.push_back(slice_cols(d_fusion_in, off, off + d));
      off += d;
    }
  } else {
    Matrix g = d_fusion_in;
    scale(g, 1.0 / static_cast<double>(model.num_modalities()));
    out.assign(model.num_modalities(), g);
  }
  return out;
}

struct SemGrads {
  MlpGrads cls;
  MlpGrads fusion;
  std::vector<MlpGrads> enc;
  std::vector<MlpGrads> h;
  std::vector<MlpGrads> hinv;
};

// d_enc_extra may add a gradient at one modality's encoding output (the
// weakest-modality probe pressure).
SemGrads sem_backward(const FusionModel& model, const SemState& s,
                      const Matrix* d_enc_extra, std::size_t extra_modality) {
  SemGrads g;
  auto cls_bw = backward(model.classifier, s.cls_acts, s.ce.grad);
  g.cls = std::move(cls_bw.grads);
  auto fus_bw = backward(model.fusion, s.fus_acts, cls_bw.input_grad);
  g.fusion = std::move(fus_bw.grads);
  auto denc = split_encoding_grad(model, fus_bw.input_grad);
  if (d_enc_extra) add_scaled(denc[extra_modality], *d_enc_extra, 1.0);
  g.enc.resize(model.num_modalities());
  if (model.ebr) {
    g.h.resize(model.num_modalities());
    g.hinv.resize(model.num_modalities());
  }
  for (std::size_t i = 0; i < model.num_modalities(); ++i) {
    Matrix d = std::move(denc[i]);
    if (model.ebr) {
      auto hinv_bw = backward(model.ebr->h_inv[i], s.chains[i].hinv, d);
      g.hinv[i] = std::move(hinv_bw.grads);
      auto h_bw = backward(model.ebr->h[i], s.chains[i].h, hinv_bw.input_grad);
      g.h[i] = std::move(h_bw.grads);
      d = std::move(h_bw.input_grad);
    }
    auto enc_bw = backward(model.encoders[i], s.chains[i].enc, d);
    g.enc[i] = std::move(enc_bw.grads);
  }
  return g;
}

// Accumulates per-layer weight gradients across an epoch so their effective
// rank can be traced.
struct RankAccum {
  std::vector<std::string> names;
  std::vector<Matrix> sums;

  void describe(const FusionModel& model) {
    auto add = [&](const std::string& prefix, const Mlp& mlp) {
      for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        names.push_back(prefix + ".w" + std::to_string(l));
        sums.emplace_back(mlp.layers[l].out_dim(), mlp.layers[l].in_dim());
      }
    };
    for (std::size_t i = 0; i < model.num_modalities(); ++i)
      add("enc" + std::to_string(i), model.encoders[i]);
    add("fusion", model.fusion);
    add("cls", model.classifier);
  }

  void reset() {
    for (auto& s : sums) std::fill(s.data.begin(), s.data.end(), 0.0);
  }

  // Order must match describe(): encoders, fusion, classifier.
  void add_applied(const FusionModel& model, const std::vector<MlpGrads>& enc,
                   const MlpGrads* fus, const MlpGrads* cls) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < model.num_modalities(); ++i) {
      for (const auto& lg : enc[i].layers) add_scaled(sums[k++], lg.weight, 1.0);
    }
    if (fus)
      for (const auto& lg : fus->layers) add_scaled(sums[k++], lg.weight, 1.0);
    else
      k += model.fusion.layers.size();
    if (cls)
      for (const auto& lg : cls->layers) add_scaled(sums[k++], lg.weight, 1.0);
  }

  std::vector<std::size_t> ranks() const {
    std::vector<std::size_t> r;
    r.reserve(sums.size());
    for (const auto& s : sums) r.push_back(effective_rank(s));
    return r;
  }
};

Mlp make_linear_probe(std::size_t in_dim, std::size_t C, RandomStream& stream) {
  return make_mlp({in_dim, C}, {Activation::softmax_logits}, stream);
}

struct Engine {
  FusionModel& model;
  const synth::MultimodalDataset& train_ds;
  const synth::MultimodalDataset* eval_ds;
  const TrainConfig& cfg;
  const SnapshotHook& hook;

  std::size_t m = 0, C = 0, n = 0, weakest = 0;
  std::vector<Mlp> trace_probes;
  Mlp beta_probe;
  RandomStream shuffle_stream{0};
  RankAccum ranks;
  TrainTrace trace;
  Batch eval_batch;

  Engine(FusionModel& mdl, const synth::MultimodalDataset& tr,
         const synth::MultimodalDataset* ev, const TrainConfig& c,
         const SnapshotHook& hk)
      : model(mdl), train_ds(tr), eval_ds(ev), cfg(c), hook(hk) {
    cfg.validate();
    if (tr.num_samples() == 0) throw Error::input("train: empty dataset");
    if (tr.num_modalities() != model.num_modalities())
      throw Error::config("train: dataset/model modality count mismatch");
    m = model.num_modalities();
    C = model.num_classes();
    n = tr.num_samples();
    weakest = m == 1 ? 0 : designated_weakest(tr, cfg);
    RandomStream root(cfg.seed);
    shuffle_stream = root.split("shuffle");
    auto probe_stream = root.split("probes");
    for (std::size_t i = 0; i < m; ++i) {
      auto s = probe_stream.split(i);
      trace_probes.push_back(make_linear_probe(model.encoding_dim(i), C, s));
    }
    if (cfg.beta > 0.0) {
      auto s = root.split("beta-probe");
      beta_probe = make_linear_probe(model.encoding_dim(weakest), C, s);
    }
    ranks.describe(model);
    trace.layer_names = ranks.names;

    if (eval_ds) {
      eval_batch = full_batch(*eval_ds);
    } else {
      std::vector<int> idx;
      for (std::size_t i = 0; i < std::min<std::size_t>(n, 1000); ++i)
        idx.push_back(static_cast<int>(i));
      eval_batch = take_batch(train_ds, idx);
    }
  }

  void record_rep(std::size_t epoch) {
    RepRecord rec;
    rec.epoch = epoch;
    auto encs = encode(model, eval_batch);
    auto fp = fuse_predict_encodings(model, encs);
    rec.fused_rank = effective_rank(fp.fused);
    for (std::size_t i = 0; i < m; ++i)
      rec.cka.push_back(diag::linear_cka(encs[i], fp.fused));
    trace.reps.push_back(std::move(rec));
  }

  void update_trace_probes(const std::vector<const Matrix*>& encs,
                           const std::vector<int>& labels,
                           std::vector<double>& loss_sums, std::size_t epoch) {
    for (std::size_t i = 0; i < m; ++i) {
      auto acts = forward(trace_probes[i], *encs[i]);
      auto ce = softmax_cross_entropy(acts.back(), labels);
      loss_sums[i] += ce.loss;
      auto bw = backward(trace_probes[i], acts, ce.grad);
      sgd_step(trace_probes[i], bw.grads, cfg.sgd, epoch);
    }
  }

  // Returns the gradient to inject at the weakest encoding, or nullopt.
  std::optional<Matrix> beta_probe_step(const Matrix& enc_weak,
                                        const std::vector<int>& labels,
                                        std::size_t epoch) {
    if (cfg.beta <= 0.0) return std::nullopt;
    auto acts = forward(beta_probe, enc_weak);
    auto ce = softmax_cross_entropy(acts.back(), labels);
    scale(ce.grad, cfg.beta);
    auto bw = backward(beta_probe, acts, ce.grad);
    sgd_step(beta_probe, bw.grads, cfg.sgd, epoch);
    return std::move(bw.input_grad);
  }

  std::vector<int> shuffled_indices() {
    std::vector<int> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
    shuffle_stream.shuffle(idx);
    return idx;
  }

  void finish() {
    if (!trace.epochs.empty() &&
        (trace.reps.empty() || trace.reps.back().epoch != cfg.epochs - 1))
      record_rep(cfg.epochs - 1);
    for (std::size_t l = 0; l < model.fusion.layers.size(); ++l) {
      const Matrix a = diag::agop(model, eval_batch, l);
      trace.final_agop_rank.push_back(effective_rank(a));
    }
    if (hook && !trace.epochs.empty()) hook(cfg.epochs - 1, model);
  }

  void maybe_snapshot(std::size_t epoch) {
    if (!hook || cfg.snapshot_every == 0) return;
    if ((epoch + 1) % cfg.snapshot_every == 0 && epoch + 1 != cfg.epochs)
      hook(epoch, model);
  }
};

void erm_epochs(Engine& eng) {
  auto& model = eng.model;
  const auto& cfg = eng.cfg;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto idx = eng.shuffled_indices();
    eng.ranks.reset();
    double sem_sum = 0.0;
    std::vector<double> probe_sums(eng.m, 0.0);
    std::size_t batches = 0;
    for (std::size_t start = 0; start < eng.n; start += cfg.batch_size) {
      const std::size_t stop = std::min(eng.n, start + cfg.batch_size);
      std::vector<int> bidx(idx.begin() + static_cast<long>(start),
                            idx.begin() + static_cast<long>(stop));
      Batch batch = take_batch(eng.train_ds, bidx);

      SemState s = sem_forward(model, batch);
      sem_sum += s.ce.loss;
      ++batches;

      std::vector<const Matrix*> encs;
      for (const auto& ch : s.chains) encs.push_back(&ch.encoding());
      eng.update_trace_probes(encs, batch.labels, probe_sums, epoch);

      auto extra = eng.beta_probe_step(s.chains[eng.weakest].encoding(),
                                       batch.labels, epoch);
      SemGrads g = sem_backward(model, s, extra ? &*extra : nullptr, eng.weakest);

      eng.ranks.add_applied(model, g.enc, &g.fusion, &g.cls);
      sgd_step(model.classifier, g.cls, cfg.sgd, epoch);
      sgd_step(model.fusion, g.fusion, cfg.sgd, epoch);
      for (std::size_t i = 0; i < eng.m; ++i) {
        sgd_step(model.encoders[i], g.enc[i], cfg.sgd, epoch);
        if (model.ebr) {
          sgd_step(model.ebr->h[i], g.h[i], cfg.sgd, epoch);
          sgd_step(model.ebr->h_inv[i], g.hinv[i], cfg.sgd, epoch);
        }
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.l_sem = sem_sum / static_cast<double>(batches);
    rec.probe_loss = probe_sums;
    for (double& v : rec.probe_loss) v /= static_cast<double>(batches);
    rec.grad_rank = eng.ranks.ranks();
    eng.trace.epochs.push_back(std::move(rec));
    if ((epoch + 1) % cfg.trace_rep_every == 0) eng.record_rep(epoch);
    eng.maybe_snapshot(epoch);
  }
}

void ebr_epochs(Engine& eng) {
  auto& model = eng.model;
  const auto& cfg = eng.cfg;
  auto& ebr = *model.ebr;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Phases alternate every ebr_interleave epochs, semantic phase first.
    const bool md_phase = (epoch / cfg.ebr_interleave) % 2 == 1;
    const bool do_sem = cfg.ebr_simultaneous || !md_phase;
    const bool do_md = cfg.ebr_simultaneous || md_phase;

    auto idx = eng.shuffled_indices();
    eng.ranks.reset();
    double sem_sum = 0.0, md_sum = 0.0;
    std::vector<double> probe_sums(eng.m, 0.0);
    std::size_t batches = 0;
    for (std::size_t start = 0; start < eng.n; start += cfg.batch_size) {
      const std::size_t stop = std::min(eng.n, start + cfg.batch_size);
      std::vector<int> bidx(idx.begin() + static_cast<long>(start),
                            idx.begin() + static_cast<long>(stop));
      Batch batch = take_batch(eng.train_ds, bidx);

      SemState s = sem_forward(model, batch);
      sem_sum += s.ce.loss;
      ++batches;

      std::vector<const Matrix*> encs;
      for (const auto& ch : s.chains) encs.push_back(&ch.encoding());
      eng.update_trace_probes(encs, batch.labels, probe_sums, epoch);

      // Discrimination loss and its gradients (psi descends, g_i ascends).
      MlpGrads psi_md = zero_grads_like(ebr.psi);
      std::vector<MlpGrads> h_md(eng.m), enc_md(eng.m);
      for (std::size_t i = 0; i < eng.m; ++i) {
        auto psi_acts = forward(ebr.psi, s.chains[i].h.back());
        const std::vector<int> mod_labels(batch.size(), static_cast<int>(i));
        auto ce = softmax_cross_entropy(psi_acts.back(), mod_labels);
        md_sum += ce.loss;
        auto psi_bw = backward(ebr.psi, psi_acts, ce.grad);
        accumulate(psi_md, psi_bw.grads);
        auto h_bw = backward(ebr.h[i], s.chains[i].h, psi_bw.input_grad);
        auto enc_bw = backward(model.encoders[i], s.chains[i].enc, h_bw.input_grad);
        h_md[i] = std::move(h_bw.grads);
        enc_md[i] = std::move(enc_bw.grads);
      }

      std::optional<Matrix> extra;
      if (do_sem)
        extra = eng.beta_probe_step(s.chains[eng.weakest].encoding(),
                                    batch.labels, epoch);
      SemGrads g = sem_backward(model, s, extra ? &*extra : nullptr, eng.weakest);

      // g_i (encoder plus h) follows -grad(L_sem) + grad(L_md); the sgd step
      // negates, so the combined gradient is sem - md.
      std::vector<MlpGrads> enc_step(eng.m), h_step(eng.m);
      for (std::size_t i = 0; i < eng.m; ++i) {
        enc_step[i] = zero_grads_like(model.encoders[i]);
        h_step[i] = zero_grads_like(ebr.h[i]);
        if (do_sem) {
          accumulate(enc_step[i], g.enc[i]);
          accumulate(h_step[i], g.h[i]);
        }
        if (do_md) {
          accumulate(enc_step[i], enc_md[i], -1.0);
          accumulate(h_step[i], h_md[i], -1.0);
        }
      }

      eng.ranks.add_applied(model, enc_step, do_sem ? &g.fusion : nullptr,
                            do_sem ? &g.cls : nullptr);

      if (do_md) sgd_step(ebr.psi, psi_md, cfg.sgd, epoch);
      if (do_sem) {
        sgd_step(model.classifier, g.cls, cfg.sgd, epoch);
        sgd_step(model.fusion, g.fusion, cfg.sgd, epoch);
        for (std::size_t i = 0; i < eng.m; ++i)
          sgd_step(model.ebr->h_inv[i], g.hinv[i], cfg.sgd, epoch);
      }
      for (std::size_t i = 0; i < eng.m; ++i) {
        sgd_step(model.encoders[i], enc_step[i], cfg.sgd, epoch);
        sgd_step(ebr.h[i], h_step[i], cfg.sgd, epoch);
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.l_sem = sem_sum / static_cast<double>(batches);
    rec.l_md = md_sum / static_cast<double>(batches);
    rec.probe_loss = probe_sums;
    for (double& v : rec.probe_loss) v /= static_cast<double>(batches);
    rec.grad_rank = eng.ranks.ranks();
    eng.trace.epochs.push_back(std::move(rec));
    if ((epoch + 1) % cfg.trace_rep_every == 0) eng.record_rep(epoch);
    eng.maybe_snapshot(epoch);
  }
}

}  // namespace

TrainResult train_vanilla(FusionModel model, const synth::MultimodalDataset& train,
                          const synth::MultimodalDataset* eval,
                          const TrainConfig& cfg, const SnapshotHook& hook) {
  Engine eng(model, train, eval, cfg, hook);
  if (cfg.epochs > 0) {
    erm_epochs(eng);
    eng.finish();
  }
  return {std::move(model), std::move(eng.trace)};
}

TrainResult train_ebr(FusionModel model, const synth::MultimodalDataset& train,
                      const synth::MultimodalDataset* eval, const TrainConfig& cfg,
                      const SnapshotHook& hook) {
  model.require_ebr("train_ebr");
  Engine eng(model, train, eval, cfg, hook);
  if (cfg.epochs > 0) {
    ebr_epochs(eng);
    eng.finish();
  }
  return {std::move(model), std::move(eng.trace)};
}

UnimodalResult train_unimodal(const synth::MultimodalDataset& train,
                              std::size_t modality, std::size_t num_classes,
                              std::size_t head_hidden, const TrainConfig& cfg) {
  if (modality >= train.num_modalities())
    throw Error::input("train_unimodal: modality out of range");
  if (train.num_samples() == 0) throw Error::input("train_unimodal: empty dataset");
  const Matrix& X = train.observations[modality];

  RandomStream root(cfg.seed);
  auto init = root.split("unimodal-init");
  const auto enc_h = std::max<std::size_t>(2, static_cast<std::size_t>(48));
  const auto enc_out = std::max<std::size_t>(2, static_cast<std::size_t>(16));
  UnimodalResult res;
  res.encoder = make_mlp({X.cols, enc_h, enc_out},
                         {Activation::relu, Activation::relu}, init);
  auto head_init = root.split("unimodal-head");
  if (head_hidden == 0) {
    res.head = make_mlp({enc_out, num_classes}, {Activation::softmax_logits},
                        head_init);
  } else {
    res.head = make_mlp({enc_out, head_hidden, num_classes},
                        {Activation::relu, Activation::softmax_logits}, head_init);
  }

  auto shuffle_stream = root.split("shuffle");
  const std::size_t n = train.num_samples();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
    shuffle_stream.shuffle(idx);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      std::vector<int> bidx(idx.begin() + static_cast<long>(start),
                            idx.begin() + static_cast<long>(stop));
      Matrix xb = take_rows(X, bidx);
      std::vector<int> yb;
      yb.reserve(bidx.size());
      for (int r : bidx) yb.push_back(train.labels[static_cast<std::size_t>(r)]);

      auto enc_acts = forward(res.encoder, xb);
      auto head_acts = forward(res.head, enc_acts.back());
      auto ce = softmax_cross_entropy(head_acts.back(), yb);
      sum += ce.loss;
      ++batches;
      auto head_bw = backward(res.head, head_acts, ce.grad);
      auto enc_bw = backward(res.encoder, enc_acts, head_bw.input_grad);
      sgd_step(res.head, head_bw.grads, cfg.sgd, epoch);
      sgd_step(res.encoder, enc_bw.grads, cfg.sgd, epoch);
    }
    res.loss_curve.push_back(sum / static_cast<double>(batches));
  }
  res.final_loss = res.loss_curve.empty() ? 0.0 : res.loss_curve.back();
  return res;
}

TrainResult train_kd(FusionModel model, const synth::MultimodalDataset& train,
                     const synth::MultimodalDataset* eval, const TrainConfig& cfg,
                     const SnapshotHook& hook) {
  cfg.validate();
  if (train.num_samples() == 0) throw Error::input("train_kd: empty dataset");
  if (model.num_modalities() < 2)
    throw Error::config("train_kd: need >= 2 modalities");

  const std::size_t student = designated_weakest(train, cfg);
  auto order = strength_order(train);  // weakest .. strongest
  std::vector<std::size_t> teachers;
  for (auto i : order)
    if (i != student) teachers.push_back(i);

  RandomStream root(cfg.seed);
  std::vector<std::size_t> sequence;
  switch (cfg.kd_sequence) {
    case KdSequence::weakest_to_strongest:
    case KdSequence::simultaneous:
      sequence = teachers;
      break;
    case KdSequence::strongest_to_weakest:
      sequence.assign(teachers.rbegin(), teachers.rend());
      break;
    case KdSequence::strongest_only:
      sequence = {teachers.back()};
      break;
    case KdSequence::random_order: {
      std::vector<int> si(teachers.begin(), teachers.end());
      auto s = root.split("kd-seq");
      s.shuffle(si);
      sequence.assign(si.begin(), si.end());
      break;
    }
  }
  for (std::size_t t : sequence)
    if (t >= model.num_modalities())
      throw Error::config("train_kd: sequence references unknown modality");

  // Stage 0: unimodal teachers, trained on copies; the fusion model itself is
  // untouched so kd_weight = 0 reduces exactly to the vanilla run.
  std::vector<Mlp> teacher_enc(model.num_modalities());
  for (std::size_t t : sequence) {
    if (!teacher_enc[t].layers.empty()) continue;
    TrainConfig tcfg = cfg;
    tcfg.epochs = cfg.kd_teacher_epochs;
    tcfg.seed = root.split("kd-teacher").split(t).seed();
    teacher_enc[t] =
        train_unimodal(train, t, model.num_classes(), 0, tcfg).encoder;
  }

  // Stage 1: align the student encoder to each teacher through a learned
  // linear projection. No weight decay here: with kd_weight = 0 the stage
  // must be an exact no-op.
  TrainTrace trace;
  SgdConfig align_sgd = cfg.sgd;
  align_sgd.weight_decay = 0.0;
  const Matrix& Xs = train.observations[student];
  const std::size_t n = train.num_samples();
  auto align_shuffle = root.split("kd-align-shuffle");

  auto align_to = [&](const std::vector<std::size_t>& batch_teachers,
                      std::size_t pass) {
    std::vector<Mlp> projections(model.num_modalities());
    for (std::size_t t : batch_teachers) {
      auto ps = root.split("kd-proj").split(pass).split(t);
      projections[t] = make_mlp({teacher_enc[t].out_dim(),
                                 model.encoders[student].out_dim()},
                                {Activation::identity}, ps);
    }
    double last_cos = 0.0;
    for (std::size_t epoch = 0; epoch < cfg.kd_align_epochs; ++epoch) {
      std::vector<int> idx(n);
      for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
      align_shuffle.shuffle(idx);
      double cos_sum = 0.0;
      std::size_t batches = 0;
      for (std::size_t start = 0; start < n; start += cfg.batch_size) {
        const std::size_t stop = std::min(n, start + cfg.batch_size);
        std::vector<int> bidx(idx.begin() + static_cast<long>(start),
                              idx.begin() + static_cast<long>(stop));
        Matrix xs = take_rows(Xs, bidx);
        auto s_acts = forward(model.encoders[student], xs);
        MlpGrads student_step = zero_grads_like(model.encoders[student]);
        double ccos = 0.0;
        for (std::size_t t : batch_teachers) {
          Matrix xt = take_rows(train.observations[t], bidx);
          Matrix tenc = forward_last(teacher_enc[t], xt);
          auto p_acts = forward(projections[t], tenc);
          auto ca = cosine_align(s_acts.back(), p_acts.back(), cfg.kd_weight);
          ccos += ca.mean_cosine;
          auto s_bw = backward(model.encoders[student], s_acts, ca.d_a);
          accumulate(student_step, s_bw.grads);
          auto p_bw = backward(projections[t], p_acts, ca.d_b);
          sgd_step(projections[t], p_bw.grads, align_sgd, epoch);
        }
        sgd_step(model.encoders[student], student_step, align_sgd, epoch);
        cos_sum += ccos / static_cast<double>(batch_teachers.size());
        ++batches;
      }
      last_cos = cos_sum / static_cast<double>(batches);
    }
    trace.kd_align_cosine.push_back(last_cos);
  };

  if (cfg.kd_sequence == KdSequence::simultaneous) {
    align_to(sequence, 0);
  } else {
    for (std::size_t p = 0; p < sequence.size(); ++p)
      align_to({sequence[p]}, p);
  }

  // Stage 2: ordinary end-to-end training from the distilled initialization.
  Engine eng(model, train, eval, cfg, hook);
  eng.trace.kd_align_cosine = std::move(trace.kd_align_cosine);
  if (cfg.epochs > 0) {
    erm_epochs(eng);
    eng.finish();
  }
  return {std::move(model), std::move(eng.trace)};
}

TrainResult run_training(FusionModel model, const synth::MultimodalDataset& train,
                         const synth::MultimodalDataset* eval,
                         const TrainConfig& cfg, const SnapshotHook& hook) {
  switch (cfg.mode) {
    case Mode::vanilla:
      return train_vanilla(std::move(model), train, eval, cfg, hook);
    case Mode::kd:
      return train_kd(std::move(model), train, eval, cfg, hook);
    case Mode::ebr:
      return train_ebr(std::move(model), train, eval, cfg, hook);
  }
  throw Error::config("run_training: bad mode");
}

}  // namespace fuselab::train
