// Training regimes: vanilla multimodal ERM, cross-modal knowledge
// distillation with teacher sequencing, and the adversarial basis
// reallocation schedule. One run owns its model; everything is seeded.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fuselab/model.hpp"
#include "fuselab/nn.hpp"
#include "fuselab/synth.hpp"

namespace fuselab::train {

enum class Mode : std::uint8_t { vanilla, kd, ebr };

enum class KdSequence : std::uint8_t {
  weakest_to_strongest,
  strongest_to_weakest,
  strongest_only,
  random_order,
  simultaneous,
};

const char* mode_name(Mode m);
const char* kd_sequence_name(KdSequence s);
Mode parse_mode(const std::string& s);
KdSequence parse_kd_sequence(const std::string& s);

struct TrainConfig {
  Mode mode = Mode::vanilla;
  std::size_t epochs = 300;
  std::size_t batch_size = 128;
  SgdConfig sgd{0.01, 1e-3, 0.9, 100};
  double beta = 0.0;                // weight of the weakest-modality probe loss
  KdSequence kd_sequence = KdSequence::weakest_to_strongest;
  double kd_weight = 1.0;
  std::size_t kd_teacher_epochs = 120;
  std::size_t kd_align_epochs = 60;
  std::size_t ebr_interleave = 10;  // epochs per adversarial/semantic phase
  bool ebr_simultaneous = false;    // run both update groups every step
  double noise_rate = 0.0;          // recorded for provenance
  std::uint64_t seed = 1;
  int weakest_override = -1;        // -1: take the lowest-strength modality
  std::size_t trace_rep_every = 10; // cadence of representation snapshots
  std::size_t snapshot_every = 0;   // cadence of the snapshot hook (0: final only)

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 0-based index of the completed epoch
  double l_sem = 0.0;     // running mean of CE(y_hat, y) over the epoch
  double l_md = 0.0;      // running mean of the discrimination loss (EBR only)
  std::vector<double> probe_loss;      // per modality, detached linear probes
  std::vector<std::size_t> grad_rank;  // per tracked layer, accumulated dW rank
};

struct RepRecord {
  std::size_t epoch = 0;
  std::size_t fused_rank = 0;
  std::vector<double> cka;  // per modality encoding vs fused representation
};

struct TrainTrace {
  std::vector<std::string> layer_names;  // order of EpochRecord::grad_rank
  std::vector<EpochRecord> epochs;
  std::vector<RepRecord> reps;
  std::vector<std::size_t> final_agop_rank;  // per fusion-head layer
  std::vector<double> kd_align_cosine;       // per teacher, end of alignment

  bool operator==(const TrainTrace&) const = default;
};

using SnapshotHook =
    std::function<void(std::size_t epoch, const FusionModel& model)>;

struct TrainResult {
  FusionModel model;
  TrainTrace trace;
};

// eval may be null; representation snapshots then use a train subsample.
TrainResult train_vanilla(FusionModel model, const synth::MultimodalDataset& train,
                          const synth::MultimodalDataset* eval,
                          const TrainConfig& cfg, const SnapshotHook& hook = {});

TrainResult train_kd(FusionModel model, const synth::MultimodalDataset& train,
                     const synth::MultimodalDataset* eval, const TrainConfig& cfg,
                     const SnapshotHook& hook = {});

TrainResult train_ebr(FusionModel model, const synth::MultimodalDataset& train,
                      const synth::MultimodalDataset* eval, const TrainConfig& cfg,
                      const SnapshotHook& hook = {});

// Dispatch on cfg.mode.
TrainResult run_training(FusionModel model, const synth::MultimodalDataset& train,
                         const synth::MultimodalDataset* eval,
                         const TrainConfig& cfg, const SnapshotHook& hook = {});

// Unimodal reference: encoder plus a classification head trained directly on
// one modality. head_hidden = 0 gives a linear head.
struct UnimodalResult {
  Mlp encoder;
  Mlp head;
  std::vector<double> loss_curve;  // per-epoch running CE
  double final_loss = 0.0;
};

UnimodalResult train_unimodal(const synth::MultimodalDataset& train,
                              std::size_t modality, std::size_t num_classes,
                              std::size_t head_hidden, const TrainConfig& cfg);

// Modalities ordered weakest to strongest (ledger strength; probe ranking
// would be the fallback for ledgerless data, which trainers reject anyway).
std::vector<std::size_t> strength_order(const synth::MultimodalDataset& ds);
std::size_t designated_weakest(const synth::MultimodalDataset& ds,
                               const TrainConfig& cfg);

// Versioned binary checkpoint (magic, version, shape table, raw little-endian
// payload, checksum).
void checkpoint(const FusionModel& model, const TrainTrace& trace,
                const std::string& path);

struct Restored {
  FusionModel model;
  TrainTrace trace;
};

Restored restore(const std::string& path);

// Mean (1 - cosine) between rows plus gradients; the distillation distance.
struct CosineAlign {
  double loss = 0.0;
  double mean_cosine = 0.0;
  Matrix d_a;
  Matrix d_b;
};
CosineAlign cosine_align(const Matrix& a, const Matrix& b, double weight);

}  // namespace fuselab::train
