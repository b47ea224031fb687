// Synthetic multimodal data with a ground-truth feature ledger: which latent
// is predictive, which is noise, and which pairs cancel each other's label
// information. Every diagnostic in the repo gets its oracle from here.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fuselab/matrix.hpp"
#include "fuselab/rng.hpp"

namespace fuselab::synth {

enum class LatentRole : std::uint8_t {
  predictive,
  noisy,
  conjugate_predictive,
  conjugate_noisy,
};

bool is_predictive_role(LatentRole r);
const char* role_name(LatentRole r);

struct LatentSpec {
  std::size_t num_classes = 0;
  std::vector<LatentRole> roles;                    // one per latent
  std::vector<std::pair<int, int>> conjugate_pairs; // (predictive, noisy) latent ids
  Matrix class_means;                 // num_classes x latent_dim; zero rows for noise
  std::vector<double> latent_sigma;   // per-latent draw scale

  std::size_t latent_dim() const { return roles.size(); }
  void validate() const;
};

struct ModalitySpec {
  std::size_t modality_id = 0;
  std::size_t obs_dim = 0;
  Matrix mixing;                  // obs_dim x latent_dim, unit-norm rows
  std::vector<int> latent_subset; // latents this modality observes
  double strength = 0.0;          // fraction of observed latents that predict
  double noise_rate = 0.0;        // intended train-time corruption rate

  void validate(const LatentSpec& latent) const;
};

struct LedgerEntry {
  int modality = 0;
  int latent = 0;
  LatentRole role = LatentRole::noisy;
  std::vector<double> probe;  // unit direction in observation space
};

struct MultimodalDataset {
  std::vector<Matrix> observations;  // per modality, n x obs_dim
  std::vector<int> labels;
  std::vector<LedgerEntry> ledger;   // empty for externally loaded data
  LatentSpec latent_spec;            // empty for externally loaded data
  std::vector<ModalitySpec> modality_specs;
  Matrix latents;                    // n x latent_dim; kept for oracle tests

  std::size_t num_samples() const { return labels.size(); }
  std::size_t num_modalities() const { return observations.size(); }
  std::size_t num_classes() const;
  bool has_ledger() const { return !ledger.empty(); }
  // Throws a state error when the ledger is required but absent.
  void require_ledger(const char* op) const;
  std::vector<std::size_t> obs_dims() const;
  // Index of the lowest-strength modality (ledger datasets only).
  std::size_t weakest_modality() const;
  std::size_t strongest_modality() const;
};

struct MissingnessMask {
  std::size_t n = 0;
  std::size_t m = 0;
  double rate = 0.0;
  std::vector<std::uint8_t> absent;  // n*m, row-major

  bool is_absent(std::size_t sample, std::size_t modality) const {
    return absent[sample * m + modality] != 0;
  }
};

MultimodalDataset generate(const LatentSpec& spec,
                           const std::vector<ModalitySpec>& modalities,
                           std::size_t n, RandomStream& stream);

// Additive uniform noise on a noise_rate fraction of coordinates of one
// modality, amplitude matched to the per-coordinate empirical std.
MultimodalDataset inject_noise(const MultimodalDataset& ds, std::size_t modality,
                               double noise_rate, RandomStream& stream);

// I.i.d. Bernoulli(rate) absence; rows that came out fully absent get one
// uniformly chosen modality flipped back to present.
MissingnessMask sample_mask(std::size_t n, std::size_t m, double rate,
                            RandomStream& stream);

// One numeric CSV per modality, row-aligned, with a shared label column.
// The loaded dataset has no ledger; diagnostics that need one will refuse it.
MultimodalDataset load_csv(const std::vector<std::string>& paths,
                           const std::string& label_column);

// Desk-scale recipe: modality 0 is the strongest, modality m-1 the weakest
// (it owns the conjugate pair). Returns specs ready for generate().
struct DeskRecipeResult {
  LatentSpec latent;
  std::vector<ModalitySpec> modalities;
};
DeskRecipeResult make_desk_specs(std::size_t m, std::size_t num_classes,
                                 RandomStream& stream);

// First index: samples of each modality restricted to rows of `mask` present.
Matrix onehot(const std::vector<int>& labels, std::size_t num_classes);

}  // namespace fuselab::synth
