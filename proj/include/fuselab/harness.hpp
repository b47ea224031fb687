// Experiment harness: flat key=value configuration, the experiment registry,
// seeded multi-run execution with caching, and CSV/JSON result bundles with
// provenance.
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fuselab/diagnostics.hpp"
#include "fuselab/model.hpp"
#include "fuselab/subst.hpp"
#include "fuselab/synth.hpp"
#include "fuselab/train.hpp"

namespace fuselab::harness {

extern const char* kCodeVersion;

// Flat `key = value` configuration. Later sets win; canonical form is sorted.
class KvConfig {
 public:
  static KvConfig from_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::uint64_t> get_u64_list(const std::string& key,
                                          const std::vector<std::uint64_t>& fallback) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const;

  void merge(const KvConfig& overrides);  // overrides win
  std::string canonical() const;
  std::uint64_t hash() const;
  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

struct ExperimentSpec {
  std::string id;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  KvConfig overrides;
};

struct Series {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct ResultBundle {
  std::string id;
  KvConfig config;  // resolved (defaults + overrides)
  std::uint64_t config_hash = 0;
  std::vector<std::uint64_t> seeds;
  std::string code_version;
  std::string raw_json;  // per-seed records, serialized
  std::vector<Series> series;
  bool incomplete = false;
  std::string error;
};

std::vector<std::string> list_experiments();
bool is_experiment(const std::string& id);

// Executes the experiment across seeds and writes
// <out>/<id>/{bundle.json,provenance.json,<series>.csv}. With use_cache, an
// existing bundle with the same config hash is returned as-is. A mid-run
// failure yields a bundle flagged incomplete.
ResultBundle run(const ExperimentSpec& spec, const std::string& out_dir,
                 bool use_cache = true);

// Re-emits a complete bundle in one format ("csv" or "json").
void emit(const ResultBundle& bundle, const std::string& format,
          const std::string& dir);

ResultBundle load_bundle(const std::string& dir);
void write_bundle(const ResultBundle& bundle, const std::string& dir);

// ---- shared desk-scale plumbing (also used by the acceptance suite) ----

struct DatasetPair {
  synth::MultimodalDataset train;
  synth::MultimodalDataset test;
};

struct RunRecord {
  std::shared_ptr<const DatasetPair> data;
  FusionModel model;
  train::TrainTrace trace;
  double test_accuracy = 0.0;
  // Mean AGOP gap of cross-modal pair probes, recorded at snapshot epochs.
  std::vector<std::pair<std::size_t, double>> poly_gap_by_epoch;
};

// Builds (or reuses) the dataset for (m, seed) under the resolved config.
std::shared_ptr<const DatasetPair> get_dataset(const KvConfig& cfg, std::size_t m,
                                               std::uint64_t seed,
                                               double noise_rate = 0.0,
                                               bool corrupt_test = true);

// Trains (or reuses) one run.
std::shared_ptr<const RunRecord> get_run(const KvConfig& cfg, std::size_t m,
                                         std::uint64_t seed, train::Mode mode,
                                         double beta = 0.0, double noise_rate = 0.0,
                                         train::KdSequence seq =
                                             train::KdSequence::weakest_to_strongest);

struct UnimodalRecord {
  train::UnimodalResult result;
  std::size_t rep_rank = 0;  // encoder representation rank on the test split
};

std::shared_ptr<const UnimodalRecord> get_unimodal(const KvConfig& cfg, std::size_t m,
                                                   std::uint64_t seed,
                                                   std::size_t modality,
                                                   std::size_t head_hidden,
                                                   std::uint64_t salt = 0);

train::TrainConfig train_config_from(const KvConfig& cfg, std::uint64_t seed);

// Drops every cached dataset/run (tests use this to re-execute from scratch).
void clear_run_pool();

// ---- CLI-facing operations ----

void cli_gen_data(const KvConfig& cfg, const std::string& out_dir);
void cli_train(const KvConfig& cfg, const std::string& out_dir);
void cli_diagnose(const KvConfig& cfg, const std::string& out_dir);
void cli_substitute(const KvConfig& cfg, const std::string& out_dir);

void save_dataset_csv(const synth::MultimodalDataset& ds, const std::string& dir,
                      const std::string& label_column = "label");

}  // namespace fuselab::harness
