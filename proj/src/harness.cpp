#include "fuselab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fuselab/error.hpp"
#include "fuselab/svd.hpp"
#include "harness_detail.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace fuselab::harness {

const char* kCodeVersion = "fuselab 1.0.0";

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

KvConfig KvConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error::input("config: cannot open " + path);
  KvConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error::usage("config: " + path + ":" + std::to_string(lineno) +
                         ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw Error::usage("config: " + path + ":" + std::to_string(lineno) +
                         ": empty key");
    cfg.set(key, value);
  }
  return cfg;
}

void KvConfig::set(const std::string& key, const std::string& value) {
  kv_[key] = value;
}

bool KvConfig::has(const std::string& key) const { return kv_.count(key) > 0; }

std::string KvConfig::get(const std::string& key, const std::string& fallback) const {
  const auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  const auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw Error::usage("config: key '" + key + "' is not a number: " + it->second);
  }
}

std::size_t KvConfig::get_size(const std::string& key, std::size_t fallback) const {
  const double v = get_double(key, static_cast<double>(fallback));
  if (v < 0 || v != std::floor(v))
    throw Error::usage("config: key '" + key + "' is not a count");
  return static_cast<std::size_t>(v);
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  const auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw Error::usage("config: key '" + key + "' is not a bool: " + it->second);
}

namespace {

std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

std::vector<std::uint64_t> KvConfig::get_u64_list(
    const std::string& key, const std::vector<std::uint64_t>& fallback) const {
  const auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::vector<std::uint64_t> out;
  for (const auto& item : split_csv_list(it->second)) {
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw Error::usage("config: key '" + key + "' has non-integer item: " + item);
    }
  }
  if (out.empty()) throw Error::usage("config: key '" + key + "' is empty");
  return out;
}

std::vector<double> KvConfig::get_double_list(
    const std::string& key, const std::vector<double>& fallback) const {
  const auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::vector<double> out;
  for (const auto& item : split_csv_list(it->second)) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error::usage("config: key '" + key + "' has non-numeric item: " + item);
    }
  }
  if (out.empty()) throw Error::usage("config: key '" + key + "' is empty");
  return out;
}

void KvConfig::merge(const KvConfig& overrides) {
  for (const auto& [k, v] : overrides.kv_) kv_[k] = v;
}

std::string KvConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : kv_) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

std::uint64_t KvConfig::hash() const { return fnv1a64(canonical()); }

// ---------------------------------------------------------------------------
// Defaults and shared plumbing
// ---------------------------------------------------------------------------

namespace {

KvConfig defaults() {
  KvConfig c;
  c.set("modalities", "3");
  c.set("classes", "4");
  c.set("n_train", "4000");
  c.set("n_test", "1000");
  c.set("epochs", "300");
  c.set("batch_size", "128");
  c.set("lr", "0.01");
  c.set("weight_decay", "0.001");
  c.set("lr_decay_factor", "0.9");
  c.set("lr_decay_every", "100");
  c.set("width_factor", "1");
  c.set("mode", "vanilla");
  c.set("beta", "0");
  c.set("kd_sequence", "weakest_to_strongest");
  c.set("kd_weight", "1");
  c.set("kd_teacher_epochs", "120");
  c.set("kd_align_epochs", "60");
  c.set("ebr_interleave", "10");
  c.set("ebr_simultaneous", "false");
  c.set("noise_rate", "0");
  c.set("seed", "1");
  c.set("trace_rep_every", "10");
  c.set("snapshot_every", "50");
  c.set("tau_enc", "0.5");
  c.set("unimodal_epochs", "300");
  c.set("rates", "0.1,0.2,0.3,0.4,0.7");
  c.set("policy", "ebr_ranked");
  c.set("label_column", "label");
  c.set("fig4_m", "3");
  c.set("fig4_betas", "0,2,4,6,8");
  c.set("fig5_m", "3");
  c.set("fig6_m", "2");
  c.set("fig6_rates", "0.05,0.275,0.5");
  c.set("fig6_corrupt_test", "true");
  c.set("tab5_m", "4");
  c.set("tab6_m", "4");
  c.set("tab9_m", "2");
  c.set("tab9_head_hidden", "32");
  c.set("tab9_reps", "3");
  c.set("thm_m", "3");
  c.set("sweep_min_m", "2");
  c.set("sweep_max_m", "5");
  return c;
}

struct Pools {
  std::map<std::string, std::shared_ptr<const DatasetPair>> datasets;
  std::map<std::string, std::shared_ptr<const RunRecord>> runs;
  std::map<std::string, std::shared_ptr<const UnimodalRecord>> unimodal;
};

Pools& pools() {
  static Pools p;
  return p;
}

// Mean AGOP gap over cross-modal feature-pair probes; the thm2/thm3 quantity.
double mean_pair_gap(const FusionModel& model, const synth::MultimodalDataset& ds,
                     std::size_t epoch_n, double tau, std::size_t max_pairs = 24) {
  const auto feats = diag::encoded_features(model, ds, 0);
  const Matrix a = diag::agop(model, ds, 0);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < feats.features.size() && count < max_pairs; ++i) {
    for (std::size_t j = i + 1; j < feats.features.size() && count < max_pairs; ++j) {
      const auto& fa = feats.features[i];
      const auto& fb = feats.features[j];
      if (fa.modality == fb.modality) continue;
      if (fa.direction.empty() || fb.direction.empty()) continue;
      std::vector<double> dir(feats.dim);
      for (std::size_t k = 0; k < feats.dim; ++k)
        dir[k] = fa.direction[k] + fb.direction[k];
      const double nrm = norm2(dir);
      if (nrm < 1e-10) continue;
      for (double& v : dir) v /= nrm;
      const auto probe = diag::make_subspace_probe(0, {dir});
      const double g = diag::gamma(probe, feats, tau);
      sum += diag::agop_gap(probe, a, g, epoch_n).gap;
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace

train::TrainConfig train_config_from(const KvConfig& cfg, std::uint64_t seed) {
  train::TrainConfig tc;
  tc.mode = train::parse_mode(cfg.get("mode", "vanilla"));
  tc.epochs = cfg.get_size("epochs", 300);
  tc.batch_size = cfg.get_size("batch_size", 128);
  tc.sgd.learning_rate = cfg.get_double("lr", 0.01);
  tc.sgd.weight_decay = cfg.get_double("weight_decay", 1e-3);
  tc.sgd.decay_factor = cfg.get_double("lr_decay_factor", 0.9);
  tc.sgd.decay_every = cfg.get_size("lr_decay_every", 100);
  tc.beta = cfg.get_double("beta", 0.0);
  tc.kd_sequence = train::parse_kd_sequence(
      cfg.get("kd_sequence", "weakest_to_strongest"));
  tc.kd_weight = cfg.get_double("kd_weight", 1.0);
  tc.kd_teacher_epochs = cfg.get_size("kd_teacher_epochs", 120);
  tc.kd_align_epochs = cfg.get_size("kd_align_epochs", 60);
  tc.ebr_interleave = cfg.get_size("ebr_interleave", 10);
  tc.ebr_simultaneous = cfg.get_bool("ebr_simultaneous", false);
  tc.noise_rate = cfg.get_double("noise_rate", 0.0);
  tc.seed = seed;
  tc.trace_rep_every = cfg.get_size("trace_rep_every", 10);
  tc.snapshot_every = cfg.get_size("snapshot_every", 50);
  return tc;
}

std::shared_ptr<const DatasetPair> get_dataset(const KvConfig& cfg, std::size_t m,
                                               std::uint64_t seed, double noise_rate,
                                               bool corrupt_test) {
  const std::size_t C = cfg.get_size("classes", 4);
  const std::size_t n_train = cfg.get_size("n_train", 4000);
  const std::size_t n_test = cfg.get_size("n_test", 1000);
  std::string key = "m" + std::to_string(m) + "|s" + std::to_string(seed) + "|C" +
                    std::to_string(C) + "|a" + std::to_string(n_train) + "|b" +
                    std::to_string(n_test) + "|nz" + format_g17(noise_rate) +
                    "|ct" + (corrupt_test ? "1" : "0");
  auto& slot = pools().datasets[key];
  if (slot) return slot;

  RandomStream root(seed);
  auto spec_stream = root.split("data-spec").split(m);
  auto recipe = synth::make_desk_specs(m, C, spec_stream);
  auto gen_stream = root.split("data-gen").split(m);
  auto pair = std::make_shared<DatasetPair>();
  pair->train = synth::generate(recipe.latent, recipe.modalities, n_train, gen_stream);
  pair->test = synth::generate(recipe.latent, recipe.modalities, n_test, gen_stream);
  if (noise_rate > 0.0) {
    const std::size_t weakest = pair->train.weakest_modality();
    auto tr_stream = root.split("noise-train");
    pair->train = synth::inject_noise(pair->train, weakest, noise_rate, tr_stream);
    if (corrupt_test) {
      auto te_stream = root.split("noise-test");
      pair->test = synth::inject_noise(pair->test, weakest, noise_rate, te_stream);
    }
  }
  slot = pair;
  return pair;
}

std::shared_ptr<const RunRecord> get_run(const KvConfig& cfg, std::size_t m,
                                         std::uint64_t seed, train::Mode mode,
                                         double beta, double noise_rate,
                                         train::KdSequence seq) {
  const bool corrupt_test = cfg.get_bool("fig6_corrupt_test", true);
  std::string key = std::string(train::mode_name(mode)) + "|m" + std::to_string(m) +
                    "|s" + std::to_string(seed) + "|b" + format_g17(beta) + "|nz" +
                    format_g17(noise_rate) + "|q" + train::kd_sequence_name(seq) +
                    "|h" + std::to_string(cfg.hash());
  auto& slot = pools().runs[key];
  if (slot) return slot;

  auto data = get_dataset(cfg, m, seed, noise_rate, corrupt_test);
  train::TrainConfig tc = train_config_from(cfg, seed);
  tc.mode = mode;
  tc.beta = beta;
  tc.noise_rate = noise_rate;
  tc.kd_sequence = seq;

  auto model_stream = RandomStream(seed).split("model").split(m);
  FusionModel model = make_fusion_model(data->train.obs_dims(),
                                        cfg.get_size("classes", 4),
                                        cfg.get_double("width_factor", 1.0),
                                        model_stream, mode == train::Mode::ebr);

  auto rec = std::make_shared<RunRecord>();
  rec->data = data;
  const double tau = cfg.get_double("tau_enc", diag::kDefaultTauEnc);
  auto hook = [&](std::size_t epoch, const FusionModel& mdl) {
    rec->poly_gap_by_epoch.push_back(
        {epoch, mean_pair_gap(mdl, data->test, epoch + 1, tau)});
  };
  auto result = train::run_training(std::move(model), data->train, &data->test, tc,
                                    hook);
  rec->model = std::move(result.model);
  rec->trace = std::move(result.trace);
  Batch test_batch = full_batch(data->test);
  rec->test_accuracy =
      accuracy(fuse_predict(rec->model, test_batch).logits, test_batch.labels);
  slot = rec;
  return slot;
}

std::shared_ptr<const UnimodalRecord> get_unimodal(const KvConfig& cfg, std::size_t m,
                                                   std::uint64_t seed,
                                                   std::size_t modality,
                                                   std::size_t head_hidden,
                                                   std::uint64_t salt) {
  std::string key = "uni|m" + std::to_string(m) + "|s" + std::to_string(seed) +
                    "|i" + std::to_string(modality) + "|hh" +
                    std::to_string(head_hidden) + "|x" + std::to_string(salt) +
                    "|h" + std::to_string(cfg.hash());
  auto& slot = pools().unimodal[key];
  if (slot) return slot;

  auto data = get_dataset(cfg, m, seed);
  train::TrainConfig tc = train_config_from(cfg, seed);
  tc.epochs = cfg.get_size("unimodal_epochs", 300);
  tc.seed = RandomStream(seed).split("uni").split(salt).seed();

  auto rec = std::make_shared<UnimodalRecord>();
  rec->result = train::train_unimodal(data->train, modality,
                                      cfg.get_size("classes", 4), head_hidden, tc);
  const Matrix rep =
      forward_last(rec->result.encoder, data->test.observations[modality]);
  rec->rep_rank = effective_rank(rep);
  slot = rec;
  return slot;
}

void clear_run_pool() {
  pools().datasets.clear();
  pools().runs.clear();
  pools().unimodal.clear();
}

// ---------------------------------------------------------------------------
// Bundle IO
// ---------------------------------------------------------------------------

namespace {

ordered_json config_to_json(const KvConfig& cfg) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : cfg.entries()) j[k] = v;
  return j;
}

KvConfig config_from_json(const ordered_json& j) {
  KvConfig cfg;
  for (const auto& [k, v] : j.items()) cfg.set(k, v.get<std::string>());
  return cfg;
}

ordered_json series_to_json(const Series& s) {
  ordered_json j;
  j["name"] = s.name;
  j["columns"] = s.columns;
  j["rows"] = s.rows;
  return j;
}

std::string hash_hex(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error::input("cannot write " + path.string());
  out << text;
  if (!out) throw Error::input("write failed for " + path.string());
}

std::string series_csv(const Series& s) {
  std::string text;
  for (std::size_t c = 0; c < s.columns.size(); ++c) {
    if (c) text += ',';
    text += s.columns[c];
  }
  text += '\n';
  for (const auto& row : s.rows) {
    if (row.size() != s.columns.size())
      throw Error::config("series '" + s.name + "': ragged row");
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) text += ',';
      text += format_g17(row[c]);
    }
    text += '\n';
  }
  return text;
}

ordered_json provenance_json(const ResultBundle& b) {
  ordered_json j;
  j["id"] = b.id;
  j["config_hash"] = hash_hex(b.config_hash);
  j["seeds"] = b.seeds;
  j["code_version"] = b.code_version;
  j["config"] = config_to_json(b.config);
  return j;
}

}  // namespace

void write_bundle(const ResultBundle& b, const std::string& dir) {
  fs::create_directories(dir);
  ordered_json j;
  j["id"] = b.id;
  j["config_hash"] = hash_hex(b.config_hash);
  j["seeds"] = b.seeds;
  j["code_version"] = b.code_version;
  j["incomplete"] = b.incomplete;
  j["error"] = b.error;
  j["config"] = config_to_json(b.config);
  j["raw"] = b.raw_json.empty() ? ordered_json::object()
                                : ordered_json::parse(b.raw_json);
  j["series"] = ordered_json::array();
  for (const auto& s : b.series) j["series"].push_back(series_to_json(s));
  write_text(fs::path(dir) / "bundle.json", j.dump(2) + "\n");
  write_text(fs::path(dir) / "provenance.json", provenance_json(b).dump(2) + "\n");
  for (const auto& s : b.series)
    write_text(fs::path(dir) / (s.name + ".csv"), series_csv(s));
}

ResultBundle load_bundle(const std::string& dir) {
  const fs::path path = fs::path(dir) / "bundle.json";
  std::ifstream in(path);
  if (!in) throw Error::input("load_bundle: cannot open " + path.string());
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw Error::integrity("load_bundle: " + path.string() + ": " + e.what());
  }
  ResultBundle b;
  b.id = j.at("id").get<std::string>();
  b.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
  b.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  b.code_version = j.at("code_version").get<std::string>();
  b.incomplete = j.at("incomplete").get<bool>();
  b.error = j.at("error").get<std::string>();
  b.config = config_from_json(j.at("config"));
  b.raw_json = j.at("raw").dump();
  for (const auto& sj : j.at("series")) {
    Series s;
    s.name = sj.at("name").get<std::string>();
    s.columns = sj.at("columns").get<std::vector<std::string>>();
    s.rows = sj.at("rows").get<std::vector<std::vector<double>>>();
    b.series.push_back(std::move(s));
  }
  return b;
}

void emit(const ResultBundle& b, const std::string& format, const std::string& dir) {
  if (b.incomplete)
    throw Error::state("emit: bundle '" + b.id + "' is incomplete: " + b.error);
  fs::create_directories(dir);
  if (format == "csv") {
    for (const auto& s : b.series)
      write_text(fs::path(dir) / (s.name + ".csv"), series_csv(s));
  } else if (format == "json") {
    for (const auto& s : b.series)
      write_text(fs::path(dir) / (s.name + ".json"), series_to_json(s).dump(2) + "\n");
  } else {
    throw Error::usage("emit: unknown format '" + format + "'");
  }
}

// ---------------------------------------------------------------------------
// Registry plumbing (experiment bodies live in experiments.cpp)
// ---------------------------------------------------------------------------

std::vector<std::string> list_experiments() {
  std::vector<std::string> ids;
  for (const auto& [id, fn] : detail::registry()) ids.push_back(id);
  return ids;
}

bool is_experiment(const std::string& id) {
  for (const auto& [eid, fn] : detail::registry())
    if (eid == id) return true;
  return false;
}

ResultBundle run(const ExperimentSpec& spec, const std::string& out_dir,
                 bool use_cache) {
  detail::ExperimentFn fn = nullptr;
  for (const auto& [eid, f] : detail::registry())
    if (eid == spec.id) fn = f;
  if (!fn) throw Error::usage("unknown experiment id '" + spec.id + "'");
  if (spec.seeds.empty()) throw Error::usage("experiment needs >= 1 seed");

  KvConfig cfg = defaults();
  cfg.merge(spec.overrides);
  std::string hashed = spec.id + "\n" + cfg.canonical() + "seeds:";
  for (auto s : spec.seeds) hashed += " " + std::to_string(s);
  const std::uint64_t config_hash = fnv1a64(hashed);

  const std::string dir = (fs::path(out_dir) / spec.id).string();
  if (use_cache && fs::exists(fs::path(dir) / "bundle.json")) {
    ResultBundle cached = load_bundle(dir);
    if (cached.config_hash == config_hash && !cached.incomplete) return cached;
  }

  ResultBundle b;
  b.id = spec.id;
  b.config = cfg;
  b.config_hash = config_hash;
  b.seeds = spec.seeds;
  b.code_version = kCodeVersion;
  try {
    auto out = fn(cfg, spec.seeds);
    b.raw_json = out.raw.dump();
    b.series = std::move(out.series);
  } catch (const std::exception& e) {
    b.incomplete = true;
    b.error = e.what();
  }
  write_bundle(b, dir);
  return b;
}

// ---------------------------------------------------------------------------
// Dataset CSV export and CLI-facing operations
// ---------------------------------------------------------------------------

void save_dataset_csv(const synth::MultimodalDataset& ds, const std::string& dir,
                      const std::string& label_column) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < ds.num_modalities(); ++i) {
    const Matrix& obs = ds.observations[i];
    std::string text;
    for (std::size_t c = 0; c < obs.cols; ++c) text += "f" + std::to_string(c) + ",";
    text += label_column;
    text += '\n';
    for (std::size_t r = 0; r < obs.rows; ++r) {
      const double* p = obs.row_ptr(r);
      for (std::size_t c = 0; c < obs.cols; ++c) {
        text += format_g17(p[c]);
        text += ',';
      }
      text += std::to_string(ds.labels[r]);
      text += '\n';
    }
    write_text(fs::path(dir) / ("modality_" + std::to_string(i) + ".csv"), text);
  }
}

void cli_gen_data(const KvConfig& user_cfg, const std::string& out_dir) {
  KvConfig cfg = defaults();
  cfg.merge(user_cfg);
  const std::size_t m = cfg.get_size("modalities", 3);
  const auto seed = static_cast<std::uint64_t>(cfg.get_size("seed", 1));
  auto data = get_dataset(cfg, m, seed, cfg.get_double("noise_rate", 0.0),
                          cfg.get_bool("fig6_corrupt_test", true));
  save_dataset_csv(data->train, (fs::path(out_dir) / "train").string(),
                   cfg.get("label_column", "label"));
  save_dataset_csv(data->test, (fs::path(out_dir) / "test").string(),
                   cfg.get("label_column", "label"));
}

namespace {

void write_trace_csv(const train::TrainTrace& trace, const std::string& dir) {
  Series epochs;
  epochs.name = "trace";
  epochs.columns = {"epoch", "l_sem", "l_md"};
  const std::size_t m = trace.epochs.empty() ? 0 : trace.epochs[0].probe_loss.size();
  for (std::size_t i = 0; i < m; ++i)
    epochs.columns.push_back("probe_" + std::to_string(i));
  for (const auto& e : trace.epochs) {
    std::vector<double> row{static_cast<double>(e.epoch), e.l_sem, e.l_md};
    for (double p : e.probe_loss) row.push_back(p);
    epochs.rows.push_back(std::move(row));
  }
  write_text(fs::path(dir) / "trace.csv", series_csv(epochs));

  Series reps;
  reps.name = "reps";
  reps.columns = {"epoch", "fused_rank"};
  const std::size_t mm = trace.reps.empty() ? 0 : trace.reps[0].cka.size();
  for (std::size_t i = 0; i < mm; ++i)
    reps.columns.push_back("cka_" + std::to_string(i));
  for (const auto& r : trace.reps) {
    std::vector<double> row{static_cast<double>(r.epoch),
                            static_cast<double>(r.fused_rank)};
    for (double c : r.cka) row.push_back(c);
    reps.rows.push_back(std::move(row));
  }
  write_text(fs::path(dir) / "reps.csv", series_csv(reps));
}

struct TrainedForCli {
  std::shared_ptr<const DatasetPair> data;
  FusionModel model;
  train::TrainTrace trace;
};

TrainedForCli train_for_cli(const KvConfig& cfg) {
  const std::size_t m = cfg.get_size("modalities", 3);
  const auto seed = static_cast<std::uint64_t>(cfg.get_size("seed", 1));
  TrainedForCli out;
  out.data = get_dataset(cfg, m, seed, cfg.get_double("noise_rate", 0.0),
                         cfg.get_bool("fig6_corrupt_test", true));
  if (cfg.has("checkpoint")) {
    auto restored = train::restore(cfg.get("checkpoint", ""));
    out.model = std::move(restored.model);
    out.trace = std::move(restored.trace);
    return out;
  }
  const auto mode = train::parse_mode(cfg.get("mode", "vanilla"));
  auto rec = get_run(cfg, m, seed, mode, cfg.get_double("beta", 0.0),
                     cfg.get_double("noise_rate", 0.0),
                     train::parse_kd_sequence(
                         cfg.get("kd_sequence", "weakest_to_strongest")));
  out.model = rec->model;
  out.trace = rec->trace;
  return out;
}

ordered_json report_to_json(const diag::DiagnosticsReport& rep) {
  ordered_json j;
  j["version"] = 1;
  j["collision_bound"] = rep.collision_bound;
  j["empirical_collision_fraction"] = rep.empirical_collision_fraction;
  j["tau_enc"] = rep.tau_enc;
  j["epoch_n"] = rep.epoch_n;
  j["agop"] = ordered_json::array();
  for (const auto& a : rep.agop) {
    ordered_json aj;
    aj["rows"] = a.rows;
    aj["cols"] = a.cols;
    aj["data"] = a.data;
    j["agop"].push_back(std::move(aj));
  }
  j["subspaces"] = ordered_json::array();
  for (const auto& p : rep.subspaces) {
    ordered_json pj;
    pj["gamma"] = p.gamma_value;
    pj["agop_gap"] = p.gap;
    pj["gamma_bound_defined"] = p.bound_defined;
    pj["gamma_bound"] = p.bound;
    pj["dim"] = p.dim;
    j["subspaces"].push_back(std::move(pj));
  }
  j["interference_defined"] = rep.interference_defined;
  j["interference_score"] = rep.interference_score;
  j["entanglement_defined"] = rep.entanglement.defined;
  j["entanglement_ratio"] = rep.entanglement.ratio;
  j["entanglement_rows"] = rep.entanglement.polysemantic_rows;
  j["cka"] = rep.cka;
  j["vif_mean"] = rep.vif_mean;
  if (rep.modality_probe_ce)
    j["modality_probe_ce"] = *rep.modality_probe_ce;
  else
    j["modality_probe_ce"] = nullptr;
  return j;
}

}  // namespace

void cli_train(const KvConfig& user_cfg, const std::string& out_dir) {
  KvConfig cfg = defaults();
  cfg.merge(user_cfg);
  fs::create_directories(out_dir);
  auto trained = train_for_cli(cfg);
  train::checkpoint(trained.model, trained.trace,
                    (fs::path(out_dir) / "model.ckpt").string());
  write_trace_csv(trained.trace, out_dir);

  Batch test_batch = full_batch(trained.data->test);
  auto fp = fuse_predict(trained.model, test_batch);
  ordered_json j;
  j["mode"] = cfg.get("mode", "vanilla");
  j["final_l_sem"] =
      trained.trace.epochs.empty() ? 0.0 : trained.trace.epochs.back().l_sem;
  j["test_accuracy"] = accuracy(fp.logits, test_batch.labels);
  j["test_auc"] = diag::macro_ovr_auc(softmax_rows(fp.logits), test_batch.labels);
  write_text(fs::path(out_dir) / "summary.json", j.dump(2) + "\n");
}

void cli_diagnose(const KvConfig& user_cfg, const std::string& out_dir) {
  KvConfig cfg = defaults();
  cfg.merge(user_cfg);
  fs::create_directories(out_dir);
  auto trained = train_for_cli(cfg);
  diag::ReportOptions opts;
  opts.tau_enc = cfg.get_double("tau_enc", diag::kDefaultTauEnc);
  opts.epoch_n = std::max<std::size_t>(1, cfg.get_size("epochs", 300));
  const auto rep = diag::compute_report(trained.model, trained.data->test, opts);
  write_text(fs::path(out_dir) / "report.json", report_to_json(rep).dump(2) + "\n");
}

void cli_substitute(const KvConfig& user_cfg, const std::string& out_dir) {
  KvConfig cfg = defaults();
  if (!user_cfg.has("mode")) cfg.set("mode", "ebr");
  cfg.merge(user_cfg);
  fs::create_directories(out_dir);
  auto trained = train_for_cli(cfg);

  const auto rates = cfg.get_double_list("rates", {0.1, 0.2, 0.3, 0.4, 0.7});
  const std::string policy_str = cfg.get("policy", "ebr_ranked");
  std::vector<subst::Policy> policies;
  if (policy_str == "all") {
    policies = {subst::Policy::ebr_ranked,   subst::Policy::train_average,
                subst::Policy::nearest_rep,  subst::Policy::late_fusion_drop,
                subst::Policy::random_noise, subst::Policy::zeros};
  } else {
    policies = {subst::parse_policy(policy_str)};
  }

  const std::size_t reference = trained.data->train.strongest_modality();
  auto ctx = subst::make_substitution_context(trained.model, trained.data->train,
                                              reference,
                                              cfg.get_size("classes", 4));
  const auto seed = static_cast<std::uint64_t>(cfg.get_size("seed", 1));

  std::string text = "rate,policy,accuracy,auc\n";
  for (const auto policy : policies) {
    if (policy == subst::Policy::ebr_ranked && !trained.model.has_ebr()) continue;
    const auto rep = subst::evaluate_missingness(trained.model, trained.data->test,
                                                 rates, ctx, policy, seed);
    for (const auto& rm : rep.per_rate) {
      text += format_g17(rm.rate);
      text += ',';
      text += subst::policy_name(policy);
      text += ',';
      text += format_g17(rm.accuracy);
      text += ',';
      text += format_g17(rm.auc);
      text += '\n';
    }
  }
  write_text(fs::path(out_dir) / "substitution.csv", text);
}

}  // namespace fuselab::harness
