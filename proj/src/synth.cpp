#include "fuselab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fuselab/error.hpp"

namespace fuselab::synth {

bool is_predictive_role(LatentRole r) {
  return r == LatentRole::predictive || r == LatentRole::conjugate_predictive;
}

const char* role_name(LatentRole r) {
  switch (r) {
    case LatentRole::predictive: return "predictive";
    case LatentRole::noisy: return "noisy";
    case LatentRole::conjugate_predictive: return "conjugate_predictive";
    case LatentRole::conjugate_noisy: return "conjugate_noisy";
  }
  return "?";
}

void LatentSpec::validate() const {
  if (num_classes < 2) throw Error::config("latent spec: need >= 2 classes");
  if (roles.empty()) throw Error::config("latent spec: no latents");
  bool any_predictive = false;
  for (auto r : roles) any_predictive |= is_predictive_role(r);
  if (!any_predictive)
    throw Error::config("latent spec: at least one predictive latent required");
  std::vector<int> paired(roles.size(), 0);
  for (auto [py, pe] : conjugate_pairs) {
    if (py < 0 || pe < 0 || static_cast<std::size_t>(py) >= roles.size() ||
        static_cast<std::size_t>(pe) >= roles.size())
      throw Error::config("latent spec: conjugate pair index out of range");
    if (roles[py] != LatentRole::conjugate_predictive ||
        roles[pe] != LatentRole::conjugate_noisy)
      throw Error::config("latent spec: conjugate pair roles inconsistent");
    if (paired[py]++ || paired[pe]++)
      throw Error::config("latent spec: latent in more than one conjugate pair");
  }
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if ((roles[i] == LatentRole::conjugate_predictive ||
         roles[i] == LatentRole::conjugate_noisy) &&
        !paired[i])
      throw Error::config("latent spec: conjugate latent without a pair");
  }
  if (class_means.rows != num_classes || class_means.cols != roles.size())
    throw Error::config("latent spec: class_means must be num_classes x latent_dim");
  if (latent_sigma.size() != roles.size())
    throw Error::config("latent spec: latent_sigma size mismatch");
}

void ModalitySpec::validate(const LatentSpec& latent) const {
  if (obs_dim == 0) throw Error::config("modality spec: obs_dim must be > 0");
  if (mixing.rows != obs_dim || mixing.cols != latent.latent_dim())
    throw Error::config("modality spec: mixing must be obs_dim x latent_dim");
  if (strength < 0.0 || strength > 1.0 || noise_rate < 0.0 || noise_rate > 1.0)
    throw Error::config("modality spec: strength/noise_rate must lie in [0,1]");
  for (int l : latent_subset)
    if (l < 0 || static_cast<std::size_t>(l) >= latent.latent_dim())
      throw Error::config("modality spec: latent_subset index out of range");
  for (std::size_t r = 0; r < mixing.rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < mixing.cols; ++c) ss += mixing(r, c) * mixing(r, c);
    if (std::fabs(ss - 1.0) > 1e-9)
      throw Error::config("modality spec: mixing rows must be unit-norm");
  }
}

std::size_t MultimodalDataset::num_classes() const {
  if (latent_spec.num_classes > 0) return latent_spec.num_classes;
  int mx = -1;
  for (int y : labels) mx = std::max(mx, y);
  return static_cast<std::size_t>(mx + 1);
}

void MultimodalDataset::require_ledger(const char* op) const {
  if (!has_ledger())
    throw Error::state(std::string(op) +
                       ": dataset has no feature ledger (externally loaded "
                       "data has unknown roles)");
}

std::vector<std::size_t> MultimodalDataset::obs_dims() const {
  std::vector<std::size_t> d;
  d.reserve(observations.size());
  for (const auto& o : observations) d.push_back(o.cols);
  return d;
}

std::size_t MultimodalDataset::weakest_modality() const {
  require_ledger("weakest_modality");
  std::size_t best = 0;
  for (std::size_t i = 1; i < modality_specs.size(); ++i)
    if (modality_specs[i].strength < modality_specs[best].strength) best = i;
  return best;
}

std::size_t MultimodalDataset::strongest_modality() const {
  require_ledger("strongest_modality");
  std::size_t best = 0;
  for (std::size_t i = 1; i < modality_specs.size(); ++i)
    if (modality_specs[i].strength > modality_specs[best].strength) best = i;
  return best;
}

MultimodalDataset generate(const LatentSpec& spec,
                           const std::vector<ModalitySpec>& modalities,
                           std::size_t n, RandomStream& stream) {
  spec.validate();
  if (modalities.empty()) throw Error::config("generate: no modalities");
  for (const auto& m : modalities) m.validate(spec);
  if (n < 1) throw Error::config("generate: n must be >= 1");

  const std::size_t L = spec.latent_dim();
  MultimodalDataset ds;
  ds.latent_spec = spec;
  ds.modality_specs = modalities;

  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    ds.labels[i] = static_cast<int>(stream.uniform_int(spec.num_classes));

  // Latents. Conjugate-noisy entries are u - z_pair with u class-independent,
  // so the pair sum carries no label information.
  ds.latents = Matrix(n, L);
  for (std::size_t i = 0; i < n; ++i) {
    double* z = ds.latents.row_ptr(i);
    const double* mu = spec.class_means.row_ptr(ds.labels[i]);
    for (std::size_t l = 0; l < L; ++l) {
      switch (spec.roles[l]) {
        case LatentRole::predictive:
        case LatentRole::conjugate_predictive:
          z[l] = mu[l] + spec.latent_sigma[l] * stream.normal();
          break;
        case LatentRole::noisy:
          z[l] = spec.latent_sigma[l] * stream.normal();
          break;
        case LatentRole::conjugate_noisy:
          z[l] = spec.latent_sigma[l] * stream.normal();  // u, resolved below
          break;
      }
    }
    for (auto [py, pe] : spec.conjugate_pairs) z[pe] -= z[py];
  }

  for (const auto& mspec : modalities) {
    ds.observations.push_back(matmul_nt(ds.latents, mspec.mixing));
    for (int l : mspec.latent_subset) {
      LedgerEntry e;
      e.modality = static_cast<int>(mspec.modality_id);
      e.latent = l;
      e.role = spec.roles[l];
      e.probe.resize(mspec.obs_dim);
      double ss = 0.0;
      for (std::size_t r = 0; r < mspec.obs_dim; ++r) {
        e.probe[r] = mspec.mixing(r, static_cast<std::size_t>(l));
        ss += e.probe[r] * e.probe[r];
      }
      if (ss <= 0.0)
        throw Error::config("generate: observed latent with zero mixing column");
      const double inv = 1.0 / std::sqrt(ss);
      for (double& v : e.probe) v *= inv;
      ds.ledger.push_back(std::move(e));
    }
  }
  return ds;
}

MultimodalDataset inject_noise(const MultimodalDataset& ds, std::size_t modality,
                               double noise_rate, RandomStream& stream) {
  if (modality >= ds.num_modalities())
    throw Error::input("inject_noise: modality out of range");
  if (noise_rate < 0.0 || noise_rate > 0.5)
    throw Error::input("inject_noise: noise_rate must lie in [0, 0.5]");

  MultimodalDataset out = ds;
  Matrix& obs = out.observations[modality];
  const std::size_t d = obs.cols;
  const auto k = static_cast<std::size_t>(noise_rate * static_cast<double>(d));
  if (k == 0) return out;

  // Per-coordinate empirical std of the clean data sets the amplitude.
  std::vector<double> sd(d, 0.0);
  const auto mu = column_means(obs);
  for (std::size_t r = 0; r < obs.rows; ++r) {
    const double* p = obs.row_ptr(r);
    for (std::size_t c = 0; c < d; ++c) {
      const double e = p[c] - mu[c];
      sd[c] += e * e;
    }
  }
  for (double& v : sd) v = std::sqrt(v / static_cast<double>(obs.rows));

  std::vector<int> coords(d);
  for (std::size_t c = 0; c < d; ++c) coords[c] = static_cast<int>(c);
  for (std::size_t r = 0; r < obs.rows; ++r) {
    // Partial Fisher-Yates picks k distinct coordinates.
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(stream.uniform_int(d - i));
      std::swap(coords[i], coords[j]);
    }
    double* p = obs.row_ptr(r);
    for (std::size_t i = 0; i < k; ++i) {
      const auto c = static_cast<std::size_t>(coords[i]);
      p[c] += stream.uniform(-sd[c], sd[c]);
    }
  }
  return out;
}

MissingnessMask sample_mask(std::size_t n, std::size_t m, double rate,
                            RandomStream& stream) {
  if (rate < 0.0 || rate >= 1.0)
    throw Error::input("sample_mask: rate must lie in [0,1)");
  if (m == 0) throw Error::input("sample_mask: need >= 1 modality");
  MissingnessMask mask;
  mask.n = n;
  mask.m = m;
  mask.rate = rate;
  mask.absent.assign(n * m, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t absent_count = 0;
    for (std::size_t j = 0; j < m; ++j) {
      const bool absent = stream.uniform() < rate;
      mask.absent[i * m + j] = absent ? 1 : 0;
      absent_count += absent ? 1 : 0;
    }
    if (absent_count == m)
      mask.absent[i * m + stream.uniform_int(m)] = 0;
  }
  return mask;
}

namespace {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;  // numeric cells, header order
  int label_col = -1;
};

CsvTable read_csv(const std::string& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw Error::ingest("load_csv: cannot open " + path);
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto pos = line.find(',', start);
      cells.push_back(line.substr(start, pos == std::string::npos
                                             ? std::string::npos
                                             : pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    if (lineno == 1) {
      t.header = cells;
      for (std::size_t c = 0; c < cells.size(); ++c)
        if (cells[c] == label_column) t.label_col = static_cast<int>(c);
      continue;
    }
    if (cells.size() != t.header.size())
      throw Error::ingest("load_csv: " + path + ":" + std::to_string(lineno) +
                          ": expected " + std::to_string(t.header.size()) +
                          " cells, got " + std::to_string(cells.size()));
    std::vector<double> row(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const char* s = cells[c].c_str();
      char* end = nullptr;
      row[c] = std::strtod(s, &end);
      if (end == s || *end != '\0')
        throw Error::ingest("load_csv: " + path + ":" + std::to_string(lineno) +
                            ": non-numeric cell '" + cells[c] + "'");
    }
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw Error::ingest("load_csv: " + path + " is empty");
  return t;
}

}  // namespace

MultimodalDataset load_csv(const std::vector<std::string>& paths,
                           const std::string& label_column) {
  if (paths.empty()) throw Error::ingest("load_csv: no files given");
  MultimodalDataset ds;
  std::vector<CsvTable> tables;
  for (const auto& p : paths) tables.push_back(read_csv(p, label_column));
  if (tables[0].label_col < 0)
    throw Error::ingest("load_csv: " + paths[0] + " has no column '" +
                        label_column + "'");
  for (std::size_t i = 1; i < tables.size(); ++i) {
    if (tables[i].rows.size() != tables[0].rows.size())
      throw Error::ingest("load_csv: row count mismatch between " + paths[0] +
                          " (" + std::to_string(tables[0].rows.size()) +
                          ") and " + paths[i] + " (" +
                          std::to_string(tables[i].rows.size()) + ")");
  }

  const std::size_t n = tables[0].rows.size();
  ds.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double y = tables[0].rows[r][static_cast<std::size_t>(tables[0].label_col)];
    const int yi = static_cast<int>(std::llround(y));
    if (yi < 0 || std::fabs(y - yi) > 1e-9)
      throw Error::ingest("load_csv: " + paths[0] + ": label '" +
                          std::to_string(y) + "' is not a class index");
    ds.labels[r] = yi;
  }

  for (std::size_t t = 0; t < tables.size(); ++t) {
    const auto& tab = tables[t];
    std::vector<std::size_t> feat_cols;
    for (std::size_t c = 0; c < tab.header.size(); ++c)
      if (static_cast<int>(c) != tab.label_col) feat_cols.push_back(c);
    Matrix obs(n, feat_cols.size());
    for (std::size_t r = 0; r < n; ++r) {
      if (tab.label_col >= 0) {
        const double y = tab.rows[r][static_cast<std::size_t>(tab.label_col)];
        if (std::llround(y) != ds.labels[r])
          throw Error::ingest("load_csv: " + paths[t] + ":" +
                              std::to_string(r + 2) +
                              ": label disagrees with " + paths[0]);
      }
      for (std::size_t c = 0; c < feat_cols.size(); ++c)
        obs(r, c) = tab.rows[r][feat_cols[c]];
    }
    require_finite(obs, "load_csv");
    ds.observations.push_back(std::move(obs));
    ModalitySpec spec;
    spec.modality_id = t;
    spec.obs_dim = feat_cols.size();
    ds.modality_specs.push_back(std::move(spec));
  }
  return ds;  // no ledger: roles unknown
}

DeskRecipeResult make_desk_specs(std::size_t m, std::size_t num_classes,
                                 RandomStream& stream) {
  if (m < 1) throw Error::config("make_desk_specs: need >= 1 modality");
  if (num_classes < 2) throw Error::config("make_desk_specs: need >= 2 classes");

  constexpr std::size_t kGlobalPredictive = 6;
  constexpr std::size_t kObservedPerModality = 8;
  constexpr std::size_t kObsDim = 32;
  constexpr double kClassSep = 1.2;   // spacing between adjacent class means
  constexpr double kNoisySigma = 1.6; // noise latents are broader than signal
  constexpr double kConjUSigma = 1.2;

  DeskRecipeResult out;
  auto& latent = out.latent;
  latent.num_classes = num_classes;

  auto add_latent = [&](LatentRole role, double sigma) {
    latent.roles.push_back(role);
    latent.latent_sigma.push_back(sigma);
    return static_cast<int>(latent.roles.size() - 1);
  };

  std::vector<int> gp;
  for (std::size_t i = 0; i < kGlobalPredictive; ++i)
    gp.push_back(add_latent(LatentRole::predictive, 1.0));

  // Per-modality observed latents. Modality 0 is the strongest; the last one
  // is the weakest and carries the conjugate pair.
  std::vector<std::vector<int>> observed(m);
  std::vector<int> conj = {-1, -1};
  for (std::size_t i = 0; i < m; ++i) {
    auto& obs = observed[i];
    if (i == 0) {
      obs = gp;  // all 6 predictive
      for (int k = 0; k < 2; ++k) obs.push_back(add_latent(LatentRole::noisy, kNoisySigma));
    } else if (i + 1 == m && m >= 2) {
      obs = {gp[0], gp[1]};
      conj[0] = add_latent(LatentRole::conjugate_predictive, 1.0);
      conj[1] = add_latent(LatentRole::conjugate_noisy, kConjUSigma);
      obs.push_back(conj[0]);
      obs.push_back(conj[1]);
      for (int k = 0; k < 4; ++k) obs.push_back(add_latent(LatentRole::noisy, kNoisySigma));
    } else {
      const std::size_t s = (2 * i) % kGlobalPredictive;
      for (int k = 0; k < 4; ++k)
        obs.push_back(gp[(s + static_cast<std::size_t>(k)) % kGlobalPredictive]);
      for (int k = 0; k < 4; ++k) obs.push_back(add_latent(LatentRole::noisy, kNoisySigma));
    }
    if (obs.size() != kObservedPerModality)
      throw Error::config("make_desk_specs: internal allocation error");
  }
  if (conj[0] >= 0) latent.conjugate_pairs.push_back({conj[0], conj[1]});

  // Class means: equally spaced offsets, permuted per latent so predictive
  // latents carry complementary information.
  const std::size_t L = latent.latent_dim();
  latent.class_means = Matrix(num_classes, L);
  auto means_stream = stream.split("class-means");
  for (std::size_t l = 0; l < L; ++l) {
    if (!is_predictive_role(latent.roles[l])) continue;
    std::vector<int> perm(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) perm[c] = static_cast<int>(c);
    means_stream.shuffle(perm);
    for (std::size_t c = 0; c < num_classes; ++c) {
      const double slot = static_cast<double>(perm[c]) -
                          static_cast<double>(num_classes - 1) / 2.0;
      latent.class_means(c, l) = kClassSep * slot;
    }
  }

  auto mix_stream = stream.split("mixing");
  for (std::size_t i = 0; i < m; ++i) {
    ModalitySpec spec;
    spec.modality_id = i;
    spec.obs_dim = kObsDim;
    spec.latent_subset = observed[i];
    spec.mixing = Matrix(kObsDim, L);
    for (std::size_t r = 0; r < kObsDim; ++r) {
      double ss = 0.0;
      for (int l : observed[i]) {
        const double v = mix_stream.normal();
        spec.mixing(r, static_cast<std::size_t>(l)) = v;
        ss += v * v;
      }
      const double inv = 1.0 / std::sqrt(ss);
      for (int l : observed[i]) spec.mixing(r, static_cast<std::size_t>(l)) *= inv;
    }
    std::size_t predictive = 0;
    for (int l : observed[i])
      if (is_predictive_role(latent.roles[static_cast<std::size_t>(l)])) ++predictive;
    spec.strength = static_cast<double>(predictive) /
                    static_cast<double>(observed[i].size());
    out.modalities.push_back(std::move(spec));
  }
  return out;
}

Matrix onehot(const std::vector<int>& labels, std::size_t num_classes) {
  Matrix m(labels.size(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw Error::input("onehot: label out of range");
    m(i, static_cast<std::size_t>(y)) = 1.0;
  }
  return m;
}

}  // namespace fuselab::synth
