// The experiment registry: one entry per figure/table/claim the harness can
// reproduce at desk scale. Each experiment returns per-seed raw records plus
// aggregated series (mean and sample std across seeds).
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "fuselab/error.hpp"
#include "fuselab/svd.hpp"
#include "harness_detail.hpp"

using ordered_json = nlohmann::ordered_json;

namespace fuselab::harness {
namespace detail {
namespace {

std::string format_key(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

using Seeds = std::vector<std::uint64_t>;

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) { return subst::sample_std(v); }

std::vector<std::size_t> sweep_ms(const KvConfig& cfg) {
  const std::size_t lo = cfg.get_size("sweep_min_m", 2);
  const std::size_t hi = cfg.get_size("sweep_max_m", 5);
  std::vector<std::size_t> ms;
  for (std::size_t m = lo; m <= hi; ++m) ms.push_back(m);
  return ms;
}

constexpr train::Mode kModes[] = {train::Mode::vanilla, train::Mode::kd,
                                  train::Mode::ebr};

// ---- lemma1_collisions ----------------------------------------------------

ExperimentOutput lemma1_collisions(const KvConfig& cfg, const Seeds& seeds) {
  ExperimentOutput out;
  Series s;
  s.name = "collisions";
  s.columns = {"m", "bound", "fraction_mean", "fraction_std"};
  const double tau = cfg.get_double("tau_enc", diag::kDefaultTauEnc);
  for (const std::size_t m : sweep_ms(cfg)) {
    std::vector<double> fractions;
    double bound = 0.0;
    for (const auto seed : seeds) {
      auto rec = get_run(cfg, m, seed, train::Mode::vanilla);
      std::vector<std::size_t> dims;
      for (std::size_t i = 0; i < rec->model.num_modalities(); ++i)
        dims.push_back(rec->model.encoding_dim(i));
      bound = diag::collision_bound(m, dims);
      fractions.push_back(
          diag::empirical_collision_fraction(rec->model, rec->data->test, 0, tau));
    }
    out.raw["m" + std::to_string(m)] = {{"bound", bound},
                                        {"fractions", fractions}};
    s.rows.push_back({static_cast<double>(m), bound, mean_of(fractions),
                      std_of(fractions)});
  }
  out.series.push_back(std::move(s));
  return out;
}

// ---- fig3_loss_gap ---------------------------------------------------------

ExperimentOutput fig3_loss_gap(const KvConfig& cfg, const Seeds& seeds) {
  ExperimentOutput out;
  Series s;
  s.name = "loss_gap";
  s.columns = {"m",        "prefix_mean", "prefix_std", "unimodal_mean",
               "unimodal_std", "gap_mean",    "gap_std"};
  for (const std::size_t m : sweep_ms(cfg)) {
    std::vector<double> prefix, uni, gap;
    for (const auto seed : seeds) {
      auto rec = get_run(cfg, m, seed, train::Mode::vanilla);
      const std::size_t weakest = rec->data->train.weakest_modality();
      const double p = rec->trace.epochs.back().probe_loss[weakest];
      auto urec = get_unimodal(cfg, m, seed, weakest, 0);
      prefix.push_back(p);
      uni.push_back(urec->result.final_loss);
      gap.push_back(p - urec->result.final_loss);
    }
    out.raw["m" + std::to_string(m)] = {{"prefix", prefix},
                                        {"unimodal", uni},
                                        {"gap", gap}};
    s.rows.push_back({static_cast<double>(m), mean_of(prefix), std_of(prefix),
                      mean_of(uni), std_of(uni), mean_of(gap), std_of(gap)});
  }
  out.series.push_back(std::move(s));
  return out;
}

// ---- lemma2_gradrank -------------------------------------------------------

ExperimentOutput lemma2_gradrank(const KvConfig& cfg, const Seeds& seeds) {
  ExperimentOutput out;
  Series by_m;
  by_m.name = "rank_drop_by_m";
  by_m.columns = {"m", "nonincreasing_fraction_mean", "nonincreasing_fraction_std"};
  std::vector<double> pooled;  // per seed, across the whole m sweep
  const auto ms = sweep_ms(cfg);
  std::vector<std::vector<double>> per_m(ms.size());
  for (std::size_t si = 0; si < seeds.size(); ++si) {
    std::size_t ok = 0, total = 0;
    for (std::size_t mi = 0; mi < ms.size(); ++mi) {
      auto rec = get_run(cfg, ms[mi], seeds[si], train::Mode::vanilla);
      const auto sum = diag::gradient_rank_trace(rec->trace);
      std::size_t mok = 0;
      for (std::size_t l = 0; l < sum.first_epoch.size(); ++l)
        if (sum.final_epoch[l] <= sum.first_epoch[l]) ++mok;
      per_m[mi].push_back(static_cast<double>(mok) /
                          static_cast<double>(sum.first_epoch.size()));
      ok += mok;
      total += sum.first_epoch.size();
    }
    pooled.push_back(static_cast<double>(ok) / static_cast<double>(total));
  }
  for (std::size_t mi = 0; mi < ms.size(); ++mi)
    by_m.rows.push_back(
        {static_cast<double>(ms[mi]), mean_of(per_m[mi]), std_of(per_m[mi])});
  out.series.push_back(std::move(by_m));
  Series pool;
  pool.name = "rank_drop_pooled";
  pool.columns = {"nonincreasing_fraction_mean", "nonincreasing_fraction_std"};
  pool.rows.push_back({mean_of(pooled), std_of(pooled)});
  out.series.push_back(std::move(pool));
  out.raw["pooled_fraction"] = pooled;
  return out;
}

// ---- fig4_rank_beta --------------------------------------------------------

ExperimentOutput fig4_rank_beta(const KvConfig& cfg, const Seeds& seeds) {
  ExperimentOutput out;
  const std::size_t m = cfg.get_size("fig4_m", 3);
  const auto betas = cfg.get_double_list("fig4_betas", {0, 2, 4, 6, 8});
  for (const auto mode : kModes) {
    Series s;
    s.name = std::string("rank_") + train::mode_name(mode);
    s.columns = {"beta", "rank_mean", "rank_std"};
    for (const double beta : betas) {
      std::vector<double> ranks;
      for (const auto seed : seeds) {
        auto rec = get_run(cfg, m, seed, mode, beta);
        ranks.push_back(static_cast<double>(rec->trace.reps.back().fused_rank));
      }
      out.raw[std::string(train::mode_name(mode)) + "_beta" +
              std::to_string(static_cast<int>(beta))] = ranks;
      s.rows.push_back({beta, mean_of(ranks), std_of(ranks)});
    }
    out.series.push_back(std::move(s));
  }
  Series uni;
  uni.name = "rank_unimodal";
  uni.columns = {"rank_mean", "rank_std"};
  std::vector<double> ranks;
  for (const auto seed : seeds) {
    auto data = get_dataset(cfg, m, seed);
    auto urec = get_unimodal(cfg, m, seed, data->train.weakest_modality(), 0);
    ranks.push_back(static_cast<double>(urec->rep_rank));
  }
  out.raw["unimodal"] = ranks;
  uni.rows.push_back({mean_of(ranks), std_of(ranks)});
  out.series.push_back(std::move(uni));
  return out;
}

// ---- fig5_dynamics ---------------------------------------------------------

ExperimentOutput fig5_dynamics(const KvConfig& cfg, const Seeds& seeds) {
  ExperimentOutput out;
  const std::size_t m = cfg.get_size("fig5_m", 3);
  for (const auto mode : kModes) {
    Series s;
    s.name = std::string("loss_") + train::mode_name(mode);
    s.columns = {"epoch", "l_sem_mean", "l_sem_std"};
    std::vector<std::shared_ptr<const RunRecord>> recs;
    for (const auto seed : seeds) recs.push_back(get_run(cfg, m, seed, mode));
    const std::size_t epochs = recs[0]->trace.epochs.size();
    std::vector<double> finals;
    for (std::size_t e = 0; e < epochs; ++e) {
      std::vector<double> losses;
      for (const auto& r : recs) losses.push_back(r->trace.epochs[e].l_sem);
      s.rows.push_back(
          {static_cast<double>(e), mean_of(losses), std_of(losses)});
      if (e + 1 == epochs) finals = losses;
    }
    out.raw[std::string("final_") + train::mode_name(mode)] = finals;
    out.series.push_back(std::move(s));
  }
  return out;
}

// ---- fig6_denoising --------------------------------------------------------

ExperimentOutput fig6_denoising(const KvConfig& cfg, const Seeds& seeds) {
  ExperimentOutput out;
  const std::size_t m = cfg.get_size("fig6_m", 2);
  const auto rates = cfg.get_double_list("fig6_rates", {0.05, 0.275, 0.5});
  for (const auto mode : kModes) {
    Series s;
    s.name = std::string("acc_") + train::mode_name(mode);
    s.columns = {"noise_rate", "accuracy_mean", "accuracy_std"};
    for (const double rate : rates) {
      std::vector<double> accs;
      for (const auto seed : seeds) {
        auto rec = get_run(cfg, m, seed, mode, 0.0, rate);
        accs.push_back(rec->test_accuracy);
      }
      out.raw[std::string(train::mode_name(mode)) + "_rate" + format_key(rate)] =
          accs;
      s.rows.push_back({rate, mean_of(accs), std_of(accs)});
    }
    out.series.push_back(std::move(s));
  }
  return out;
}

// ---- tab5_kd_sequence -------------------------------------------------------

ExperimentOutput tab5_kd_sequence(const KvConfig& cfg, const Seeds& seeds) {
  ExperimentOutput out;
  const std::size_t m = cfg.get_size("tab5_m", 4);
  constexpr train::KdSequence kSeqs[] = {
      train::KdSequence::weakest_to_strongest,
      train::KdSequence::strongest_to_weakest,
      train::KdSequence::strongest_only,
      train::KdSequence::random_order,
      train::KdSequence::simultaneous,
  };
  Series s;
  s.name = "kd_sequence_accuracy";
  s.columns = {"sequence_index", "accuracy_mean", "accuracy_std"};
  for (std::size_t qi = 0; qi < std::size(kSeqs); ++qi) {
    std::vector<double> accs;
    for (const auto seed : seeds) {
      auto rec = get_run(cfg, m, seed, train::Mode::kd, 0.0, 0.0, kSeqs[qi]);
      accs.push_back(rec->test_accuracy);
    }
    out.raw[train::kd_sequence_name(kSeqs[qi])] = accs;
    s.rows.push_back({static_cast<double>(qi), mean_of(accs), std_of(accs)});
  }
  out.series.push_back(std::move(s));
  return out;
}

// ---- tab6_substitution -------------------------------------------------------

ExperimentOutput tab6_substitution(const KvConfig& cfg, const Seeds& seeds) {
  ExperimentOutput out;
  const std::size_t m = cfg.get_size("tab6_m", 4);
  const auto rates = cfg.get_double_list("rates", {0.1, 0.2, 0.3, 0.4, 0.7});
  constexpr subst::Policy kPolicies[] = {
      subst::Policy::ebr_ranked,   subst::Policy::train_average,
      subst::Policy::nearest_rep,  subst::Policy::late_fusion_drop,
      subst::Policy::random_noise, subst::Policy::zeros,
  };
  Series agg;
  agg.name = "substitution_aggregate";
  agg.columns = {"policy_index", "accuracy_mean", "accuracy_std", "auc_mean",
                 "auc_std"};
  for (std::size_t pi = 0; pi < std::size(kPolicies); ++pi) {
    const auto policy = kPolicies[pi];
    std::vector<double> accs, aucs;
    Series per_rate;
    per_rate.name = std::string("substitution_") + subst::policy_name(policy);
    per_rate.columns = {"rate", "accuracy_mean", "accuracy_std", "auc_mean",
                        "auc_std"};
    std::vector<std::vector<double>> rate_accs(rates.size()), rate_aucs(rates.size());
    for (const auto seed : seeds) {
      auto rec = get_run(cfg, m, seed, train::Mode::ebr);
      const std::size_t reference = rec->data->train.strongest_modality();
      auto ctx = subst::make_substitution_context(
          rec->model, rec->data->train, reference, cfg.get_size("classes", 4));
      const auto rep = subst::evaluate_missingness(rec->model, rec->data->test,
                                                   rates, ctx, policy, seed);
      accs.push_back(rep.mean_accuracy);
      aucs.push_back(rep.mean_auc);
      for (std::size_t ri = 0; ri < rates.size(); ++ri) {
        rate_accs[ri].push_back(rep.per_rate[ri].accuracy);
        rate_aucs[ri].push_back(rep.per_rate[ri].auc);
      }
    }
    for (std::size_t ri = 0; ri < rates.size(); ++ri)
      per_rate.rows.push_back({rates[ri], mean_of(rate_accs[ri]),
                               std_of(rate_accs[ri]), mean_of(rate_aucs[ri]),
                               std_of(rate_aucs[ri])});
    out.raw[subst::policy_name(policy)] = {{"accuracy", accs}, {"auc", aucs}};
    agg.rows.push_back({static_cast<double>(pi), mean_of(accs), std_of(accs),
                        mean_of(aucs), std_of(aucs)});
    out.series.push_back(std::move(per_rate));
  }
  out.series.push_back(std::move(agg));
  return out;
}

// ---- tab7_vif ----------------------------------------------------------------

ExperimentOutput tab7_vif(const KvConfig& cfg, const Seeds& seeds) {
  ExperimentOutput out;
  for (const auto mode : kModes) {
    Series s;
    s.name = std::string("vif_") + train::mode_name(mode);
    s.columns = {"m", "vif_mean", "vif_std"};
    for (const std::size_t m : sweep_ms(cfg)) {
      std::vector<double> vifs;
      for (const auto seed : seeds) {
        auto rec = get_run(cfg, m, seed, mode);
        Batch test_batch = full_batch(rec->data->test);
        auto fp = fuse_predict(rec->model, test_batch);
        vifs.push_back(diag::vif_mean(fp.fused));
      }
      out.raw[std::string(train::mode_name(mode)) + "_m" + std::to_string(m)] =
          vifs;
      s.rows.push_back({static_cast<double>(m), mean_of(vifs), std_of(vifs)});
    }
    out.series.push_back(std::move(s));
  }
  return out;
}

// ---- tab9_polysemanticity ------------------------------------------------------

ExperimentOutput tab9_polysemanticity(const KvConfig& cfg, const Seeds& seeds) {
  ExperimentOutput out;
  const std::size_t m = cfg.get_size("tab9_m", 2);
  const std::size_t head_hidden = cfg.get_size("tab9_head_hidden", 32);
  const std::size_t reps = cfg.get_size("tab9_reps", 3);
  Series s;
  s.name = "modality_probe_ce";
  s.columns = {"mode_index", "ce_mean", "ce_std"};
  for (std::size_t mi = 0; mi < std::size(kModes); ++mi) {
    std::vector<double> ces;
    for (const auto seed : seeds) {
      // Weight samples from unimodal reference models of every modality.
      diag::WeightSamples samples;
      std::vector<Matrix> blocks;
      std::vector<int> labels;
      std::size_t dim = 0;
      for (std::size_t mod = 0; mod < m; ++mod) {
        for (std::size_t rep = 0; rep < reps; ++rep) {
          auto urec = get_unimodal(cfg, m, seed, mod, head_hidden, rep + 1);
          const Matrix& w = urec->result.head.layers[0].weight;
          blocks.push_back(w);
          dim = w.cols;
          for (std::size_t r = 0; r < w.rows; ++r)
            labels.push_back(static_cast<int>(mod));
        }
      }
      Matrix all(labels.size(), dim);
      std::size_t row = 0;
      for (const auto& b : blocks)
        for (std::size_t r = 0; r < b.rows; ++r, ++row)
          std::copy(b.row_ptr(r), b.row_ptr(r) + b.cols, all.row_ptr(row));
      samples.rows = std::move(all);
      samples.modality = std::move(labels);

      auto rec = get_run(cfg, m, seed, kModes[mi]);
      diag::ModalityProbeConfig pc;
      pc.seed = seed;
      ces.push_back(diag::modality_probe_ce(samples, rec->model, pc).ce);
    }
    out.raw[train::mode_name(kModes[mi])] = ces;
    s.rows.push_back({static_cast<double>(mi), mean_of(ces), std_of(ces)});
  }
  out.series.push_back(std::move(s));
  return out;
}

// ---- thm2_agop_gap --------------------------------------------------------------

ExperimentOutput thm2_agop_gap(const KvConfig& cfg, const Seeds& seeds) {
  ExperimentOutput out;
  const std::size_t m = cfg.get_size("thm_m", 3);
  const double tau = cfg.get_double("tau_enc", diag::kDefaultTauEnc);
  const std::size_t epochs = cfg.get_size("epochs", 300);
  Series s;
  s.name = "gap_by_gamma";
  s.columns = {"gamma_bucket", "gap_mean", "gap_std", "probes_mean"};
  std::vector<double> gap1, gap2, n1, n2;
  for (const auto seed : seeds) {
    auto rec = get_run(cfg, m, seed, train::Mode::vanilla);
    const auto feats = diag::encoded_features(rec->model, rec->data->test, 0);
    const Matrix a = diag::agop(rec->model, rec->data->test, 0);
    std::vector<double> g1, g2;
    auto consider = [&](const std::vector<double>& dir) {
      const auto probe = diag::make_subspace_probe(0, {dir});
      const double g = diag::gamma(probe, feats, tau);
      const double gap = diag::agop_gap(probe, a, g, epochs).gap;
      if (g >= 2.0)
        g2.push_back(gap);
      else if (g >= 1.0)
        g1.push_back(gap);
    };
    for (const auto& f : feats.features)
      if (!f.direction.empty()) consider(f.direction);
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < feats.features.size() && pairs < 24; ++i) {
      for (std::size_t j = i + 1; j < feats.features.size() && pairs < 24; ++j) {
        const auto& fa = feats.features[i];
        const auto& fb = feats.features[j];
        if (fa.modality == fb.modality || fa.direction.empty() ||
            fb.direction.empty())
          continue;
        std::vector<double> dir(feats.dim);
        for (std::size_t k = 0; k < feats.dim; ++k)
          dir[k] = fa.direction[k] + fb.direction[k];
        const double nrm = norm2(dir);
        if (nrm < 1e-10) continue;
        for (double& v : dir) v /= nrm;
        consider(dir);
        ++pairs;
      }
    }
    gap1.push_back(mean_of(g1));
    gap2.push_back(mean_of(g2));
    n1.push_back(static_cast<double>(g1.size()));
    n2.push_back(static_cast<double>(g2.size()));
  }
  out.raw["gap_gamma1"] = gap1;
  out.raw["gap_gamma2plus"] = gap2;
  s.rows.push_back({1.0, mean_of(gap1), std_of(gap1), mean_of(n1)});
  s.rows.push_back({2.0, mean_of(gap2), std_of(gap2), mean_of(n2)});
  out.series.push_back(std::move(s));
  return out;
}

// ---- thm3_kd_gap ----------------------------------------------------------------

ExperimentOutput thm3_kd_gap(const KvConfig& cfg, const Seeds& seeds) {
  ExperimentOutput out;
  const std::size_t m = cfg.get_size("thm_m", 3);
  Series s;
  s.name = "poly_gap_by_epoch";
  s.columns = {"epoch", "vanilla_mean", "vanilla_std", "kd_mean", "kd_std"};
  std::vector<std::shared_ptr<const RunRecord>> vruns, kruns;
  for (const auto seed : seeds) {
    vruns.push_back(get_run(cfg, m, seed, train::Mode::vanilla));
    kruns.push_back(get_run(cfg, m, seed, train::Mode::kd));
  }
  const std::size_t snaps = vruns[0]->poly_gap_by_epoch.size();
  for (std::size_t e = 0; e < snaps; ++e) {
    std::vector<double> v, k;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      v.push_back(vruns[si]->poly_gap_by_epoch[e].second);
      if (e < kruns[si]->poly_gap_by_epoch.size())
        k.push_back(kruns[si]->poly_gap_by_epoch[e].second);
    }
    s.rows.push_back({static_cast<double>(vruns[0]->poly_gap_by_epoch[e].first),
                      mean_of(v), std_of(v), mean_of(k), std_of(k)});
  }
  std::vector<double> final_v, final_k;
  std::size_t kd_higher = 0;
  for (std::size_t si = 0; si < seeds.size(); ++si) {
    const double fv = vruns[si]->poly_gap_by_epoch.back().second;
    const double fk = kruns[si]->poly_gap_by_epoch.back().second;
    final_v.push_back(fv);
    final_k.push_back(fk);
    if (fk > fv) ++kd_higher;
  }
  out.raw["final_vanilla"] = final_v;
  out.raw["final_kd"] = final_k;
  out.raw["kd_higher_seeds"] = kd_higher;
  out.series.push_back(std::move(s));
  Series fin;
  fin.name = "poly_gap_final";
  fin.columns = {"vanilla_mean", "kd_mean", "kd_higher_seeds"};
  fin.rows.push_back({mean_of(final_v), mean_of(final_k),
                      static_cast<double>(kd_higher)});
  out.series.push_back(std::move(fin));
  return out;
}

}  // namespace

const std::vector<std::pair<std::string, ExperimentFn>>& registry() {
  static const std::vector<std::pair<std::string, ExperimentFn>> reg = {
      {"lemma1_collisions", lemma1_collisions},
      {"lemma2_gradrank", lemma2_gradrank},
      {"thm2_agop_gap", thm2_agop_gap},
      {"thm3_kd_gap", thm3_kd_gap},
      {"fig3_loss_gap", fig3_loss_gap},
      {"fig4_rank_beta", fig4_rank_beta},
      {"fig5_dynamics", fig5_dynamics},
      {"fig6_denoising", fig6_denoising},
      {"tab5_kd_sequence", tab5_kd_sequence},
      {"tab6_substitution", tab6_substitution},
      {"tab7_vif", tab7_vif},
      {"tab9_polysemanticity", tab9_polysemanticity},
  };
  return reg;
}

}  // namespace detail
}  // namespace fuselab::harness
