// fuselab command-line front-end. Talks to the shared library exclusively
// through the C API in fuselab.h.
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fuselab.h"

namespace {

struct SessionDeleter {
  void operator()(fl_session* s) const { fl_session_free(s); }
};
using SessionPtr = std::unique_ptr<fl_session, SessionDeleter>;

struct CommonOpts {
  std::string config_file;
  std::string out = "out";
  std::vector<std::pair<std::string, std::string>> sets;  // key, value
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_file, "Flat key = value config file");
  cmd->add_option("--out", opts.out, "Output directory");
  auto remember = [&opts](const std::string& key) {
    return [&opts, key](const std::string& v) { opts.sets.push_back({key, v}); };
  };
  cmd->add_option_function<std::string>("--seed", remember("seed"), "Seed");
  cmd->add_option_function<std::string>(
      "--seeds", remember("seeds"), "Comma-separated seed list (experiments)");
  cmd->add_option_function<std::string>("--epochs", remember("epochs"), "Epochs");
  cmd->add_option_function<std::string>("--beta", remember("beta"),
                                        "Weakest-modality upweighting");
  cmd->add_option_function<std::string>("--mode", remember("mode"),
                                        "vanilla | kd | ebr");
  cmd->add_option_function<std::string>("--kd-sequence", remember("kd_sequence"),
                                        "Distillation teacher order");
  cmd->add_option_function<std::string>("--noise-rate", remember("noise_rate"),
                                        "Train-time corruption rate");
  cmd->add_option_function<std::string>("--modalities", remember("modalities"),
                                        "Number of modalities");
  cmd->add_option_function<std::string>("--policy", remember("policy"),
                                        "Substitution policy (or 'all')");
  cmd->add_option_function<std::string>("--set", [&opts](const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw CLI::ValidationError("--set expects key=value");
    opts.sets.push_back({kv.substr(0, eq), kv.substr(eq + 1)});
  },
      "Extra key=value override (repeatable)");
}

int apply_common(fl_session* s, const CommonOpts& opts) {
  for (const auto& [k, v] : opts.sets)
    if (const int rc = fl_set(s, k.c_str(), v.c_str()); rc != FL_OK) return rc;
  if (!opts.config_file.empty())
    if (const int rc = fl_load_config_file(s, opts.config_file.c_str());
        rc != FL_OK)
      return rc;
  return FL_OK;
}

int fail(fl_session* s, int rc) {
  std::fprintf(stderr, "fuselab: %s\n", fl_last_error(s));
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal fusion collapse laboratory"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string experiment_id;

  auto* list_cmd = app.add_subcommand("list", "List registered experiments");
  auto* run_cmd = app.add_subcommand("run", "Run a registered experiment");
  run_cmd->add_option("experiment", experiment_id, "Experiment id")->required();
  auto* train_cmd = app.add_subcommand("train", "Train one model");
  auto* diag_cmd = app.add_subcommand("diagnose", "Diagnostics report");
  auto* subst_cmd = app.add_subcommand("substitute", "Masked-inference evaluation");
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  for (auto* cmd : {run_cmd, train_cmd, diag_cmd, subst_cmd, gen_cmd})
    add_common(cmd, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return FL_USAGE;
  }

  SessionPtr session(fl_session_new());
  fl_session* s = session.get();
  if (const int rc = apply_common(s, opts); rc != FL_OK) return fail(s, rc);

  if (list_cmd->parsed()) {
    size_t needed = 0;
    fl_list_experiments(s, nullptr, 0, &needed);
    std::string buf(needed, '\0');
    if (const int rc = fl_list_experiments(s, buf.data(), buf.size(), nullptr);
        rc != FL_OK)
      return fail(s, rc);
    std::fputs(buf.c_str(), stdout);
    return FL_OK;
  }
  if (run_cmd->parsed()) {
    if (const int rc = fl_run_experiment(s, experiment_id.c_str(), opts.out.c_str());
        rc != FL_OK)
      return fail(s, rc);
    std::printf("wrote %s/%s\n", opts.out.c_str(), experiment_id.c_str());
    return FL_OK;
  }
  if (train_cmd->parsed()) {
    if (const int rc = fl_train(s, opts.out.c_str()); rc != FL_OK)
      return fail(s, rc);
    std::printf("wrote %s\n", opts.out.c_str());
    return FL_OK;
  }
  if (diag_cmd->parsed()) {
    if (const int rc = fl_diagnose(s, opts.out.c_str()); rc != FL_OK)
      return fail(s, rc);
    std::printf("wrote %s/report.json\n", opts.out.c_str());
    return FL_OK;
  }
  if (subst_cmd->parsed()) {
    if (const int rc = fl_substitute(s, opts.out.c_str()); rc != FL_OK)
      return fail(s, rc);
    std::printf("wrote %s/substitution.csv\n", opts.out.c_str());
    return FL_OK;
  }
  if (gen_cmd->parsed()) {
    if (const int rc = fl_generate_data(s, opts.out.c_str()); rc != FL_OK)
      return fail(s, rc);
    std::printf("wrote %s\n", opts.out.c_str());
    return FL_OK;
  }
  return FL_USAGE;
}
