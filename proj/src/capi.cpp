#include "fuselab.h"

#include <string>

#include "fuselab/error.hpp"
#include "fuselab/harness.hpp"

using fuselab::Error;
using fuselab::ErrorKind;

struct fl_session {
  fuselab::harness::KvConfig config;
  std::string last_error;
};

namespace {

int status_of(ErrorKind kind) {
  return kind == ErrorKind::usage ? FL_USAGE : FL_RUNTIME;
}

template <typename Fn>
int guarded(fl_session* s, Fn&& fn) {
  if (!s) return FL_USAGE;
  s->last_error.clear();
  try {
    return fn();
  } catch (const Error& e) {
    s->last_error = e.what();
    return status_of(e.kind());
  } catch (const std::exception& e) {
    s->last_error = e.what();
    return FL_RUNTIME;
  }
}

int require_out_dir(fl_session* s, const char* out_dir) {
  if (out_dir && *out_dir) return FL_OK;
  s->last_error = "output directory required";
  return FL_USAGE;
}

}  // namespace

extern "C" {

fl_session* fl_session_new(void) { return new fl_session(); }

void fl_session_free(fl_session* s) { delete s; }

const char* fl_version(void) { return fuselab::harness::kCodeVersion; }

const char* fl_last_error(const fl_session* s) {
  return s ? s->last_error.c_str() : "null session";
}

int fl_set(fl_session* s, const char* key, const char* value) {
  return guarded(s, [&] {
    if (!key || !*key || !value) {
      s->last_error = "fl_set: key and value required";
      return FL_USAGE;
    }
    s->config.set(key, value);
    return FL_OK;
  });
}

int fl_load_config_file(fl_session* s, const char* path) {
  return guarded(s, [&] {
    if (!path || !*path) {
      s->last_error = "fl_load_config_file: path required";
      return FL_USAGE;
    }
    // File values must not override explicit fl_set calls made earlier.
    auto file_cfg = fuselab::harness::KvConfig::from_file(path);
    file_cfg.merge(s->config);
    s->config = std::move(file_cfg);
    return FL_OK;
  });
}

int fl_list_experiments(fl_session* s, char* buf, size_t cap, size_t* needed) {
  return guarded(s, [&] {
    std::string text;
    for (const auto& id : fuselab::harness::list_experiments()) {
      text += id;
      text += '\n';
    }
    if (needed) *needed = text.size() + 1;
    if (!buf || cap == 0) return FL_OK;
    const size_t n = text.size() < cap - 1 ? text.size() : cap - 1;
    text.copy(buf, n);
    buf[n] = '\0';
    return FL_OK;
  });
}

int fl_run_experiment(fl_session* s, const char* experiment_id,
                      const char* out_dir) {
  return guarded(s, [&] {
    if (const int rc = require_out_dir(s, out_dir); rc != FL_OK) return rc;
    if (!experiment_id || !fuselab::harness::is_experiment(experiment_id)) {
      s->last_error = std::string("unknown experiment id '") +
                      (experiment_id ? experiment_id : "") + "'";
      return FL_USAGE;
    }
    fuselab::harness::ExperimentSpec spec;
    spec.id = experiment_id;
    spec.seeds = s->config.get_u64_list("seeds", {1, 2, 3, 4, 5});
    spec.overrides = s->config;
    const bool use_cache = s->config.get_bool("use_cache", true);
    const auto bundle = fuselab::harness::run(spec, out_dir, use_cache);
    if (bundle.incomplete) {
      s->last_error = "experiment incomplete: " + bundle.error;
      return FL_RUNTIME;
    }
    return FL_OK;
  });
}

int fl_train(fl_session* s, const char* out_dir) {
  return guarded(s, [&] {
    if (const int rc = require_out_dir(s, out_dir); rc != FL_OK) return rc;
    fuselab::harness::cli_train(s->config, out_dir);
    return FL_OK;
  });
}

int fl_diagnose(fl_session* s, const char* out_dir) {
  return guarded(s, [&] {
    if (const int rc = require_out_dir(s, out_dir); rc != FL_OK) return rc;
    fuselab::harness::cli_diagnose(s->config, out_dir);
    return FL_OK;
  });
}

int fl_substitute(fl_session* s, const char* out_dir) {
  return guarded(s, [&] {
    if (const int rc = require_out_dir(s, out_dir); rc != FL_OK) return rc;
    fuselab::harness::cli_substitute(s->config, out_dir);
    return FL_OK;
  });
}

int fl_generate_data(fl_session* s, const char* out_dir) {
  return guarded(s, [&] {
    if (const int rc = require_out_dir(s, out_dir); rc != FL_OK) return rc;
    fuselab::harness::cli_gen_data(s->config, out_dir);
    return FL_OK;
  });
}

}  // extern "C"
