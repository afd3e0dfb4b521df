#include "ehrseq/ehrseq.h"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <memory>
#include <exception>
#include <new>
#include <string>
#include <vector>

#include "ehrseq/common.hpp"
#include "ehrseq/config.hpp"
#include "ehrseq/model.hpp"
#include "ehrseq/pipeline.hpp"

struct ehrseq_config {
  ehrseq::RunConfig config;
  std::vector<std::string> errors;
};

struct ehrseq_model {
  ehrseq::ModelParams params;
};

namespace {

thread_local std::string last_error;

ehrseq_status status_of(ehrseq::ErrorKind k) {
  switch (k) {
    case ehrseq::ErrorKind::usage: return EHRSEQ_USAGE;
    case ehrseq::ErrorKind::data: return EHRSEQ_DATA;
    case ehrseq::ErrorKind::numeric: return EHRSEQ_NUMERIC;
  }
  return EHRSEQ_INTERNAL;
}

template <typename F>
ehrseq_status guarded(F&& fn) {
  last_error.clear();
  try {
    fn();
    return EHRSEQ_OK;
  } catch (const ehrseq::Error& e) {
    last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
  } catch (const std::exception& e) {
    last_error = e.what();
  } catch (...) {
    last_error = "unknown failure";
  }
  return EHRSEQ_INTERNAL;
}

ehrseq_status null_argument(const char* what) {
  last_error = std::string("null argument: ") + what;
  return EHRSEQ_USAGE;
}

// string_views in the option tables point at string literals, so they are NUL terminated.
const char* c_str(std::string_view s) { return s.data(); }

}  // namespace

extern "C" {

const char* ehrseq_version(void) { return "1.0.0"; }

const char* ehrseq_last_error(void) { return last_error.c_str(); }

size_t ehrseq_option_count(void) { return ehrseq::option_table().size(); }

const char* ehrseq_option_name(size_t i) {
  return i < ehrseq::option_table().size() ? c_str(ehrseq::option_table()[i].key) : nullptr;
}

const char* ehrseq_option_help(size_t i) {
  return i < ehrseq::option_table().size() ? c_str(ehrseq::option_table()[i].help) : nullptr;
}

const char* ehrseq_option_commands(size_t i) {
  return i < ehrseq::option_table().size() ? c_str(ehrseq::option_table()[i].commands) : nullptr;
}

size_t ehrseq_subcommand_count(void) { return ehrseq::subcommands().size(); }

const char* ehrseq_subcommand_name(size_t i) {
  return i < ehrseq::subcommands().size() ? c_str(ehrseq::subcommands()[i]) : nullptr;
}

const char* ehrseq_subcommand_help(size_t i) {
  return i < ehrseq::subcommands().size() ? c_str(ehrseq::subcommand_help(ehrseq::subcommands()[i])) : nullptr;
}

ehrseq_config* ehrseq_config_new(void) { return new (std::nothrow) ehrseq_config(); }

void ehrseq_config_free(ehrseq_config* config) { delete config; }

ehrseq_status ehrseq_config_set(ehrseq_config* config, const char* key, const char* value) {
  if (!config || !key || !value) return null_argument("config, key or value");
  return guarded([&] { ehrseq::set_option(config->config, key, value); });
}

ehrseq_status ehrseq_config_get(const ehrseq_config* config, const char* key, char* buf, size_t size,
                                size_t* needed) {
  if (!config || !key) return null_argument("config or key");
  return guarded([&] {
    const auto v = ehrseq::get_option(config->config, key);
    if (needed) *needed = v.size();
    if (buf && size > 0) {
      const auto n = std::min(size - 1, v.size());
      std::memcpy(buf, v.data(), n);
      buf[n] = '\0';
    }
  });
}

ehrseq_status ehrseq_config_load(ehrseq_config* config, const char* path) {
  if (!config || !path) return null_argument("config or path");
  return guarded([&] {
    if (!std::filesystem::exists(path)) ehrseq::throw_data(std::string("config file not found: ") + path);
    ehrseq::apply_config_text(config->config, ehrseq::read_file(path));
  });
}

size_t ehrseq_config_validate(ehrseq_config* config) {
  if (!config) return 0;
  config->errors.clear();
  for (const auto& e : ehrseq::validate_config(config->config)) config->errors.push_back(e.field + ": " + e.message);
  return config->errors.size();
}

const char* ehrseq_config_error(const ehrseq_config* config, size_t i) {
  if (!config || i >= config->errors.size()) return nullptr;
  return config->errors[i].c_str();
}

ehrseq_status ehrseq_run(const char* subcommand, const ehrseq_config* config, ehrseq_text_fn output,
                         ehrseq_text_fn progress, void* user) {
  if (!subcommand || !config) return null_argument("subcommand or config");
  return guarded([&] {
    ehrseq::RunContext ctx;
    if (output)
      ctx.output = [output, user](std::string_view text) {
        const std::string s(text);
        output(s.c_str(), user);
      };
    if (progress) ctx.progress = [progress, user](const std::string& line) { progress(line.c_str(), user); };
    ehrseq::run_subcommand(subcommand, config->config, ctx);
  });
}

ehrseq_status ehrseq_model_load(const char* checkpoint, ehrseq_model** out) {
  if (!checkpoint || !out) return null_argument("checkpoint or out");
  *out = nullptr;
  return guarded([&] {
    auto model = std::make_unique<ehrseq_model>();
    model->params = ehrseq::read_checkpoint(checkpoint);
    *out = model.release();
  });
}

void ehrseq_model_free(ehrseq_model* model) { delete model; }

size_t ehrseq_model_vocab_size(const ehrseq_model* model) { return model ? model->params.config().vocab_size : 0; }

size_t ehrseq_model_parameter_count(const ehrseq_model* model) {
  return model ? model->params.flat().size() : 0;
}

ehrseq_status ehrseq_model_predict(const ehrseq_model* model, const int32_t* ids, const size_t* offsets,
                                   size_t n_hours, double* probabilities) {
  if (!model || !offsets || (n_hours > 0 && !probabilities)) return null_argument("model, offsets or probabilities");
  return guarded([&] {
    const auto& cfg = model->params.config();
    if (n_hours > static_cast<size_t>(cfg.horizon_hours))
      ehrseq::throw_usage("more hours than the model horizon of " + std::to_string(cfg.horizon_hours));
    if (offsets[n_hours] > offsets[0] && !ids) ehrseq::throw_usage("null token ids");
    ehrseq::TokenizedStay stay;
    stay.observed_hours = static_cast<int>(n_hours);
    stay.hours.resize(static_cast<size_t>(cfg.horizon_hours));
    for (size_t h = 0; h < n_hours; ++h) {
      if (offsets[h + 1] < offsets[h]) ehrseq::throw_usage("hour offsets must be non-decreasing");
      for (size_t k = offsets[h]; k < offsets[h + 1]; ++k) {
        if (ids[k] < 0 || static_cast<size_t>(ids[k]) >= cfg.vocab_size)
          ehrseq::throw_data("token id " + std::to_string(ids[k]) + " outside the vocabulary");
        stay.hours[h].push_back(ids[k]);
      }
    }
    const auto traj = ehrseq::forward(stay, model->params, ehrseq::Mode::eval);
    for (size_t h = 0; h < n_hours; ++h) probabilities[h] = traj.probabilities[h];
  });
}

}  // extern "C"
