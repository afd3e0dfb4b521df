// Command-line front end; everything goes through the C interface.
#include <CLI11.hpp>

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "ehrseq/ehrseq.h"

namespace {

struct Sub {
  CLI::App* app = nullptr;
  std::string config_file;
  std::map<std::string, std::string> values;  // option name -> text
  std::vector<std::pair<std::string, CLI::Option*>> options;
};

bool reads(const char* commands, const std::string& sub) {
  const std::string list = std::string(" ") + commands + " ";
  return list.find(" " + sub + " ") != std::string::npos;
}

void print_text(const char* text, void*) { std::fputs(text, stdout); }

void print_progress(const char* line, void*) {
  std::fprintf(stderr, "progress: %s\n", line);
  std::fflush(stderr);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ehrseq: hourly in-hospital mortality prediction from raw ICU event streams"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ehrseq_version()));

  std::vector<Sub> subs(ehrseq_subcommand_count());
  for (size_t s = 0; s < subs.size(); ++s) {
    const std::string name = ehrseq_subcommand_name(s);
    auto& sub = subs[s];
    sub.app = app.add_subcommand(name, ehrseq_subcommand_help(s));
    sub.app->add_option("--config", sub.config_file, "key = value file; flags override it");
    for (size_t i = 0; i < ehrseq_option_count(); ++i) {
      if (!reads(ehrseq_option_commands(i), name)) continue;
      const std::string key = ehrseq_option_name(i);
      CLI::Option* opt = nullptr;
      if (key == "shuffle-labels") {
        opt = sub.app->add_flag_function(
            "--" + key, [&sub, key](std::int64_t) { sub.values[key] = "true"; }, ehrseq_option_help(i));
      } else {
        opt = sub.app->add_option("--" + key, sub.values[key], ehrseq_option_help(i));
      }
      sub.options.emplace_back(key, opt);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return EHRSEQ_USAGE;
  }

  for (auto& sub : subs) {
    if (!sub.app->parsed()) continue;
    const std::string name = sub.app->get_name();
    ehrseq_config* cfg = ehrseq_config_new();
    if (!cfg) return EHRSEQ_INTERNAL;
    auto fail = [&](int status) {
      std::fprintf(stderr, "error: %s\n", ehrseq_last_error());
      ehrseq_config_free(cfg);
      return status;
    };
    if (!sub.config_file.empty())
      if (const auto st = ehrseq_config_load(cfg, sub.config_file.c_str()); st != EHRSEQ_OK) return fail(st);
    for (const auto& [key, opt] : sub.options) {
      if (opt->count() == 0) continue;
      if (const auto st = ehrseq_config_set(cfg, key.c_str(), sub.values[key].c_str()); st != EHRSEQ_OK)
        return fail(st);
    }
    if (const size_t n = ehrseq_config_validate(cfg); n > 0) {
      std::fprintf(stderr, "error: invalid configuration\n");
      for (size_t i = 0; i < n; ++i) std::fprintf(stderr, "  %s\n", ehrseq_config_error(cfg, i));
      ehrseq_config_free(cfg);
      return EHRSEQ_USAGE;
    }
    const auto st = ehrseq_run(name.c_str(), cfg, print_text, print_progress, nullptr);
    if (st != EHRSEQ_OK) return fail(st);
    ehrseq_config_free(cfg);
    return EHRSEQ_OK;
  }
  return EHRSEQ_USAGE;
}
