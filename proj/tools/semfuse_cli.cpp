#include <iostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "semfuse/commands.hpp"

namespace {

const std::set<std::string> kFlagKeys = {"no_sam", "no_z",    "no_kv", "no_pr",
                                         "no_fea", "no_cont", "no_cs", "offline"};

std::string dashed(std::string key) {
  for (auto& c : key) {
    if (c == '_') c = '-';
  }
  return key;
}

struct Overrides {
  std::string config_file;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> options;
  std::vector<std::pair<std::string, bool>> flags;
};

void add_common(CLI::App* sub, Overrides& ov, const std::vector<std::string>& keys) {
  sub->add_option("-c,--config", ov.config_file, "key = value config file");
  sub->add_option("--set", ov.sets, "extra key=value override (repeatable)");
  for (const auto& key : keys) {
    if (kFlagKeys.count(key)) {
      ov.flags.emplace_back(key, false);
    } else {
      ov.options.emplace_back(key, "");
    }
  }
  for (auto& [key, value] : ov.flags) sub->add_flag("--" + dashed(key), value);
  for (auto& [key, value] : ov.options) sub->add_option("--" + dashed(key), value);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic-prior guided infrared/visible fusion by distillation"};
  app.require_subcommand(1);
  const auto& keys = semfuse::cli::config_keys();

  struct Spec {
    const char* name;
    const char* help;
  };
  const Spec specs[] = {{"train", "alternate teacher/student training; writes main.ckpt, sub.ckpt, train.csv"},
                        {"fuse", "fuse source pairs with the student network only"},
                        {"eval", "compute EN, SD, SCD and MS-SSIM for fused images"},
                        {"gradcheck", "finite-difference check of every loss term and network path"},
                        {"info", "parameter counts and feature shapes"}};

  std::vector<Overrides> overrides(std::size(specs));
  bool inject_fault = false;
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < std::size(specs); ++i) {
    CLI::App* sub = app.add_subcommand(specs[i].name, specs[i].help);
    add_common(sub, overrides[i], keys);
    if (std::string(specs[i].name) == "gradcheck") {
      sub->add_flag("--inject-fault", inject_fault)->group("");
    }
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : semfuse::cli::kExitUsage;
  }

  semfuse::cli::RunConfig config;
  try {
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (!subs[i]->parsed()) continue;
      config.command = specs[i].name;
      const Overrides& ov = overrides[i];
      if (!ov.config_file.empty()) semfuse::cli::apply_config_file(config, ov.config_file);
      for (const auto& kv : ov.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw semfuse::cli::ConfigError("--set expects key=value, got '" + kv + "'");
        semfuse::cli::apply_setting(config, kv.substr(0, eq), kv.substr(eq + 1));
      }
      for (const auto& [key, value] : ov.options) {
        if (subs[i]->count("--" + dashed(key))) semfuse::cli::apply_setting(config, key, value);
      }
      for (const auto& [key, value] : ov.flags) {
        if (value) semfuse::cli::apply_setting(config, key, "true");
      }
    }
    config.inject_fault = inject_fault;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return semfuse::cli::kExitUsage;
  }

  std::cout << semfuse::cli::resolved_config(config) << std::flush;
  return semfuse::cli::run_command(config, std::cout, std::cerr);
}
