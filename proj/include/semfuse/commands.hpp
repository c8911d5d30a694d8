#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "semfuse/pipeline.hpp"
#include "semfuse/trainer.hpp"

namespace semfuse::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumerical = 2;

// Bad key, bad value, or a missing required setting.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string command;
  std::filesystem::path data;        // directory of <stem>.vis / <stem>.ir pairs
  std::filesystem::path out = ".";   // artifacts are written here
  std::filesystem::path checkpoint;  // directory holding main.ckpt / sub.ckpt; defaults to `out`
  std::filesystem::path fused;       // directory of <stem>.fused images (eval)
  std::size_t synthetic = 0;         // > 0: generate this many toy pairs instead of reading `data`
  std::size_t size = 32;             // synthetic extent; also the shape probe for info
  std::string term = "all";
  bool inject_fault = false;
  train::TrainConfig train;
  PriorConfig prior;
};

// Applies one key=value setting. Throws ConfigError for unknown keys and
// malformed values.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

// `key = value` lines; '#' starts a comment. Throws ConfigError naming the
// line on failure.
void apply_config_text(RunConfig& config, const std::string& text);
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

const std::vector<std::string>& config_keys();

// Every key with its effective value, one `key = value` line each, in the
// same syntax the config file accepts.
std::string resolved_config(const RunConfig& config);

nets::MainNetConfig main_config(const RunConfig& config);

// Each command returns a process exit code and never throws for expected
// failures; diagnostics go to `err`.
int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_fuse(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_eval(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_info(const RunConfig& config, std::ostream& out, std::ostream& err);

int run_command(const RunConfig& config, std::ostream& out, std::ostream& err);

}  // namespace semfuse::cli
