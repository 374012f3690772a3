#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "disperse/config.hpp"

namespace disperse::cli {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;  // replaces the eval seed list
  std::optional<std::string> out;     // overrides config output_dir
  std::size_t jobs = 1;
  bool force = false;
};

// Exit codes: 0 success, 1 validation error, 2 runtime failure.
int cmd_generate(const CommonArgs& args);
int cmd_train(const CommonArgs& args);
int cmd_unlearn(const CommonArgs& args, const std::string& method);
int cmd_evaluate(const CommonArgs& args, const std::string& method);
int cmd_sweep(const CommonArgs& args);
int cmd_report(const CommonArgs& args, const std::string& method);

}  // namespace disperse::cli
