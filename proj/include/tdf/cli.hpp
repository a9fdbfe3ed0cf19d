#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <variant>

#include "tdf/orchestrator.hpp"

namespace tdf {

// Tool configuration. Sources in precedence order: command-line flags, then
// the file named by --config or $TDF_CONFIG, then these defaults. Relative
// paths inside a config file resolve against the file's directory.
struct CliConfig {
    std::string environments_file = "environments.yaml";
    std::string reports_dir = "reports";
    std::optional<std::string> cv_backend;
    int parallelism = 4;
    FailurePolicy policy;
};

// Reads one config file layer on top of the defaults. Unknown keys and
// out-of-range values are errors.
std::variant<CliConfig, std::string> load_cli_config(const std::filesystem::path& file);

// Command-line entry point; returns the process exit code.
// 0 success, 1 findings or failed tests, 2 unusable input or configuration,
// 3 aborted run.
int run_cli(int argc, char** argv);

}  // namespace tdf
