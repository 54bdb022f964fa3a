#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dagan/config.hpp"

namespace dagan::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kNumericError = 4 };

struct CommandOptions {
    std::optional<std::filesystem::path> config;
    std::optional<std::string> profile;
    std::optional<std::string> variant;
    std::optional<uint64_t> seed;
    std::filesystem::path out = "out";
    std::vector<std::string> overrides;  // section.key=value

    std::optional<std::filesystem::path> data;  // dataset root
    std::optional<std::filesystem::path> checkpoint;
    std::optional<std::filesystem::path> manifest;
    std::string split = "test";
    bool write_maps = false;
    std::filesystem::path image_t1;
    std::filesystem::path image_t2;
    int64_t count = 16;
    int64_t size = 64;
    std::vector<std::string> variants{"R", "A", "M", "MC", "full"};
};

// Profile defaults, then the config file, then --variant/--seed/--data, then
// --set overrides. Throws ConfigError on any invalid field.
ExperimentConfig resolve_config(const CommandOptions& options);

using Logger = std::function<void(const std::string&)>;

// Each command throws ConfigError, DataError or NumericError; run() maps them
// to exit codes.
void cmd_train(const CommandOptions& options, const Logger& log);
void cmd_eval(const CommandOptions& options, const Logger& log);
void cmd_predict(const CommandOptions& options, const Logger& log);
void cmd_ablate(const CommandOptions& options, const Logger& log);
void cmd_synth(const CommandOptions& options, const Logger& log);

int run(const std::string& verb, const CommandOptions& options, const Logger& log, const Logger& error);

}  // namespace dagan::cli
