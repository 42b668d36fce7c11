#pragma once
// Run configuration and the commands behind the noptool binary.
#include <string>
#include <vector>

#include <json.hpp>

#include "nopkit/bayes.hpp"
#include "nopkit/eval.hpp"
#include "nopkit/io.hpp"

namespace nop {

// Sections mirror the pipeline stages; unknown keys anywhere are rejected
// with the offending key named. `out` is the artifact directory; every
// command writes a resolved copy of its configuration next to its outputs.
struct RunConfig {
    nlohmann::json data, model, train, eval, invert;
    std::uint64_t seed = 0;
    std::string out = "out";
};

// Parse a JSON config file, apply --set section.key=value overrides (values
// parsed as JSON when possible, else taken as strings), and validate keys.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);

ModelConfig model_config_from(const RunConfig& cfg);
TrainConfig train_config_from(const RunConfig& cfg);

// Commands. Each returns the directory (or file) it produced.
std::string cmd_gen_data(const RunConfig& cfg);
std::string cmd_train(const RunConfig& cfg);
std::string cmd_eval(const RunConfig& cfg);
std::string cmd_superres(const RunConfig& cfg);
std::string cmd_invert(const RunConfig& cfg);
std::string cmd_spectra(const RunConfig& cfg);

// Exit-code policy shared by the binary and tests: 0 ok, 2 configuration or
// contract error, 3 numeric (solver/domain) error.
int run_command(const std::string& command, const RunConfig& cfg, std::string& message);

} // namespace nop
