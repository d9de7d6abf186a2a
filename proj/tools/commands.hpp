#pragma once

#include <string>

#include "json.hpp"

namespace gctaf::cli {

// Each command consumes the merged run config (config file plus flag
// overrides), echoes the effective config into the output directory, and
// writes its artifacts there. The echoed file replays the run bit-exactly.
void cmd_synth(const nlohmann::json& run);
void cmd_train(const nlohmann::json& run);
void cmd_eval(const nlohmann::json& run);
void cmd_ablate(const nlohmann::json& run);
void cmd_sweep(const nlohmann::json& run);
void cmd_baseline(const nlohmann::json& run);
void cmd_report(const nlohmann::json& run);

}  // namespace gctaf::cli
