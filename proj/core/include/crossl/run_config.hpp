#pragma once

#include <string>
#include <vector>

#include "crossl/data.hpp"
#include "crossl/train.hpp"

namespace crossl {

struct EvalParams {
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::vector<double> grid{0.0, 0.25, 0.5, 0.75};
    std::vector<double> fractions{0.01, 0.1, 0.5, 1.0};
    std::size_t missing_count = 1;
    std::size_t jobs = 1;
};

// The single configuration document behind every CLI run. Parsed from UTF-8
// JSON; unknown keys are rejected at every level so typos fail loudly. The
// resolved document (defaults filled in) is archived next to each run's
// outputs.
struct RunConfig {
    SyntheticConfig synthetic;
    EncoderSpec encoder;
    AggregatorSpec aggregator;
    TrainConfig train; // carries masking + loss sections
    EvalParams eval;

    void validate() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path); // empty path -> defaults
std::string dump_run_config(const RunConfig& cfg);  // canonical resolved JSON

// Applies the CROSSL_SEED override (the only environment knob).
void apply_env_overrides(RunConfig& cfg);

struct ConfigKeyDoc {
    std::string key;       // dotted path, e.g. "loss.lambda"
    std::string def;       // rendered default
    std::string help;
};

// One entry per config key, the source of truth for --help.
const std::vector<ConfigKeyDoc>& run_config_keys();

} // namespace crossl
