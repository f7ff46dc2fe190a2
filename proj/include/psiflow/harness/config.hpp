#pragma once

#include "json.hpp"
#include "psiflow/mechanism.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace psiflow::harness {

enum class Experiment
{
    Laplace,
    Compensator,
    PaintboxMarginal,
    Eve,
    Dust,
    RateContinuity,
    Decomposition,
    Classify
};

const char* to_string(Experiment e);
Experiment experiment_from_string(const std::string& s);

struct ExperimentConfig
{
    Experiment experiment = Experiment::Laplace;
    BranchingMechanism mechanism = BranchingMechanism::feller(std::sqrt(2.0));
    double horizon = 1.0;
    double step = 1e-3;
    double jump_truncation = 1e-4; // delta_J
    std::size_t n = 3;
    std::size_t replicates = 1000;
    std::uint64_t master_seed = 0;
    double epsilon = 0.2; // T(eps) for the compensator

    // optional, experiment specific
    std::vector<double> times;   // laplace grid; default {horizon}
    std::vector<double> lambdas; // laplace grid; default {0.5, 1, 2}
    double eve_threshold = 1e3;
    double eve_plateau = 0.01;
    double eve_weight = 0.9;     // heavy-atom threshold for the final max weight
    double eve_fraction = 0.95;  // required agreement rate
    double start = -1.0;         // decomposition s; default horizon/2
    std::size_t fine_n = 0;      // decomposition reference resolution; default 2n
    std::size_t sequence_length = 100; // rate_continuity
    std::optional<std::string> expected_behaviour; // classify
    std::size_t threads = 0;     // 0 = hardware concurrency

    nlohmann::json to_json() const;
};

/// Strict parser: unknown fields, wrong types and out-of-range values raise ConfigError.
/// Subcommands that only simulate may leave out "experiment".
ExperimentConfig config_from_json(const nlohmann::json& j, bool require_experiment = true);
ExperimentConfig load_config(const std::string& path, bool require_experiment = true);

} // namespace psiflow::harness
