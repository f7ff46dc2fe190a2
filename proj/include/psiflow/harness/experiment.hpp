#pragma once

#include "json.hpp"
#include "psiflow/harness/config.hpp"
#include "psiflow/harness/stats.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace psiflow::harness {

struct Table
{
    std::string file; // e.g. "laplace.csv"
    std::string contents;
};

struct ExperimentReport
{
    ExperimentConfig config;
    std::vector<GateResult> gates;
    Verdict verdict = Verdict::Inconclusive;
    nlohmann::json summary = nlohmann::json::object();
    nlohmann::json records = nlohmann::json::array(); // one entry per replicate
    std::vector<Table> tables;

    nlohmann::json to_json() const;
};

/// Runs the configured experiment over its replicates. Replicate i draws all of its
/// randomness from seed_stream(master_seed, i).
ExperimentReport run_experiment(const ExperimentConfig& config);

/// report.json plus the CSV tables.
void write_report(const ExperimentReport& report, const std::filesystem::path& dir);

constexpr int kExitPass = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitGateFailure = 3;

/// 0 unless a gate failed. Inconclusive gates (too few replicates) do not fail a run.
int exit_code(const ExperimentReport& report);

/// Decimal text that round-trips the double; "inf", "-inf", "nan" otherwise.
std::string csv_number(double x);

} // namespace psiflow::harness
