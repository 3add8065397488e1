#pragma once

#include "fofl/bevdata.hpp"
#include "fofl/fedcore.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fofl {

/// Everything one experiment needs: federation, data generation and layout,
/// metrics and seeds. Serialized as JSON; unknown keys are rejected.
struct ExperimentConfig {
    FedConfig fed;
    FleetConfig fleet;
    SplitRatios split;
    CsvSchema schema;
    std::size_t window = 60;
    std::uint64_t data_seed = 7;
    std::string data_dir = "data";
    std::string out_dir = "runs";
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    /// Round used for the roughness/drift correlation and tertile report.
    std::size_t analysis_round = 100;
    std::size_t early_probe_round = 20;
    std::size_t early_window_first = 50;
    std::size_t early_window_last = 100;

    /// Throws ConfigError on the first invalid field.
    void validate() const;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// The default recipe: K=100, C=0.3, T=300, E=1, B=64, alpha=0.8, delta=1e-6,
/// eta0=0.05 with eta0/sqrt(t+1), lambda=0.1, M=10, ell=0.01, m=100,
/// B_probe=128, probe every 5 rounds, seeds 1..5.
ExperimentConfig paper_default_config();

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Starts from `base` and overlays the keys present in `j`.
ExperimentConfig config_from_json(const nlohmann::json& j, const ExperimentConfig& base = ExperimentConfig{});

ExperimentConfig load_config(const std::filesystem::path& path, const ExperimentConfig& base = ExperimentConfig{});

/// Hash of the configuration with per-run and sweep fields removed (seed,
/// algorithm, churn rates, participation fraction, paths). Runs that share it
/// are comparable.
std::string config_hash(const ExperimentConfig& cfg);

} // namespace fofl
