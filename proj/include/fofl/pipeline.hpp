#pragma once

#include "fofl/config.hpp"
#include "fofl/fedcore.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fofl {

// ---------------------------------------------------------------------------
// Dataset directory: DIR/manifest.json + DIR/clients/client_<k>.csv

struct ManifestClient {
    std::size_t client_id = 0;
    std::string file; ///< relative to the dataset directory
    SplitAssignment split;
};

struct DataManifest {
    std::string data_hash;
    std::uint64_t data_seed = 0;
    double dt = 1.0;
    std::vector<ManifestClient> clients;
};

nlohmann::json manifest_to_json(const DataManifest& m);
DataManifest manifest_from_json(const nlohmann::json& j);

/// Synthesizes the fleet, writes per-client telemetry CSVs and the manifest.
/// Throws DataError if the directory cannot be written.
DataManifest generate_data(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// Reads the manifest and telemetry, windows and normalizes every client.
/// Throws DataError with an actionable message when the manifest is missing.
std::vector<ClientDataset> load_datasets(const ExperimentConfig& cfg, const std::filesystem::path& data_dir);

/// In-memory equivalent of generate_data + load_datasets.
std::vector<ClientDataset> synth_datasets(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Run artifacts

/// Columns: seed, round, algorithm, rmse, mae, mape, d_mean, d_cv,
/// n_participants, t_train_s, t_diag_s. Metric cells are empty on rounds
/// without an evaluation.
std::string metrics_round_csv(std::uint64_t seed, Algorithm algorithm, std::span<const RoundRecord> log,
                              double eps_d);

nlohmann::json build_summary(const ExperimentConfig& cfg, std::uint64_t seed, const ExperimentResult& result);

/// Little-endian uint64 count followed by that many little-endian doubles.
void write_model(const std::filesystem::path& path, const ParamVector& params);
ParamVector read_model(const std::filesystem::path& path);

/// Runs one seed and writes OUT/seed_<n>/{metrics_round.csv, summary.json, model_final.bin}.
ExperimentResult run_and_write(const ExperimentConfig& cfg, std::span<const ClientDataset> data, std::uint64_t seed,
                               const std::filesystem::path& out_dir, std::size_t threads);

// ---------------------------------------------------------------------------
// Cross-seed report

struct ReportOutput {
    nlohmann::json json;
    std::string csv;
};

/// Finds summary.json files under each path (the path itself or seed_* children).
std::vector<nlohmann::json> collect_summaries(std::span<const std::filesystem::path> runs);

/// mean +- population std per (algorithm, C, p_leave, p_join). Throws
/// ConfigError when the summaries carry different config hashes.
ReportOutput aggregate_summaries(std::span<const nlohmann::json> summaries);

} // namespace fofl
