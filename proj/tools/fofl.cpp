#include "fofl/config.hpp"
#include "fofl/errors.hpp"
#include "fofl/pipeline.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

enum ExitCode { ok = 0, usage_error = 1, config_error = 2, data_error = 3, runtime_error = 4 };

struct ConfigArgs {
    std::string config;
    std::string preset;
};

fofl::ExperimentConfig resolve_config(const ConfigArgs& args)
{
    fofl::ExperimentConfig base;
    if (!args.preset.empty()) {
        if (args.preset != "paper-default") {
            throw fofl::ConfigError("unknown preset '" + args.preset + "' (available: paper-default)");
        }
        base = fofl::paper_default_config();
    }
    if (args.config.empty()) {
        if (args.preset.empty()) {
            throw fofl::ConfigError("either --config or --preset is required");
        }
        base.validate();
        return base;
    }
    return fofl::load_config(args.config, base);
}

std::size_t thread_budget()
{
    const char* env = std::getenv("FOFL_THREADS");
    if (env == nullptr || *env == '\0') {
        return 0;
    }
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0') {
        throw fofl::ConfigError(std::string("FOFL_THREADS must be a non-negative integer, got '") + env + "'");
    }
    return static_cast<std::size_t>(v);
}

int cmd_generate_data(const ConfigArgs& args, const std::string& out)
{
    auto cfg = resolve_config(args);
    const fs::path dir = out.empty() ? fs::path(cfg.data_dir) : fs::path(out);
    const auto manifest = fofl::generate_data(cfg, dir);
    spdlog::info("wrote {} clients to {}", manifest.clients.size(), dir.string());
    return ok;
}

int cmd_run(const ConfigArgs& args, std::optional<std::uint64_t> seed, const std::string& out,
            const std::string& algorithm, const std::string& data)
{
    auto cfg = resolve_config(args);
    if (!algorithm.empty()) {
        const auto alg = fofl::parse_algorithm(algorithm);
        if (!alg) {
            std::string names;
            for (const auto& n : fofl::algorithm_names()) {
                names += (names.empty() ? "" : ", ") + n;
            }
            throw fofl::ConfigError("unknown algorithm '" + algorithm + "'; valid names: " + names);
        }
        cfg.fed.algorithm = *alg;
    }
    cfg.validate();
    const fs::path data_dir = data.empty() ? fs::path(cfg.data_dir) : fs::path(data);
    const fs::path out_dir = out.empty() ? fs::path(cfg.out_dir) : fs::path(out);
    const auto datasets = fofl::load_datasets(cfg, data_dir);

    std::vector<std::uint64_t> seeds = seed ? std::vector<std::uint64_t>{*seed} : cfg.seeds;
    const std::size_t threads = thread_budget();
    for (auto s : seeds) {
        spdlog::info("{} seed {}: K={} T={} C={}", fofl::algorithm_name(cfg.fed.algorithm), s, cfg.fed.clients,
                     cfg.fed.rounds, cfg.fed.participation);
        const auto result = fofl::run_and_write(cfg, datasets, s, out_dir, threads);
        for (auto it = result.log.rbegin(); it != result.log.rend(); ++it) {
            if (it->metrics) {
                spdlog::info("seed {} final rmse {:.4f} mae {:.4f} mape {:.2f}%", s, it->metrics->rmse,
                             it->metrics->mae, it->metrics->mape);
                break;
            }
        }
    }
    return ok;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out)
{
    std::vector<fs::path> paths(runs.begin(), runs.end());
    const auto summaries = fofl::collect_summaries(paths);
    const auto report = fofl::aggregate_summaries(summaries);

    fs::path json_path = out;
    fs::path csv_path = json_path;
    csv_path.replace_extension(".csv");
    if (csv_path == json_path) {
        csv_path += ".csv";
    }
    if (json_path.has_parent_path()) {
        fs::create_directories(json_path.parent_path());
    }
    std::ofstream js(json_path);
    js << report.json.dump(2) << "\n";
    std::ofstream csv(csv_path);
    csv << report.csv;
    if (!js || !csv) {
        throw fofl::DataError("cannot write report to " + json_path.string());
    }
    spdlog::info("aggregated {} runs into {} and {}", summaries.size(), json_path.string(), csv_path.string());
    return ok;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Federated BEV energy prediction with fractional-order, roughness-aware local updates"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    ConfigArgs gen_args;
    std::string gen_out;
    auto* gen = app.add_subcommand("generate-data", "Synthesize the fleet and write per-client telemetry CSVs");
    gen->add_option("--config", gen_args.config, "Experiment config (JSON)");
    gen->add_option("--preset", gen_args.preset, "Start from a named preset (paper-default)");
    gen->add_option("--out", gen_out, "Dataset directory (default: data_dir from the config)");

    ConfigArgs run_args;
    std::optional<std::uint64_t> run_seed;
    std::string run_out, run_alg, run_data;
    auto* run = app.add_subcommand("run", "Train one algorithm and write per-seed artifacts");
    run->add_option("--config", run_args.config, "Experiment config (JSON)");
    run->add_option("--preset", run_args.preset, "Start from a named preset (paper-default)");
    run->add_option("--seed", run_seed, "Run a single seed instead of the config's seed list");
    run->add_option("--out", run_out, "Output directory (default: out_dir from the config)");
    run->add_option("--algorithm", run_alg, "Override fed.algorithm");
    run->add_option("--data", run_data, "Dataset directory (default: data_dir from the config)");

    std::vector<std::string> report_runs;
    std::string report_out;
    auto* report = app.add_subcommand("report", "Aggregate run summaries across seeds");
    report->add_option("--runs", report_runs, "Run directories (OUT or OUT/seed_<n>)")->required();
    report->add_option("--out", report_out, "Report JSON path; a CSV is written next to it")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? ok : usage_error;
    }
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        if (*gen) {
            return cmd_generate_data(gen_args, gen_out);
        }
        if (*run) {
            return cmd_run(run_args, run_seed, run_out, run_alg, run_data);
        }
        return cmd_report(report_runs, report_out);
    } catch (const fofl::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return config_error;
    } catch (const fofl::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return data_error;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return runtime_error;
    }
}
