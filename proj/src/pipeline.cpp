#include "fofl/pipeline.hpp"

#include "fofl/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

namespace fofl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string data_hash(const ExperimentConfig& cfg)
{
    json j = to_json(cfg);
    json d = {{"fleet", j["fleet"]}, {"data_seed", cfg.data_seed}, {"split", j["split"]}};
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(d.dump())));
    return buf;
}

std::string client_file(std::size_t k)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "clients/client_%04zu.csv", k);
    return buf;
}

std::vector<std::string> trip_ids(const std::vector<TripTrace>& trips)
{
    std::vector<std::string> ids;
    for (const auto& t : trips) {
        ids.push_back(t.trip_id);
    }
    return ids;
}

std::string fmt_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

json manifest_to_json(const DataManifest& m)
{
    json clients = json::array();
    for (const auto& c : m.clients) {
        clients.push_back({{"client_id", c.client_id},
                           {"file", c.file},
                           {"train", c.split.train},
                           {"val", c.split.val},
                           {"test", c.split.test}});
    }
    return {{"format", "fofl-dataset-1"},
            {"data_hash", m.data_hash},
            {"data_seed", m.data_seed},
            {"dt", m.dt},
            {"K", m.clients.size()},
            {"clients", clients}};
}

DataManifest manifest_from_json(const json& j)
{
    try {
        DataManifest m;
        m.data_hash = j.at("data_hash").get<std::string>();
        m.data_seed = j.at("data_seed").get<std::uint64_t>();
        m.dt = j.at("dt").get<double>();
        for (const auto& c : j.at("clients")) {
            ManifestClient mc;
            mc.client_id = c.at("client_id").get<std::size_t>();
            mc.file = c.at("file").get<std::string>();
            mc.split.train = c.at("train").get<std::vector<std::string>>();
            mc.split.val = c.at("val").get<std::vector<std::string>>();
            mc.split.test = c.at("test").get<std::vector<std::string>>();
            m.clients.push_back(std::move(mc));
        }
        return m;
    } catch (const json::exception& e) {
        throw DataError(std::string("dataset manifest is malformed: ") + e.what());
    }
}

DataManifest generate_data(const ExperimentConfig& cfg, const fs::path& out_dir)
{
    cfg.validate();
    std::error_code ec;
    fs::create_directories(out_dir / "clients", ec);
    if (ec) {
        throw DataError("cannot create " + (out_dir / "clients").string() + ": " + ec.message());
    }
    const auto fleet = synth_fleet(cfg.fleet, cfg.data_seed);
    DataManifest m;
    m.data_hash = data_hash(cfg);
    m.data_seed = cfg.data_seed;
    m.dt = cfg.fleet.dt;
    for (std::size_t k = 0; k < fleet.size(); ++k) {
        ManifestClient mc;
        mc.client_id = k;
        mc.file = client_file(k);
        RngStream rng(cfg.data_seed, 0, k, StreamPurpose::split);
        mc.split = assign_splits(trip_ids(fleet[k]), cfg.split, rng);
        write_trips_csv(out_dir / mc.file, fleet[k]);
        m.clients.push_back(std::move(mc));
    }
    std::ofstream out(out_dir / "manifest.json");
    if (!out) {
        throw DataError("cannot write " + (out_dir / "manifest.json").string());
    }
    out << manifest_to_json(m).dump(2) << "\n";
    return m;
}

std::vector<ClientDataset> load_datasets(const ExperimentConfig& cfg, const fs::path& data_dir)
{
    const fs::path manifest_path = data_dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) {
        throw DataError("dataset manifest not found at " + manifest_path.string() +
                        "; create it with `fofl generate-data --config <cfg> --out " + data_dir.string() + "`");
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError("dataset manifest " + manifest_path.string() + " is not valid JSON: " + e.what());
    }
    const DataManifest m = manifest_from_json(j);
    if (m.clients.size() != cfg.fed.clients) {
        throw DataError("dataset has " + std::to_string(m.clients.size()) + " clients but the config expects K=" +
                        std::to_string(cfg.fed.clients));
    }
    if (m.data_hash != data_hash(cfg)) {
        spdlog::warn("dataset at {} was generated from a different fleet/split configuration", data_dir.string());
    }
    std::vector<ClientDataset> out;
    out.reserve(m.clients.size());
    for (std::size_t k = 0; k < m.clients.size(); ++k) {
        const auto& mc = m.clients[k];
        if (mc.client_id != k) {
            throw DataError("dataset manifest lists clients out of order");
        }
        const auto ingest = ingest_csv(data_dir / mc.file, cfg.schema);
        out.push_back(build_client_dataset(k, ingest.trips, mc.split, cfg.window));
    }
    return out;
}

std::vector<ClientDataset> synth_datasets(const ExperimentConfig& cfg)
{
    const auto fleet = synth_fleet(cfg.fleet, cfg.data_seed);
    std::vector<ClientDataset> out;
    out.reserve(fleet.size());
    for (std::size_t k = 0; k < fleet.size(); ++k) {
        RngStream rng(cfg.data_seed, 0, k, StreamPurpose::split);
        const auto split = assign_splits(trip_ids(fleet[k]), cfg.split, rng);
        out.push_back(build_client_dataset(k, fleet[k], split, cfg.window));
    }
    return out;
}

std::string metrics_round_csv(std::uint64_t seed, Algorithm algorithm, std::span<const RoundRecord> log, double eps_d)
{
    std::ostringstream out;
    out << "seed,round,algorithm,rmse,mae,mape,d_mean,d_cv,n_participants,t_train_s,t_diag_s\n";
    for (const auto& r : log) {
        out << seed << ',' << r.round << ',' << algorithm_name(algorithm) << ',';
        if (r.metrics) {
            out << fmt_double(r.metrics->rmse) << ',' << fmt_double(r.metrics->mae) << ','
                << fmt_double(r.metrics->mape) << ',';
        } else {
            out << ",,,";
        }
        if (!r.clients.empty()) {
            const auto d = drift_stats(r, eps_d);
            out << fmt_double(d.d_mean) << ',' << fmt_double(d.d_cv) << ',';
        } else {
            out << ",,";
        }
        out << r.participants.size() << ',' << fmt_double(r.t_train_s) << ',' << fmt_double(r.t_diag_s) << '\n';
    }
    return out.str();
}

json build_summary(const ExperimentConfig& cfg, std::uint64_t seed, const ExperimentResult& result)
{
    const auto& log = result.log;
    const FedConfig& fed = cfg.fed;
    json s;
    s["algorithm"] = std::string(algorithm_name(fed.algorithm));
    s["seed"] = seed;
    s["config_hash"] = config_hash(cfg);
    s["rounds"] = log.size();
    s["sweep"] = {{"C", fed.participation}, {"p_leave", fed.churn.p_leave}, {"p_join", fed.churn.p_join}};

    std::vector<double> rmse_series;
    std::vector<std::size_t> eval_rounds;
    for (const auto& r : log) {
        if (r.metrics) {
            rmse_series.push_back(r.metrics->rmse);
            eval_rounds.push_back(r.round);
        }
    }
    const RoundRecord* last_eval = nullptr;
    for (auto it = log.rbegin(); it != log.rend(); ++it) {
        if (it->metrics) {
            last_eval = &*it;
            break;
        }
    }
    if (last_eval) {
        s["final"] = {{"round", last_eval->round},
                      {"rmse", last_eval->metrics->rmse},
                      {"mae", last_eval->metrics->mae},
                      {"mape", last_eval->metrics->mape}};
    } else {
        s["final"] = nullptr;
    }
    const auto best = best_so_far(rmse_series);
    s["best_so_far"] = {{"rmse", best.empty() ? json(nullptr) : json(best.back())}};

    json rtt = json::array();
    for (double theta : fed.metrics.thresholds) {
        const auto t = rounds_to_threshold(rmse_series, theta);
        rtt.push_back({{"theta", theta},
                       {"round", t ? json(eval_rounds[*t]) : json("NR")}});
    }
    s["rounds_to_threshold"] = rtt;

    const RoundRecord* last_active = nullptr;
    for (auto it = log.rbegin(); it != log.rend(); ++it) {
        if (!it->clients.empty()) {
            last_active = &*it;
            break;
        }
    }
    if (last_active) {
        const auto d = drift_stats(*last_active, fed.metrics.eps_d);
        s["drift_stats"] = {{"round", last_active->round}, {"d_mean", d.d_mean}, {"d_cv", d.d_cv}};
    } else {
        s["drift_stats"] = nullptr;
    }

    json coupling = {{"round", cfg.analysis_round}};
    try {
        const auto c = roughness_drift_coupling(log, cfg.analysis_round);
        coupling["pearson"] = c.pearson;
        coupling["spearman"] = c.spearman;
        coupling["n"] = c.n;
    } catch (const std::exception& e) {
        coupling["error"] = e.what();
    }
    s["roughness_drift_coupling"] = coupling;

    const auto early = early_drift_predictor(log, cfg.early_probe_round, cfg.early_window_first,
                                             cfg.early_window_last);
    json ed = {{"probe_round", cfg.early_probe_round},
               {"window", {cfg.early_window_first, cfg.early_window_last}},
               {"clients", early.size()}};
    if (early.size() >= 2) {
        std::vector<double> x, y;
        for (const auto& e : early) {
            x.push_back(e.roughness);
            y.push_back(e.mean_drift);
        }
        try {
            ed["pearson"] = pearson(x, y);
            ed["spearman"] = spearman(x, y);
        } catch (const std::exception& e) {
            ed["error"] = e.what();
        }
    }
    s["early_drift_predictor"] = ed;

    // Drift by roughness tertile at the analysis round.
    json strat = {{"round", cfg.analysis_round}};
    const auto rec = std::find_if(log.begin(), log.end(), [&](const RoundRecord& r) { return r.round == cfg.analysis_round; });
    if (rec != log.end()) {
        std::vector<std::pair<std::size_t, double>> values;
        std::map<std::size_t, double> drift;
        for (const auto& c : rec->clients) {
            if (c.roughness) {
                values.emplace_back(c.client, *c.roughness);
                drift[c.client] = c.drift;
            }
        }
        if (!values.empty()) {
            const auto t = stratify_tertiles(values);
            auto mean_drift = [&](const std::vector<std::size_t>& ids) {
                if (ids.empty()) {
                    return json(nullptr);
                }
                double sum = 0.0;
                for (auto id : ids) {
                    sum += drift[id];
                }
                return json(sum / static_cast<double>(ids.size()));
            };
            strat["low"] = mean_drift(t.low);
            strat["med"] = mean_drift(t.med);
            strat["high"] = mean_drift(t.high);
        }
    }
    s["stratify_tertiles"] = strat;

    const auto oh = overhead_report(log, fed.probe_every);
    s["overhead_report"] = {{"t_probe_s", oh.t_probe_s},
                            {"t_nonprobe_s", oh.t_nonprobe_s},
                            {"amortized_s", oh.amortized_s},
                            {"diag_fraction", oh.diag_fraction},
                            {"probe_every", fed.probe_every}};
    return s;
}

void write_model(const fs::path& path, const ParamVector& params)
{
    static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    const std::uint64_t n = params.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(reinterpret_cast<const char*>(params.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!out) {
        throw DataError("failed writing " + path.string());
    }
}

ParamVector read_model(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    if (!in || n > (1ULL << 32)) {
        throw DataError("model file " + path.string() + " has a bad header");
    }
    ParamVector p(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) {
        throw DataError("model file " + path.string() + " is truncated");
    }
    return p;
}

ExperimentResult run_and_write(const ExperimentConfig& cfg, std::span<const ClientDataset> data, std::uint64_t seed,
                               const fs::path& out_dir, std::size_t threads)
{
    ExperimentConfig run_cfg = cfg;
    run_cfg.fed.seed = seed;
    const fs::path dir = out_dir / ("seed_" + std::to_string(seed));
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw DataError("cannot create " + dir.string() + ": " + ec.message());
    }
    RunOptions opts;
    opts.threads = threads;
    auto result = run_experiment(run_cfg.fed, data, opts);

    std::ofstream csv(dir / "metrics_round.csv", std::ios::binary);
    csv << metrics_round_csv(seed, run_cfg.fed.algorithm, result.log, run_cfg.fed.metrics.eps_d);
    std::ofstream summary(dir / "summary.json");
    summary << build_summary(run_cfg, seed, result).dump(2) << "\n";
    if (!csv || !summary) {
        throw DataError("failed writing run artifacts under " + dir.string());
    }
    write_model(dir / "model_final.bin", result.final_params);
    return result;
}

std::vector<json> collect_summaries(std::span<const fs::path> runs)
{
    std::vector<json> out;
    auto load = [&](const fs::path& p) {
        std::ifstream in(p);
        if (!in) {
            throw DataError("cannot open " + p.string());
        }
        try {
            out.push_back(json::parse(in));
        } catch (const json::parse_error& e) {
            throw DataError(p.string() + " is not valid JSON: " + e.what());
        }
    };
    for (const auto& run : runs) {
        if (fs::is_regular_file(run / "summary.json")) {
            load(run / "summary.json");
            continue;
        }
        if (!fs::is_directory(run)) {
            throw DataError("run directory not found: " + run.string());
        }
        std::vector<fs::path> found;
        for (const auto& entry : fs::directory_iterator(run)) {
            if (entry.is_directory() && entry.path().filename().string().rfind("seed_", 0) == 0 &&
                fs::is_regular_file(entry.path() / "summary.json")) {
                found.push_back(entry.path() / "summary.json");
            }
        }
        if (found.empty()) {
            throw DataError("no summary.json found under " + run.string());
        }
        std::sort(found.begin(), found.end());
        for (const auto& p : found) {
            load(p);
        }
    }
    return out;
}

ReportOutput aggregate_summaries(std::span<const json> summaries)
{
    if (summaries.empty()) {
        throw DataError("report: no run summaries to aggregate");
    }
    const std::string hash = summaries.front().at("config_hash").get<std::string>();
    for (const auto& s : summaries) {
        if (s.at("config_hash").get<std::string>() != hash) {
            throw ConfigError("report: runs come from different configurations (config_hash " + hash + " vs " +
                              s.at("config_hash").get<std::string>() + "); refusing to aggregate");
        }
    }

    using Key = std::tuple<std::string, double, double, double>;
    std::map<Key, std::vector<const json*>> groups;
    std::vector<Key> order;
    for (const auto& s : summaries) {
        Key key{s.at("algorithm").get<std::string>(), s.at("sweep").at("C").get<double>(),
                s.at("sweep").at("p_leave").get<double>(), s.at("sweep").at("p_join").get<double>()};
        auto [it, inserted] = groups.try_emplace(key);
        if (inserted) {
            order.push_back(key);
        }
        it->second.push_back(&s);
    }

    auto stat = [](const std::vector<double>& v) {
        if (v.empty()) {
            return json{{"mean", nullptr}, {"std", nullptr}, {"n", 0}};
        }
        return json{{"mean", mean(v)}, {"std", pop_std(v)}, {"n", v.size()}};
    };
    auto field = [](const json& s, std::initializer_list<const char*> path, std::vector<double>& out) {
        const json* cur = &s;
        for (const char* key : path) {
            if (!cur->is_object() || !cur->contains(key)) {
                return;
            }
            cur = &(*cur)[key];
        }
        if (cur->is_number()) {
            out.push_back(cur->get<double>());
        }
    };

    json rows = json::array();
    std::ostringstream csv;
    csv << "algorithm,C,p_leave,p_join,n_seeds,rmse_mean,rmse_std,mae_mean,mae_std,mape_mean,mape_std,"
           "d_mean_mean,d_mean_std,d_cv_mean,d_cv_std,amortized_s_mean,overhead_pct\n";
    std::map<std::tuple<double, double, double>, double> fedavg_time;
    for (const auto& key : order) {
        if (std::get<0>(key) == "FedAvg") {
            std::vector<double> t;
            for (const auto* s : groups[key]) {
                field(*s, {"overhead_report", "amortized_s"}, t);
            }
            if (!t.empty()) {
                fedavg_time[{std::get<1>(key), std::get<2>(key), std::get<3>(key)}] = mean(t);
            }
        }
    }
    for (const auto& key : order) {
        const auto& members = groups[key];
        std::vector<double> rm, ma, mp, dm, dc, am;
        std::vector<std::uint64_t> seeds;
        for (const auto* s : members) {
            field(*s, {"final", "rmse"}, rm);
            field(*s, {"final", "mae"}, ma);
            field(*s, {"final", "mape"}, mp);
            field(*s, {"drift_stats", "d_mean"}, dm);
            field(*s, {"drift_stats", "d_cv"}, dc);
            field(*s, {"overhead_report", "amortized_s"}, am);
            seeds.push_back(s->at("seed").get<std::uint64_t>());
        }
        json row = {{"algorithm", std::get<0>(key)},
                    {"C", std::get<1>(key)},
                    {"p_leave", std::get<2>(key)},
                    {"p_join", std::get<3>(key)},
                    {"seeds", seeds},
                    {"rmse", stat(rm)},
                    {"mae", stat(ma)},
                    {"mape", stat(mp)},
                    {"d_mean", stat(dm)},
                    {"d_cv", stat(dc)},
                    {"amortized_s", stat(am)}};
        json overhead = nullptr;
        const auto ref = fedavg_time.find({std::get<1>(key), std::get<2>(key), std::get<3>(key)});
        if (ref != fedavg_time.end() && !am.empty() && ref->second > 0.0) {
            overhead = overhead_percent(mean(am), ref->second);
        }
        row["overhead_pct"] = overhead;

        // Rounds-to-threshold: mean over seeds that reached theta, plus the reach count.
        json rtt = json::array();
        std::map<double, std::pair<std::vector<double>, std::size_t>> by_theta;
        std::vector<double> thetas;
        for (const auto* s : members) {
            for (const auto& e : s->value("rounds_to_threshold", json::array())) {
                const double theta = e.at("theta").get<double>();
                auto [it, inserted] = by_theta.try_emplace(theta);
                if (inserted) {
                    thetas.push_back(theta);
                }
                it->second.second += 1;
                if (e.at("round").is_number()) {
                    it->second.first.push_back(e.at("round").get<double>());
                }
            }
        }
        for (double theta : thetas) {
            const auto& [reached, total] = by_theta[theta];
            rtt.push_back({{"theta", theta},
                           {"round_mean", reached.empty() ? json("NR") : json(mean(reached))},
                           {"reached", reached.size()},
                           {"runs", total}});
        }
        row["rounds_to_threshold"] = rtt;
        rows.push_back(row);

        auto cell = [](const json& v) { return v.is_number() ? fmt_double(v.get<double>()) : std::string(); };
        csv << std::get<0>(key) << ',' << fmt_double(std::get<1>(key)) << ',' << fmt_double(std::get<2>(key)) << ','
            << fmt_double(std::get<3>(key)) << ',' << members.size();
        for (const char* k : {"rmse", "mae", "mape", "d_mean", "d_cv"}) {
            csv << ',' << cell(row[k]["mean"]) << ',' << cell(row[k]["std"]);
        }
        csv << ',' << cell(row["amortized_s"]["mean"]) << ',' << cell(overhead) << '\n';
    }
    ReportOutput out;
    out.json = {{"config_hash", hash}, {"runs", summaries.size()}, {"rows", rows}};
    out.csv = csv.str();
    return out;
}

} // namespace fofl
