#include "fofl/config.hpp"

#include "fofl/errors.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

namespace fofl {

using nlohmann::json;

// Field tables shared by the JSON writer and reader.

template <typename V>
void describe(V& v, SocCurve& c)
{
    v("soc", c.soc);
    v("value", c.value);
}

template <typename V>
void describe(V& v, EcmParams& p)
{
    v("q_cell_ah", p.q_cell_ah);
    v("v_oc", p.v_oc);
    v("r0", p.r0);
    v("r1", p.r1);
    v("c1", p.c1);
    v("n_series", p.n_series);
    v("n_parallel", p.n_parallel);
    v("soc0", p.soc0);
}

template <typename V>
void describe(V& v, FleetConfig& f)
{
    v("clients", f.clients);
    v("trips_min", f.trips_min);
    v("trips_max", f.trips_max);
    v("trip_seconds_min", f.trip_seconds_min);
    v("trip_seconds_max", f.trip_seconds_max);
    v("dt", f.dt);
    v("mass_min_kg", f.mass_min_kg);
    v("mass_max_kg", f.mass_max_kg);
    v("cda_min", f.cda_min);
    v("cda_max", f.cda_max);
    v("crr_min", f.crr_min);
    v("crr_max", f.crr_max);
    v("aux_min_w", f.aux_min_w);
    v("aux_max_w", f.aux_max_w);
    v("motor_efficiency", f.motor_efficiency);
    v("regen_efficiency", f.regen_efficiency);
    v("grade_std_max", f.grade_std_max);
    v("ambient_min_c", f.ambient_min_c);
    v("ambient_max_c", f.ambient_max_c);
    v("regime_skew", f.regime_skew);
    v("speed_scale", f.speed_scale);
    v("ecm", f.ecm);
}

template <typename V>
void describe(V& v, FracConfig& c)
{
    v("alpha", c.alpha);
    v("delta", c.delta);
    v("clip_enabled", c.clip_enabled);
    v("p_min", c.p_min);
    v("p_max", c.p_max);
}

template <typename V>
void describe(V& v, RoughnessConfig& c)
{
    v("M", c.directions);
    v("ell", c.radius);
    v("m", c.segments);
    v("B_probe", c.probe_batch);
    v("eps_A", c.eps_a);
    v("eps_T", c.eps_t);
}

template <typename V>
void describe(V& v, SpectralConfig& c)
{
    v("beta_kappa", c.beta_kappa);
    v("eps_F", c.eps_f);
    v("power_iters", c.power_iters);
}

template <typename V>
void describe(V& v, FedProxConfig& c)
{
    v("mu", c.mu);
}

template <typename V>
void describe(V& v, FedAdamConfig& c)
{
    v("server_lr", c.server_lr);
    v("beta1", c.beta1);
    v("beta2", c.beta2);
    v("eps", c.eps);
}

template <typename V>
void describe(V& v, ChurnConfig& c)
{
    v("p_leave", c.p_leave);
    v("p_join", c.p_join);
    v("initial_available_fraction", c.initial_available_fraction);
}

template <typename V>
void describe(V& v, MetricConfig& c)
{
    v("eps_Y", c.eps_y);
    v("eps_D", c.eps_d);
    v("thresholds", c.thresholds);
    v("averaging", c.averaging);
    v("eval_every", c.eval_every);
}

template <typename V>
void describe(V& v, FedConfig& c)
{
    v("K", c.clients);
    v("C", c.participation);
    v("T", c.rounds);
    v("H", c.local_steps);
    v("E", c.epochs);
    v("B", c.batch_size);
    v("eta0", c.eta0);
    v("lr_schedule", c.lr_schedule);
    v("lambda", c.lambda);
    v("tau_I", c.tau_i);
    v("frac", c.frac);
    v("rough", c.rough);
    v("spec", c.spec);
    v("probe_every", c.probe_every);
    v("probe_all", c.probe_all);
    v("algorithm", c.algorithm);
    v("fedprox", c.fedprox);
    v("fedadam", c.fedadam);
    v("churn", c.churn);
    v("hidden1", c.hidden1);
    v("hidden2", c.hidden2);
    v("metrics", c.metrics);
}

template <typename V>
void describe(V& v, SplitRatios& s)
{
    v("train", s.train);
    v("val", s.val);
    v("test", s.test);
}

template <typename V>
void describe(V& v, CsvSchema& s)
{
    v("vehicle_id", s.vehicle_id);
    v("trip_id", s.trip_id);
    v("timestamp_s", s.timestamp_s);
    v("speed_mps", s.speed_mps);
    v("accel_mps2", s.accel_mps2);
    v("grade_rad", s.grade_rad);
    v("ambient_c", s.ambient_c);
    v("aux_w", s.aux_w);
    v("pack_power_w", s.pack_power_w);
    v("pack_voltage_v", s.pack_voltage_v);
    v("pack_current_a", s.pack_current_a);
    v("dt", s.dt);
    v("gap_factor", s.gap_factor);
}

template <typename V>
void describe(V& v, ExperimentConfig& c)
{
    v("fed", c.fed);
    v("fleet", c.fleet);
    v("split", c.split);
    v("schema", c.schema);
    v("window", c.window);
    v("data_seed", c.data_seed);
    v("data_dir", c.data_dir);
    v("out_dir", c.out_dir);
    v("seeds", c.seeds);
    v("analysis_round", c.analysis_round);
    v("early_probe_round", c.early_probe_round);
    v("early_window_first", c.early_window_first);
    v("early_window_last", c.early_window_last);
}

namespace {

template <typename T, typename = void>
struct Described : std::false_type {};

struct NullVisitor {
    template <typename T>
    void operator()(const char*, T&)
    {
    }
};

template <typename T>
struct Described<T, std::void_t<decltype(describe(std::declval<NullVisitor&>(), std::declval<T&>()))>>
    : std::true_type {};

std::string lr_name(LrSchedule s)
{
    return s == LrSchedule::constant ? "constant" : "inv_sqrt";
}

std::string averaging_name(Averaging a)
{
    switch (a) {
    case Averaging::micro:
        return "micro";
    case Averaging::macro:
        return "macro";
    case Averaging::weighted:
        return "weighted";
    }
    return "micro";
}

json encode(const double& v) { return v; }
json encode(const bool& v) { return v; }
json encode(const int& v) { return v; }
json encode(const std::size_t& v) { return v; }
json encode(const std::string& v) { return v; }
json encode(const Algorithm& a) { return std::string(algorithm_name(a)); }
json encode(const LrSchedule& s) { return lr_name(s); }
json encode(const Averaging& a) { return averaging_name(a); }

template <typename T>
json encode(const std::vector<T>& v)
{
    json arr = json::array();
    for (const auto& e : v) {
        arr.push_back(encode(e));
    }
    return arr;
}

template <typename T>
    requires Described<T>::value
json encode(const T& obj)
{
    json j = json::object();
    auto writer = [&j](const char* key, auto& field) { j[key] = encode(field); };
    describe(writer, const_cast<T&>(obj));
    return j;
}

[[noreturn]] void fail(const std::string& path, const std::string& what)
{
    throw ConfigError("config: '" + path + "' " + what);
}

void decode(const json& j, double& out, const std::string& path)
{
    if (!j.is_number()) {
        fail(path, "must be a number");
    }
    out = j.get<double>();
}

void decode(const json& j, bool& out, const std::string& path)
{
    if (!j.is_boolean()) {
        fail(path, "must be a boolean");
    }
    out = j.get<bool>();
}

template <typename I>
    requires std::is_integral_v<I>
void decode(const json& j, I& out, const std::string& path)
{
    if (j.is_number_unsigned()) {
        out = static_cast<I>(j.get<std::uint64_t>());
        return;
    }
    if (j.is_number_integer()) {
        const auto v = j.get<std::int64_t>();
        if (v < 0 && std::is_unsigned_v<I>) {
            fail(path, "must be non-negative");
        }
        out = static_cast<I>(v);
        return;
    }
    fail(path, "must be an integer");
}

void decode(const json& j, std::string& out, const std::string& path)
{
    if (!j.is_string()) {
        fail(path, "must be a string");
    }
    out = j.get<std::string>();
}

void decode(const json& j, Algorithm& out, const std::string& path)
{
    std::string name;
    decode(j, name, path);
    const auto a = parse_algorithm(name);
    if (!a) {
        std::string valid;
        for (const auto& n : algorithm_names()) {
            valid += (valid.empty() ? "" : ", ") + n;
        }
        fail(path, "unknown algorithm '" + name + "' (valid: " + valid + ")");
    }
    out = *a;
}

void decode(const json& j, LrSchedule& out, const std::string& path)
{
    std::string name;
    decode(j, name, path);
    if (name == "constant") {
        out = LrSchedule::constant;
    } else if (name == "inv_sqrt") {
        out = LrSchedule::inv_sqrt;
    } else {
        fail(path, "must be 'constant' or 'inv_sqrt'");
    }
}

void decode(const json& j, Averaging& out, const std::string& path)
{
    std::string name;
    decode(j, name, path);
    if (name == "micro") {
        out = Averaging::micro;
    } else if (name == "macro") {
        out = Averaging::macro;
    } else if (name == "weighted") {
        out = Averaging::weighted;
    } else {
        fail(path, "must be 'micro', 'macro' or 'weighted'");
    }
}

template <typename T>
void decode(const json& j, std::vector<T>& out, const std::string& path)
{
    if (!j.is_array()) {
        fail(path, "must be an array");
    }
    out.clear();
    for (std::size_t i = 0; i < j.size(); ++i) {
        T v{};
        decode(j[i], v, path + "[" + std::to_string(i) + "]");
        out.push_back(std::move(v));
    }
}

template <typename T>
    requires Described<T>::value
void decode(const json& j, T& obj, const std::string& path)
{
    if (!j.is_object()) {
        fail(path.empty() ? "<root>" : path, "must be an object");
    }
    std::set<std::string> known;
    auto reader = [&](const char* key, auto& field) {
        known.insert(key);
        const auto it = j.find(key);
        if (it != j.end()) {
            decode(*it, field, path.empty() ? std::string(key) : path + "." + key);
        }
    };
    describe(reader, obj);
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) {
            fail(path.empty() ? key : path + "." + key, "is not a recognized key");
        }
    }
}

} // namespace

void ExperimentConfig::validate() const
{
    fed.validate();
    fleet.validate();
    if (fleet.clients != fed.clients) {
        throw ConfigError("config: fleet.clients (" + std::to_string(fleet.clients) + ") must equal fed.K (" +
                          std::to_string(fed.clients) + ")");
    }
    if (window < 1) {
        throw ConfigError("config: window must be >= 1");
    }
    if (!(split.train > 0.0) || !(split.val >= 0.0) || !(split.test >= 0.0) ||
        std::fabs(split.train + split.val + split.test - 1.0) > 1e-9) {
        throw ConfigError("config: split ratios must be non-negative, train > 0, and sum to 1");
    }
    if (std::fabs(schema.dt - fleet.dt) > 1e-12) {
        throw ConfigError("config: schema.dt must equal fleet.dt");
    }
    if (!(schema.gap_factor >= 1.0)) {
        throw ConfigError("config: schema.gap_factor must be >= 1");
    }
    if (seeds.empty()) {
        throw ConfigError("config: seeds must not be empty");
    }
    if (early_window_first > early_window_last) {
        throw ConfigError("config: early_window_first must be <= early_window_last");
    }
}

ExperimentConfig paper_default_config()
{
    ExperimentConfig c;
    c.fed = FedConfig{};
    c.fleet.clients = c.fed.clients;
    return c;
}

nlohmann::json to_json(const ExperimentConfig& cfg)
{
    return encode(cfg);
}

ExperimentConfig config_from_json(const nlohmann::json& j, const ExperimentConfig& base)
{
    ExperimentConfig cfg = base;
    decode(j, cfg, "");
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, const ExperimentConfig& base)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("config: cannot open " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j, base);
}

std::string config_hash(const ExperimentConfig& cfg)
{
    json j = to_json(cfg);
    j.erase("seeds");
    j.erase("data_dir");
    j.erase("out_dir");
    j["fed"].erase("algorithm");
    j["fed"].erase("C");
    j["fed"]["churn"].erase("p_leave");
    j["fed"]["churn"].erase("p_join");
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
    return buf;
}

} // namespace fofl
