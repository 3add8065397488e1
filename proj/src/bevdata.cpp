#include "fofl/bevdata.hpp"

#include "fofl/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace fofl {

// ---------------------------------------------------------------------------
// ECM

double SocCurve::at(double s) const
{
    if (soc.empty()) {
        throw std::logic_error("SocCurve: empty table");
    }
    if (s <= soc.front()) {
        return value.front();
    }
    if (s >= soc.back()) {
        return value.back();
    }
    const auto it = std::upper_bound(soc.begin(), soc.end(), s);
    const std::size_t hi = static_cast<std::size_t>(it - soc.begin());
    const std::size_t lo = hi - 1;
    const double w = (s - soc[lo]) / (soc[hi] - soc[lo]);
    return value[lo] + w * (value[hi] - value[lo]);
}

SocCurve SocCurve::constant(double v)
{
    return eleven_knots(std::vector<double>(11, v));
}

SocCurve SocCurve::eleven_knots(const std::vector<double>& values)
{
    if (values.size() != 11) {
        throw std::invalid_argument("SocCurve::eleven_knots needs 11 values");
    }
    SocCurve c;
    for (int i = 0; i <= 10; ++i) {
        c.soc.push_back(i / 10.0);
    }
    c.value = values;
    return c;
}

EcmParams EcmParams::default_cell()
{
    EcmParams p;
    p.q_cell_ah = 3.0;
    p.v_oc = SocCurve::eleven_knots({3.00, 3.45, 3.55, 3.62, 3.67, 3.72, 3.79, 3.87, 3.96, 4.06, 4.18});
    p.r0 = SocCurve::eleven_knots({0.030, 0.024, 0.021, 0.020, 0.019, 0.019, 0.019, 0.019, 0.020, 0.020, 0.021});
    p.r1 = SocCurve::eleven_knots({0.020, 0.016, 0.014, 0.013, 0.012, 0.012, 0.012, 0.012, 0.013, 0.013, 0.014});
    p.c1 = SocCurve::eleven_knots({1500, 1800, 2000, 2200, 2300, 2400, 2400, 2400, 2300, 2200, 2100});
    p.n_series = 96;
    p.n_parallel = 40;
    p.soc0 = 0.9;
    return p;
}

void EcmParams::validate() const
{
    if (!(q_cell_ah > 0.0)) {
        throw ConfigError("ecm.q_cell_ah must be positive");
    }
    if (n_series < 1 || n_parallel < 1) {
        throw ConfigError("ecm.n_series and ecm.n_parallel must be >= 1");
    }
    if (!(soc0 >= 0.0 && soc0 <= 1.0)) {
        throw ConfigError("ecm.soc0 must lie in [0, 1]");
    }
    auto check_curve = [](const SocCurve& c, const char* name, bool positive) {
        if (c.soc.empty() || c.soc.size() != c.value.size()) {
            throw ConfigError(std::string("ecm.") + name + ": knot and value tables must be non-empty and equal length");
        }
        if (!std::is_sorted(c.soc.begin(), c.soc.end()) ||
            std::adjacent_find(c.soc.begin(), c.soc.end()) != c.soc.end()) {
            throw ConfigError(std::string("ecm.") + name + ": SoC knots must be strictly increasing");
        }
        if (positive && std::any_of(c.value.begin(), c.value.end(), [](double v) { return !(v > 0.0); })) {
            throw ConfigError(std::string("ecm.") + name + " must be positive");
        }
    };
    check_curve(v_oc, "v_oc", true);
    check_curve(r0, "r0", true);
    check_curve(r1, "r1", true);
    check_curve(c1, "c1", true);
    if (!std::is_sorted(v_oc.value.begin(), v_oc.value.end())) {
        throw ConfigError("ecm.v_oc must be non-decreasing in SoC");
    }
}

EcmCell::EcmCell(EcmParams params) : params_(std::move(params)), soc_(params_.soc0) {}

EcmStep EcmCell::step_current(double cell_current, double dt)
{
    if (!(dt > 0.0)) {
        throw std::invalid_argument("ecm: dt must be positive");
    }
    const double voc = params_.v_oc.at(soc_);
    const double r0 = params_.r0.at(soc_);
    const double r1 = params_.r1.at(soc_);
    const double c1 = params_.c1.at(soc_);

    EcmStep out;
    out.v_cell = voc - v1_ - r0 * cell_current;
    const double v_pack = params_.n_series * out.v_cell;
    const double i_pack = params_.n_parallel * cell_current;
    out.p_pack = v_pack * i_pack;

    v1_ += dt * (cell_current - v1_ / r1) / c1;
    soc_ -= cell_current * dt / (params_.q_cell_ah * 3600.0);
    if (soc_ < 0.0 || soc_ > 1.0) {
        if (!clamped_) {
            spdlog::warn("ecm: SoC left [0, 1] ({:.4f}); clamping", soc_);
        }
        clamped_ = true;
        soc_ = std::clamp(soc_, 0.0, 1.0);
    }
    out.soc = soc_;
    out.v1 = v1_;
    return out;
}

double EcmCell::current_for_power(double pack_power) const
{
    const double cells = static_cast<double>(params_.n_series) * params_.n_parallel;
    const double p_cell = pack_power / cells;
    const double e = params_.v_oc.at(soc_) - v1_;
    const double r0 = params_.r0.at(soc_);
    // r0 I^2 - e I + p_cell = 0, smaller root in the cancellation-free form.
    const double disc = e * e - 4.0 * r0 * p_cell;
    if (disc <= 0.0) {
        return e / (2.0 * r0);
    }
    return 2.0 * p_cell / (e + std::sqrt(disc));
}

std::vector<EcmStep> ecm_simulate(const EcmParams& params, std::span<const double> cell_current, double dt)
{
    if (!(dt > 0.0)) {
        throw std::invalid_argument("ecm_simulate: dt must be positive");
    }
    EcmCell cell(params);
    std::vector<EcmStep> out;
    out.reserve(cell_current.size());
    for (double i : cell_current) {
        out.push_back(cell.step_current(i, dt));
    }
    return out;
}

std::vector<double> energy_increments(std::span<const double> p_pack, double dt)
{
    if (!(dt > 0.0)) {
        throw std::invalid_argument("energy_increments: dt must be positive");
    }
    std::vector<double> e(p_pack.size());
    for (std::size_t r = 0; r < p_pack.size(); ++r) {
        e[r] = p_pack[r] * dt / 3600.0;
    }
    return e;
}

// ---------------------------------------------------------------------------
// Windowing

FeatureExtractor default_features()
{
    return [](const TripSample& s) {
        return std::vector<double>{s.speed, s.accel, s.grade, s.ambient_c, s.aux_w, s.speed * s.speed * s.speed};
    };
}

std::size_t default_feature_count()
{
    return 6;
}

std::vector<Sample> make_windows(const TripTrace& trip, const FeatureExtractor& features, std::size_t window)
{
    if (window == 0) {
        throw std::invalid_argument("make_windows: window must be >= 1");
    }
    const std::size_t n = trip.samples.size();
    if (n < window) {
        spdlog::debug("make_windows: trip {} has {} samples < window {}", trip.trip_id, n, window);
        return {};
    }
    std::vector<double> power(n);
    std::vector<std::vector<double>> feats(n);
    for (std::size_t r = 0; r < n; ++r) {
        power[r] = trip.samples[r].pack_power_w;
        feats[r] = features(trip.samples[r]);
    }
    const auto e = energy_increments(power, trip.dt);
    const std::size_t dx = feats.front().size();

    std::vector<Sample> out;
    out.reserve(n - window + 1);
    for (std::size_t r = window - 1; r < n; ++r) {
        Sample s;
        s.x.reserve(window * dx);
        double y = 0.0;
        for (std::size_t j = r + 1 - window; j <= r; ++j) {
            s.x.insert(s.x.end(), feats[j].begin(), feats[j].end());
            y += e[j];
        }
        s.y = y;
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic fleet

void FleetConfig::validate() const
{
    auto range = [](double lo, double hi, const char* name, bool strictly_positive) {
        if (!(lo <= hi) || (strictly_positive ? !(lo > 0.0) : !(lo >= 0.0))) {
            throw ConfigError(std::string("fleet.") + name + ": invalid range");
        }
    };
    if (clients < 1) {
        throw ConfigError("fleet.clients must be >= 1");
    }
    if (trips_min < 1 || trips_min > trips_max) {
        throw ConfigError("fleet: need 1 <= trips_min <= trips_max");
    }
    if (!(dt > 0.0)) {
        throw ConfigError("fleet.dt must be positive");
    }
    range(trip_seconds_min, trip_seconds_max, "trip_seconds", true);
    range(mass_min_kg, mass_max_kg, "mass_kg", true);
    range(cda_min, cda_max, "cda", true);
    range(crr_min, crr_max, "crr", true);
    range(aux_min_w, aux_max_w, "aux_w", false);
    if (!(motor_efficiency > 0.0 && motor_efficiency <= 1.0) || !(regen_efficiency >= 0.0 && regen_efficiency <= 1.0)) {
        throw ConfigError("fleet: efficiencies must lie in (0, 1]");
    }
    if (!(grade_std_max >= 0.0) || !(regime_skew >= 0.0) || !(speed_scale >= 0.0)) {
        throw ConfigError("fleet: grade_std_max, regime_skew and speed_scale must be >= 0");
    }
    if (!(ambient_min_c <= ambient_max_c)) {
        throw ConfigError("fleet.ambient: invalid range");
    }
    ecm.validate();
}

namespace {

constexpr std::uint64_t kVehicleRound = 0;
constexpr double kAirDensity = 1.2;
constexpr double kGravity = 9.81;

struct Regime {
    double cruise_mps;
    double stop_rate; // per second
};

constexpr Regime kRegimes[3] = {{11.0, 1.0 / 45.0}, {17.0, 1.0 / 200.0}, {29.0, 0.0}};

std::size_t draw_regime(const std::vector<double>& mix, RngStream& rng)
{
    double u = rng.uniform();
    for (std::size_t i = 0; i < mix.size(); ++i) {
        if (u < mix[i]) {
            return i;
        }
        u -= mix[i];
    }
    return mix.size() - 1;
}

std::string vehicle_name(std::size_t client)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "v%03zu", client);
    return buf;
}

} // namespace

VehicleParams sample_vehicle(const FleetConfig& cfg, std::size_t client, std::uint64_t seed)
{
    RngStream rng(seed, kVehicleRound, client, StreamPurpose::fleet);
    VehicleParams v;
    v.mass_kg = rng.uniform(cfg.mass_min_kg, cfg.mass_max_kg);
    v.cda = rng.uniform(cfg.cda_min, cfg.cda_max);
    v.crr = rng.uniform(cfg.crr_min, cfg.crr_max);
    v.aux_w = rng.uniform(cfg.aux_min_w, cfg.aux_max_w);
    v.grade_std = rng.uniform(0.0, cfg.grade_std_max);
    v.ambient_c = rng.uniform(cfg.ambient_min_c, cfg.ambient_max_c);
    double total = 0.0;
    v.regime_mix.resize(3);
    for (auto& w : v.regime_mix) {
        w = std::pow(rng.uniform(1e-3, 1.0), cfg.regime_skew);
        total += w;
    }
    for (auto& w : v.regime_mix) {
        w /= total;
    }
    return v;
}

std::vector<std::vector<TripTrace>> synth_fleet(const FleetConfig& cfg, std::uint64_t seed)
{
    cfg.validate();
    std::vector<std::vector<TripTrace>> fleet(cfg.clients);
    for (std::size_t k = 0; k < cfg.clients; ++k) {
        const VehicleParams veh = sample_vehicle(cfg, k, seed);
        RngStream count_rng(seed, kVehicleRound, k, 100 + static_cast<std::uint64_t>(StreamPurpose::fleet));
        const std::size_t trips = cfg.trips_min + count_rng.uniform_index(cfg.trips_max - cfg.trips_min + 1);
        for (std::size_t q = 0; q < trips; ++q) {
            RngStream rng(seed, 1 + q, k, StreamPurpose::fleet);
            TripTrace trip;
            trip.vehicle_id = vehicle_name(k);
            char buf[48];
            std::snprintf(buf, sizeof buf, "%s_t%03zu", trip.vehicle_id.c_str(), q);
            trip.trip_id = buf;
            trip.dt = cfg.dt;

            const double seconds = rng.uniform(cfg.trip_seconds_min, cfg.trip_seconds_max);
            const auto steps = static_cast<std::size_t>(std::max(1.0, std::round(seconds / cfg.dt)));
            const double ambient = veh.ambient_c + 3.0 * rng.normal();
            const double aux = veh.aux_w * (1.0 + 0.5 * std::fabs(ambient - 20.0) / 20.0);

            EcmParams ecm = cfg.ecm;
            ecm.soc0 = std::clamp(cfg.ecm.soc0 - rng.uniform(0.0, 0.3), 0.05, 1.0);
            EcmCell cell(ecm);

            std::size_t regime = draw_regime(veh.regime_mix, rng);
            double stop_left = 0.0;
            double jitter = 0.0;
            double grade = 0.0;
            double v = 0.0;
            trip.samples.reserve(steps);
            for (std::size_t r = 0; r < steps; ++r) {
                if (rng.uniform() < cfg.dt / 90.0) {
                    regime = draw_regime(veh.regime_mix, rng);
                }
                if (stop_left <= 0.0 && rng.uniform() < kRegimes[regime].stop_rate * cfg.dt) {
                    stop_left = rng.uniform(5.0, 25.0);
                }
                jitter = 0.95 * jitter + 0.05 * rng.normal();
                const double target =
                    stop_left > 0.0 ? 0.0 : kRegimes[regime].cruise_mps * cfg.speed_scale * (1.0 + 0.3 * jitter);
                stop_left -= cfg.dt;
                const double noise = 0.3 * rng.normal() * cfg.speed_scale;
                const double a_cmd = std::clamp(0.35 * (target - v) + noise, -3.0, 2.5);
                const double v_next = std::max(0.0, v + a_cmd * cfg.dt);
                grade = std::clamp(0.98 * grade + 0.2 * veh.grade_std * rng.normal(), -0.1, 0.1);

                TripSample s;
                s.t = static_cast<double>(r) * cfg.dt;
                s.speed = v_next;
                s.accel = (v_next - v) / cfg.dt;
                s.grade = grade;
                s.ambient_c = ambient;
                s.aux_w = aux;
                const double force = veh.mass_kg * s.accel + 0.5 * kAirDensity * veh.cda * s.speed * s.speed +
                                     veh.crr * veh.mass_kg * kGravity + veh.mass_kg * kGravity * std::sin(s.grade);
                const double p_mech = force * s.speed;
                const double p_elec =
                    (p_mech >= 0.0 ? p_mech / cfg.motor_efficiency : p_mech * cfg.regen_efficiency) + aux;
                s.pack_power_w = cell.step_current(cell.current_for_power(p_elec), cfg.dt).p_pack;
                trip.samples.push_back(s);
                v = v_next;
            }
            fleet[k].push_back(std::move(trip));
        }
    }
    return fleet;
}

// ---------------------------------------------------------------------------
// CSV ingestion

namespace {

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                field.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    out.push_back(std::move(field));
    return out;
}

bool parse_double(const std::string& s, double& out)
{
    std::size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) {
        return false;
    }
    std::size_t e = s.find_last_not_of(" \t") + 1;
    const char* first = s.data() + b;
    const char* last = s.data() + e;
    if (*first == '+') {
        ++first;
    }
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last && std::isfinite(out);
}

struct RawRow {
    double t;
    double speed;
    std::optional<double> accel;
    double grade;
    double ambient;
    double aux;
    double power;
};

TripSample lerp(const RawRow& a, const RawRow& b, double t, bool derive_accel)
{
    const double w = (b.t == a.t) ? 0.0 : (t - a.t) / (b.t - a.t);
    auto mix = [w](double x, double y) { return x + w * (y - x); };
    TripSample s;
    s.t = t;
    s.speed = mix(a.speed, b.speed);
    s.accel = derive_accel ? 0.0 : mix(*a.accel, *b.accel);
    s.grade = mix(a.grade, b.grade);
    s.ambient_c = mix(a.ambient, b.ambient);
    s.aux_w = mix(a.aux, b.aux);
    s.pack_power_w = mix(a.power, b.power);
    return s;
}

void resample_group(const std::string& vehicle, const std::string& trip_id, std::vector<RawRow>& rows,
                    const CsvSchema& schema, bool derive_accel, std::vector<TripTrace>& out)
{
    std::stable_sort(rows.begin(), rows.end(), [](const RawRow& a, const RawRow& b) { return a.t < b.t; });
    rows.erase(std::unique(rows.begin(), rows.end(), [](const RawRow& a, const RawRow& b) { return a.t == b.t; }),
               rows.end());
    const double dt = schema.dt;
    const double max_gap = schema.gap_factor * dt;
    const double tol = 1e-9 * dt;

    std::size_t segment = 0;
    std::size_t start = 0;
    while (start < rows.size()) {
        std::size_t end = start; // inclusive end of the gap-free run
        while (end + 1 < rows.size() && rows[end + 1].t - rows[end].t <= max_gap) {
            ++end;
        }
        TripTrace trip;
        trip.vehicle_id = vehicle;
        trip.trip_id = segment == 0 ? trip_id : trip_id + "#" + std::to_string(segment + 1);
        trip.dt = dt;
        const double t0 = rows[start].t;
        std::size_t j = start;
        for (std::size_t i = 0;; ++i) {
            const double t = t0 + static_cast<double>(i) * dt;
            if (t > rows[end].t + tol) {
                break;
            }
            while (j < end && rows[j + 1].t <= t) {
                ++j;
            }
            const RawRow& a = rows[j];
            const RawRow& b = rows[std::min(j + 1, end)];
            trip.samples.push_back(lerp(a, b, t, derive_accel));
        }
        if (derive_accel) {
            for (std::size_t r = 1; r < trip.samples.size(); ++r) {
                trip.samples[r].accel = (trip.samples[r].speed - trip.samples[r - 1].speed) / dt;
            }
        }
        out.push_back(std::move(trip));
        ++segment;
        start = end + 1;
    }
}

} // namespace

IngestResult ingest_csv_text(const std::string& text, const CsvSchema& schema)
{
    if (!(schema.dt > 0.0) || !(schema.gap_factor >= 1.0)) {
        throw ConfigError("csv schema: dt must be positive and gap_factor >= 1");
    }
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) {
        throw DataError("telemetry csv: missing header row");
    }
    const auto header = split_csv_line(line);
    auto find = [&](const std::string& name) -> std::optional<std::size_t> {
        if (name.empty()) {
            return std::nullopt;
        }
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            return std::nullopt;
        }
        return static_cast<std::size_t>(it - header.begin());
    };
    auto require = [&](const std::string& name) {
        const auto idx = find(name);
        if (!idx) {
            throw DataError("telemetry csv: missing required column '" + name + "'");
        }
        return *idx;
    };
    const std::size_t c_vehicle = require(schema.vehicle_id);
    const std::size_t c_trip = require(schema.trip_id);
    const std::size_t c_time = require(schema.timestamp_s);
    const std::size_t c_speed = require(schema.speed_mps);
    const auto c_accel = find(schema.accel_mps2);
    const auto c_grade = find(schema.grade_rad);
    const auto c_ambient = find(schema.ambient_c);
    const auto c_aux = find(schema.aux_w);
    const auto c_power = find(schema.pack_power_w);
    std::optional<std::size_t> c_volt, c_amp;
    if (!c_power) {
        c_volt = find(schema.pack_voltage_v);
        c_amp = find(schema.pack_current_a);
        if (!c_volt) {
            throw DataError("telemetry csv: missing required column '" + schema.pack_power_w + "' (or '" +
                            schema.pack_voltage_v + "' with '" + schema.pack_current_a + "')");
        }
        if (!c_amp) {
            throw DataError("telemetry csv: missing required column '" + schema.pack_current_a + "'");
        }
    }

    IngestResult result;
    std::vector<std::pair<std::string, std::string>> order;
    std::map<std::pair<std::string, std::string>, std::vector<RawRow>> groups;

    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") {
            continue;
        }
        const auto f = split_csv_line(line);
        auto get = [&](std::size_t idx, double& out) { return idx < f.size() && parse_double(f[idx], out); };
        auto get_opt = [&](const std::optional<std::size_t>& idx, double fallback, double& out) {
            if (!idx || *idx >= f.size() || f[*idx].find_first_not_of(" \t") == std::string::npos) {
                out = fallback;
                return true;
            }
            return parse_double(f[*idx], out);
        };
        RawRow row{};
        double accel = 0.0;
        bool ok = c_vehicle < f.size() && c_trip < f.size() && get(c_time, row.t) && get(c_speed, row.speed) &&
                  get_opt(c_grade, 0.0, row.grade) && get_opt(c_ambient, 20.0, row.ambient) &&
                  get_opt(c_aux, 0.0, row.aux);
        if (ok && c_accel) {
            ok = get(*c_accel, accel);
            row.accel = accel;
        }
        if (ok) {
            if (c_power) {
                ok = get(*c_power, row.power);
            } else {
                double v = 0.0, i = 0.0;
                ok = get(*c_volt, v) && get(*c_amp, i);
                row.power = v * i;
            }
        }
        if (!ok) {
            ++result.skipped_rows;
            continue;
        }
        auto key = std::make_pair(f[c_vehicle], f[c_trip]);
        auto [it, inserted] = groups.try_emplace(key);
        if (inserted) {
            order.push_back(key);
        }
        it->second.push_back(row);
    }
    if (result.skipped_rows > 0) {
        spdlog::warn("telemetry csv: skipped {} unparseable rows", result.skipped_rows);
    }
    for (const auto& key : order) {
        resample_group(key.first, key.second, groups[key], schema, !c_accel.has_value(), result.trips);
    }
    return result;
}

IngestResult ingest_csv(const std::filesystem::path& path, const CsvSchema& schema)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("telemetry csv: cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ingest_csv_text(ss.str(), schema);
}

void write_trips_csv(const std::filesystem::path& path, std::span<const TripTrace> trips)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << "vehicle_id,trip_id,timestamp_s,speed_mps,accel_mps2,grade_rad,ambient_c,aux_w,pack_power_w\n";
    char buf[512];
    for (const auto& trip : trips) {
        for (const auto& s : trip.samples) {
            std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", trip.vehicle_id.c_str(),
                          trip.trip_id.c_str(), s.t, s.speed, s.accel, s.grade, s.ambient_c, s.aux_w, s.pack_power_w);
            out << buf;
        }
    }
    if (!out) {
        throw DataError("failed writing " + path.string());
    }
}

// ---------------------------------------------------------------------------
// Splits and normalization

SplitAssignment assign_splits(const std::vector<std::string>& trip_ids, const SplitRatios& ratios, RngStream& rng)
{
    std::vector<std::string> ids = trip_ids;
    rng.shuffle(ids);
    SplitAssignment a;
    const std::size_t n = ids.size();
    if (n < 3) {
        spdlog::warn("split: only {} trips; using all of them for training", n);
        a.train = std::move(ids);
        return a;
    }
    auto count = [n](double ratio) {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n))));
    };
    std::size_t n_test = count(ratios.test);
    std::size_t n_val = count(ratios.val);
    while (n_test + n_val >= n) {
        if (n_test >= n_val && n_test > 1) {
            --n_test;
        } else {
            --n_val;
        }
    }
    const std::size_t n_train = n - n_val - n_test;
    a.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    a.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                 ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    a.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
    return a;
}

ClientDataset build_client_dataset(std::size_t client_id, std::span<const TripTrace> trips,
                                   const SplitAssignment& assignment, std::size_t window,
                                   const FeatureExtractor& features)
{
    std::unordered_map<std::string, const TripTrace*> by_id;
    for (const auto& t : trips) {
        by_id[t.trip_id] = &t;
    }
    auto lookup = [&](const std::string& id) -> const TripTrace& {
        const auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw DataError("client " + std::to_string(client_id) + ": split references unknown trip '" + id + "'");
        }
        return *it->second;
    };

    ClientDataset ds;
    ds.client_id = client_id;
    ds.trips = assignment;

    // Per-feature statistics over every time step of the training trips.
    std::vector<std::vector<double>> columns;
    for (const auto& id : assignment.train) {
        for (const auto& s : lookup(id).samples) {
            const auto f = features(s);
            if (columns.empty()) {
                columns.resize(f.size());
            }
            for (std::size_t j = 0; j < f.size(); ++j) {
                columns[j].push_back(f[j]);
            }
        }
    }
    const std::size_t dx = columns.empty() ? features(TripSample{}).size() : columns.size();
    ds.features.mean.assign(dx, 0.0);
    ds.features.scale.assign(dx, 1.0);
    for (std::size_t j = 0; j < columns.size(); ++j) {
        const double mu = mean(columns[j]);
        const double sd = pop_std(columns[j]);
        ds.features.mean[j] = mu;
        ds.features.scale[j] = sd > 1e-12 * std::max(1.0, std::fabs(mu)) ? sd : 1.0;
    }

    auto windows_of = [&](const std::vector<std::string>& ids) {
        std::vector<Sample> out;
        for (const auto& id : ids) {
            auto w = make_windows(lookup(id), features, window);
            std::move(w.begin(), w.end(), std::back_inserter(out));
        }
        return out;
    };
    ds.train = windows_of(assignment.train);
    ds.val = windows_of(assignment.val);
    ds.test = windows_of(assignment.test);

    if (!ds.train.empty()) {
        std::vector<double> labels;
        labels.reserve(ds.train.size());
        for (const auto& s : ds.train) {
            labels.push_back(s.y);
        }
        ds.label_mean = mean(labels);
        const double sd = pop_std(labels);
        ds.label_scale = sd > 1e-12 * std::max(1.0, std::fabs(ds.label_mean)) ? sd : 1.0;
        for (auto& l : labels) {
            l = std::fabs(l);
        }
        ds.eps_y = std::max(1e-3 * median(labels), 1e-9);
    }

    auto normalize = [&](std::vector<Sample>& set) {
        for (auto& s : set) {
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                const std::size_t j = i % dx;
                s.x[i] = (s.x[i] - ds.features.mean[j]) / ds.features.scale[j];
            }
            s.y = (s.y - ds.label_mean) / ds.label_scale;
        }
    };
    normalize(ds.train);
    normalize(ds.val);
    normalize(ds.test);
    return ds;
}

ClientDataset split_and_normalize(std::size_t client_id, std::span<const TripTrace> trips, const SplitRatios& ratios,
                                  std::size_t window, RngStream& rng)
{
    std::vector<std::string> ids;
    ids.reserve(trips.size());
    for (const auto& t : trips) {
        ids.push_back(t.trip_id);
    }
    return build_client_dataset(client_id, trips, assign_splits(ids, ratios, rng), window);
}

} // namespace fofl
