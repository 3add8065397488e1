#pragma once

#include "fofl/model.hpp"
#include "fofl/numerics.hpp"

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fofl {

/// Piecewise-linear lookup over SoC knots, clamped at the ends.
struct SocCurve {
    std::vector<double> soc;
    std::vector<double> value;

    double at(double s) const;
    /// Same value at every knot of an 11-point grid.
    static SocCurve constant(double v);
    /// Linear interpolation of `values` over 11 evenly spaced knots on [0, 1].
    static SocCurve eleven_knots(const std::vector<double>& values);

    friend bool operator==(const SocCurve&, const SocCurve&) = default;
};

/// First-order (one RC pair) equivalent-circuit cell and its pack mapping.
/// Positive current discharges the cell.
struct EcmParams {
    double q_cell_ah = 3.0;
    SocCurve v_oc;
    SocCurve r0;
    SocCurve r1;
    SocCurve c1;
    int n_series = 96;
    int n_parallel = 40;
    double soc0 = 0.9;

    /// NMC-like 3 Ah cell with 11-knot tables.
    static EcmParams default_cell();
    void validate() const;

    friend bool operator==(const EcmParams&, const EcmParams&) = default;
};

/// One integration step. v_cell and p_pack are evaluated at the start of the
/// step; soc and v1 are the states after integrating across it.
struct EcmStep {
    double v_cell = 0.0;
    double soc = 0.0;
    double v1 = 0.0;
    double p_pack = 0.0;
};

/// Stateful ECM integrator (forward Euler).
class EcmCell {
public:
    explicit EcmCell(EcmParams params);

    EcmStep step_current(double cell_current, double dt);
    /// Cell current that draws `pack_power` watts at the present state; saturates
    /// at the maximum-power current when the demand is infeasible.
    double current_for_power(double pack_power) const;

    double soc() const noexcept { return soc_; }
    double v1() const noexcept { return v1_; }
    const EcmParams& params() const noexcept { return params_; }
    bool clamped() const noexcept { return clamped_; }

private:
    EcmParams params_;
    double soc_;
    double v1_ = 0.0;
    bool clamped_ = false;
};

/// Runs EcmCell over a cell-current profile. Throws std::invalid_argument for dt <= 0.
std::vector<EcmStep> ecm_simulate(const EcmParams& params, std::span<const double> cell_current, double dt);

/// Per-sample energy increments in Wh: P * dt / 3600.
std::vector<double> energy_increments(std::span<const double> p_pack, double dt);

struct TripSample {
    double t = 0.0;     ///< seconds
    double speed = 0.0; ///< m/s
    double accel = 0.0; ///< m/s^2
    double grade = 0.0; ///< rad
    double ambient_c = 20.0;
    double aux_w = 0.0;
    double pack_power_w = 0.0;
};

struct TripTrace {
    std::string vehicle_id;
    std::string trip_id;
    double dt = 1.0;
    std::vector<TripSample> samples;
};

using FeatureExtractor = std::function<std::vector<double>(const TripSample&)>;

/// speed, accel, grade, ambient, aux, speed^3
FeatureExtractor default_features();
std::size_t default_feature_count();

/// Sliding windows of length `window` with stride 1. Features are raw
/// (un-normalized), labels are Wh sums of the per-sample increments. A trip
/// shorter than `window` yields no windows.
std::vector<Sample> make_windows(const TripTrace& trip, const FeatureExtractor& features, std::size_t window);

// ---------------------------------------------------------------------------
// Synthetic fleet

struct FleetConfig {
    std::size_t clients = 20;
    std::size_t trips_min = 5;
    std::size_t trips_max = 8;
    double trip_seconds_min = 180.0;
    double trip_seconds_max = 360.0;
    double dt = 1.0;

    double mass_min_kg = 1400.0;
    double mass_max_kg = 2400.0;
    double cda_min = 0.45;
    double cda_max = 0.80;
    double crr_min = 0.007;
    double crr_max = 0.014;
    double aux_min_w = 300.0;
    double aux_max_w = 2500.0;
    double motor_efficiency = 0.90;
    double regen_efficiency = 0.65;
    double grade_std_max = 0.04;
    double ambient_min_c = -5.0;
    double ambient_max_c = 32.0;
    /// Larger values concentrate each client's urban/suburban/highway mixture
    /// on a single regime.
    double regime_skew = 2.0;
    /// Multiplies every regime cruise speed; 0 parks the fleet.
    double speed_scale = 1.0;
    EcmParams ecm = EcmParams::default_cell();

    void validate() const;

    friend bool operator==(const FleetConfig&, const FleetConfig&) = default;
};

/// Per-client vehicle draw, exposed for inspection and tests.
struct VehicleParams {
    double mass_kg;
    double cda;
    double crr;
    double aux_w;
    double grade_std;
    double ambient_c;
    std::vector<double> regime_mix; // urban, suburban, highway
};

VehicleParams sample_vehicle(const FleetConfig& cfg, std::size_t client, std::uint64_t seed);

/// Generates trip telemetry for every client. Deterministic in (cfg, seed).
std::vector<std::vector<TripTrace>> synth_fleet(const FleetConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// CSV ingestion

/// Maps logical telemetry fields to CSV header names. Empty optional names
/// mean the column is not present.
struct CsvSchema {
    std::string vehicle_id = "vehicle_id";
    std::string trip_id = "trip_id";
    std::string timestamp_s = "timestamp_s";
    std::string speed_mps = "speed_mps";
    std::string accel_mps2 = "accel_mps2";
    std::string grade_rad = "grade_rad";
    std::string ambient_c = "ambient_c";
    std::string aux_w = "aux_w";
    std::string pack_power_w = "pack_power_w";
    std::string pack_voltage_v = "pack_voltage_v";
    std::string pack_current_a = "pack_current_a";
    double dt = 1.0;
    double gap_factor = 5.0;

    friend bool operator==(const CsvSchema&, const CsvSchema&) = default;
};

struct IngestResult {
    std::vector<TripTrace> trips;
    std::size_t skipped_rows = 0;
};

/// Parses telemetry, resamples each trip to a uniform grid by linear
/// interpolation and splits trips at gaps larger than gap_factor * dt.
/// Throws DataError when the file cannot be read or a required column is missing.
IngestResult ingest_csv(const std::filesystem::path& path, const CsvSchema& schema);
IngestResult ingest_csv_text(const std::string& text, const CsvSchema& schema);

/// Writes trips in the default schema (power column), full double precision.
void write_trips_csv(const std::filesystem::path& path, std::span<const TripTrace> trips);

// ---------------------------------------------------------------------------
// Client datasets

struct SplitRatios {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;

    friend bool operator==(const SplitRatios&, const SplitRatios&) = default;
};

struct SplitAssignment {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
};

/// Trip-level shuffle and partition. Fewer than 3 trips puts everything in train.
SplitAssignment assign_splits(const std::vector<std::string>& trip_ids, const SplitRatios& ratios, RngStream& rng);

struct FeatureStats {
    std::vector<double> mean;
    std::vector<double> scale;
};

struct ClientDataset {
    std::size_t client_id = 0;
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;
    FeatureStats features;
    double label_mean = 0.0;
    double label_scale = 1.0;
    /// MAPE stabilizer on the Wh scale.
    double eps_y = 1e-3;
    SplitAssignment trips;

    std::size_t n_k() const noexcept { return train.size(); }
    double to_wh(double standardized) const noexcept { return standardized * label_scale + label_mean; }
};

/// Windows every trip, standardizes features (per feature) and labels with
/// training-split statistics. Constant features get scale 1.
ClientDataset build_client_dataset(std::size_t client_id, std::span<const TripTrace> trips,
                                   const SplitAssignment& assignment, std::size_t window,
                                   const FeatureExtractor& features = default_features());

/// assign_splits followed by build_client_dataset.
ClientDataset split_and_normalize(std::size_t client_id, std::span<const TripTrace> trips, const SplitRatios& ratios,
                                  std::size_t window, RngStream& rng);

} // namespace fofl
