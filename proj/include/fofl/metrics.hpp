#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fofl {

/// What one participating client reported in one round.
struct ClientRoundStats {
    std::size_t client = 0;
    std::size_t n_k = 0;
    double drift = 0.0; ///< ||w_k^{t+1} - w_t||_2
    std::optional<double> roughness;
    std::optional<double> kappa;
    bool probed = false;
    std::size_t local_steps = 0;
    std::vector<double> loss_trace;
    double train_s = 0.0;
    double diag_s = 0.0;
};

struct MetricSnapshot {
    double rmse = 0.0;
    double mae = 0.0;
    double mape = 0.0;
    std::size_t count = 0;
};

struct RoundRecord {
    std::size_t round = 0;
    std::size_t available = 0;
    std::vector<std::size_t> participants; ///< ascending client id
    std::vector<ClientRoundStats> clients;  ///< same order as participants
    std::optional<MetricSnapshot> metrics;
    double t_train_s = 0.0;
    double t_diag_s = 0.0;
};

enum class Averaging { micro, macro, weighted };

struct MetricConfig {
    /// Fallback MAPE stabilizer when a dataset does not carry its own.
    double eps_y = 1e-3;
    double eps_d = 1e-8;
    std::vector<double> thresholds;
    Averaging averaging = Averaging::micro;
    /// Evaluate global metrics every `eval_every` rounds (and on the last round).
    std::size_t eval_every = 1;

    void validate() const;

    friend bool operator==(const MetricConfig&, const MetricConfig&) = default;
};

// Utility metrics on the physical scale. Throw std::invalid_argument on empty
// or mismatched input.
double rmse(std::span<const double> preds, std::span<const double> labels);
double mae(std::span<const double> preds, std::span<const double> labels);
/// 100 * mean(|pred - y| / (|y| + eps_y))
double mape(std::span<const double> preds, std::span<const double> labels, double eps_y);

/// Running sums that merge per-client evaluations into micro, macro or
/// n-weighted averages.
class ErrorAccumulator {
public:
    void add_client(std::span<const double> preds, std::span<const double> labels, double eps_y);
    MetricSnapshot result(Averaging averaging) const;
    bool empty() const noexcept { return clients_.empty(); }

private:
    struct Sums {
        double sq = 0.0;
        double abs = 0.0;
        double ape = 0.0;
        std::size_t n = 0;
    };
    std::vector<Sums> clients_;
};

/// First index whose value is <= theta; nullopt when never reached.
std::optional<std::size_t> rounds_to_threshold(std::span<const double> series, double theta);

/// Running minimum.
std::vector<double> best_so_far(std::span<const double> series);

struct DriftStats {
    double d_mean = 0.0;
    double d_cv = 0.0;
};

/// Mean drift and population-std coefficient of variation over participants.
DriftStats drift_stats(const RoundRecord& record, double eps_d);
DriftStats drift_stats(std::span<const double> drifts, double eps_d);

struct Coupling {
    double pearson = 0.0;
    double spearman = 0.0;
    std::size_t n = 0;
};

Coupling correlate(std::span<const double> roughness, std::span<const double> drift);

/// Correlation between roughness and drift over the participants of round t
/// that report a roughness value. Needs >= 3 such participants
/// (std::invalid_argument) and non-constant inputs (UndefinedCorrelation).
Coupling roughness_drift_coupling(std::span<const RoundRecord> records, std::size_t round);

struct EarlyDrift {
    std::size_t client = 0;
    double roughness = 0.0;  ///< most recent value at or before the probe round
    double mean_drift = 0.0; ///< over participation rounds inside the window
    std::size_t participations = 0;
};

/// Clients without a roughness value by `probe_round` or without participation
/// in [first, last] are omitted.
std::vector<EarlyDrift> early_drift_predictor(std::span<const RoundRecord> records, std::size_t probe_round,
                                              std::size_t first, std::size_t last);

struct Tertiles {
    std::vector<std::size_t> low;
    std::vector<std::size_t> med;
    std::vector<std::size_t> high;
};

/// Sorts (client, value) by value (ties by client id) and cuts into thirds;
/// remainder clients go to the lower strata first.
Tertiles stratify_tertiles(std::span<const std::pair<std::size_t, double>> values);

struct OverheadReport {
    double t_probe_s = 0.0;
    double t_nonprobe_s = 0.0;
    double amortized_s = 0.0;
    double diag_fraction = 0.0;
};

/// ((R - 1) * t_nonprobe + t_probe) / R
double amortized_round_time(double t_nonprobe, double t_probe, std::size_t r_probe);
/// 100 * (method - reference) / reference
double overhead_percent(double method, double reference);

/// Mean per-client round time split into probe and non-probe rounds, their
/// amortized combination, and the mean per-round diagnostic fraction.
OverheadReport overhead_report(std::span<const RoundRecord> records, std::size_t r_probe);

} // namespace fofl
