#pragma once

#include "fofl/bevdata.hpp"
#include "fofl/diagnostics.hpp"
#include "fofl/fracopt.hpp"
#include "fofl/metrics.hpp"
#include "fofl/model.hpp"
#include "fofl/numerics.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fofl {

enum class Algorithm { fedavg, fedprox, scaffold, fednova, fedadam, ri_fedavg, fo_fedavg, fo_ri_fedavg };

std::string_view algorithm_name(Algorithm a) noexcept;
std::optional<Algorithm> parse_algorithm(std::string_view name) noexcept;
const std::vector<std::string>& algorithm_names();

enum class LrSchedule { constant, inv_sqrt };

struct FedProxConfig {
    double mu = 0.01;
    friend bool operator==(const FedProxConfig&, const FedProxConfig&) = default;
};

struct FedAdamConfig {
    double server_lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-3;
    friend bool operator==(const FedAdamConfig&, const FedAdamConfig&) = default;
};

/// Two-state availability chain: an available client leaves with p_leave, an
/// unavailable one rejoins with p_join.
struct ChurnConfig {
    double p_leave = 0.0;
    double p_join = 0.0;
    double initial_available_fraction = 1.0;

    void validate() const;
    friend bool operator==(const ChurnConfig&, const ChurnConfig&) = default;
};

struct FedConfig {
    std::size_t clients = 100;    ///< K
    double participation = 0.3;  ///< C
    std::size_t rounds = 300;     ///< T
    std::size_t local_steps = 0;  ///< H; 0 derives H = ceil(E * n_k / B) per client
    double epochs = 1.0;          ///< E
    std::size_t batch_size = 64;  ///< B
    double eta0 = 0.05;
    LrSchedule lr_schedule = LrSchedule::inv_sqrt;
    double lambda = 0.1;
    double tau_i = 0.5;
    FracConfig frac;
    RoughnessConfig rough;
    SpectralConfig spec;
    std::size_t probe_every = 5;  ///< R_probe
    /// Compute roughness for every algorithm (logging only; no effect on training).
    bool probe_all = false;
    Algorithm algorithm = Algorithm::fo_ri_fedavg;
    FedProxConfig fedprox;
    FedAdamConfig fedadam;
    ChurnConfig churn;
    std::size_t hidden1 = 64;
    std::size_t hidden2 = 32;
    MetricConfig metrics;
    std::uint64_t seed = 1;

    double eta(std::size_t round) const noexcept;
    /// Throws ConfigError on the first out-of-range field.
    void validate() const;

    friend bool operator==(const FedConfig&, const FedConfig&) = default;
};

/// Client-side persistent state. The dataset is borrowed and must outlive the run.
struct ClientState {
    const ClientDataset* dataset = nullptr;
    std::optional<double> cached_roughness;
    std::optional<ParamVector> scaffold_control;
    std::vector<std::size_t> probe_indices;
    std::size_t local_step_counter = 0;
};

struct ServerState {
    ParamVector global;
    std::size_t round = 0;
    std::vector<bool> availability;
    std::optional<ParamVector> adam_m;
    std::optional<ParamVector> adam_v;
    std::optional<ParamVector> scaffold_control;
    std::vector<RoundRecord> log;

    std::size_t available_count() const noexcept;
};

/// |S_t| = max(ceil(C * |A_t|), 1), drawn uniformly without replacement from
/// the available clients and returned in ascending order. When no client is
/// available one uniformly chosen client is forced back online first.
std::vector<std::size_t> sample_participants(ServerState& server, const FedConfig& cfg, RngStream& rng);

std::size_t participant_count(std::size_t available, double participation);

/// One transition of the availability chain, clients visited in id order.
void advance_churn(std::vector<bool>& availability, const ChurnConfig& cfg, RngStream& rng);

/// Initial availability: ceil(f * K) clients (at least one) chosen uniformly.
std::vector<bool> initial_availability(std::size_t clients, const ChurnConfig& cfg, RngStream& rng);

/// base_grad + lambda_t * r * (w - w_t)
ParamVector proximal_gradient(const ParamVector& base_grad, const ParamVector& w, const ParamVector& w_t,
                              double lambda_t, double r_of_i);

/// I / (I + tau)
double roughness_response(double roughness, double tau_i);

struct ClientUpdate {
    std::size_t client = 0;
    std::size_t n_k = 0;
    ParamVector w;
};

/// Data-weighted average sum_k (n_k / n_t) w_k, summed in ascending client id.
ParamVector aggregate(std::span<const ClientUpdate> updates);

/// Number of local steps for a client of n_k samples.
std::size_t local_step_count(const FedConfig& cfg, std::size_t n_k);

/// Deterministic mini-batch stream over a client's training split: epochs of
/// shuffled indices, consecutive chunks of B (the whole set when n_k < B).
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::size_t batch_size, RngStream rng);
    std::span<const std::size_t> next();

private:
    std::size_t n_;
    std::size_t batch_;
    RngStream rng_;
    std::vector<std::size_t> perm_;
    std::size_t pos_;
};

struct ClientResult {
    ParamVector w;
    ClientRoundStats stats;
    /// SCAFFOLD only: c_k(new) - c_k(old)
    std::optional<ParamVector> control_delta;
};

/// Local training of one client for round t under cfg.algorithm. Updates the
/// client's cached roughness, probe batch and SCAFFOLD control in place.
/// `server_control` is the server control variate (SCAFFOLD only).
ClientResult client_round(ClientState& client, const ParamVector& w_t, const MlpSpec& model, const FedConfig& cfg,
                          std::size_t round, const ParamVector* server_control = nullptr);

/// Called after each round with the broadcast model and the returned client models.
using RoundObserver =
    std::function<void(std::size_t round, const ParamVector& w_t, std::span<const ClientUpdate> client_models)>;

struct RunOptions {
    std::size_t threads = 1; ///< 0 = hardware concurrency
    RoundObserver observer;
    std::optional<ParamVector> initial_params;
};

struct ExperimentResult {
    ParamVector final_params;
    MlpSpec model;
    std::vector<RoundRecord> log;
};

MlpSpec model_spec(const FedConfig& cfg, std::span<const ClientDataset> data);

/// Evaluates the global model on every client's test (or validation) split in Wh.
std::optional<MetricSnapshot> evaluate_global(const MlpSpec& model, const ParamVector& params,
                                              std::span<const ClientDataset> data, const MetricConfig& cfg,
                                              bool validation = false);

/// Runs T rounds of sample, broadcast, local training, aggregation and churn.
ExperimentResult run_experiment(const FedConfig& cfg, std::span<const ClientDataset> data,
                                const RunOptions& options = {});

} // namespace fofl
