#include "fofl/fedcore.hpp"

#include "fofl/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace fofl {

namespace {

constexpr std::array<std::pair<Algorithm, std::string_view>, 8> kAlgorithms = {{
    {Algorithm::fedavg, "FedAvg"},
    {Algorithm::fedprox, "FedProx"},
    {Algorithm::scaffold, "SCAFFOLD"},
    {Algorithm::fednova, "FedNova"},
    {Algorithm::fedadam, "FedAdam"},
    {Algorithm::ri_fedavg, "RI-FedAvg"},
    {Algorithm::fo_fedavg, "FO-FedAvg"},
    {Algorithm::fo_ri_fedavg, "FO-RI-FedAvg"},
}};

constexpr std::uint64_t kProbeBatchPurpose = 50;
constexpr std::uint64_t kAvailabilityPurpose = 51;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

bool uses_roughness(Algorithm a)
{
    return a == Algorithm::ri_fedavg || a == Algorithm::fo_ri_fedavg;
}

bool uses_fo_ri_loop(Algorithm a)
{
    return a == Algorithm::ri_fedavg || a == Algorithm::fo_fedavg || a == Algorithm::fo_ri_fedavg;
}

std::vector<Sample> gather(const std::vector<Sample>& data, std::span<const std::size_t> idx)
{
    std::vector<Sample> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) {
        out.push_back(data[i]);
    }
    return out;
}

} // namespace

std::string_view algorithm_name(Algorithm a) noexcept
{
    for (const auto& [alg, name] : kAlgorithms) {
        if (alg == a) {
            return name;
        }
    }
    return "unknown";
}

std::optional<Algorithm> parse_algorithm(std::string_view name) noexcept
{
    for (const auto& [alg, n] : kAlgorithms) {
        if (n == name) {
            return alg;
        }
    }
    return std::nullopt;
}

const std::vector<std::string>& algorithm_names()
{
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& entry : kAlgorithms) {
            v.emplace_back(entry.second);
        }
        return v;
    }();
    return names;
}

void ChurnConfig::validate() const
{
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(p_leave) || !prob(p_join)) {
        throw ConfigError("churn: p_leave and p_join must lie in [0, 1]");
    }
    if (!(initial_available_fraction > 0.0 && initial_available_fraction <= 1.0)) {
        throw ConfigError("churn.initial_available_fraction must lie in (0, 1]");
    }
}

double FedConfig::eta(std::size_t round) const noexcept
{
    if (lr_schedule == LrSchedule::constant) {
        return eta0;
    }
    return eta0 / std::sqrt(static_cast<double>(round) + 1.0);
}

void FedConfig::validate() const
{
    if (clients < 1) {
        throw ConfigError("fed.clients (K) must be >= 1");
    }
    if (!(participation > 0.0 && participation <= 1.0)) {
        throw ConfigError("fed.participation (C) must lie in (0, 1]");
    }
    if (local_steps == 0 && !(epochs > 0.0)) {
        throw ConfigError("fed: either local_steps >= 1 or epochs > 0 is required");
    }
    if (batch_size < 1) {
        throw ConfigError("fed.batch_size must be >= 1");
    }
    if (!(eta0 > 0.0)) {
        throw ConfigError("fed.eta0 must be positive");
    }
    if (!(lambda >= 0.0)) {
        throw ConfigError("fed.lambda must be >= 0");
    }
    if (!(tau_i > 0.0)) {
        throw ConfigError("fed.tau_i must be positive");
    }
    if (probe_every < 1) {
        throw ConfigError("fed.probe_every must be >= 1");
    }
    if (hidden1 < 1 || hidden2 < 1) {
        throw ConfigError("fed: hidden layer widths must be >= 1");
    }
    if (!(fedprox.mu >= 0.0)) {
        throw ConfigError("fedprox.mu must be >= 0");
    }
    if (!(fedadam.server_lr > 0.0) || !(fedadam.beta1 >= 0.0 && fedadam.beta1 < 1.0) ||
        !(fedadam.beta2 >= 0.0 && fedadam.beta2 < 1.0) || !(fedadam.eps > 0.0)) {
        throw ConfigError("fedadam: need server_lr > 0, beta1/beta2 in [0, 1), eps > 0");
    }
    frac.validate();
    rough.validate();
    spec.validate();
    churn.validate();
    metrics.validate();
}

std::size_t ServerState::available_count() const noexcept
{
    return static_cast<std::size_t>(std::count(availability.begin(), availability.end(), true));
}

std::size_t participant_count(std::size_t available, double participation)
{
    const double raw = participation * static_cast<double>(available);
    // Guard against C * |A| landing a hair above an integer.
    auto n = static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
    return std::clamp<std::size_t>(n, 1, std::max<std::size_t>(available, 1));
}

std::vector<std::size_t> sample_participants(ServerState& server, const FedConfig& cfg, RngStream& rng)
{
    std::vector<std::size_t> avail;
    for (std::size_t k = 0; k < server.availability.size(); ++k) {
        if (server.availability[k]) {
            avail.push_back(k);
        }
    }
    if (avail.empty()) {
        if (server.availability.empty()) {
            throw std::invalid_argument("sample_participants: no clients");
        }
        const std::size_t forced = rng.uniform_index(server.availability.size());
        spdlog::debug("round {}: no client available; forcing client {} online", server.round, forced);
        server.availability[forced] = true;
        avail.push_back(forced);
    }
    const std::size_t n = participant_count(avail.size(), cfg.participation);
    // Partial Fisher-Yates: the first n slots form a uniform sample.
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + rng.uniform_index(avail.size() - i);
        std::swap(avail[i], avail[j]);
    }
    avail.resize(n);
    std::sort(avail.begin(), avail.end());
    return avail;
}

void advance_churn(std::vector<bool>& availability, const ChurnConfig& cfg, RngStream& rng)
{
    for (std::size_t k = 0; k < availability.size(); ++k) {
        const double u = rng.uniform();
        if (availability[k]) {
            availability[k] = !(u < cfg.p_leave);
        } else {
            availability[k] = u < cfg.p_join;
        }
    }
}

std::vector<bool> initial_availability(std::size_t clients, const ChurnConfig& cfg, RngStream& rng)
{
    std::vector<bool> avail(clients, false);
    const std::size_t n = participant_count(clients, cfg.initial_available_fraction);
    std::vector<std::size_t> ids(clients);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + rng.uniform_index(clients - i);
        std::swap(ids[i], ids[j]);
        avail[ids[i]] = true;
    }
    return avail;
}

ParamVector proximal_gradient(const ParamVector& base_grad, const ParamVector& w, const ParamVector& w_t,
                              double lambda_t, double r_of_i)
{
    if (base_grad.size() != w.size() || w.size() != w_t.size()) {
        throw std::invalid_argument("proximal_gradient: length mismatch");
    }
    const double c = lambda_t * r_of_i;
    ParamVector g = base_grad;
    if (c == 0.0) {
        return g;
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += c * (w[i] - w_t[i]);
    }
    return g;
}

double roughness_response(double roughness, double tau_i)
{
    if (!(roughness >= 0.0)) {
        throw std::invalid_argument("roughness_response: roughness must be >= 0");
    }
    return roughness / (roughness + tau_i);
}

ParamVector aggregate(std::span<const ClientUpdate> updates)
{
    if (updates.empty()) {
        throw std::invalid_argument("aggregate: empty update set");
    }
    std::vector<const ClientUpdate*> order;
    for (const auto& u : updates) {
        order.push_back(&u);
    }
    std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->client < b->client; });
    double n_t = 0.0;
    for (const auto* u : order) {
        if (u->w.size() != order.front()->w.size()) {
            throw std::invalid_argument("aggregate: length mismatch");
        }
        n_t += static_cast<double>(u->n_k);
    }
    if (!(n_t > 0.0)) {
        throw std::invalid_argument("aggregate: total sample count is zero");
    }
    ParamVector out(order.front()->w.size(), 0.0);
    for (const auto* u : order) {
        axpy(static_cast<double>(u->n_k) / n_t, u->w, out);
    }
    return out;
}

std::size_t local_step_count(const FedConfig& cfg, std::size_t n_k)
{
    if (cfg.local_steps > 0) {
        return cfg.local_steps;
    }
    const double h = std::ceil(cfg.epochs * static_cast<double>(n_k) / static_cast<double>(cfg.batch_size) - 1e-9);
    return std::max<std::size_t>(1, static_cast<std::size_t>(h));
}

BatchSampler::BatchSampler(std::size_t n, std::size_t batch_size, RngStream rng)
    : n_(n), batch_(std::min(batch_size, n)), rng_(rng), perm_(n), pos_(n)
{
    if (n == 0 || batch_size == 0) {
        throw std::invalid_argument("BatchSampler: empty dataset or zero batch size");
    }
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
}

std::span<const std::size_t> BatchSampler::next()
{
    if (pos_ + batch_ > n_) {
        rng_.shuffle(perm_);
        pos_ = 0;
    }
    std::span<const std::size_t> out(perm_.data() + pos_, batch_);
    pos_ += batch_;
    return out;
}

namespace {

/// FedAvg, FedProx, SCAFFOLD, FedNova and FedAdam clients: plain local SGD with
/// an optional proximal pull and an optional constant gradient correction.
ParamVector local_sgd(const MlpSpec& model, const ClientDataset& ds, const ParamVector& w_t, std::size_t steps,
                      double eta, double prox_mu, const ParamVector* correction, BatchSampler& sampler,
                      std::vector<double>& loss_trace)
{
    ParamVector w = w_t;
    for (std::size_t h = 0; h < steps; ++h) {
        const auto batch = gather(ds.train, sampler.next());
        auto lg = loss_and_grad(model, w, batch);
        loss_trace.push_back(lg.loss);
        ParamVector& g = lg.grad;
        if (prox_mu != 0.0) {
            g = proximal_gradient(g, w, w_t, prox_mu, 1.0);
        }
        if (correction) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += (*correction)[i];
            }
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] -= eta * g[i];
        }
    }
    return w;
}

/// Fractional, roughness-informed local loop. Step 0 is plain proximal SGD; later
/// steps precondition, gate, clip and take the fractional step.
ParamVector local_fo_ri(const MlpSpec& model, const ClientDataset& ds, const ParamVector& w_t, std::size_t steps,
                        double eta, double prox_coeff, const FracConfig& frac, double gate, BatchSampler& sampler,
                        std::vector<double>& loss_trace)
{
    ParamVector w = w_t;
    FracState state;
    for (std::size_t h = 0; h < steps; ++h) {
        const auto batch = gather(ds.train, sampler.next());
        auto lg = loss_and_grad(model, w, batch);
        loss_trace.push_back(lg.loss);
        const ParamVector g = proximal_gradient(lg.grad, w, w_t, prox_coeff, 1.0);
        ParamVector next;
        if (h == 0) {
            next = w;
            axpy(-eta, g, next);
        } else {
            ParamVector p = raw_preconditioner(state, w, frac);
            if (gate != 1.0) {
                p = scale(p, gate);
            }
            if (frac.clip_enabled) {
                p = clip(p, frac.p_min, frac.p_max);
            }
            next = fo_step(w, g, p, eta);
        }
        state.prev_params = std::move(w);
        w = std::move(next);
    }
    return w;
}

} // namespace

ClientResult client_round(ClientState& client, const ParamVector& w_t, const MlpSpec& model, const FedConfig& cfg,
                          std::size_t round, const ParamVector* server_control)
{
    if (client.dataset == nullptr || client.dataset->train.empty()) {
        throw DataError("client_round: client has no training samples");
    }
    const ClientDataset& ds = *client.dataset;
    const std::size_t k = ds.client_id;
    ClientResult result;
    result.stats.client = k;
    result.stats.n_k = ds.n_k();

    const Algorithm alg = cfg.algorithm;
    const double eta = cfg.eta(round);
    const std::size_t steps = local_step_count(cfg, ds.n_k());
    result.stats.local_steps = steps;

    // Diagnostics on the broadcast model.
    const auto diag_start = Clock::now();
    if (uses_roughness(alg) || cfg.probe_all) {
        const bool probe_round = round % cfg.probe_every == 0 || !client.cached_roughness.has_value();
        if (probe_round) {
            if (client.probe_indices.empty()) {
                std::vector<std::size_t> idx(ds.train.size());
                std::iota(idx.begin(), idx.end(), std::size_t{0});
                RngStream shuffle_rng(cfg.seed, 0, k, kProbeBatchPurpose);
                shuffle_rng.shuffle(idx);
                idx.resize(std::min(cfg.rough.probe_batch, idx.size()));
                client.probe_indices = std::move(idx);
            }
            const auto probe = gather(ds.train, client.probe_indices);
            RngStream rng(cfg.seed, round, k, StreamPurpose::probe);
            client.cached_roughness = roughness_index(model, w_t, probe, cfg.rough, rng);
            result.stats.probed = true;
        }
        result.stats.roughness = client.cached_roughness;
    }
    double gate = 1.0;
    if (alg == Algorithm::fo_ri_fedavg && cfg.spec.beta_kappa > 0.0) {
        const double kappa = spectral_flatness(final_layer_matrix(model, w_t), cfg.spec);
        result.stats.kappa = kappa;
        gate = 1.0 / (1.0 + cfg.spec.beta_kappa * kappa);
    }
    result.stats.diag_s = seconds_since(diag_start);

    const auto train_start = Clock::now();
    BatchSampler sampler(ds.train.size(), cfg.batch_size, RngStream(cfg.seed, round, k, StreamPurpose::batch));
    auto& trace = result.stats.loss_trace;
    if (uses_fo_ri_loop(alg)) {
        FracConfig frac = cfg.frac;
        if (alg == Algorithm::ri_fedavg) {
            frac.alpha = 1.0;
        }
        double prox = 0.0;
        if (alg != Algorithm::fo_fedavg) {
            prox = cfg.lambda * roughness_response(*client.cached_roughness, cfg.tau_i);
        }
        result.w = local_fo_ri(model, ds, w_t, steps, eta, prox, frac, gate, sampler, trace);
    } else if (alg == Algorithm::scaffold) {
        if (server_control == nullptr) {
            throw std::invalid_argument("client_round: SCAFFOLD needs the server control variate");
        }
        if (!client.scaffold_control) {
            client.scaffold_control = ParamVector(w_t.size(), 0.0);
        }
        const ParamVector correction = sub(*server_control, *client.scaffold_control);
        result.w = local_sgd(model, ds, w_t, steps, eta, 0.0, &correction, sampler, trace);
        // Option II: c_k+ = c_k - c + (w_t - w_out) / (H eta)
        ParamVector updated = sub(*client.scaffold_control, *server_control);
        axpy(1.0 / (static_cast<double>(steps) * eta), sub(w_t, result.w), updated);
        result.control_delta = sub(updated, *client.scaffold_control);
        client.scaffold_control = std::move(updated);
    } else {
        const double mu = alg == Algorithm::fedprox ? cfg.fedprox.mu : 0.0;
        result.w = local_sgd(model, ds, w_t, steps, eta, mu, nullptr, sampler, trace);
    }
    client.local_step_counter += steps;
    result.stats.train_s = seconds_since(train_start);
    result.stats.drift = norm2(sub(result.w, w_t));
    return result;
}

MlpSpec model_spec(const FedConfig& cfg, std::span<const ClientDataset> data)
{
    MlpSpec spec;
    spec.hidden1 = cfg.hidden1;
    spec.hidden2 = cfg.hidden2;
    for (const auto& ds : data) {
        for (const auto* set : {&ds.train, &ds.val, &ds.test}) {
            if (!set->empty()) {
                if (spec.input_dim != 0 && spec.input_dim != set->front().x.size()) {
                    throw DataError("client datasets disagree on window feature length");
                }
                spec.input_dim = set->front().x.size();
            }
        }
    }
    if (spec.input_dim == 0) {
        throw DataError("no client holds any samples");
    }
    return spec;
}

std::optional<MetricSnapshot> evaluate_global(const MlpSpec& model, const ParamVector& params,
                                              std::span<const ClientDataset> data, const MetricConfig& cfg,
                                              bool validation)
{
    ErrorAccumulator acc;
    std::vector<double> preds, labels;
    for (const auto& ds : data) {
        const auto& set = validation ? ds.val : ds.test;
        if (set.empty()) {
            continue;
        }
        preds.clear();
        labels.clear();
        for (const auto& s : set) {
            preds.push_back(ds.to_wh(forward(model, params, s.x)));
            labels.push_back(ds.to_wh(s.y));
        }
        acc.add_client(preds, labels, ds.eps_y > 0.0 ? ds.eps_y : cfg.eps_y);
    }
    if (acc.empty()) {
        return std::nullopt;
    }
    return acc.result(cfg.averaging);
}

ExperimentResult run_experiment(const FedConfig& cfg, std::span<const ClientDataset> data, const RunOptions& options)
{
    cfg.validate();
    if (data.size() != cfg.clients) {
        throw ConfigError("run_experiment: config has K=" + std::to_string(cfg.clients) + " but " +
                          std::to_string(data.size()) + " client datasets were supplied");
    }
    ExperimentResult result;
    result.model = model_spec(cfg, data);
    const MlpSpec& model = result.model;

    ServerState server;
    if (options.initial_params) {
        if (options.initial_params->size() != model.param_count()) {
            throw ConfigError("initial parameters do not match the model size");
        }
        server.global = *options.initial_params;
    } else {
        RngStream init_rng(cfg.seed, 0, 0, StreamPurpose::init);
        server.global = init_params(model, init_rng);
    }
    RngStream avail_rng(cfg.seed, 0, 0, kAvailabilityPurpose);
    server.availability = initial_availability(cfg.clients, cfg.churn, avail_rng);
    if (cfg.algorithm == Algorithm::scaffold) {
        server.scaffold_control = ParamVector(model.param_count(), 0.0);
    }
    if (cfg.algorithm == Algorithm::fedadam) {
        server.adam_m = ParamVector(model.param_count(), 0.0);
        server.adam_v = ParamVector(model.param_count(), 0.0);
    }

    std::vector<ClientState> clients(cfg.clients);
    for (std::size_t k = 0; k < cfg.clients; ++k) {
        clients[k].dataset = &data[k];
    }

    std::size_t threads = options.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : options.threads;

    for (std::size_t t = 0; t < cfg.rounds; ++t) {
        server.round = t;
        RoundRecord rec;
        rec.round = t;
        rec.available = server.available_count();
        RngStream sample_rng(cfg.seed, t, 0, StreamPurpose::sampling);
        auto selected = sample_participants(server, cfg, sample_rng);
        rec.available = server.available_count();

        std::vector<std::size_t> active;
        for (std::size_t k : selected) {
            if (data[k].train.empty()) {
                spdlog::warn("round {}: client {} has no training samples; skipped", t, k);
                continue;
            }
            active.push_back(k);
        }

        const ParamVector& w_t = server.global;
        std::vector<ClientResult> results(active.size());
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        auto worker = [&]() {
            for (std::size_t i = next.fetch_add(1); i < active.size(); i = next.fetch_add(1)) {
                try {
                    const std::size_t k = active[i];
                    results[i] = client_round(clients[k], w_t, model, cfg, t,
                                              server.scaffold_control ? &*server.scaffold_control : nullptr);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) {
                        failure = std::current_exception();
                    }
                }
            }
        };
        const std::size_t n_workers = std::min(threads, active.size());
        if (n_workers <= 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (std::size_t i = 0; i < n_workers; ++i) {
                pool.emplace_back(worker);
            }
            for (auto& th : pool) {
                th.join();
            }
        }
        if (failure) {
            std::rethrow_exception(failure);
        }

        if (!active.empty()) {
            std::vector<ClientUpdate> updates;
            updates.reserve(results.size());
            for (const auto& r : results) {
                updates.push_back(ClientUpdate{r.stats.client, r.stats.n_k, r.w});
            }
            ParamVector next_global;
            switch (cfg.algorithm) {
            case Algorithm::fednova: {
                double n_t = 0.0;
                for (const auto& r : results) {
                    n_t += static_cast<double>(r.stats.n_k);
                }
                double tau_eff = 0.0;
                ParamVector direction(w_t.size(), 0.0);
                for (const auto& r : results) {
                    const double p = static_cast<double>(r.stats.n_k) / n_t;
                    const double tau = static_cast<double>(r.stats.local_steps);
                    tau_eff += p * tau;
                    axpy(p / tau, sub(r.w, w_t), direction);
                }
                next_global = w_t;
                axpy(tau_eff, direction, next_global);
                break;
            }
            case Algorithm::fedadam: {
                const ParamVector delta = sub(aggregate(updates), w_t);
                auto& m = *server.adam_m;
                auto& v = *server.adam_v;
                const auto& a = cfg.fedadam;
                next_global = w_t;
                for (std::size_t i = 0; i < delta.size(); ++i) {
                    m[i] = a.beta1 * m[i] + (1.0 - a.beta1) * delta[i];
                    v[i] = a.beta2 * v[i] + (1.0 - a.beta2) * delta[i] * delta[i];
                    next_global[i] += a.server_lr * m[i] / (std::sqrt(v[i]) + a.eps);
                }
                break;
            }
            case Algorithm::scaffold: {
                next_global = aggregate(updates);
                auto& c = *server.scaffold_control;
                const double inv_k = 1.0 / static_cast<double>(cfg.clients);
                for (const auto& r : results) {
                    axpy(inv_k, *r.control_delta, c);
                }
                break;
            }
            default:
                next_global = aggregate(updates);
                break;
            }
            if (!next_global.all_finite()) {
                throw std::runtime_error("round " + std::to_string(t) +
                                         ": global model became non-finite (learning rate too large?)");
            }
            if (options.observer) {
                options.observer(t, w_t, updates);
            }
            for (auto& r : results) {
                rec.participants.push_back(r.stats.client);
                rec.t_train_s += r.stats.train_s;
                rec.t_diag_s += r.stats.diag_s;
                rec.clients.push_back(std::move(r.stats));
            }
            server.global = std::move(next_global);
        }

        if (t % cfg.metrics.eval_every == 0 || t + 1 == cfg.rounds) {
            rec.metrics = evaluate_global(model, server.global, data, cfg.metrics);
        }
        server.log.push_back(std::move(rec));

        RngStream churn_rng(cfg.seed, t, 0, StreamPurpose::churn);
        advance_churn(server.availability, cfg.churn, churn_rng);
    }

    result.final_params = std::move(server.global);
    result.log = std::move(server.log);
    return result;
}

} // namespace fofl
