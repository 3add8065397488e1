#include "fofl/errors.hpp"
#include "fofl/fedcore.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

using namespace fofl;
using fofl::testing::test_rng;
using fofl::testing::toy_federation;

namespace {

FedConfig small_config(Algorithm alg, std::size_t clients = 6, std::size_t rounds = 6)
{
    FedConfig cfg;
    cfg.clients = clients;
    cfg.participation = 0.5;
    cfg.rounds = rounds;
    cfg.batch_size = 8;
    cfg.eta0 = 0.05;
    cfg.hidden1 = 8;
    cfg.hidden2 = 4;
    cfg.rough.directions = 3;
    cfg.rough.segments = 12;
    cfg.rough.probe_batch = 16;
    cfg.probe_every = 2;
    cfg.algorithm = alg;
    cfg.seed = 3;
    return cfg;
}

/// Broadcast model of every round followed by the final model.
std::vector<ParamVector> trajectory(const FedConfig& cfg, std::span<const ClientDataset> data,
                                    std::size_t threads = 1)
{
    std::vector<ParamVector> out;
    RunOptions opts;
    opts.threads = threads;
    opts.observer = [&](std::size_t, const ParamVector& w_t, std::span<const ClientUpdate>) { out.push_back(w_t); };
    auto result = run_experiment(cfg, data, opts);
    out.push_back(result.final_params);
    return out;
}

double max_trajectory_gap(const std::vector<ParamVector>& a, const std::vector<ParamVector>& b)
{
    REQUIRE(a.size() == b.size());
    double gap = 0.0;
    for (std::size_t t = 0; t < a.size(); ++t) {
        REQUIRE(a[t].size() == b[t].size());
        for (std::size_t i = 0; i < a[t].size(); ++i) {
            gap = std::max(gap, std::abs(a[t][i] - b[t][i]));
        }
    }
    return gap;
}

} // namespace

TEST_CASE("algorithm names")
{
    for (const auto& name : algorithm_names()) {
        const auto alg = parse_algorithm(name);
        REQUIRE(alg.has_value());
        CHECK(algorithm_name(*alg) == name);
    }
    CHECK(algorithm_names().size() == 8);
    CHECK_FALSE(parse_algorithm("FedSGD").has_value());
}

TEST_CASE("participant count")
{
    CHECK(participant_count(10, 0.3) == 3);
    CHECK(participant_count(10, 0.05) == 1);
    CHECK(participant_count(7, 0.3) == 3);
    CHECK(participant_count(10, 1.0) == 10);
    CHECK(participant_count(0, 0.3) == 1);
}

TEST_CASE("participant sampling")
{
    FedConfig cfg = small_config(Algorithm::fedavg, 20);
    for (std::uint64_t t = 0; t < 200; ++t) {
        auto rng = test_rng(9000 + t);
        cfg.participation = rng.uniform(0.01, 1.0);
        ServerState server;
        server.availability.resize(20);
        for (std::size_t k = 0; k < 20; ++k) {
            server.availability[k] = rng.bernoulli(0.6);
        }
        const std::size_t avail = server.available_count();
        const auto s = sample_participants(server, cfg, rng);
        CHECK(s.size() == participant_count(server.available_count(), cfg.participation));
        CHECK(std::is_sorted(s.begin(), s.end()));
        CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
        for (auto k : s) {
            CHECK(server.availability[k]);
        }
        if (avail == 0) {
            CHECK(server.available_count() == 1);
        }
    }

    ServerState empty;
    empty.availability.assign(5, false);
    RngStream rng(1, 0, 0, StreamPurpose::sampling);
    const auto forced = sample_participants(empty, small_config(Algorithm::fedavg, 5), rng);
    CHECK(forced.size() == 1);
    CHECK(empty.available_count() == 1);
}

TEST_CASE("churn transitions")
{
    auto rng = test_rng(10);
    std::vector<bool> a{true, false, true, true, false};
    const auto before = a;
    advance_churn(a, ChurnConfig{0.0, 0.0, 1.0}, rng);
    CHECK(a == before);
    advance_churn(a, ChurnConfig{1.0, 1.0, 1.0}, rng);
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k] != before[k]);
    }
}

TEST_CASE("churn reaches the two-state stationary distribution")
{
    auto check = [](double p_leave, double p_join) {
        ChurnConfig cfg{p_leave, p_join, 1.0};
        std::vector<bool> a(20, true);
        double available = 0.0;
        const std::size_t rounds = 10000;
        for (std::size_t t = 0; t < rounds; ++t) {
            RngStream rng(17, t, 0, StreamPurpose::churn);
            advance_churn(a, cfg, rng);
            available += static_cast<double>(std::count(a.begin(), a.end(), true));
        }
        const double frac = available / static_cast<double>(rounds * a.size());
        CHECK(std::abs(frac - p_join / (p_join + p_leave)) < 0.05);
    };
    check(0.1, 0.1);
    check(0.02, 0.2);
}

TEST_CASE("initial availability")
{
    RngStream rng(1, 0, 0, StreamPurpose::churn);
    const auto a = initial_availability(10, ChurnConfig{0.1, 0.1, 0.35}, rng);
    CHECK(std::count(a.begin(), a.end(), true) == 4);
    const auto all = initial_availability(10, ChurnConfig{}, rng);
    CHECK(std::count(all.begin(), all.end(), true) == 10);
}

TEST_CASE("proximal gradient and roughness response")
{
    const ParamVector g{0.5, -1.0};
    CHECK(proximal_gradient(g, ParamVector{2.0, 7.0}, ParamVector{1.0, 1.0}, 0.0, 0.7) == g);
    CHECK(proximal_gradient(g, ParamVector{1.0, 1.0}, ParamVector{1.0, 1.0}, 0.3, 0.7) == g);
    const auto p = proximal_gradient(ParamVector{0.5}, ParamVector{2.0}, ParamVector{1.0}, 0.1, 1.0);
    CHECK(p[0] == doctest::Approx(0.6));

    CHECK(roughness_response(0.0, 0.5) == 0.0);
    CHECK(roughness_response(0.5, 0.5) == 0.5);
    CHECK(roughness_response(0.5e6, 0.5) > 0.999999);
}

TEST_CASE("aggregation")
{
    const std::vector<ClientUpdate> one{{3, 10, ParamVector{1.0, -2.0}}};
    CHECK(aggregate(one) == ParamVector{1.0, -2.0});

    const std::vector<ClientUpdate> two{{0, 1, ParamVector{1.0, 1.0}}, {1, 3, ParamVector{3.0, 3.0}}};
    CHECK(aggregate(two) == ParamVector{2.5, 2.5});

    const std::vector<ClientUpdate> eq{{0, 5, ParamVector{1.0}}, {1, 5, ParamVector{2.0}}, {2, 5, ParamVector{6.0}}};
    CHECK(aggregate(eq)[0] == doctest::Approx(3.0));

    CHECK_THROWS_AS(aggregate(std::vector<ClientUpdate>{}), std::invalid_argument);

    for (std::uint64_t t = 0; t < 200; ++t) {
        auto rng = test_rng(9500 + t);
        std::vector<ClientUpdate> ups;
        const std::size_t k = 1 + rng.uniform_index(8);
        for (std::size_t i = 0; i < k; ++i) {
            ups.push_back({i, 1 + rng.uniform_index(100), ParamVector(fofl::testing::random_vector(rng, 5, -3, 3))});
        }
        const auto w = aggregate(ups);
        for (std::size_t j = 0; j < 5; ++j) {
            double lo = ups[0].w[j], hi = ups[0].w[j];
            for (const auto& u : ups) {
                lo = std::min(lo, u.w[j]);
                hi = std::max(hi, u.w[j]);
            }
            CHECK(w[j] >= lo - 1e-12);
            CHECK(w[j] <= hi + 1e-12);
        }
    }
}

TEST_CASE("local step count")
{
    FedConfig cfg;
    cfg.batch_size = 64;
    cfg.epochs = 1.0;
    CHECK(local_step_count(cfg, 128) == 2);
    CHECK(local_step_count(cfg, 129) == 3);
    CHECK(local_step_count(cfg, 10) == 1);
    cfg.local_steps = 7;
    CHECK(local_step_count(cfg, 10) == 7);
}

TEST_CASE("batch sampler covers each epoch once")
{
    BatchSampler s(10, 4, RngStream(1, 0, 0, StreamPurpose::batch));
    std::vector<int> seen(10, 0);
    for (int b = 0; b < 2; ++b) {
        for (auto i : s.next()) {
            seen[i]++;
        }
    }
    CHECK(std::count(seen.begin(), seen.end(), 1) == 8);
    BatchSampler whole(3, 64, RngStream(1, 0, 0, StreamPurpose::batch));
    CHECK(whole.next().size() == 3);
}

TEST_CASE("a single local step is plain proximal SGD for every order")
{
    auto data = toy_federation(1, 20, 3, 4);
    const MlpSpec spec{3, 5, 3};
    auto rng = test_rng(44);
    const auto w_t = init_params(spec, rng);
    FedConfig base = small_config(Algorithm::fedavg, 1);
    base.local_steps = 1;
    ClientState c0;
    c0.dataset = &data[0];
    const auto ref = client_round(c0, w_t, spec, base, 0);
    for (double alpha : {0.2, 0.5, 0.9}) {
        FedConfig cfg = base;
        cfg.algorithm = Algorithm::fo_ri_fedavg;
        cfg.frac.alpha = alpha;
        cfg.lambda = 0.3;
        ClientState c;
        c.dataset = &data[0];
        const auto out = client_round(c, w_t, spec, cfg, 0);
        CHECK(out.w == ref.w);
        CHECK(out.stats.roughness.has_value());
    }
}

TEST_CASE("three-step FO-RI client trace")
{
    // 1-1-1 network with all pre-activations positive, one sample: the model
    // is the affine map f = w3 (w2 (w1 x + b1) + b2) + b3.
    const MlpSpec spec{1, 1, 1};
    const double x = 1.5, y = -0.25;
    auto ds = fofl::testing::make_dataset(0, {Sample{{x}, y}});

    FedConfig cfg = small_config(Algorithm::fo_ri_fedavg, 1);
    cfg.local_steps = 3;
    cfg.batch_size = 1;
    cfg.eta0 = 0.1;
    cfg.lambda = 0.5;
    cfg.tau_i = 0.5;
    cfg.frac.alpha = 0.7;
    cfg.frac.delta = 1e-6;

    const ParamVector w_t{0.5, 0.1, 0.8, 0.05, 0.6, 0.02};
    ClientState client;
    client.dataset = &ds;
    const auto out = client_round(client, w_t, spec, cfg, 0);
    REQUIRE(out.stats.roughness.has_value());
    const double I = *out.stats.roughness;
    const double prox = cfg.lambda * I / (I + cfg.tau_i);

    auto grad = [&](const std::vector<double>& w) {
        const double h1 = w[0] * x + w[1];
        const double h2 = w[2] * h1 + w[3];
        const double r = w[4] * h2 + w[5] - y;
        const double d2 = 2.0 * r * w[4];
        const double d1 = d2 * w[2];
        return std::vector<double>{d1 * x, d1, d2 * h1, d2, 2.0 * r * h2, 2.0 * r};
    };
    const double eta = 0.1;
    const double g2a = std::tgamma(2.0 - 0.7);
    std::vector<double> anchor(w_t.begin(), w_t.end());
    std::vector<double> prev, w = anchor;
    for (int h = 0; h < 3; ++h) {
        auto g = grad(w);
        for (std::size_t i = 0; i < 6; ++i) {
            g[i] += prox * (w[i] - anchor[i]);
        }
        std::vector<double> next(6);
        for (std::size_t i = 0; i < 6; ++i) {
            double p = 1.0;
            if (h > 0) {
                p = std::pow(std::abs(w[i] - prev[i]) + 1e-6, 0.3) / g2a;
                p = std::clamp(p, 0.2, 5.0);
            }
            next[i] = w[i] - eta * g[i] * p;
        }
        prev = w;
        w = next;
    }
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(out.w[i] == doctest::Approx(w[i]).epsilon(1e-13));
    }
    CHECK(out.stats.loss_trace.size() == 3);
    CHECK(out.stats.drift == doctest::Approx(norm2(sub(out.w, w_t))).epsilon(1e-15));
}

TEST_CASE("roughness is cached between probe rounds")
{
    auto data = toy_federation(1, 30, 3, 8);
    const MlpSpec spec{3, 4, 2};
    auto rng = test_rng(1);
    auto w = init_params(spec, rng);
    FedConfig cfg = small_config(Algorithm::fo_ri_fedavg, 1);
    cfg.probe_every = 3;
    ClientState c;
    c.dataset = &data[0];
    const auto r0 = client_round(c, w, spec, cfg, 0);
    CHECK(r0.stats.probed);
    const auto r1 = client_round(c, r0.w, spec, cfg, 1);
    CHECK_FALSE(r1.stats.probed);
    CHECK(*r1.stats.roughness == *r0.stats.roughness);
    const auto r3 = client_round(c, r1.w, spec, cfg, 3);
    CHECK(r3.stats.probed);
    CHECK(*r3.stats.roughness != *r0.stats.roughness);

    cfg.spec.beta_kappa = 0.5;
    const auto gated = client_round(c, w, spec, cfg, 0);
    REQUIRE(gated.stats.kappa.has_value());
    CHECK(*gated.stats.kappa > 0.0);
    CHECK(*gated.stats.kappa <= 1.0);
}

TEST_CASE("zero rounds returns the initial model")
{
    auto data = toy_federation(3, 12, 3, 1);
    auto cfg = small_config(Algorithm::fo_ri_fedavg, 3, 0);
    const auto r = run_experiment(cfg, data);
    CHECK(r.log.empty());
    RngStream init(cfg.seed, 0, 0, StreamPurpose::init);
    CHECK(r.final_params == init_params(r.model, init));
}

TEST_CASE("reduction lattice")
{
    auto data = toy_federation(6, 24, 3, 2);
    const auto fedavg = trajectory(small_config(Algorithm::fedavg), data);

    auto reduced = small_config(Algorithm::fo_ri_fedavg);
    reduced.frac.alpha = 1.0;
    reduced.lambda = 0.0;
    reduced.spec.beta_kappa = 0.0;
    CHECK(max_trajectory_gap(trajectory(reduced, data), fedavg) <= 1e-12);

    auto fo_alpha1 = small_config(Algorithm::fo_ri_fedavg);
    fo_alpha1.frac.alpha = 1.0;
    fo_alpha1.lambda = 0.2;
    auto ri = small_config(Algorithm::ri_fedavg);
    ri.lambda = 0.2;
    CHECK(max_trajectory_gap(trajectory(fo_alpha1, data), trajectory(ri, data)) <= 1e-12);

    auto fo_no_prox = small_config(Algorithm::fo_ri_fedavg);
    fo_no_prox.lambda = 0.0;
    const auto fo = trajectory(small_config(Algorithm::fo_fedavg), data);
    CHECK(max_trajectory_gap(trajectory(fo_no_prox, data), fo) <= 1e-12);

    auto fo1 = small_config(Algorithm::fo_fedavg);
    fo1.frac.alpha = 1.0;
    CHECK(max_trajectory_gap(trajectory(fo1, data), fedavg) <= 1e-12);

    // The full method with alpha < 1 and lambda > 0 is a genuinely different run.
    CHECK(max_trajectory_gap(trajectory(small_config(Algorithm::fo_ri_fedavg), data), fedavg) > 1e-6);
}

TEST_CASE("baseline reductions")
{
    auto data = toy_federation(6, 24, 3, 5);
    const auto fedavg = trajectory(small_config(Algorithm::fedavg), data);

    auto prox = small_config(Algorithm::fedprox);
    prox.fedprox.mu = 0.0;
    CHECK(max_trajectory_gap(trajectory(prox, data), fedavg) <= 1e-12);

    auto fixed_avg = small_config(Algorithm::fedavg);
    fixed_avg.local_steps = 3;
    auto nova = small_config(Algorithm::fednova);
    nova.local_steps = 3;
    CHECK(max_trajectory_gap(trajectory(nova, data), trajectory(fixed_avg, data)) <= 1e-12);

    // Identical data on both clients with full participation and full batches:
    // the control variates coincide after the first round and cancel.
    auto twin = toy_federation(1, 16, 3, 6);
    std::vector<ClientDataset> same{twin[0], twin[0]};
    same[1].client_id = 1;
    auto base = small_config(Algorithm::fedavg, 2, 8);
    base.participation = 1.0;
    base.batch_size = 64;
    base.local_steps = 3;
    auto scaffold = base;
    scaffold.algorithm = Algorithm::scaffold;
    CHECK(max_trajectory_gap(trajectory(scaffold, same), trajectory(base, same)) <= 1e-6);

    const auto adam = run_experiment(small_config(Algorithm::fedadam), data);
    CHECK(adam.final_params.all_finite());
    CHECK(adam.final_params != fedavg.back());
}

TEST_CASE("runs are deterministic and thread-count independent")
{
    auto data = toy_federation(6, 24, 3, 9);
    auto cfg = small_config(Algorithm::fo_ri_fedavg);
    cfg.churn = ChurnConfig{0.2, 0.3, 0.8};
    const auto a = run_experiment(cfg, data);
    RunOptions four;
    four.threads = 4;
    const auto b = run_experiment(cfg, data, four);
    CHECK(a.final_params == b.final_params);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t t = 0; t < a.log.size(); ++t) {
        CHECK(a.log[t].participants == b.log[t].participants);
        REQUIRE(a.log[t].clients.size() == b.log[t].clients.size());
        for (std::size_t i = 0; i < a.log[t].clients.size(); ++i) {
            CHECK(a.log[t].clients[i].drift == b.log[t].clients[i].drift);
            CHECK(a.log[t].clients[i].roughness == b.log[t].clients[i].roughness);
        }
        REQUIRE(a.log[t].metrics.has_value());
        CHECK(a.log[t].metrics->rmse == b.log[t].metrics->rmse);
    }
    cfg.seed = 4;
    CHECK(run_experiment(cfg, data).final_params != a.final_params);
}

TEST_CASE("logged drift and participation match the run")
{
    auto data = toy_federation(10, 20, 3, 12);
    for (auto alg : {Algorithm::fedavg, Algorithm::fo_ri_fedavg, Algorithm::scaffold}) {
        auto cfg = small_config(alg, 10, 8);
        cfg.participation = 0.3;
        cfg.churn = ChurnConfig{0.3, 0.3, 0.7};
        std::vector<std::vector<double>> drifts;
        std::vector<ParamVector> globals;
        RunOptions opts;
        opts.observer = [&](std::size_t, const ParamVector& w_t, std::span<const ClientUpdate> ups) {
            std::vector<double> d;
            for (const auto& u : ups) {
                d.push_back(norm2(sub(u.w, w_t)));
            }
            drifts.push_back(d);
            if (alg == Algorithm::fedavg) {
                globals.push_back(aggregate(ups));
            }
        };
        const auto r = run_experiment(cfg, data, opts);
        REQUIRE(drifts.size() == r.log.size());
        for (std::size_t t = 0; t < r.log.size(); ++t) {
            const auto& rec = r.log[t];
            CHECK(rec.participants.size() == participant_count(rec.available, cfg.participation));
            REQUIRE(rec.clients.size() == drifts[t].size());
            for (std::size_t i = 0; i < rec.clients.size(); ++i) {
                CHECK(rec.clients[i].drift == drifts[t][i]);
            }
        }
    }
}

TEST_CASE("run validation")
{
    auto data = toy_federation(3, 12, 3, 1);
    auto cfg = small_config(Algorithm::fedavg, 4);
    CHECK_THROWS_AS(run_experiment(cfg, data), ConfigError);
    cfg = small_config(Algorithm::fedavg, 3);
    cfg.participation = 0.0;
    CHECK_THROWS_AS(run_experiment(cfg, data), ConfigError);
}
