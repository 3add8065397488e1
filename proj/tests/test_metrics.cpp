#include "fofl/errors.hpp"
#include "fofl/metrics.hpp"
#include "fofl/numerics.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>

using namespace fofl;
using fofl::testing::test_rng;

namespace {

RoundRecord record(std::size_t round, const std::vector<std::pair<std::size_t, double>>& drift,
                   const std::vector<std::optional<double>>& roughness = {})
{
    RoundRecord r;
    r.round = round;
    for (std::size_t i = 0; i < drift.size(); ++i) {
        ClientRoundStats s;
        s.client = drift[i].first;
        s.drift = drift[i].second;
        if (i < roughness.size()) {
            s.roughness = roughness[i];
        }
        r.participants.push_back(s.client);
        r.clients.push_back(s);
    }
    return r;
}

} // namespace

TEST_CASE("utility metrics")
{
    const std::vector<double> y{100.0, 50.0};
    CHECK(rmse(y, y) == 0.0);
    CHECK(mae(y, y) == 0.0);
    CHECK(mape(y, y, 1e-3) == 0.0);

    CHECK(mape(std::vector<double>{110.0}, std::vector<double>{100.0}, 0.0) == doctest::Approx(10.0));

    const std::vector<double> pred{3.0, 4.0};
    const std::vector<double> zero{0.0, 0.0};
    CHECK(rmse(pred, zero) == doctest::Approx(std::sqrt(12.5)));
    CHECK(mae(pred, zero) == 3.5);

    CHECK_THROWS_AS(rmse(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);
    CHECK_THROWS_AS(mae(pred, std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("RMSE dominates MAE")
{
    for (std::uint64_t t = 0; t < 300; ++t) {
        auto rng = test_rng(7000 + t);
        const std::size_t n = 1 + rng.uniform_index(50);
        const auto p = fofl::testing::random_vector(rng, n, -100.0, 100.0);
        const auto y = fofl::testing::random_vector(rng, n, -100.0, 100.0);
        const double r = rmse(p, y);
        const double m = mae(p, y);
        CHECK(m >= 0.0);
        CHECK(r >= m * (1.0 - 1e-15));
    }
}

TEST_CASE("micro average equals pooled evaluation")
{
    for (std::uint64_t t = 0; t < 50; ++t) {
        auto rng = test_rng(7500 + t);
        ErrorAccumulator acc;
        std::vector<double> all_p, all_y;
        double weighted_sq = 0.0;
        std::size_t total = 0;
        const std::size_t clients = 1 + rng.uniform_index(6);
        for (std::size_t k = 0; k < clients; ++k) {
            const std::size_t n = 1 + rng.uniform_index(20);
            const auto p = fofl::testing::random_vector(rng, n, 0.0, 50.0);
            const auto y = fofl::testing::random_vector(rng, n, 1.0, 50.0);
            acc.add_client(p, y, 1e-3);
            all_p.insert(all_p.end(), p.begin(), p.end());
            all_y.insert(all_y.end(), y.begin(), y.end());
            const double r = rmse(p, y);
            weighted_sq += r * r * static_cast<double>(n);
            total += n;
        }
        const auto micro = acc.result(Averaging::micro);
        CHECK(micro.rmse == doctest::Approx(rmse(all_p, all_y)).epsilon(1e-12));
        CHECK(micro.rmse == doctest::Approx(std::sqrt(weighted_sq / static_cast<double>(total))).epsilon(1e-12));
        CHECK(micro.mae == doctest::Approx(mae(all_p, all_y)).epsilon(1e-12));
        CHECK(micro.mape == doctest::Approx(mape(all_p, all_y, 1e-3)).epsilon(1e-12));
        CHECK(micro.count == total);
    }
}

TEST_CASE("macro average")
{
    ErrorAccumulator acc;
    acc.add_client(std::vector<double>{1.0}, std::vector<double>{0.0}, 1e-3);
    acc.add_client(std::vector<double>{3.0, 3.0, 3.0}, std::vector<double>{0.0, 0.0, 0.0}, 1e-3);
    CHECK(acc.result(Averaging::macro).mae == 2.0);
    CHECK(acc.result(Averaging::micro).mae == 2.5);
}

TEST_CASE("rounds to threshold")
{
    const std::vector<double> s{5, 4, 3, 2};
    CHECK(rounds_to_threshold(s, 3.0) == std::optional<std::size_t>(2));
    CHECK_FALSE(rounds_to_threshold(std::vector<double>{5, 4}, 1.0).has_value());
    CHECK(rounds_to_threshold(s, 5.0) == std::optional<std::size_t>(0));

    for (std::uint64_t t = 0; t < 200; ++t) {
        auto rng = test_rng(8000 + t);
        const auto series = fofl::testing::random_vector(rng, 1 + rng.uniform_index(40), 0.0, 10.0);
        const double a = rng.uniform(-1.0, 11.0);
        const double b = rng.uniform(-1.0, 11.0);
        const double lo = std::min(a, b), hi = std::max(a, b);
        const auto t_lo = rounds_to_threshold(series, lo);
        const auto t_hi = rounds_to_threshold(series, hi);
        const double inf = std::numeric_limits<double>::infinity();
        CHECK((t_lo ? static_cast<double>(*t_lo) : inf) >= (t_hi ? static_cast<double>(*t_hi) : inf));
    }
}

TEST_CASE("best so far")
{
    CHECK(best_so_far(std::vector<double>{3, 5, 2}) == std::vector<double>{3, 3, 2});
    CHECK(best_so_far(std::vector<double>{}).empty());
    CHECK(best_so_far(std::vector<double>{4, 3, 1}) == std::vector<double>{4, 3, 1});
    for (std::uint64_t t = 0; t < 100; ++t) {
        auto rng = test_rng(8500 + t);
        const auto b = best_so_far(fofl::testing::random_vector(rng, 30));
        for (std::size_t i = 1; i < b.size(); ++i) {
            CHECK(b[i] <= b[i - 1]);
        }
    }
}

TEST_CASE("drift statistics")
{
    const auto same = drift_stats(std::vector<double>{0.7, 0.7, 0.7}, 1e-8);
    CHECK(same.d_cv == 0.0);
    CHECK(same.d_mean == doctest::Approx(0.7));

    const auto two = drift_stats(std::vector<double>{1.0, 3.0}, 1e-8);
    CHECK(two.d_mean == 2.0);
    CHECK(two.d_cv == doctest::Approx(1.0 / (2.0 + 1e-8)).epsilon(1e-15));

    CHECK(drift_stats(std::vector<double>{4.0}, 1e-8).d_cv == 0.0);
    CHECK_THROWS_AS(drift_stats(std::vector<double>{}, 1e-8), std::invalid_argument);

    const auto rec = record(0, {{0, 1.0}, {4, 3.0}});
    CHECK(drift_stats(rec, 1e-8).d_mean == 2.0);
}

TEST_CASE("roughness drift coupling")
{
    const std::vector<double> rough{0.1, 0.4, 0.2, 0.9};
    std::vector<double> drift;
    for (double r : rough) {
        drift.push_back(2.5 * r);
    }
    const auto c = correlate(rough, drift);
    CHECK(c.pearson == doctest::Approx(1.0));
    CHECK(c.spearman == doctest::Approx(1.0));
    std::vector<double> anti;
    for (double r : rough) {
        anti.push_back(1.0 / r);
    }
    CHECK(correlate(rough, anti).spearman == doctest::Approx(-1.0));
    CHECK_THROWS_AS(correlate(rough, std::vector<double>{1, 1, 1, 1}), UndefinedCorrelation);

    // Representative VED pairs at t = 100
    const std::vector<double> i_k{0.14, 0.22, 0.30, 0.38, 0.42, 0.50, 0.58, 0.66, 0.70, 0.78, 0.90, 1.00};
    const std::vector<double> d_k{0.36, 0.41, 0.47, 0.51, 0.54, 0.60, 0.65, 0.71, 0.74, 0.80, 0.92, 0.98};
    const auto ved = correlate(i_k, d_k);
    CHECK(ved.pearson > 0.9);
    CHECK(ved.pearson == doctest::Approx(0.9978885424709734).epsilon(1e-12));
    CHECK(ved.spearman == doctest::Approx(1.0));

    std::vector<RoundRecord> log;
    log.push_back(record(0, {{0, 0.2}, {1, 0.4}, {2, 0.6}}, {0.1, 0.2, 0.3}));
    log.push_back(record(1, {{0, 0.2}, {1, 0.4}}, {0.1, 0.2}));
    CHECK(roughness_drift_coupling(log, 0).pearson == doctest::Approx(1.0));
    CHECK_THROWS_AS(roughness_drift_coupling(log, 1), std::invalid_argument);
}

TEST_CASE("early drift predictor")
{
    std::vector<RoundRecord> log;
    log.push_back(record(0, {{0, 0.1}, {1, 0.1}}, {0.5, 0.8}));
    log.push_back(record(2, {{0, 0.1}}, {0.6}));
    log.push_back(record(5, {{0, 0.7}, {1, 0.4}}));
    log.push_back(record(6, {{1, 0.6}, {2, 0.9}}));
    log.push_back(record(9, {{0, 9.9}}));
    const auto e = early_drift_predictor(log, 3, 5, 8);
    REQUIRE(e.size() == 2);
    CHECK(e[0].client == 0);
    CHECK(e[0].roughness == 0.6);
    CHECK(e[0].mean_drift == doctest::Approx(0.7));
    CHECK(e[1].client == 1);
    CHECK(e[1].roughness == 0.8);
    CHECK(e[1].mean_drift == doctest::Approx(0.5));
    CHECK(e[1].participations == 2);
}

TEST_CASE("tertile stratification")
{
    std::vector<std::pair<std::size_t, double>> nine;
    for (std::size_t k = 0; k < 9; ++k) {
        nine.emplace_back(k, static_cast<double>(9 - k));
    }
    const auto t9 = stratify_tertiles(nine);
    CHECK(t9.low.size() == 3);
    CHECK(t9.med.size() == 3);
    CHECK(t9.high.size() == 3);
    CHECK(t9.low == std::vector<std::size_t>{8, 7, 6});

    std::vector<std::pair<std::size_t, double>> ten;
    for (std::size_t k = 0; k < 10; ++k) {
        ten.emplace_back(k, 1.0);
    }
    const auto t10 = stratify_tertiles(ten);
    CHECK(t10.low == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(t10.med == std::vector<std::size_t>{4, 5, 6});
    CHECK(t10.high == std::vector<std::size_t>{7, 8, 9});

    const auto t11 = stratify_tertiles(std::vector<std::pair<std::size_t, double>>(11, {0, 0.0}));
    CHECK(t11.low.size() == 4);
    CHECK(t11.med.size() == 4);
    CHECK(t11.high.size() == 3);
}

TEST_CASE("overhead arithmetic")
{
    CHECK(amortized_round_time(1.0, 2.0, 5) == doctest::Approx(1.2).epsilon(1e-15));
    CHECK(amortized_round_time(0.7, 0.7, 5) == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(amortized_round_time(1.0, 2.0, 1) == 2.0);
    CHECK(overhead_percent(3.0, 3.0) == 0.0);
    CHECK(overhead_percent(1.5, 1.0) == doctest::Approx(50.0));

    std::vector<RoundRecord> log;
    for (std::size_t t = 0; t < 10; ++t) {
        RoundRecord r;
        r.round = t;
        ClientRoundStats s;
        s.probed = t % 5 == 0;
        s.train_s = 1.0;
        s.diag_s = s.probed ? 1.0 : 0.0;
        r.participants.push_back(0);
        r.clients.push_back(s);
        r.t_train_s = s.train_s;
        r.t_diag_s = s.diag_s;
        log.push_back(r);
    }
    const auto rep = overhead_report(log, 5);
    CHECK(rep.t_probe_s == doctest::Approx(2.0));
    CHECK(rep.t_nonprobe_s == doctest::Approx(1.0));
    CHECK(rep.amortized_s == doctest::Approx(1.2));
}
