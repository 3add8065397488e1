#include "fofl/diagnostics.hpp"
#include "fofl/errors.hpp"
#include "support.hpp"

#include <Eigen/Dense>
#include <doctest.h>

#include <cmath>
#include <stdexcept>

using namespace fofl;
using fofl::testing::random_samples;
using fofl::testing::random_vector;
using fofl::testing::test_rng;

namespace {

// A bumpy deterministic landscape: each direction has its own frequency.
double bumpy(std::size_t dir, double s)
{
    return 1.0 + 0.3 * std::sin(40.0 * (static_cast<double>(dir) + 1.0) * s) + 2.0 * s * s;
}

Matrix random_matrix(RngStream& rng, std::size_t r, std::size_t c)
{
    Matrix m(r, c);
    for (auto& v : m.data) {
        v = rng.normal();
    }
    return m;
}

Eigen::MatrixXd to_eigen(const Matrix& m)
{
    Eigen::MatrixXd e(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(i, j);
        }
    }
    return e;
}

} // namespace

TEST_CASE("normalized total variation")
{
    const std::vector<double> line{0.0, 1.0, 2.0};
    // TV = 2, A = 2, 2 ell = 2
    CHECK(normalized_total_variation(line, 1.0, 0.0) == doctest::Approx(0.5));
    const std::vector<double> flat{3.0, 3.0, 3.0};
    CHECK(normalized_total_variation(flat, 0.01, 1e-8) == 0.0);
}

TEST_CASE("roughness index on stubbed slices")
{
    RoughnessConfig cfg;
    cfg.directions = 5;
    cfg.segments = 20;
    CHECK(roughness_index([](std::size_t, double) { return 4.2; }, cfg) == 0.0);

    cfg.directions = 2;
    cfg.segments = 2;
    cfg.radius = 1.0;
    cfg.eps_a = 0.0;
    const SliceFn stub = [](std::size_t dir, double s) {
        if (dir == 0) {
            return s;
        }
        return s == 0.0 ? 1.0 : 0.0;
    };
    // dir 0: TV 2, A 2 -> T = 0.5; dir 1: TV 2, A 1 -> T = 1; pop std 0.25, mean 0.75
    CHECK(roughness_index(stub, cfg) == doctest::Approx(0.25 / (0.75 + cfg.eps_t)).epsilon(1e-14));

    CHECK(coefficient_of_variation(std::vector<double>{1.0, 3.0}, cfg.eps_t) ==
          doctest::Approx(1.0 / (2.0 + cfg.eps_t)).epsilon(1e-15));
}

TEST_CASE("roughness is exactly invariant to a loss shift")
{
    RoughnessConfig cfg;
    cfg.directions = 6;
    cfg.segments = 50;
    const double base = roughness_index(bumpy, cfg);
    CHECK(base > 0.0);
    for (double c : {0.0, 0.5, 3.0, 17.25}) {
        const SliceFn shifted = [c](std::size_t d, double s) { return bumpy(d, s) + c; };
        CHECK(roughness_index(shifted, cfg) == doctest::Approx(base).epsilon(1e-12));
    }

    // On a dyadic landscape the shifted differences are exact, so is the index.
    const SliceFn dyadic = [](std::size_t d, double s) {
        return std::floor(64.0 * std::sin(30.0 * (static_cast<double>(d) + 1.0) * s)) / 8.0;
    };
    const double dy = roughness_index(dyadic, cfg);
    for (double c : {1.0, 4.0, 32.0}) {
        const SliceFn shifted = [&dyadic, c](std::size_t d, double s) { return dyadic(d, s) + c; };
        CHECK(roughness_index(shifted, cfg) == dy);
    }
}

TEST_CASE("roughness is invariant to loss scaling without stabilizers")
{
    RoughnessConfig cfg;
    cfg.directions = 7;
    cfg.segments = 40;
    cfg.eps_a = 0.0;
    cfg.eps_t = 0.0;
    const double base = roughness_index(bumpy, cfg);
    for (double c : {0.25, 2.0, 8.0}) {
        const SliceFn scaled = [c](std::size_t d, double s) { return c * bumpy(d, s); };
        CHECK(roughness_index(scaled, cfg) == base);
    }
    for (double c : {0.3, 7.0, 1e3}) {
        const SliceFn scaled = [c](std::size_t d, double s) { return c * bumpy(d, s); };
        CHECK(roughness_index(scaled, cfg) == doctest::Approx(base).epsilon(1e-13));
    }
}

TEST_CASE("roughness index on a model")
{
    auto rng = test_rng(8);
    const MlpSpec spec{4, 6, 3};
    const ParamVector params(random_vector(rng, spec.param_count(), -0.5, 0.5));
    const auto batch = random_samples(rng, 16, 4);
    RoughnessConfig cfg;
    cfg.directions = 4;
    cfg.segments = 20;
    RngStream a(1, 2, 3, StreamPurpose::probe);
    RngStream b(1, 2, 3, StreamPurpose::probe);
    const double i1 = roughness_index(spec, params, batch, cfg, a);
    const double i2 = roughness_index(spec, params, batch, cfg, b);
    CHECK(i1 == i2);
    CHECK(i1 >= 0.0);
    CHECK(std::isfinite(i1));
    RngStream c(1, 2, 3, StreamPurpose::probe);
    CHECK_THROWS_AS(roughness_index(spec, params, Batch{}, cfg, c), std::invalid_argument);
}

TEST_CASE("unit directions")
{
    RngStream rng(4, 0, 0, StreamPurpose::probe);
    const auto dirs = sample_unit_directions(10, 50, rng);
    CHECK(dirs.size() == 10);
    for (const auto& d : dirs) {
        CHECK(norm2(d) == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("spectral flatness fixed cases")
{
    SpectralConfig cfg;
    Matrix eye(4, 4);
    for (std::size_t i = 0; i < 4; ++i) {
        eye(i, i) = 1.0;
    }
    CHECK(std::abs(spectral_flatness(eye, cfg) - 1.0 / (2.0 + cfg.eps_f)) < 1e-9);

    Matrix d(2, 2);
    d(0, 0) = 3.0;
    d(1, 1) = 4.0;
    cfg.power_iters = 60;
    CHECK(spectral_flatness(d, cfg) == doctest::Approx(4.0 / (5.0 + cfg.eps_f)).epsilon(1e-9));

    Matrix outer(3, 4);
    const double u[3] = {1.0, -2.0, 0.5};
    const double v[4] = {0.3, 1.0, -1.0, 2.0};
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            outer(i, j) = u[i] * v[j];
        }
    }
    CHECK(spectral_flatness(outer, cfg) == doctest::Approx(1.0).epsilon(1e-7));

    CHECK(spectral_flatness(Matrix(3, 3), cfg) == 0.0);
    CHECK(frobenius_norm(d) == doctest::Approx(5.0));
}

TEST_CASE("spectral flatness lies in (0, 1]")
{
    SpectralConfig cfg;
    for (std::uint64_t t = 0; t < 1000; ++t) {
        auto rng = test_rng(4000 + t);
        const auto m = random_matrix(rng, 1 + rng.uniform_index(8), 1 + rng.uniform_index(8));
        const double k = spectral_flatness(m, cfg);
        CHECK(k > 0.0);
        CHECK(k <= 1.0);
    }
}

TEST_CASE("power iteration matches an SVD oracle on gap-controlled matrices")
{
    for (std::uint64_t t = 0; t < 100; ++t) {
        auto rng = test_rng(5000 + t);
        const std::size_t r = 2 + rng.uniform_index(7);
        const std::size_t c = 2 + rng.uniform_index(7);
        const auto m = random_matrix(rng, r, c);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(m));
        const auto& sv = svd.singularValues();
        if (sv.size() < 2 || sv(1) / sv(0) > 0.9) {
            continue;
        }
        CHECK(std::abs(spectral_norm_estimate(m, 50) - sv(0)) < 1e-6);
    }
}

TEST_CASE("final layer matrix")
{
    const MlpSpec spec{3, 4, 5};
    ParamVector p(spec.param_count());
    for (std::size_t j = 0; j < 5; ++j) {
        p[spec.w3_offset() + j] = static_cast<double>(j + 1);
    }
    const auto w = final_layer_matrix(spec, p);
    CHECK(w.rows == 1);
    CHECK(w.cols == 5);
    CHECK(w(0, 4) == 5.0);
    // A single row is rank one.
    CHECK(spectral_flatness(w, SpectralConfig{}) == doctest::Approx(1.0).epsilon(1e-8));
}
