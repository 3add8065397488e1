#pragma once

#include "fofl/bevdata.hpp"
#include "fofl/model.hpp"
#include "fofl/numerics.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace fofl::testing {

inline RngStream test_rng(std::uint64_t seed, std::uint64_t client = 0)
{
    return RngStream(seed, 0, client, StreamPurpose::test);
}

inline std::vector<double> random_vector(RngStream& rng, std::size_t n, double lo = -1.0, double hi = 1.0)
{
    std::vector<double> v(n);
    for (auto& x : v) {
        x = rng.uniform(lo, hi);
    }
    return v;
}

inline std::vector<Sample> random_samples(RngStream& rng, std::size_t n, std::size_t dim)
{
    std::vector<Sample> out(n);
    for (auto& s : out) {
        s.x = random_vector(rng, dim);
        s.y = rng.normal();
    }
    return out;
}

/// Dataset with already-normalized samples and identity label scaling.
inline ClientDataset make_dataset(std::size_t id, std::vector<Sample> train, std::vector<Sample> test = {})
{
    ClientDataset ds;
    ds.client_id = id;
    ds.train = std::move(train);
    ds.test = std::move(test);
    ds.label_mean = 0.0;
    ds.label_scale = 1.0;
    ds.eps_y = 1e-3;
    return ds;
}

/// Small heterogeneous federation: client k's labels follow a client-specific
/// linear map of its features plus noise.
inline std::vector<ClientDataset> toy_federation(std::size_t clients, std::size_t n, std::size_t dim,
                                                 std::uint64_t seed)
{
    std::vector<ClientDataset> out;
    for (std::size_t k = 0; k < clients; ++k) {
        auto rng = test_rng(seed, k);
        const auto coef = random_vector(rng, dim);
        auto make = [&](std::size_t count) {
            std::vector<Sample> s(count);
            for (auto& smp : s) {
                smp.x = random_vector(rng, dim);
                double y = 0.3 * static_cast<double>(k % 3);
                for (std::size_t j = 0; j < dim; ++j) {
                    y += coef[j] * smp.x[j];
                }
                smp.y = y + 0.05 * rng.normal();
            }
            return s;
        };
        auto train = make(n + 3 * k);
        auto test = make(n / 2 + 1);
        out.push_back(make_dataset(k, std::move(train), std::move(test)));
    }
    return out;
}

/// Mean squared error recomputed in extended precision, for finite-difference
/// oracles that must resolve small gradient entries.
inline long double reference_loss(const MlpSpec& s, const std::vector<long double>& p, Batch batch)
{
    long double total = 0.0L;
    std::vector<long double> h1(s.hidden1), h2(s.hidden2);
    for (const auto& smp : batch) {
        for (std::size_t i = 0; i < s.hidden1; ++i) {
            long double z = p[s.b1_offset() + i];
            for (std::size_t j = 0; j < s.input_dim; ++j) {
                z += p[s.w1_offset() + i * s.input_dim + j] * smp.x[j];
            }
            h1[i] = z > 0.0L ? z : 0.0L;
        }
        for (std::size_t i = 0; i < s.hidden2; ++i) {
            long double z = p[s.b2_offset() + i];
            for (std::size_t j = 0; j < s.hidden1; ++j) {
                z += p[s.w2_offset() + i * s.hidden1 + j] * h1[j];
            }
            h2[i] = z > 0.0L ? z : 0.0L;
        }
        long double out = p[s.b3_offset()];
        for (std::size_t j = 0; j < s.hidden2; ++j) {
            out += p[s.w3_offset() + j] * h2[j];
        }
        const long double r = out - smp.y;
        total += r * r;
    }
    return total / static_cast<long double>(batch.size());
}

/// Central difference of reference_loss in coordinate i with step h.
inline double central_difference(const MlpSpec& s, const ParamVector& params, Batch batch, std::size_t i, double h)
{
    std::vector<long double> p(params.begin(), params.end());
    const long double base = p[i];
    p[i] = base + h;
    const long double up = reference_loss(s, p, batch);
    p[i] = base - h;
    const long double down = reference_loss(s, p, batch);
    return static_cast<double>((up - down) / (2.0L * h));
}

inline double rel_err(double a, double b)
{
    return std::abs(a - b) / std::max(std::abs(b), 1e-300);
}

} // namespace fofl::testing
