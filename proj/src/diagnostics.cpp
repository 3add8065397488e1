#include "fofl/diagnostics.hpp"

#include "fofl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fofl {

void RoughnessConfig::validate() const
{
    if (directions < 1 || segments < 1) {
        throw ConfigError("rough: directions and segments must be >= 1");
    }
    if (!(radius > 0.0)) {
        throw ConfigError("rough.radius must be positive");
    }
    if (!(eps_a > 0.0) || !(eps_t > 0.0)) {
        throw ConfigError("rough stabilizers eps_a, eps_t must be positive");
    }
    if (probe_batch < 1) {
        throw ConfigError("rough.probe_batch must be >= 1");
    }
}

void SpectralConfig::validate() const
{
    if (!(beta_kappa >= 0.0)) {
        throw ConfigError("spec.beta_kappa must be >= 0");
    }
    if (!(eps_f > 0.0)) {
        throw ConfigError("spec.eps_f must be positive");
    }
    if (power_iters < 1) {
        throw ConfigError("spec.power_iters must be >= 1");
    }
}

double normalized_total_variation(std::span<const double> slice_values, double radius, double eps_a)
{
    if (slice_values.size() < 2) {
        throw std::invalid_argument("normalized_total_variation: need at least 2 grid points");
    }
    double tv = 0.0;
    for (std::size_t j = 0; j + 1 < slice_values.size(); ++j) {
        tv += std::fabs(slice_values[j + 1] - slice_values[j]);
    }
    const auto [lo, hi] = std::minmax_element(slice_values.begin(), slice_values.end());
    const double amplitude = *hi - *lo;
    return tv / (2.0 * radius * (amplitude + eps_a));
}

double coefficient_of_variation(std::span<const double> values, double eps)
{
    return pop_std(values) / (mean(values) + eps);
}

double roughness_index(const SliceFn& slice, const RoughnessConfig& cfg)
{
    std::vector<double> t(cfg.directions);
    std::vector<double> phi(cfg.segments + 1);
    const double step = 2.0 * cfg.radius / static_cast<double>(cfg.segments);
    for (std::size_t i = 0; i < cfg.directions; ++i) {
        for (std::size_t j = 0; j <= cfg.segments; ++j) {
            phi[j] = slice(i, -cfg.radius + static_cast<double>(j) * step);
        }
        t[i] = normalized_total_variation(phi, cfg.radius, cfg.eps_a);
    }
    return coefficient_of_variation(t, cfg.eps_t);
}

std::vector<ParamVector> sample_unit_directions(std::size_t count, std::size_t dim, RngStream& rng)
{
    std::vector<ParamVector> dirs;
    dirs.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        ParamVector d(dim);
        double n = 0.0;
        while (n == 0.0) {
            for (auto& v : d) {
                v = rng.normal();
            }
            n = norm2(d);
        }
        dirs.push_back(scale(d, 1.0 / n));
    }
    return dirs;
}

double roughness_index(const MlpSpec& spec, const ParamVector& params, Batch probe_batch, const RoughnessConfig& cfg,
                       RngStream& rng)
{
    if (probe_batch.empty()) {
        throw std::invalid_argument("roughness_index: empty probe batch");
    }
    const auto dirs = sample_unit_directions(cfg.directions, params.size(), rng);
    std::vector<MlpSliceEvaluator> slices;
    slices.reserve(dirs.size());
    for (const auto& d : dirs) {
        slices.emplace_back(spec, params, d, probe_batch);
    }
    return roughness_index([&](std::size_t i, double s) { return slices[i](s); }, cfg);
}

double frobenius_norm(const Matrix& w)
{
    double s = 0.0;
    for (double v : w.data) {
        s += v * v;
    }
    return std::sqrt(s);
}

double spectral_norm_estimate(const Matrix& w, std::size_t iterations)
{
    if (w.rows == 0 || w.cols == 0 || frobenius_norm(w) == 0.0) {
        return 0.0;
    }
    // Fixed, non-symmetric start so the estimate is reproducible.
    std::vector<double> v(w.cols), u(w.rows);
    for (std::size_t j = 0; j < w.cols; ++j) {
        v[j] = 1.0 + 0.5 * std::sin(1.0 + static_cast<double>(j));
    }
    auto normalize = [](std::vector<double>& x) {
        double n = 0.0;
        for (double e : x) {
            n += e * e;
        }
        n = std::sqrt(n);
        if (n > 0.0) {
            for (double& e : x) {
                e /= n;
            }
        }
        return n;
    };
    auto apply_w = [&]() {
        for (std::size_t i = 0; i < w.rows; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < w.cols; ++j) {
                acc += w(i, j) * v[j];
            }
            u[i] = acc;
        }
    };
    normalize(v);
    for (std::size_t it = 0; it < iterations; ++it) {
        apply_w();
        for (std::size_t j = 0; j < w.cols; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < w.rows; ++i) {
                acc += w(i, j) * u[i];
            }
            v[j] = acc;
        }
        if (normalize(v) == 0.0) {
            // Start vector fell in the null space; no better estimate available.
            return 0.0;
        }
    }
    apply_w();
    double n = 0.0;
    for (double e : u) {
        n += e * e;
    }
    return std::sqrt(n);
}

double spectral_flatness(const Matrix& w, const SpectralConfig& cfg)
{
    const double f = frobenius_norm(w);
    if (f == 0.0) {
        return 0.0;
    }
    return spectral_norm_estimate(w, cfg.power_iters) / (f + cfg.eps_f);
}

Matrix final_layer_matrix(const MlpSpec& spec, const ParamVector& params)
{
    if (params.size() != spec.param_count()) {
        throw std::invalid_argument("final_layer_matrix: parameter length mismatch");
    }
    Matrix w(1, spec.hidden2);
    std::copy_n(params.data() + spec.w3_offset(), spec.hidden2, w.data.begin());
    return w;
}

} // namespace fofl
