#pragma once

#include "fofl/model.hpp"
#include "fofl/numerics.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace fofl {

struct RoughnessConfig {
    std::size_t directions = 10;  ///< M
    double radius = 0.01;         ///< ell
    std::size_t segments = 100;   ///< m (m + 1 grid points)
    std::size_t probe_batch = 128;
    double eps_a = 1e-8;
    double eps_t = 1e-8;

    void validate() const;

    friend bool operator==(const RoughnessConfig&, const RoughnessConfig&) = default;
};

struct SpectralConfig {
    double beta_kappa = 0.0; ///< 0 disables gating
    double eps_f = 1e-8;
    std::size_t power_iters = 10;

    void validate() const;

    friend bool operator==(const SpectralConfig&, const SpectralConfig&) = default;
};

/// Row-major dense matrix, only as much as the spectral diagnostic needs.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

/// Loss along slice `direction` at offset s.
using SliceFn = std::function<double(std::size_t direction, double s)>;

/// Normalized total variation of one sampled slice:
///   TV / (2 ell (A + eps_a)).
double normalized_total_variation(std::span<const double> slice_values, double radius, double eps_a);

/// Coefficient of variation std(T) / (mean(T) + eps_t), population std.
double coefficient_of_variation(std::span<const double> values, double eps);

/// Roughness index from an arbitrary slice evaluator. Slice i is sampled at
/// s_j = -ell + j * 2 ell / m, j = 0..m.
double roughness_index(const SliceFn& slice, const RoughnessConfig& cfg);

/// Samples `count` Gaussian directions of length `dim`, each scaled to unit norm.
std::vector<ParamVector> sample_unit_directions(std::size_t count, std::size_t dim, RngStream& rng);

/// Roughness index of the MLP loss around `params` on `probe_batch`.
/// Throws std::invalid_argument on an empty probe batch.
double roughness_index(const MlpSpec& spec, const ParamVector& params, Batch probe_batch, const RoughnessConfig& cfg,
                       RngStream& rng);

/// Largest singular value via power iteration on W^T W from a fixed start vector.
double spectral_norm_estimate(const Matrix& w, std::size_t iterations);
double frobenius_norm(const Matrix& w);

/// ||W||_2 / (||W||_F + eps_f). A zero matrix yields 0.
double spectral_flatness(const Matrix& w, const SpectralConfig& cfg);

/// The output layer weights (1 x hidden2) of the MLP.
Matrix final_layer_matrix(const MlpSpec& spec, const ParamVector& params);

} // namespace fofl
