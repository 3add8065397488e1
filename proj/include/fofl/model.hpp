#pragma once

#include "fofl/numerics.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace fofl {

/// Two-hidden-layer ReLU regressor with a scalar linear output.
///
/// Parameters are packed as W1 (h1 x in, row-major), b1, W2 (h2 x h1), b2,
/// W3 (1 x h2), b3.
struct MlpSpec {
    std::size_t input_dim = 0;
    std::size_t hidden1 = 64;
    std::size_t hidden2 = 32;

    std::size_t param_count() const noexcept;

    std::size_t w1_offset() const noexcept { return 0; }
    std::size_t b1_offset() const noexcept { return hidden1 * input_dim; }
    std::size_t w2_offset() const noexcept { return b1_offset() + hidden1; }
    std::size_t b2_offset() const noexcept { return w2_offset() + hidden2 * hidden1; }
    std::size_t w3_offset() const noexcept { return b2_offset() + hidden2; }
    std::size_t b3_offset() const noexcept { return w3_offset() + hidden2; }

    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// One supervised example: flattened normalized feature window and label.
struct Sample {
    std::vector<double> x;
    double y = 0.0;
};

using Batch = std::span<const Sample>;

/// Glorot-uniform weights, zero biases.
ParamVector init_params(const MlpSpec& spec, RngStream& rng);

double forward(const MlpSpec& spec, const ParamVector& params, std::span<const double> x);

struct LossGrad {
    double loss = 0.0;
    ParamVector grad;
};

/// Mean squared error over the batch and its exact gradient.
LossGrad loss_and_grad(const MlpSpec& spec, const ParamVector& params, Batch batch);

/// Forward-only mean squared error.
double probe_loss(const MlpSpec& spec, const ParamVector& params, Batch batch);

/// Evaluates s -> probe_loss(params + s * direction, batch) along a fixed
/// direction. The first-layer pre-activations are affine in s, so they are
/// computed once and each grid point only pays for the upper layers.
class MlpSliceEvaluator {
public:
    MlpSliceEvaluator(const MlpSpec& spec, const ParamVector& params, const ParamVector& direction, Batch batch);

    double operator()(double s) const;

private:
    MlpSpec spec_;
    ParamVector params_;
    ParamVector direction_;
    Batch batch_; // must outlive the evaluator
    std::vector<double> z1_base_; // batch x h1
    std::vector<double> z1_dir_;  // batch x h1
};

} // namespace fofl
