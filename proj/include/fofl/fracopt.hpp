#pragma once

#include "fofl/numerics.hpp"

#include <optional>

namespace fofl {

struct FracConfig {
    double alpha = 0.8;  ///< fractional order, 0 < alpha <= 1
    double delta = 1e-6; ///< displacement stabilizer
    bool clip_enabled = true;
    double p_min = 0.2;
    double p_max = 5.0;

    /// Throws ConfigError on out-of-range fields.
    void validate() const;

    friend bool operator==(const FracConfig&, const FracConfig&) = default;
};

/// Per-client, per-round memory of the previous local iterate. Empty at the
/// first local step of every round.
struct FracState {
    std::optional<ParamVector> prev_params;

    void reset() { prev_params.reset(); }
};

/// Un-clipped fractional preconditioner
///   (1 / Gamma(2 - alpha)) * (|current - prev| + delta)^(1 - alpha),
/// or all ones when no previous iterate is held.
ParamVector raw_preconditioner(const FracState& state, const ParamVector& current, const FracConfig& cfg);

/// raw_preconditioner followed by clipping to [p_min, p_max] when enabled.
ParamVector preconditioner(const FracState& state, const ParamVector& current, const FracConfig& cfg);

/// params - eta * (grad .* p)
ParamVector fo_step(const ParamVector& params, const ParamVector& grad, const ParamVector& p, double eta);

} // namespace fofl
