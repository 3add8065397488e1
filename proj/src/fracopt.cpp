#include "fofl/fracopt.hpp"

#include "fofl/errors.hpp"

#include <cmath>
#include <stdexcept>

namespace fofl {

void FracConfig::validate() const
{
    if (!(alpha > 0.0 && alpha <= 1.0)) {
        throw ConfigError("frac.alpha must lie in (0, 1]");
    }
    if (!(delta > 0.0)) {
        throw ConfigError("frac.delta must be positive");
    }
    if (!(p_min > 0.0 && p_min <= p_max)) {
        throw ConfigError("frac clip bounds must satisfy 0 < p_min <= p_max");
    }
}

ParamVector raw_preconditioner(const FracState& state, const ParamVector& current, const FracConfig& cfg)
{
    if (!state.prev_params) {
        return ParamVector(current.size(), 1.0);
    }
    const ParamVector& prev = *state.prev_params;
    if (prev.size() != current.size()) {
        throw std::invalid_argument("preconditioner: length mismatch");
    }
    const double exponent = 1.0 - cfg.alpha;
    const double inv_gamma = 1.0 / gamma(2.0 - cfg.alpha);
    ParamVector p(current.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = inv_gamma * std::pow(std::fabs(current[i] - prev[i]) + cfg.delta, exponent);
    }
    return p;
}

ParamVector preconditioner(const FracState& state, const ParamVector& current, const FracConfig& cfg)
{
    ParamVector p = raw_preconditioner(state, current, cfg);
    if (cfg.clip_enabled && state.prev_params) {
        p = clip(p, cfg.p_min, cfg.p_max);
    }
    return p;
}

ParamVector fo_step(const ParamVector& params, const ParamVector& grad, const ParamVector& p, double eta)
{
    if (params.size() != grad.size() || params.size() != p.size()) {
        throw std::invalid_argument("fo_step: length mismatch");
    }
    ParamVector out(params.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = params[i] - eta * (grad[i] * p[i]);
    }
    return out;
}

} // namespace fofl
