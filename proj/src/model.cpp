#include "fofl/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fofl {

namespace {

void check_params(const MlpSpec& spec, const ParamVector& params)
{
    if (params.size() != spec.param_count()) {
        throw std::invalid_argument("mlp: parameter length " + std::to_string(params.size()) + " does not match spec (" +
                                    std::to_string(spec.param_count()) + ")");
    }
}

void check_input(const MlpSpec& spec, std::span<const double> x)
{
    if (x.size() != spec.input_dim) {
        throw std::invalid_argument("mlp: input length " + std::to_string(x.size()) + " does not match input_dim " +
                                    std::to_string(spec.input_dim));
    }
}

void check_batch(const MlpSpec& spec, Batch batch)
{
    if (batch.empty()) {
        throw std::invalid_argument("mlp: empty batch");
    }
    for (const auto& s : batch) {
        check_input(spec, s.x);
    }
}

// out[i] = b[i] + sum_j W[i, j] * x[j]
inline void affine(const double* w, const double* b, const double* x, std::size_t rows, std::size_t cols, double* out)
{
    for (std::size_t i = 0; i < rows; ++i) {
        const double* wi = w + i * cols;
        double acc = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            acc += wi[j] * x[j];
        }
        out[i] = acc + (b ? b[i] : 0.0);
    }
}

// Upper layers (ReLU on z1, then W2/b2, ReLU, W3/b3) for weights offset by s * direction.
double upper_layers(const MlpSpec& spec, const double* p, const double* d, double s, const double* z1, double* a1,
                    double* a2)
{
    const std::size_t h1 = spec.hidden1, h2 = spec.hidden2;
    for (std::size_t i = 0; i < h1; ++i) {
        a1[i] = z1[i] > 0.0 ? z1[i] : 0.0;
    }
    const double* w2 = p + spec.w2_offset();
    const double* b2 = p + spec.b2_offset();
    const double* w3 = p + spec.w3_offset();
    const double b3 = p[spec.b3_offset()];
    if (d == nullptr) {
        for (std::size_t i = 0; i < h2; ++i) {
            double acc = b2[i];
            const double* wi = w2 + i * h1;
            for (std::size_t j = 0; j < h1; ++j) {
                acc += wi[j] * a1[j];
            }
            a2[i] = acc > 0.0 ? acc : 0.0;
        }
        double out = b3;
        for (std::size_t i = 0; i < h2; ++i) {
            out += w3[i] * a2[i];
        }
        return out;
    }
    const double* dw2 = d + spec.w2_offset();
    const double* db2 = d + spec.b2_offset();
    const double* dw3 = d + spec.w3_offset();
    const double db3 = d[spec.b3_offset()];
    for (std::size_t i = 0; i < h2; ++i) {
        double acc = b2[i] + s * db2[i];
        const double* wi = w2 + i * h1;
        const double* dwi = dw2 + i * h1;
        for (std::size_t j = 0; j < h1; ++j) {
            acc += (wi[j] + s * dwi[j]) * a1[j];
        }
        a2[i] = acc > 0.0 ? acc : 0.0;
    }
    double out = b3 + s * db3;
    for (std::size_t i = 0; i < h2; ++i) {
        out += (w3[i] + s * dw3[i]) * a2[i];
    }
    return out;
}

} // namespace

std::size_t MlpSpec::param_count() const noexcept
{
    return hidden1 * input_dim + hidden1 + hidden2 * hidden1 + hidden2 + hidden2 + 1;
}

ParamVector init_params(const MlpSpec& spec, RngStream& rng)
{
    ParamVector p(spec.param_count(), 0.0);
    auto fill = [&](std::size_t offset, std::size_t fan_out, std::size_t fan_in) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (std::size_t i = 0; i < fan_out * fan_in; ++i) {
            p[offset + i] = rng.uniform(-limit, limit);
        }
    };
    fill(spec.w1_offset(), spec.hidden1, spec.input_dim);
    fill(spec.w2_offset(), spec.hidden2, spec.hidden1);
    fill(spec.w3_offset(), 1, spec.hidden2);
    return p;
}

double forward(const MlpSpec& spec, const ParamVector& params, std::span<const double> x)
{
    check_params(spec, params);
    check_input(spec, x);
    std::vector<double> z1(spec.hidden1), a1(spec.hidden1), a2(spec.hidden2);
    const double* p = params.data();
    affine(p + spec.w1_offset(), p + spec.b1_offset(), x.data(), spec.hidden1, spec.input_dim, z1.data());
    return upper_layers(spec, p, nullptr, 0.0, z1.data(), a1.data(), a2.data());
}

LossGrad loss_and_grad(const MlpSpec& spec, const ParamVector& params, Batch batch)
{
    check_params(spec, params);
    check_batch(spec, batch);

    const std::size_t in = spec.input_dim, h1 = spec.hidden1, h2 = spec.hidden2;
    const double* p = params.data();
    const double* w2 = p + spec.w2_offset();
    const double* w3 = p + spec.w3_offset();

    LossGrad out{0.0, ParamVector(params.size(), 0.0)};
    double* g = out.grad.data();
    std::vector<double> z1(h1), a1(h1), a2(h2), d1(h1), d2(h2);
    const double inv_n = 1.0 / static_cast<double>(batch.size());

    for (const auto& sample : batch) {
        const double* x = sample.x.data();
        affine(p + spec.w1_offset(), p + spec.b1_offset(), x, h1, in, z1.data());
        const double yhat = upper_layers(spec, p, nullptr, 0.0, z1.data(), a1.data(), a2.data());
        const double err = yhat - sample.y;
        out.loss += err * err;

        // d(mean sq err)/d yhat
        const double dy = 2.0 * err * inv_n;
        g[spec.b3_offset()] += dy;
        for (std::size_t i = 0; i < h2; ++i) {
            g[spec.w3_offset() + i] += dy * a2[i];
            d2[i] = a2[i] > 0.0 ? dy * w3[i] : 0.0;
        }
        std::fill(d1.begin(), d1.end(), 0.0);
        for (std::size_t i = 0; i < h2; ++i) {
            if (d2[i] == 0.0) {
                continue;
            }
            g[spec.b2_offset() + i] += d2[i];
            double* gw2 = g + spec.w2_offset() + i * h1;
            const double* w2i = w2 + i * h1;
            for (std::size_t j = 0; j < h1; ++j) {
                gw2[j] += d2[i] * a1[j];
                d1[j] += d2[i] * w2i[j];
            }
        }
        for (std::size_t j = 0; j < h1; ++j) {
            if (z1[j] <= 0.0 || d1[j] == 0.0) {
                continue;
            }
            g[spec.b1_offset() + j] += d1[j];
            double* gw1 = g + spec.w1_offset() + j * in;
            for (std::size_t q = 0; q < in; ++q) {
                gw1[q] += d1[j] * x[q];
            }
        }
    }
    out.loss *= inv_n;
    return out;
}

double probe_loss(const MlpSpec& spec, const ParamVector& params, Batch batch)
{
    check_params(spec, params);
    check_batch(spec, batch);
    const double* p = params.data();
    std::vector<double> z1(spec.hidden1), a1(spec.hidden1), a2(spec.hidden2);
    double loss = 0.0;
    for (const auto& sample : batch) {
        affine(p + spec.w1_offset(), p + spec.b1_offset(), sample.x.data(), spec.hidden1, spec.input_dim, z1.data());
        const double err = upper_layers(spec, p, nullptr, 0.0, z1.data(), a1.data(), a2.data()) - sample.y;
        loss += err * err;
    }
    return loss / static_cast<double>(batch.size());
}

MlpSliceEvaluator::MlpSliceEvaluator(const MlpSpec& spec, const ParamVector& params, const ParamVector& direction,
                                     Batch batch)
    : spec_(spec), params_(params), direction_(direction), batch_(batch)
{
    check_params(spec, params);
    check_params(spec, direction);
    check_batch(spec, batch);
    const std::size_t h1 = spec.hidden1;
    z1_base_.resize(batch.size() * h1);
    z1_dir_.resize(batch.size() * h1);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        affine(params.data() + spec.w1_offset(), params.data() + spec.b1_offset(), batch[b].x.data(), h1,
               spec.input_dim, z1_base_.data() + b * h1);
        affine(direction.data() + spec.w1_offset(), direction.data() + spec.b1_offset(), batch[b].x.data(), h1,
               spec.input_dim, z1_dir_.data() + b * h1);
    }
}

double MlpSliceEvaluator::operator()(double s) const
{
    const std::size_t h1 = spec_.hidden1;
    std::vector<double> z1(h1), a1(h1), a2(spec_.hidden2);
    double loss = 0.0;
    for (std::size_t b = 0; b < batch_.size(); ++b) {
        const double* zb = z1_base_.data() + b * h1;
        const double* zd = z1_dir_.data() + b * h1;
        for (std::size_t i = 0; i < h1; ++i) {
            z1[i] = zb[i] + s * zd[i];
        }
        const double err =
            upper_layers(spec_, params_.data(), direction_.data(), s, z1.data(), a1.data(), a2.data()) - batch_[b].y;
        loss += err * err;
    }
    return loss / static_cast<double>(batch_.size());
}

} // namespace fofl
