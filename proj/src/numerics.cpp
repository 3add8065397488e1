#include "fofl/numerics.hpp"

#include "fofl/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace fofl {

namespace {

void require_same_length(const ParamVector& a, const ParamVector& b, const char* op)
{
    if (a.size() != b.size()) {
        throw std::invalid_argument(std::string(op) + ": length mismatch (" + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()) + ")");
    }
}

template <typename F>
ParamVector zip(const ParamVector& a, const ParamVector& b, const char* op, F f)
{
    require_same_length(a, b, op);
    ParamVector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = f(a[i], b[i]);
    }
    return out;
}

template <typename F>
ParamVector map(const ParamVector& a, F f)
{
    ParamVector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = f(a[i]);
    }
    return out;
}

} // namespace

bool ParamVector::all_finite() const noexcept
{
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

ParamVector add(const ParamVector& a, const ParamVector& b)
{
    return zip(a, b, "add", [](double x, double y) { return x + y; });
}

ParamVector sub(const ParamVector& a, const ParamVector& b)
{
    return zip(a, b, "sub", [](double x, double y) { return x - y; });
}

ParamVector mul(const ParamVector& a, const ParamVector& b)
{
    return zip(a, b, "mul", [](double x, double y) { return x * y; });
}

ParamVector abs(const ParamVector& a)
{
    return map(a, [](double x) { return std::fabs(x); });
}

ParamVector pow_scalar(const ParamVector& a, double exponent)
{
    return map(a, [exponent](double x) { return std::pow(x, exponent); });
}

ParamVector scale(const ParamVector& a, double c)
{
    return map(a, [c](double x) { return c * x; });
}

ParamVector clip(const ParamVector& a, double lo, double hi)
{
    if (!(lo <= hi)) {
        throw std::invalid_argument("clip: lo > hi");
    }
    return map(a, [lo, hi](double x) { return std::clamp(x, lo, hi); });
}

void axpy(double c, const ParamVector& x, ParamVector& a)
{
    require_same_length(a, x, "axpy");
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] += c * x[i];
    }
}

double dot(const ParamVector& a, const ParamVector& b)
{
    require_same_length(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

double norm2(const ParamVector& a)
{
    double s = 0.0;
    for (double v : a) {
        s += v * v;
    }
    return std::sqrt(s);
}

double gamma(double x)
{
    static constexpr double g = 7.0;
    static constexpr std::array<double, 9> coef = {
        0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
        771.32342877765313,   -176.61502916214059,   12.507343278686905,
        -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7,
    };
    if (!(x > 0.0) || !std::isfinite(x)) {
        throw std::domain_error("gamma: argument must be positive and finite, got " + std::to_string(x));
    }
    if (x < 0.5) {
        // Reflection keeps the series in its accurate range.
        return std::numbers::pi / (std::sin(std::numbers::pi * x) * gamma(1.0 - x));
    }
    const double z = x - 1.0;
    double a = coef[0];
    const double t = z + g + 0.5;
    for (std::size_t i = 1; i < coef.size(); ++i) {
        a += coef[i] / (z + static_cast<double>(i));
    }
    return std::sqrt(2.0 * std::numbers::pi) * std::pow(t, z + 0.5) * std::exp(-t) * a;
}

double mean(std::span<const double> xs)
{
    if (xs.empty()) {
        throw std::invalid_argument("mean: empty input");
    }
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double pop_std(std::span<const double> xs)
{
    if (!xs.empty() && std::adjacent_find(xs.begin(), xs.end(), std::not_equal_to<>()) == xs.end()) {
        return 0.0;
    }
    const double mu = mean(xs);
    double ss = 0.0;
    for (double v : xs) {
        ss += (v - mu) * (v - mu);
    }
    return std::sqrt(ss / static_cast<double>(xs.size()));
}

double median(std::vector<double> xs)
{
    if (xs.empty()) {
        throw std::invalid_argument("median: empty input");
    }
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

double pearson(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size()) {
        throw std::invalid_argument("pearson: length mismatch");
    }
    if (x.size() < 2) {
        throw std::invalid_argument("pearson: need at least 2 points");
    }
    const double mx = mean(x);
    const double my = mean(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw UndefinedCorrelation("correlation undefined for constant input");
    }
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> x)
{
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) {
            ++j;
        }
        // positions i..j (0-based) share rank mean of (i+1)..(j+1)
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t q = i; q <= j; ++q) {
            ranks[order[q]] = r;
        }
        i = j + 1;
    }
    return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size()) {
        throw std::invalid_argument("spearman: length mismatch");
    }
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    return pearson(rx, ry);
}

std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t round, std::uint64_t client, StreamPurpose purpose)
    : RngStream(seed, round, client, static_cast<std::uint64_t>(purpose))
{
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t round, std::uint64_t client, std::uint64_t purpose)
{
    std::uint64_t k = splitmix64(seed);
    k = splitmix64(k ^ round);
    k = splitmix64(k ^ (client * 0xD1B54A32D192ED03ULL));
    k = splitmix64(k ^ (purpose * 0xA0761D6478BD642FULL));
    key_ = k;
}

std::uint64_t RngStream::next_u64() noexcept
{
    // Two rounds of mixing over (key, counter) decorrelate adjacent keys.
    const std::uint64_t c = counter_++;
    return splitmix64(splitmix64(key_ + c * 0x9E3779B97F4A7C15ULL) ^ key_);
}

double RngStream::uniform() noexcept
{
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) noexcept
{
    return lo + (hi - lo) * uniform();
}

std::uint64_t RngStream::uniform_index(std::uint64_t n) noexcept
{
    // Lemire's multiply-shift with rejection; unbiased.
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
        const std::uint64_t threshold = (0 - n) % n;
        while (low < threshold) {
            x = next_u64();
            m = static_cast<__uint128_t>(x) * n;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

double RngStream::normal() noexcept
{
    if (has_cached_) {
        has_cached_ = false;
        return cached_normal_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) {
        u1 = uniform();
    }
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_normal_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
}

bool RngStream::bernoulli(double p) noexcept
{
    if (p <= 0.0) {
        return false;
    }
    if (p >= 1.0) {
        return true;
    }
    return uniform() < p;
}

} // namespace fofl
