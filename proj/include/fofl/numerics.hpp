#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

namespace fofl {

/// Flat model parameter vector. Length is fixed for the lifetime of an
/// experiment; every vector exchanged between client and server has the same
/// length.
class ParamVector {
public:
    ParamVector() = default;
    explicit ParamVector(std::size_t n, double fill = 0.0) : values_(n, fill) {}
    ParamVector(std::initializer_list<double> init) : values_(init) {}
    explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}

    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    double& operator[](std::size_t i) noexcept { return values_[i]; }
    double operator[](std::size_t i) const noexcept { return values_[i]; }

    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }

    std::span<double> span() noexcept { return values_; }
    std::span<const double> span() const noexcept { return values_; }

    auto begin() noexcept { return values_.begin(); }
    auto end() noexcept { return values_.end(); }
    auto begin() const noexcept { return values_.begin(); }
    auto end() const noexcept { return values_.end(); }

    const std::vector<double>& values() const noexcept { return values_; }

    bool all_finite() const noexcept;

    friend bool operator==(const ParamVector&, const ParamVector&) = default;

private:
    std::vector<double> values_;
};

// Element-wise vector arithmetic. Binary forms throw std::invalid_argument on
// length mismatch.
ParamVector add(const ParamVector& a, const ParamVector& b);
ParamVector sub(const ParamVector& a, const ParamVector& b);
ParamVector mul(const ParamVector& a, const ParamVector& b);
ParamVector abs(const ParamVector& a);
ParamVector pow_scalar(const ParamVector& a, double exponent);
ParamVector scale(const ParamVector& a, double c);
ParamVector clip(const ParamVector& a, double lo, double hi);

/// a += c * x
void axpy(double c, const ParamVector& x, ParamVector& a);

double dot(const ParamVector& a, const ParamVector& b);
double norm2(const ParamVector& a);

/// Gamma function via the Lanczos approximation (g = 7, 9 terms).
/// Throws std::domain_error for x <= 0.
double gamma(double x);

double mean(std::span<const double> xs);
/// Population standard deviation (divides by N); 0 for a singleton.
double pop_std(std::span<const double> xs);
double median(std::vector<double> xs);

/// Sample Pearson correlation. Throws std::invalid_argument on length
/// mismatch or n < 2, UndefinedCorrelation on constant input.
double pearson(std::span<const double> x, std::span<const double> y);
/// Pearson correlation of average ranks (ties share the mean rank).
double spearman(std::span<const double> x, std::span<const double> y);
/// 1-based average ranks.
std::vector<double> average_ranks(std::span<const double> x);

/// Purpose tags for RNG stream derivation.
enum class StreamPurpose : std::uint32_t {
    init = 1,
    sampling = 2,
    churn = 3,
    batch = 4,
    probe = 5,
    split = 6,
    fleet = 7,
    test = 99,
};

/// Counter-based random stream. Draw i of a stream is a pure function of
/// (seed, round, client, purpose, i), so per-client streams do not depend on
/// the order in which clients are executed.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t round, std::uint64_t client, StreamPurpose purpose);
    RngStream(std::uint64_t seed, std::uint64_t round, std::uint64_t client, std::uint64_t purpose);

    std::uint64_t next_u64() noexcept;
    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept;
    /// Uniform integer in [0, n); n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n) noexcept;
    /// Standard normal (Box-Muller, second variate cached).
    double normal() noexcept;
    bool bernoulli(double p) noexcept;

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) noexcept
    {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double cached_normal_ = 0.0;
    bool has_cached_ = false;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;
/// Stable 64-bit FNV-1a hash of a byte string.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

} // namespace fofl
