#include "fofl/metrics.hpp"

#include "fofl/errors.hpp"
#include "fofl/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace fofl {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b, const char* name)
{
    if (a.empty() || a.size() != b.size()) {
        throw std::invalid_argument(std::string(name) + ": inputs must be non-empty and of equal length");
    }
}

} // namespace

void MetricConfig::validate() const
{
    if (!(eps_y > 0.0) || !(eps_d > 0.0)) {
        throw ConfigError("metrics: eps_y and eps_d must be positive");
    }
    if (eval_every < 1) {
        throw ConfigError("metrics.eval_every must be >= 1");
    }
}

double rmse(std::span<const double> preds, std::span<const double> labels)
{
    check_pair(preds, labels, "rmse");
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double e = preds[i] - labels[i];
        s += e * e;
    }
    return std::sqrt(s / static_cast<double>(preds.size()));
}

double mae(std::span<const double> preds, std::span<const double> labels)
{
    check_pair(preds, labels, "mae");
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        s += std::fabs(preds[i] - labels[i]);
    }
    return s / static_cast<double>(preds.size());
}

double mape(std::span<const double> preds, std::span<const double> labels, double eps_y)
{
    check_pair(preds, labels, "mape");
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        s += std::fabs(preds[i] - labels[i]) / (std::fabs(labels[i]) + eps_y);
    }
    return 100.0 * s / static_cast<double>(preds.size());
}

void ErrorAccumulator::add_client(std::span<const double> preds, std::span<const double> labels, double eps_y)
{
    check_pair(preds, labels, "ErrorAccumulator");
    Sums s;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double e = preds[i] - labels[i];
        s.sq += e * e;
        s.abs += std::fabs(e);
        s.ape += std::fabs(e) / (std::fabs(labels[i]) + eps_y);
    }
    s.n = preds.size();
    clients_.push_back(s);
}

MetricSnapshot ErrorAccumulator::result(Averaging averaging) const
{
    if (clients_.empty()) {
        throw std::invalid_argument("ErrorAccumulator: no evaluations");
    }
    MetricSnapshot m;
    for (const auto& c : clients_) {
        m.count += c.n;
    }
    if (averaging == Averaging::micro) {
        Sums t;
        for (const auto& c : clients_) {
            t.sq += c.sq;
            t.abs += c.abs;
            t.ape += c.ape;
        }
        const double n = static_cast<double>(m.count);
        m.rmse = std::sqrt(t.sq / n);
        m.mae = t.abs / n;
        m.mape = 100.0 * t.ape / n;
        return m;
    }
    double wsum = 0.0;
    for (const auto& c : clients_) {
        const double n = static_cast<double>(c.n);
        const double w = averaging == Averaging::macro ? 1.0 : n;
        m.rmse += w * std::sqrt(c.sq / n);
        m.mae += w * c.abs / n;
        m.mape += w * 100.0 * c.ape / n;
        wsum += w;
    }
    m.rmse /= wsum;
    m.mae /= wsum;
    m.mape /= wsum;
    return m;
}

std::optional<std::size_t> rounds_to_threshold(std::span<const double> series, double theta)
{
    for (std::size_t t = 0; t < series.size(); ++t) {
        if (series[t] <= theta) {
            return t;
        }
    }
    return std::nullopt;
}

std::vector<double> best_so_far(std::span<const double> series)
{
    std::vector<double> out(series.size());
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < series.size(); ++i) {
        best = std::min(best, series[i]);
        out[i] = best;
    }
    return out;
}

DriftStats drift_stats(std::span<const double> drifts, double eps_d)
{
    if (drifts.empty()) {
        throw std::invalid_argument("drift_stats: no participants");
    }
    DriftStats s;
    s.d_mean = mean(drifts);
    s.d_cv = pop_std(drifts) / (s.d_mean + eps_d);
    return s;
}

DriftStats drift_stats(const RoundRecord& record, double eps_d)
{
    std::vector<double> d;
    d.reserve(record.clients.size());
    for (const auto& c : record.clients) {
        d.push_back(c.drift);
    }
    return drift_stats(d, eps_d);
}

Coupling correlate(std::span<const double> roughness, std::span<const double> drift)
{
    return Coupling{pearson(roughness, drift), spearman(roughness, drift), roughness.size()};
}

Coupling roughness_drift_coupling(std::span<const RoundRecord> records, std::size_t round)
{
    const auto it = std::find_if(records.begin(), records.end(), [&](const RoundRecord& r) { return r.round == round; });
    if (it == records.end()) {
        throw std::invalid_argument("roughness_drift_coupling: round " + std::to_string(round) + " not logged");
    }
    std::vector<double> rough, drift;
    for (const auto& c : it->clients) {
        if (c.roughness) {
            rough.push_back(*c.roughness);
            drift.push_back(c.drift);
        }
    }
    if (rough.size() < 3) {
        throw std::invalid_argument("roughness_drift_coupling: need >= 3 participants with roughness at round " +
                                    std::to_string(round));
    }
    return correlate(rough, drift);
}

std::vector<EarlyDrift> early_drift_predictor(std::span<const RoundRecord> records, std::size_t probe_round,
                                              std::size_t first, std::size_t last)
{
    std::map<std::size_t, double> rough;
    std::map<std::size_t, std::pair<double, std::size_t>> drift;
    for (const auto& r : records) {
        for (const auto& c : r.clients) {
            if (r.round <= probe_round && c.roughness) {
                rough[c.client] = *c.roughness;
            }
            if (r.round >= first && r.round <= last) {
                auto& d = drift[c.client];
                d.first += c.drift;
                d.second += 1;
            }
        }
    }
    std::vector<EarlyDrift> out;
    for (const auto& [client, d] : drift) {
        const auto it = rough.find(client);
        if (it == rough.end()) {
            continue;
        }
        out.push_back(EarlyDrift{client, it->second, d.first / static_cast<double>(d.second), d.second});
    }
    return out;
}

Tertiles stratify_tertiles(std::span<const std::pair<std::size_t, double>> values)
{
    std::vector<std::pair<std::size_t, double>> v(values.begin(), values.end());
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
        return a.second < b.second || (a.second == b.second && a.first < b.first);
    });
    const std::size_t n = v.size();
    const std::size_t base = n / 3;
    const std::size_t rem = n % 3;
    const std::size_t n_low = base + (rem > 0 ? 1 : 0);
    const std::size_t n_med = base + (rem > 1 ? 1 : 0);
    Tertiles t;
    for (std::size_t i = 0; i < n; ++i) {
        auto& bucket = i < n_low ? t.low : (i < n_low + n_med ? t.med : t.high);
        bucket.push_back(v[i].first);
    }
    return t;
}

double amortized_round_time(double t_nonprobe, double t_probe, std::size_t r_probe)
{
    if (r_probe < 1) {
        throw std::invalid_argument("amortized_round_time: r_probe must be >= 1");
    }
    const double r = static_cast<double>(r_probe);
    return ((r - 1.0) * t_nonprobe + t_probe) / r;
}

double overhead_percent(double method, double reference)
{
    if (!(reference > 0.0)) {
        throw std::invalid_argument("overhead_percent: reference time must be positive");
    }
    return 100.0 * (method - reference) / reference;
}

OverheadReport overhead_report(std::span<const RoundRecord> records, std::size_t r_probe)
{
    double probe_sum = 0.0, nonprobe_sum = 0.0, frac_sum = 0.0;
    std::size_t probe_n = 0, nonprobe_n = 0, frac_n = 0;
    for (const auto& r : records) {
        for (const auto& c : r.clients) {
            const double t = c.train_s + c.diag_s;
            if (c.probed) {
                probe_sum += t;
                ++probe_n;
            } else {
                nonprobe_sum += t;
                ++nonprobe_n;
            }
        }
        const double total = r.t_train_s + r.t_diag_s;
        if (total > 0.0) {
            frac_sum += r.t_diag_s / total;
            ++frac_n;
        }
    }
    OverheadReport rep;
    rep.t_nonprobe_s = nonprobe_n ? nonprobe_sum / static_cast<double>(nonprobe_n) : 0.0;
    rep.t_probe_s = probe_n ? probe_sum / static_cast<double>(probe_n) : rep.t_nonprobe_s;
    if (nonprobe_n == 0) {
        rep.t_nonprobe_s = rep.t_probe_s;
    }
    rep.amortized_s = amortized_round_time(rep.t_nonprobe_s, rep.t_probe_s, r_probe);
    rep.diag_fraction = frac_n ? frac_sum / static_cast<double>(frac_n) : 0.0;
    return rep;
}

} // namespace fofl
