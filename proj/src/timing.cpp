#include "qkd/timing.hpp"

#include <array>
#include <cmath>
#include <map>
#include <mutex>

namespace qkd {

namespace {

// Exponentially modified Gaussian, rate lambda, jitter sigma > 0.
double emg_cdf(double y, double lambda, double sigma) {
    double z = y / sigma;
    double tail_arg = z - lambda * sigma;
    if (tail_arg < -38.0) return normal_cdf(z);
    double expo = -lambda * y + 0.5 * lambda * lambda * sigma * sigma;
    return normal_cdf(z) - std::exp(expo) * normal_cdf(tail_arg);
}

double emg_pdf(double y, double lambda, double sigma) {
    double tail_arg = y / sigma - lambda * sigma;
    if (tail_arg < -38.0) return 0.0;
    double expo = -lambda * y + 0.5 * lambda * lambda * sigma * sigma;
    return lambda * std::exp(expo) * normal_cdf(tail_arg);
}

double exp_cdf(double y, double lambda) { return y <= 0.0 ? 0.0 : -std::expm1(-lambda * y); }

double exp_pdf(double y, double lambda) { return y < 0.0 ? 0.0 : lambda * std::exp(-lambda * y); }

template <class F>
double simpson(F&& f, double a, double b, int n) {
    if (n % 2) ++n;
    double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

}  // namespace

ArrivalModel ArrivalModel::from(const SourceModel& source, const LinkModel& link,
                                double clock_rate_hz, bool truncated) {
    ArrivalModel m;
    m.period_ps = 1e12 / clock_rate_hz;
    m.lifetime_ps = source.lifetime_ps;
    m.jitter_ps = link.jitter_ps;
    m.offset_ps = link.arrival_offset_ps;
    m.truncated = truncated;
    return m;
}

double ArrivalModel::signal_cdf(double x) const {
    double lambda = 1.0 / lifetime_ps;
    double y = x - offset_ps;
    auto base = [&](double v) {
        return jitter_ps > 0.0 ? emg_cdf(v, lambda, jitter_ps) : exp_cdf(v, lambda);
    };
    if (!truncated) return base(y);
    double cut = std::exp(-lambda * period_ps);
    return (base(y) - cut * base(y - period_ps)) / (1.0 - cut);
}

double ArrivalModel::signal_pdf(double x) const {
    double lambda = 1.0 / lifetime_ps;
    double y = x - offset_ps;
    auto base = [&](double v) {
        return jitter_ps > 0.0 ? emg_pdf(v, lambda, jitter_ps) : exp_pdf(v, lambda);
    };
    if (!truncated) return base(y);
    double cut = std::exp(-lambda * period_ps);
    return (base(y) - cut * base(y - period_ps)) / (1.0 - cut);
}

double ArrivalModel::dark_pdf(double x) const {
    return (x >= 0.0 && x < period_ps) ? 1.0 / period_ps : 0.0;
}

double ArrivalModel::dark_cdf(double x) const {
    if (x <= 0.0) return 0.0;
    if (x >= period_ps) return 1.0;
    return x / period_ps;
}

double ArrivalModel::signal_lo() const { return offset_ps - 8.0 * jitter_ps; }

double ArrivalModel::signal_hi() const {
    double emission = truncated ? period_ps : 40.0 * lifetime_ps;
    return offset_ps + emission + 8.0 * jitter_ps;
}

namespace {

// sum over j >= 1 of P(X_first - X_next > jT - dead)
template <class Pdf, class Cdf>
double blocked_windows(const ArrivalModel& m, Pdf&& pdf_first, double lo, double hi,
                       Cdf&& cdf_next, double next_lo, double dead) {
    double total = 0.0;
    for (int j = 1;; ++j) {
        double c = j * m.period_ps - dead;
        // X_next < x - c is impossible once x - c falls below the next support
        if (hi - c <= next_lo) break;
        total += simpson([&](double x) { return pdf_first(x) * cdf_next(x - c); }, lo, hi, 1600);
        if (j > 100000) break;
    }
    return total;
}

struct DeadKey {
    std::array<double, 6> v;
    bool operator<(const DeadKey& o) const { return v < o.v; }
};

}  // namespace

double effective_dead_windows(const ArrivalModel& m, double signal_weight, double dead_time_ps) {
    if (dead_time_ps <= 0.0) return 0.0;
    static std::mutex mutex;
    static std::map<DeadKey, std::array<double, 4>> cache;
    DeadKey key{{m.period_ps, m.lifetime_ps, m.jitter_ps, m.offset_ps, m.truncated ? 1.0 : 0.0,
                 dead_time_ps}};
    std::array<double, 4> comp{};
    bool hit = false;
    {
        std::lock_guard lock(mutex);
        auto it = cache.find(key);
        if (it != cache.end()) {
            comp = it->second;
            hit = true;
        }
    }
    if (!hit) {
        auto spdf = [&](double x) { return m.signal_pdf(x); };
        auto scdf = [&](double x) { return m.signal_cdf(x); };
        auto dpdf = [&](double x) { return m.dark_pdf(x); };
        auto dcdf = [&](double x) { return m.dark_cdf(x); };
        double slo = m.signal_lo(), shi = m.signal_hi();
        comp[0] = blocked_windows(m, spdf, slo, shi, scdf, slo, dead_time_ps);
        comp[1] = blocked_windows(m, spdf, slo, shi, dcdf, 0.0, dead_time_ps);
        comp[2] = blocked_windows(m, dpdf, 0.0, m.period_ps, scdf, slo, dead_time_ps);
        comp[3] = blocked_windows(m, dpdf, 0.0, m.period_ps, dcdf, 0.0, dead_time_ps);
        std::lock_guard lock(mutex);
        if (cache.size() > 4096) cache.clear();
        cache.emplace(key, comp);
    }
    double w = signal_weight;
    return w * w * comp[0] + w * (1.0 - w) * (comp[1] + comp[2]) + (1.0 - w) * (1.0 - w) * comp[3];
}

double signal_difference_cdf(const ArrivalModel& m, double delta_ps) {
    // P(X_b <= X_a + delta)
    double lo = m.signal_lo(), hi = m.signal_hi();
    return simpson([&](double x) { return m.signal_pdf(x) * m.signal_cdf(x + delta_ps); }, lo, hi,
                   4000);
}

}  // namespace qkd
