#include "qkd/tagproc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "qkd/parallel.hpp"

namespace qkd {

double arrival_phase(std::int64_t time_ps, double period_ps) {
    double t = static_cast<double>(time_ps);
    if (!(period_ps > 0.0)) return t;
    double p = t - std::floor(t / period_ps) * period_ps;
    return p >= period_ps ? 0.0 : p;
}

namespace {

CorrelationHistogram histogram_of(const std::vector<double>& deltas, double bin_width_ps, double span_ps,
                                  double period_ps) {
    if (!(bin_width_ps > 0.0)) throw ValidationError("bin_width_ps", "must be positive");
    CorrelationHistogram h;
    h.bin_width_ps = bin_width_ps;
    h.origin_ps = 0.0;
    h.period_ps = period_ps;
    double hi = span_ps;
    for (double d : deltas) hi = std::max(hi, d + 1.0);
    h.counts.assign(std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(hi / bin_width_ps))), 0);
    for (double d : deltas) {
        auto b = static_cast<std::size_t>(d / bin_width_ps);
        ++h.counts[std::min(b, h.counts.size() - 1)];
    }
    return h;
}

}  // namespace

CorrelationHistogram correlate(const TimeTagStream& stream, double bin_width_ps, Channel reference) {
    std::vector<double> deltas;
    bool seen = false;
    std::int64_t last = 0;
    for (const auto& t : stream.tags) {
        if (t.channel == reference) {
            seen = true;
            last = t.time_ps;
        } else if (seen && is_detector(t.channel)) {
            deltas.push_back(static_cast<double>(t.time_ps - last));
        }
    }
    if (!seen) throw EmptyInputError("stream has no reference tags");
    return histogram_of(deltas, bin_width_ps, stream.period_ps, stream.period_ps);
}

CorrelationHistogram fold_to_clock(const TimeTagStream& stream, double bin_width_ps) {
    if (!(stream.period_ps > 0.0)) throw ValidationError("period_ps", "stream has no clock period");
    std::vector<double> deltas;
    for (const auto& t : stream.tags)
        if (is_detector(t.channel)) deltas.push_back(arrival_phase(t.time_ps, stream.period_ps));
    return histogram_of(deltas, bin_width_ps, stream.period_ps, stream.period_ps);
}

LifetimeFit fit_lifetime(const CorrelationHistogram& h, double fit_start_ps, double fit_end_ps) {
    if (!(fit_end_ps > fit_start_ps)) throw ValidationError("fit_end_ps", "must exceed fit_start_ps");
    std::vector<std::pair<double, double>> edges;  // relative to the fit start
    std::vector<double> n;
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        double a = h.bin_start(i), b = a + h.bin_width_ps;
        if (a < fit_start_ps || b > fit_end_ps) continue;
        edges.emplace_back(a - fit_start_ps, b - fit_start_ps);
        n.push_back(static_cast<double>(h.counts[i]));
    }
    LifetimeFit fit;
    fit.counts = static_cast<std::uint64_t>(std::accumulate(n.begin(), n.end(), 0.0));
    if (fit.counts < 10) throw InsufficientStatisticsError("fewer than 10 counts in the fit range");
    double lo_edge = edges.front().first, hi_edge = edges.back().second;

    auto nll = [&](double tau) {
        double norm = std::exp(-lo_edge / tau) - std::exp(-hi_edge / tau);
        double s = 0.0;
        for (std::size_t i = 0; i < n.size(); ++i) {
            if (n[i] == 0.0) continue;
            double p = (std::exp(-edges[i].first / tau) - std::exp(-edges[i].second / tau)) / norm;
            s -= n[i] * std::log(std::max(p, 1e-300));
        }
        return s;
    };

    // golden section on log(tau)
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = std::log(1.0), b = std::log(1e6);
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = nll(std::exp(c)), fd = nll(std::exp(d));
    while (b - a > 1e-9) {
        if (fc < fd) {
            b = d, d = c, fd = fc;
            c = b - g * (b - a);
            fc = nll(std::exp(c));
        } else {
            a = c, c = d, fc = fd;
            d = a + g * (b - a);
            fd = nll(std::exp(d));
        }
    }
    fit.lifetime_ps = std::exp(0.5 * (a + b));
    double tau = fit.lifetime_ps, step = 1e-3 * tau;
    double curv = (nll(tau + step) - 2.0 * nll(tau) + nll(tau - step)) / (step * step);
    fit.sigma_ps = curv > 0.0 ? 1.0 / std::sqrt(curv) : std::numeric_limits<double>::infinity();
    return fit;
}

double peak_to_valley(const CorrelationHistogram& h) {
    if (h.counts.empty()) throw EmptyInputError("empty histogram");
    double peak = static_cast<double>(*std::max_element(h.counts.begin(), h.counts.end()));
    const std::size_t w = std::min<std::size_t>(5, h.counts.size());
    double valley = std::numeric_limits<double>::infinity();
    double run = 0.0;
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        run += static_cast<double>(h.counts[i]);
        if (i >= w) run -= static_cast<double>(h.counts[i - w]);
        if (i + 1 >= w) valley = std::min(valley, run / static_cast<double>(w));
    }
    return valley > 0.0 ? peak / valley : std::numeric_limits<double>::infinity();
}

namespace {

struct PeakAreas {
    double central = 0.0;
    double side_total = 0.0;
    int k = 0;
};

PeakAreas peak_areas(const CorrelationHistogram& h, int side_peaks, double min_side_counts) {
    const double T = h.period_ps;
    if (!(T > 0.0)) throw ValidationError("histogram.period_ps", "g2 needs the pulse period");
    double left = -h.origin_ps;
    double right = h.origin_ps + h.bin_width_ps * static_cast<double>(h.counts.size());
    int avail = static_cast<int>(std::floor(std::min(left, right) / T - 0.5 + 1e-9));
    int k = side_peaks > 0 ? side_peaks : avail;
    if (avail < 3 || k < 3 || k > avail)
        throw ValidationError("histogram", "g2 estimation needs at least 3 side peaks on each side");
    PeakAreas p;
    p.k = k;
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        double j = std::floor(h.bin_center(i) / T + 0.5);
        double c = static_cast<double>(h.counts[i]);
        if (j == 0.0)
            p.central += c;
        else if (std::abs(j) <= k)
            p.side_total += c;
    }
    if (p.side_total / (2.0 * k) < min_side_counts)
        throw InsufficientStatisticsError("side peaks hold too few counts for a g2 estimate");
    return p;
}

}  // namespace

G2Estimate g2_zero(const CorrelationHistogram& h, int side_peaks, double min_side_counts) {
    PeakAreas p = peak_areas(h, side_peaks, min_side_counts);
    G2Estimate e;
    e.side_peaks = p.k;
    e.central = p.central;
    e.side_mean = p.side_total / (2.0 * p.k);
    e.value = p.central / e.side_mean;
    e.sigma = p.central > 0.0 ? e.value * std::sqrt(1.0 / p.central + 1.0 / p.side_total) : 1.0 / e.side_mean;
    return e;
}

G2Estimate g2_zero_corrected(const CorrelationHistogram& h, const ArrivalModel& arrival, int side_peaks,
                             double min_side_counts) {
    PeakAreas p = peak_areas(h, side_peaks, min_side_counts);
    const double T = h.period_ps;
    auto frac = [&](int j) {
        return signal_difference_cdf(arrival, (j + 0.5) * T) - signal_difference_cdf(arrival, (j - 0.5) * T);
    };
    // central = X (g f0 + A), side mean = X (D + g B)
    double f0 = frac(0);
    double A = 1.0 - f0;
    double B = 0.0;
    for (int j = 1; j <= p.k; ++j) B += frac(j) + frac(-j);
    B /= 2.0 * p.k;
    double D = 1.0 - B;
    double C = p.central, S = p.side_total / (2.0 * p.k);
    double num = C * D - S * A, den = S * f0 - C * B;
    G2Estimate e;
    e.side_peaks = p.k;
    e.central = C;
    e.side_mean = S;
    e.value = num / den;
    double dC = (D * den + num * B) / (den * den);
    double dS = (-A * den - num * f0) / (den * den);
    double varC = std::max(C, 1.0);
    double varS = S / (2.0 * p.k);
    e.sigma = std::sqrt(dC * dC * varC + dS * dS * varS);
    return e;
}

TruthTable TruthTable::normalize() const {
    TruthTable t = *this;
    for (auto& row : t.counts)
        for (int b = 0; b < 2; ++b) {
            double s = row[2 * b] + row[2 * b + 1];
            if (s > 0.0) {
                row[2 * b] /= s;
                row[2 * b + 1] /= s;
            }
        }
    t.normalized = true;
    return t;
}

TruthTable TruthTable::ideal() {
    TruthTable t;
    for (int s = 0; s < 4; ++s)
        for (int p = 0; p < 4; ++p) {
            State st = static_cast<State>(s), port = static_cast<State>(p);
            if (basis_of(st) != basis_of(port))
                t.counts[s][p] = 0.5;
            else
                t.counts[s][p] = st == port ? 1.0 : 0.0;
        }
    t.normalized = true;
    return t;
}

void accumulate_truth(TruthTable& table, const TimeTagStream& stream, State encoded, const KeyWindow& window) {
    if (!window.full() && !(stream.period_ps > 0.0))
        throw ValidationError("period_ps", "a key window needs the stream clock period");
    auto& row = table.counts[index_of(encoded)];
    for (const auto& t : stream.tags) {
        if (!is_detector(t.channel)) continue;
        if (!window.full() && !window.contains(arrival_phase(t.time_ps, stream.period_ps))) continue;
        row[static_cast<std::size_t>(t.channel)] += 1.0;
    }
}

TruthTable truth_table(const std::vector<const TimeTagStream*>& by_state, const KeyWindow& window) {
    if (by_state.size() != 4) throw ValidationError("truth_table", "needs one stream per state H, V, D, A");
    TruthTable t;
    for (int s = 0; s < 4; ++s) {
        State st = static_cast<State>(s);
        if (!by_state[s] || by_state[s]->detections() == 0)
            throw ValidationError("truth_table", std::string("missing stream for state ") + to_string(st));
        accumulate_truth(t, *by_state[s], st, window);
    }
    return t;
}

double fidelity(const TruthTable& table) {
    TruthTable t = table.normalized ? table : table.normalize();
    double total = 0.0;
    for (int s = 0; s < 4; ++s) {
        const auto& row = t.counts[s];
        int mb = static_cast<int>(basis_of(static_cast<State>(s)));
        int cb = 1 - mb;
        double m0 = row[2 * mb], m1 = row[2 * mb + 1];
        double c0 = row[2 * cb], c1 = row[2 * cb + 1];
        double ms = m0 + m1, cs = c0 + c1;
        double matched = ms > 0.0 ? row[s] / ms : 0.5;
        double crossed = 1.0;
        if (cs > 0.0) {
            double r = std::sqrt(0.5 * c0 / cs) + std::sqrt(0.5 * c1 / cs);
            crossed = r * r;
        }
        total += matched * crossed;
    }
    return std::clamp(total / 4.0, 0.0, 1.0);
}

TableQber qber_from_table(const TruthTable& t) {
    const auto& c = t.counts;
    double ez = c[0][1] + c[1][0], tz = ez + c[0][0] + c[1][1];
    double ex = c[2][3] + c[3][2], tx = ex + c[2][2] + c[3][3];
    if (!(tz > 0.0) || !(tx > 0.0))
        throw InsufficientStatisticsError("truth table has no matched-basis coincidences in a basis");
    return {ez / tz, ex / tx, (ez + ex) / (tz + tx)};
}

void write_truth_table_csv(std::ostream& os, const TruthTable& t) {
    os << "encoded,H,V,D,A\n";
    char buf[160];
    for (int s = 0; s < 4; ++s) {
        const auto& r = t.counts[s];
        std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%.10g,%.10g\n", to_string(static_cast<State>(s)), r[0], r[1],
                      r[2], r[3]);
        os << buf;
    }
}

TemporalFilterData build_filter_data(const std::vector<const TimeTagStream*>& by_state, const HbtResult& hbt,
                                     double bin_ps) {
    if (by_state.size() != 4) throw ValidationError("truth_streams", "needs one stream per state H, V, D, A");
    for (int s = 0; s < 4; ++s)
        if (!by_state[s])
            throw ValidationError("truth_streams",
                                  std::string("missing stream for state ") + to_string(static_cast<State>(s)));
    TemporalFilterData d;
    d.period_ps = by_state[0]->period_ps;
    d.bin_ps = bin_ps;
    if (!(d.period_ps > 0.0)) throw ValidationError("period_ps", "streams need a clock period");
    d.bins = static_cast<std::size_t>(std::ceil(d.period_ps / bin_ps));
    if (hbt.phase_bins != d.bins || std::abs(hbt.period_ps - d.period_ps) > 1e-6 || hbt.central.empty())
        throw ValidationError("hbt", "phase matrices must share the truth histogram bin grid");
    d.pulses_per_state = by_state[0]->n_pulses;
    d.truth.assign(d.bins, {});
    d.signal.assign(d.bins, 0);
    for (int s = 0; s < 4; ++s) {
        const TimeTagStream& st = *by_state[s];
        if (st.n_pulses != d.pulses_per_state || std::abs(st.period_ps - d.period_ps) > 1e-6)
            throw ValidationError("truth_streams", "streams must share pulse count and period");
        for (const auto& t : st.tags) {
            if (!is_detector(t.channel)) continue;
            auto b = std::min(d.bins - 1, static_cast<std::size_t>(arrival_phase(t.time_ps, d.period_ps) / bin_ps));
            ++d.truth[b][s][static_cast<std::size_t>(t.channel)];
            if (!t.has_truth() || !t.dark()) ++d.signal[b];
        }
    }
    d.central = hbt.central;
    d.side = hbt.side;
    d.side_peaks = hbt.side_peaks;
    return d;
}

namespace {

struct FilterTables {
    const TemporalFilterData& d;
    std::vector<double> clicks, matched, errors, signal;  // 1D prefix sums
    std::vector<double> central, side;                    // 2D prefix sums, (bins+1)^2
    double n_channel_sq_half = 0.0;                       // p_m per unit g2 at full signal
    double vacuum_errors = 0.0;

    explicit FilterTables(const TemporalFilterData& data, const OperatingPoint& op) : d(data) {
        const std::size_t n = d.bins;
        clicks.assign(n + 1, 0.0);
        matched.assign(n + 1, 0.0);
        errors.assign(n + 1, 0.0);
        signal.assign(n + 1, 0.0);
        for (std::size_t b = 0; b < n; ++b) {
            double c = 0.0, m = 0.0, e = 0.0;
            for (int s = 0; s < 4; ++s)
                for (int p = 0; p < 4; ++p) {
                    double v = static_cast<double>(d.truth[b][s][p]);
                    c += v;
                    State st = static_cast<State>(s), port = static_cast<State>(p);
                    if (basis_of(st) == basis_of(port)) {
                        m += v;
                        if (st != port) e += v;
                    }
                }
            clicks[b + 1] = clicks[b] + c;
            matched[b + 1] = matched[b] + m;
            errors[b + 1] = errors[b] + e;
            signal[b + 1] = signal[b] + static_cast<double>(d.signal[b]);
        }
        auto prefix2 = [n](const std::vector<double>& m) {
            std::vector<double> p((n + 1) * (n + 1), 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    p[(i + 1) * (n + 1) + j + 1] =
                        m[i * n + j] + p[i * (n + 1) + j + 1] + p[(i + 1) * (n + 1) + j] - p[i * (n + 1) + j];
            return p;
        };
        central = prefix2(d.central);
        side = prefix2(d.side);
        OperatingPoint unit = op;
        unit.source.g2_zero = 1.0;
        n_channel_sq_half = multiphoton_bound(unit);
        vacuum_errors = rate_inputs(op).vacuum_errors;
    }

    double square(const std::vector<double>& p, std::size_t lo, std::size_t hi) const {
        const std::size_t w = d.bins + 1;
        return p[hi * w + hi] - p[lo * w + hi] - p[hi * w + lo] + p[lo * w + lo];
    }

    // nullopt-like: returns false when the window holds no usable statistics
    bool stats(const OperatingPoint& op, const FilterObjective& obj, std::size_t lo, std::size_t hi,
               std::size_t glo, std::size_t ghi, WindowStats& out) const {
        double m = matched[hi] - matched[lo];
        double sd = side.empty() ? 0.0 : square(side, glo, ghi);
        if (!(m > 0.0) || !(sd > 0.0)) return false;
        double pulses = 4.0 * static_cast<double>(d.pulses_per_state);
        double sig_all = signal[d.bins];
        out.window = {static_cast<double>(lo) * d.bin_ps, static_cast<double>(hi - lo) * d.bin_ps};
        out.g2_window = {static_cast<double>(glo) * d.bin_ps, static_cast<double>(ghi - glo) * d.bin_ps};
        out.p_c = (clicks[hi] - clicks[lo]) / pulses;
        out.e_tot = (errors[hi] - errors[lo]) / m;
        out.g2 = square(central, glo, ghi) / (sd / (2.0 * d.side_peaks));
        out.signal_fraction = sig_all > 0.0 ? (signal[hi] - signal[lo]) / sig_all : 1.0;
        out.p_m = out.g2 * n_channel_sq_half * out.signal_fraction * out.signal_fraction;
        double width = std::min(d.period_ps, static_cast<double>(hi - lo) * d.bin_ps);
        RateInputs in{out.p_c, out.p_m, out.e_tot, vacuum_errors * width / d.period_ps};
        out.report = obj.regime == Regime::asymptotic ? skb_from_measurements(in, op.protocol)
                                                      : finite_from_measurements(in, op, obj.block_size);
        return true;
    }
};

bool better(const WindowStats& a, const WindowStats& b) {
    return a.report.skb_per_pulse > b.report.skb_per_pulse;
}

}  // namespace

WindowStats evaluate_window(const TemporalFilterData& data, const OperatingPoint& op, const FilterObjective& obj,
                            std::size_t key_lo, std::size_t key_hi, std::size_t g2_lo, std::size_t g2_hi) {
    if (!(key_lo < key_hi && key_hi <= data.bins && g2_lo < g2_hi && g2_hi <= data.bins))
        throw ValidationError("window", "bin range outside the grid");
    FilterTables t(data, op);
    WindowStats s;
    if (!t.stats(op, obj, key_lo, key_hi, g2_lo, g2_hi, s))
        throw InsufficientStatisticsError("window holds no matched-basis or side-peak counts");
    return s;
}

FilterResult optimize_temporal_window(const TemporalFilterData& data, const OperatingPoint& op,
                                      const FilterObjective& obj, int threads) {
    if (data.bins == 0) throw ValidationError("filter_data", "empty bin grid");
    FilterTables t(data, op);
    const std::size_t n = data.bins;
    FilterResult r;
    if (!t.stats(op, obj, 0, n, 0, n, r.unfiltered))
        throw InsufficientStatisticsError("full window holds no matched-basis or side-peak counts");
    r.unfiltered.window = KeyWindow{};
    r.unfiltered.g2_window = KeyWindow{};

    auto search = [&](auto&& eval) {
        std::vector<WindowStats> best(n);
        std::vector<bool> found(n, false);
        parallel_for(n, threads, [&](std::size_t lo) {
            WindowStats s;
            for (std::size_t hi = lo + 1; hi <= n; ++hi) {
                if (!eval(lo, hi, s)) continue;
                if (!found[lo] || better(s, best[lo])) {
                    best[lo] = s;
                    found[lo] = true;
                }
            }
        });
        r.candidates += n * (n + 1) / 2;
        for (std::size_t lo = 0; lo < n; ++lo)
            if (found[lo] && better(best[lo], r.best)) r.best = best[lo];
    };

    r.best = r.unfiltered;
    search([&](std::size_t lo, std::size_t hi, WindowStats& s) { return t.stats(op, obj, lo, hi, lo, hi, s); });
    if (obj.independent_windows) {
        WindowStats key = r.best;
        auto klo = static_cast<std::size_t>(std::llround(key.window.start_ps / data.bin_ps));
        std::size_t khi = key.window.full()
                              ? n
                              : klo + static_cast<std::size_t>(std::llround(key.window.width_ps / data.bin_ps));
        search([&](std::size_t lo, std::size_t hi, WindowStats& s) { return t.stats(op, obj, klo, khi, lo, hi, s); });
    }
    return r;
}

}  // namespace qkd
