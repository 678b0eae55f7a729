#include "qkd/keyrate.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "qkd/parallel.hpp"
#include "qkd/timing.hpp"

namespace qkd {

void OperatingPoint::validate() const {
    source.validate();
    link.validate();
    protocol.validate();
    budget.validate();
}

OperatingPoint OperatingPoint::with_loss(double loss_db) const {
    OperatingPoint op = *this;
    op.link.channel_loss_db = loss_db;
    return op;
}

OperatingPoint OperatingPoint::with_clock_rate(double hz) const {
    OperatingPoint op = *this;
    op.protocol.clock_rate_hz = hz;
    return op;
}

double OperatingPoint::effective_mean_photon_number() const {
    double n = source.mean_photon_number * source.pre_attenuation;
    if (options.lifetime_limited_emission) {
        double now = emission_capture_fraction(source.lifetime_ps, protocol.period_ps());
        double ref = emission_capture_fraction(source.lifetime_ps, 1e12 / source.reference_rate_hz);
        n *= now / ref;
    }
    return n;
}

namespace {

double plane_factor(const OperatingPoint& op) {
    return op.options.multiphoton_plane == ReferencePlane::channel_input
               ? op.link.transmitter_efficiency
               : 1.0;
}

}  // namespace

ClickModel click_model(const OperatingPoint& op) {
    const LinkModel& link = op.link;
    ClickModel c;
    c.n_eff = op.effective_mean_photon_number();
    c.eta_sys = link.system_efficiency();

    // two-photon term: both photons lost is the only way to stay dark
    double p2 = op.source.g2_zero * c.n_eff * c.n_eff / 2.0;
    c.p_signal = c.eta_sys * c.n_eff - p2 * c.eta_sys * c.eta_sys;

    c.p_dark_scaled = scaled_dark_count_prob(link, op.protocol.clock_rate_hz);
    c.p_dark_total = -std::expm1(link.detector_count * std::log1p(-c.p_dark_scaled));
    c.p_raw = c.p_dark_total + c.p_signal - c.p_dark_total * c.p_signal;

    double tau_ps = link.dead_time_ns * 1e3;
    switch (op.options.dead_time) {
    case DeadTimeModel::none:
        c.live_fraction = 1.0;
        break;
    case DeadTimeModel::aggregate: {
        double rate = c.p_raw * op.protocol.clock_rate_hz;
        c.live_fraction = 1.0 / (1.0 + rate * link.dead_time_ns * 1e-9);
        break;
    }
    case DeadTimeModel::per_detector: {
        double q = c.p_raw / link.detector_count;
        double weight = c.p_raw > 0.0 ? c.p_signal / (c.p_signal + c.p_dark_total) : 0.0;
        ArrivalModel am = ArrivalModel::from(op.source, link, op.protocol.clock_rate_hz,
                                             op.options.lifetime_limited_emission);
        double blocked = effective_dead_windows(am, weight, tau_ps);
        c.live_fraction = 1.0 / (1.0 + q * blocked);
        break;
    }
    }
    c.p_c = c.p_raw * c.live_fraction;
    c.error_raw =
        link.misalignment_prob * c.p_signal + 0.5 * c.p_dark_total * (1.0 - c.p_signal);
    c.e_tot = c.p_raw > 0.0 ? c.error_raw / c.p_raw : 0.0;
    c.vacuum_yield = c.p_dark_total * c.live_fraction;
    c.vacuum_prob = std::max(0.0, 1.0 - c.n_eff * plane_factor(op));
    return c;
}

double multiphoton_bound(const SourceModel& source, ReferencePlane plane,
                         double transmitter_efficiency) {
    double n = source.mean_photon_number * source.pre_attenuation;
    if (plane == ReferencePlane::channel_input) n *= transmitter_efficiency;
    return source.g2_zero * n * n / 2.0;
}

double multiphoton_bound(const OperatingPoint& op) {
    double n = op.effective_mean_photon_number() * plane_factor(op);
    return op.source.g2_zero * n * n / 2.0;
}

double click_probability(const OperatingPoint& op) { return click_model(op).p_c; }

double rate_after_deadtime(double rate_hz, double dead_time_ns) {
    if (!(rate_hz >= 0.0)) throw DomainError("rate_after_deadtime: rate must be >= 0");
    if (std::isinf(rate_hz)) return dead_time_ns > 0.0 ? 1e9 / dead_time_ns : rate_hz;
    return rate_hz / (1.0 + rate_hz * dead_time_ns * 1e-9);
}

std::optional<double> qber_total(const OperatingPoint& op) {
    ClickModel c = click_model(op);
    if (!(c.p_raw > 0.0)) return std::nullopt;
    return c.e_tot;
}

const char* to_string(Regime r) { return r == Regime::asymptotic ? "asymptotic" : "finite"; }

std::string RegimeSpec::label() const {
    if (regime == Regime::asymptotic) return "asymptotic";
    char buf[64];
    std::snprintf(buf, sizeof buf, "finite_%g", block_size);
    return buf;
}

KeyRateReport skb_from_measurements(const RateInputs& in, const ProtocolParams& protocol) {
    KeyRateReport r;
    r.p_c = in.p_c;
    r.p_m = in.p_m;
    r.e_tot = in.e_tot;
    r.p_c1_lower = std::max(0.0, in.p_c - in.p_m);
    if (r.p_c1_lower <= 0.0) {
        r.e1_upper = 0.5;
        r.zero_key = true;
        return r;
    }
    double errors = std::max(0.0, in.e_tot * in.p_c - in.vacuum_errors);
    r.e1_upper = std::min(0.5, errors / r.p_c1_lower);
    double e = std::clamp(in.e_tot, 0.0, 0.5);
    double s = sift_ratio(protocol.basis_bias) *
               (r.p_c1_lower * (1.0 - binary_entropy(r.e1_upper)) -
                protocol.error_correction_inefficiency * in.p_c * binary_entropy(e));
    if (s > 0.0) {
        r.skb_per_pulse = s;
        r.skr = s * protocol.clock_rate_hz;
    } else {
        r.zero_key = true;
    }
    return r;
}

RateInputs rate_inputs(const OperatingPoint& op) {
    ClickModel c = click_model(op);
    RateInputs in;
    in.p_c = c.p_c;
    in.p_m = multiphoton_bound(op);
    in.e_tot = c.e_tot;
    if (op.options.phase_error == PhaseErrorModel::vacuum_aware)
        in.vacuum_errors = 0.5 * c.vacuum_yield * c.vacuum_prob;
    return in;
}

KeyRateReport asymptotic_skb_per_pulse(const OperatingPoint& op) {
    return skb_from_measurements(rate_inputs(op), op.protocol);
}

FiniteBlockInput finite_block_input(const RateInputs& m, const OperatingPoint& op, double block_size) {
    if (!(block_size >= 1.0)) throw ValidationError("protocol.block_size", "must be >= 1");
    if (!(m.p_c > 0.0)) throw ValidationError("p_c", "must be positive for a finite block");
    double px = op.protocol.basis_bias;
    double pz = 1.0 - px;
    FiniteBlockInput in;
    in.n_sent = block_size / (m.p_c * pz * pz);
    in.n_z = block_size;
    in.n_x = in.n_sent * m.p_c * px * px;
    in.e_x = in.e_z = m.e_tot;
    in.budget = op.budget;
    in.f_ec = op.protocol.error_correction_inefficiency;
    in.clock_rate_hz = op.protocol.clock_rate_hz;
    in.acquisition_time_s = in.n_sent / in.clock_rate_hz;
    in.p_m = m.p_m;
    in.basis_bias = px;
    in.vacuum_errors_x = m.vacuum_errors * in.n_sent * px * px;
    return in;
}

FiniteBlockInput finite_block_input(const OperatingPoint& op, double block_size) {
    return finite_block_input(rate_inputs(op), op, block_size);
}

KeyRateReport finite_from_measurements(const RateInputs& m, const OperatingPoint& op, double block_size) {
    KeyRateReport r = skb_from_measurements(m, op.protocol);
    r.regime = Regime::finite;
    r.skb_per_pulse = 0.0;
    r.skr = 0.0;
    if (!(r.p_c > 0.0)) {
        r.zero_key = true;
        return r;
    }
    FiniteKeyReport f = finite_skb_per_pulse(finite_block_input(m, op, block_size));
    r.e1_upper = f.phase_error_upper;
    r.skb_per_pulse = f.skb_per_pulse;
    r.skr = f.skb_per_pulse * op.protocol.clock_rate_hz;
    r.zero_key = f.zero_key;
    r.finite = f;
    return r;
}

KeyRateReport finite_key_report(const OperatingPoint& op, double block_size) {
    return finite_from_measurements(rate_inputs(op), op, block_size);
}

KeyRateReport evaluate(const OperatingPoint& op, const RegimeSpec& regime) {
    return regime.regime == Regime::asymptotic ? asymptotic_skb_per_pulse(op)
                                               : finite_key_report(op, regime.block_size);
}

MtlResult max_tolerable_loss(const OperatingPoint& op, const RegimeSpec& regime,
                             double tolerance_db) {
    auto skb = [&](double loss) { return evaluate(op.with_loss(loss), regime).skb_per_pulse; };
    if (skb(0.0) <= 0.0) throw NoPositiveKeyError("no positive key at zero channel loss");
    MtlResult out;
    double lo = 0.0, hi = 10.0;
    while (skb(hi) > 0.0) {
        lo = hi;
        hi += 10.0;
        if (hi > 1000.0) throw NoPositiveKeyError("key rate stays positive beyond 1000 dB");
    }
    while (hi - lo > tolerance_db) {
        double mid = 0.5 * (lo + hi);
        (skb(mid) > 0.0 ? lo : hi) = mid;
        ++out.iterations;
    }
    out.loss_db = 0.5 * (lo + hi);
    const int samples = 32;
    double prev = skb(0.0);
    for (int i = 1; i <= samples; ++i) {
        double s = skb(hi * i / samples);
        if (s > prev * (1.0 + 1e-12) + 1e-300) out.monotone = false;
        prev = s;
    }
    return out;
}

namespace {

struct Coordinates {
    double log_pre;
    double p_x;
};

OperatingPoint apply(const OperatingPoint& base, FreeParameters free, Coordinates c) {
    OperatingPoint op = base;
    if (free.pre_attenuation) op.source.pre_attenuation = std::exp(c.log_pre);
    if (free.basis_bias) op.protocol.basis_bias = c.p_x;
    return op;
}

template <class F>
double golden_max(F&& f, double a, double b, int iterations) {
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - g * (b - a), x2 = a + g * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int i = 0; i < iterations; ++i) {
        if (f1 < f2) {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        }
    }
    return f1 > f2 ? x1 : x2;
}

}  // namespace

OptimizationResult optimize_operating_point(const OperatingPoint& op, FreeParameters free,
                                            const RegimeSpec& regime) {
    if (!free.pre_attenuation && !free.basis_bias)
        throw ValidationError("free", "at least one parameter must be free");
    OptimizationResult out;
    out.op = op;
    out.initial = evaluate(op, regime);
    out.report = out.initial;

    const double log_pre_lo = std::log(1e-3), log_pre_hi = 0.0;
    const double px_lo = 0.02, px_hi = 0.98;
    std::vector<double> pre_grid{std::log(op.source.pre_attenuation)};
    std::vector<double> px_grid{op.protocol.basis_bias};
    if (free.pre_attenuation)
        for (int i = 0; i <= 30; ++i) pre_grid.push_back(log_pre_lo + (log_pre_hi - log_pre_lo) * i / 30);
    if (free.basis_bias)
        for (int i = 0; i <= 48; ++i) px_grid.push_back(px_lo + (px_hi - px_lo) * i / 48);

    auto score = [&](Coordinates c) {
        ++out.evaluations;
        return evaluate(apply(op, free, c), regime).skb_per_pulse;
    };
    Coordinates best{pre_grid[0], px_grid[0]};
    double best_s = out.initial.skb_per_pulse;
    for (double lp : pre_grid)
        for (double px : px_grid) {
            double s = score({lp, px});
            if (s > best_s) {
                best_s = s;
                best = {lp, px};
            }
        }

    // golden-section polish, one coordinate at a time
    double pre_step = (log_pre_hi - log_pre_lo) / 30, px_step = (px_hi - px_lo) / 48;
    for (int cycle = 0; cycle < 3 && best_s > 0.0; ++cycle) {
        if (free.pre_attenuation) {
            double a = std::max(log_pre_lo, best.log_pre - pre_step);
            double b = std::min(log_pre_hi, best.log_pre + pre_step);
            double x = golden_max([&](double v) { return score({v, best.p_x}); }, a, b, 40);
            double s = score({x, best.p_x});
            if (s > best_s) {
                best_s = s;
                best.log_pre = x;
            }
        }
        if (free.basis_bias) {
            double a = std::max(px_lo, best.p_x - px_step);
            double b = std::min(px_hi, best.p_x + px_step);
            double x = golden_max([&](double v) { return score({best.log_pre, v}); }, a, b, 40);
            double s = score({best.log_pre, x});
            if (s > best_s) {
                best_s = s;
                best.p_x = x;
            }
        }
        pre_step *= 0.5;
        px_step *= 0.5;
    }

    if (best_s > out.initial.skb_per_pulse) {
        out.op = apply(op, free, best);
        out.report = evaluate(out.op, regime);
        out.improved = true;
    }
    return out;
}

namespace {

std::string trim(std::string s) {
    auto ws = [](unsigned char c) { return std::isspace(c); };
    while (!s.empty() && ws(s.back())) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && ws(s[i])) ++i;
    return s.substr(i);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

void validate_dataset_row(const DatasetRow& row, std::size_t index) {
    SourceModel s;
    s.mean_photon_number = row.mean_photon_number;
    s.g2_zero = row.g2_zero;
    try {
        s.validate();
    } catch (const ValidationError& e) {
        throw ValidationError("dataset row " + std::to_string(index) + " " + e.field(), e.what());
    }
}

}  // namespace

std::vector<DatasetRow> read_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("dataset", "cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("dataset", "empty file");
    auto header = split_csv(line);
    auto col = [&](const char* name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw ValidationError("dataset", std::string("missing column ") + name);
        return static_cast<std::size_t>(it - header.begin());
    };
    std::size_t c_label = col("label"), c_n = col("mean_photon_number"), c_g2 = col("g2_zero");
    std::vector<DatasetRow> rows;
    std::size_t index = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++index;
        auto cells = split_csv(line);
        std::size_t need = std::max({c_label, c_n, c_g2}) + 1;
        std::string where = "dataset row " + std::to_string(index);
        if (cells.size() < need) throw ValidationError(where, "too few columns");
        DatasetRow row;
        row.label = cells[c_label];
        try {
            std::size_t pos = 0;
            row.mean_photon_number = std::stod(cells[c_n], &pos);
            if (pos != cells[c_n].size()) throw std::invalid_argument("trailing");
            row.g2_zero = std::stod(cells[c_g2], &pos);
            if (pos != cells[c_g2].size()) throw std::invalid_argument("trailing");
        } catch (const std::logic_error&) {
            throw ValidationError(where, "non-numeric value");
        }
        validate_dataset_row(row, index);
        rows.push_back(row);
    }
    return rows;
}

std::vector<SweepRow> sweep(const OperatingPoint& op, SweepAxis axis, const std::vector<double>& grid,
                            const std::vector<DatasetRow>& dataset,
                            const std::vector<RegimeSpec>& regimes, int threads) {
    std::size_t points = axis == SweepAxis::dataset ? dataset.size() : grid.size();
    if (points == 0) throw ValidationError("grid", "sweep grid is empty");
    if (regimes.empty()) throw ValidationError("regimes", "no regime selected");

    std::vector<OperatingPoint> ops(points, op);
    std::vector<SweepRow> rows(points * regimes.size());
    for (std::size_t i = 0; i < points; ++i) {
        SweepRow proto;
        switch (axis) {
        case SweepAxis::loss:
            ops[i] = op.with_loss(grid[i]);
            proto.axis_value = grid[i];
            break;
        case SweepAxis::clock_rate:
            ops[i] = op.with_clock_rate(grid[i]);
            proto.axis_value = grid[i];
            break;
        case SweepAxis::dataset:
            validate_dataset_row(dataset[i], i + 1);
            ops[i].source.mean_photon_number = dataset[i].mean_photon_number;
            ops[i].source.g2_zero = dataset[i].g2_zero;
            proto.axis_value = static_cast<double>(i);
            proto.label = dataset[i].label;
            break;
        }
        try {
            ops[i].validate();
        } catch (const ValidationError& e) {
            throw ValidationError("grid point " + std::to_string(i + 1) + " " + e.field(), e.what());
        }
        for (std::size_t r = 0; r < regimes.size(); ++r) rows[i * regimes.size() + r] = proto;
    }
    parallel_for(rows.size(), threads, [&](std::size_t k) {
        rows[k].report = evaluate(ops[k / regimes.size()], regimes[k % regimes.size()]);
    });
    return rows;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
    os << "axis_value,p_c,p_m,e_tot,skb_per_pulse,skr_bits_per_s,regime,"
          "n_nmp_lower,phase_error_upper,lambda_EC,final_key_length,label\n";
    char buf[512];
    for (const auto& row : rows) {
        const KeyRateReport& r = row.report;
        std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%s", row.axis_value,
                      r.p_c, r.p_m, r.e_tot, r.skb_per_pulse, r.skr, to_string(r.regime));
        os << buf;
        if (r.finite) {
            std::snprintf(buf, sizeof buf, ",%.10g,%.10g,%.10g,%llu", r.finite->n_nmp_lower,
                          r.finite->phase_error_upper, r.finite->lambda_ec,
                          static_cast<unsigned long long>(r.finite->final_key_length));
            os << buf;
        } else {
            os << ",,,,";
        }
        os << ',' << row.label << '\n';
    }
}

}  // namespace qkd
