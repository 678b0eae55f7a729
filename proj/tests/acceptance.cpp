// Acceptance run: one PASS/FAIL line per primary criterion. Exit status is
// the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "qkd/keygen.hpp"
#include "qkd/keyrate.hpp"
#include "qkd/montecarlo.hpp"
#include "qkd/parallel.hpp"
#include "qkd/polcomp.hpp"
#include "qkd/tagproc.hpp"
#include "support.hpp"

using namespace qkd;
using namespace qkd::test;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char b[512];
    std::snprintf(b, sizeof b, f, args...);
    return b;
}

int failures = 0;

void criterion(const char* name, double budget_s, const std::function<Outcome()>& body) {
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool in_time = dt < budget_s;
    bool ok = o.pass && in_time;
    failures += !ok;
    std::printf("[%s] %s: %s (%.2f s of %.0f s%s)\n", ok ? "PASS" : "FAIL", name, o.detail.c_str(), dt, budget_s,
                in_time ? "" : ", over budget");
    std::fflush(stdout);
}

// First-detection click fraction and truth-labelled QBER of a stream.
struct Observed {
    double p_c = 0.0;
    double e = 0.0;
    std::uint64_t sifted = 0;
};

Observed observe(const SimulationResult& r, std::uint64_t n) {
    std::uint64_t pulses = 0, sifted = 0, errors = 0, last = 0;
    bool any = false;
    for (const auto& t : r.stream.tags) {
        if (!is_detector(t.channel) || (any && t.pulse == last)) continue;
        any = true;
        last = t.pulse;
        ++pulses;
        State a = r.alice.state(t.pulse), b = port_state(t.channel);
        if (basis_of(a) == basis_of(b)) {
            ++sifted;
            errors += bit_of(a) != bit_of(b);
        }
    }
    return {double(pulses) / double(n), sifted ? double(errors) / double(sifted) : 0.0, sifted};
}

bool dead_time_respected(const TimeTagStream& s, double dead_ns) {
    std::int64_t last[4] = {};
    bool seen[4] = {};
    const auto dead = static_cast<std::int64_t>(std::llround(dead_ns * 1e3));
    for (const auto& t : s.tags) {
        if (!is_detector(t.channel)) continue;
        int c = static_cast<int>(t.channel);
        if (seen[c] && t.time_ps - last[c] < dead) return false;
        seen[c] = true;
        last[c] = t.time_ps;
    }
    return true;
}

BitString with_errors(const BitString& a, double rate, std::uint64_t seed) {
    BitString b = a;
    rng::Xoshiro256 g(seed);
    for (std::size_t i = 0; i < b.size(); ++i)
        if (g.bernoulli(rate)) b.flip(i);
    return b;
}

Outcome mtl_reproduction() {
    OperatingPoint op = baseline_op();
    struct Row {
        RegimeSpec spec;
        double target;
        double got = 0.0;
    };
    std::vector<Row> rows{{RegimeSpec::asymptotic(), 28.11},
                          {RegimeSpec::finite(1e8), 27.95},
                          {RegimeSpec::finite(1e5), 27.78},
                          {RegimeSpec::finite(1e3), 25.51}};
    bool ok = true;
    std::string d;
    for (auto& r : rows) {
        r.got = max_tolerable_loss(op, r.spec).loss_db;
        ok &= std::abs(r.got - r.target) <= 1.5;
        d += fmt("%s %.2f (target %.2f) ", r.spec.label().c_str(), r.got, r.target);
    }
    bool order = rows[0].got > rows[1].got && rows[1].got > rows[2].got && rows[2].got > rows[3].got;
    d += order ? "ordering exact" : "ordering WRONG";
    return {ok && order, d};
}

Outcome operating_point_rate() {
    OperatingPoint op = baseline_op();
    double a = asymptotic_skb_per_pulse(op).skb_per_pulse;
    double f = finite_key_report(op, 1e8).skb_per_pulse;
    double ratio = std::max(a / 4.80e-5, 4.80e-5 / a);
    bool ok = ratio <= 1.5 && f >= 2e-5;
    return {ok, fmt("asymptotic %.3e (factor %.2f from 4.80e-5), finite 1e8 %.3e (>= 2e-5)", a, ratio, f)};
}

Outcome qber_envelope() {
    OperatingPoint op = baseline_op();
    double e = *qber_total(op);
    double far = *qber_total(op.with_loss(300.0));
    OperatingPoint quiet = op;
    quiet.link.dark_count_prob = 0.0;
    double floor = *qber_total(quiet);
    bool ok = e >= 0.003 && e <= 0.013 && std::abs(far - 0.5) < 1e-6 &&
              std::abs(floor - op.link.misalignment_prob) < 1e-12;
    return {ok, fmt("model QBER %.4f%% in [0.3%%, 1.3%%]; L=300 dB -> %.6f; p_dc=0 -> %.3e (p_mis %.3e)",
                    100 * e, far, floor, op.link.misalignment_prob)};
}

Outcome clock_rate_trends() {
    OperatingPoint op = baseline_op();
    double L = length_to_loss(80.0, op.link.fibre_attenuation_db_per_km);
    const double rates[] = {76e6, 228e6, 608e6, 1063e6};
    double e[4], skr[4];
    std::string d = fmt("L=%.2f dB:", L);
    for (int i = 0; i < 4; ++i) {
        KeyRateReport r = asymptotic_skb_per_pulse(op.with_loss(L).with_clock_rate(rates[i]));
        e[i] = r.e_tot;
        skr[i] = r.skr;
        d += fmt(" %.0f MHz e=%.3f%% SKR=%.0f;", rates[i] / 1e6, 100 * e[i], skr[i]);
    }
    bool ok = true;
    for (int i = 1; i < 4; ++i) ok &= e[i] < e[i - 1] && skr[i] > skr[i - 1];
    double gain = skr[3] / skr[2];
    ok &= gain < 1063.0 / 608.0;
    d += fmt(" 608->1063 gain %.3f < 1.748", gain);
    return {ok, d};
}

Outcome statistical_bounds() {
    double worst_ratio = 0.0;
    int cases = 0;
    for (int n : {100, 1000, 10000})
        for (double p : {1e-3, 1e-2, 1e-1})
            for (double eps : {1e-3, 1e-6}) {
                double mu = n * p;
                double up = binom_upper_tail(n, p, chernoff_upper(mu, eps));
                double lo = chernoff_lower(mu, eps);
                double below = lo > 0.0 ? binom_lower_tail(n, p, std::ceil(lo) - 1.0) : 0.0;
                double miss_up = 0.0, miss_lo = 0.0;
                for (int k = 0; k <= n; ++k) {
                    double pk = binom_pmf(n, p, k);
                    if (pk < 1e-300) continue;
                    if (chernoff_mean_upper(k, eps) < mu) miss_up += pk;
                    if (chernoff_mean_lower(k, eps) > mu) miss_lo += pk;
                }
                worst_ratio = std::max({worst_ratio, up / eps, below / eps, miss_up / eps, miss_lo / eps});
                cases += 4;
            }
    // sampling without replacement, populations up to 10^3
    double worst_hyper = 0.0;
    for (int total : {100, 300, 1000})
        for (double frac : {0.1, 0.3, 0.5})
            for (double eps : {1e-3, 1e-6}) {
                int k = static_cast<int>(total * frac), rest = total - k;
                double gamma = serfling_gamma(rest, k, eps);
                for (int errors = 0; errors <= total; ++errors) {
                    double fail = 0.0;
                    for (int j = 0; j <= std::min(k, errors); ++j)
                        if (double(errors - j) / rest > double(j) / k + gamma) fail += hypergeom_pmf(total, errors, k, j);
                    worst_hyper = std::max(worst_hyper, fail / eps);
                }
                ++cases;
            }
    // the full phase-error bound with a disclosed sample and no multiphoton events
    double worst_phase = 0.0;
    for (int total : {300, 1000}) {
        int k = total / 4;
        FiniteBlockInput in;
        in.n_x = k;
        in.n_z = total - k;
        in.sample_size = k;
        in.n_sent = 1e6;
        in.clock_rate_hz = 1e6;
        in.acquisition_time_s = 1.0;
        std::vector<double> bound(k + 1);
        for (int j = 0; j <= k; ++j) {
            in.e_x = double(j) / k;
            bound[j] = phase_error_upper(in);
        }
        // 0.5 is the saturated bound: it already charges a full bit per key bit
        for (int errors = 0; errors <= total / 2; ++errors) {
            double fail = 0.0;
            for (int j = 0; j <= std::min(k, errors); ++j)
                if (bound[j] < 0.5 && double(errors - j) / (total - k) > bound[j])
                    fail += hypergeom_pmf(total, errors, k, j);
            worst_phase = std::max(worst_phase, fail / in.eps_step());
        }
        ++cases;
    }
    bool ok = worst_ratio <= 1.0 && worst_hyper <= 1.0 && worst_phase <= 1.0;
    return {ok, fmt("%d lattice cases; worst failure/eps: Chernoff %.3g, Serfling %.3g, phase error %.3g", cases,
                    worst_ratio, worst_hyper, worst_phase)};
}

Outcome analytic_mc() {
    bool ok = true;
    std::string d;
    for (double L : {0.0, 10.0, 20.0, 25.49}) {
        Scenario sc;
        sc.op = baseline_op().with_loss(L);
        sc.n_pulses = 10'000'000;
        sc.seed = 1000 + static_cast<std::uint64_t>(100 * L);
        SimulationResult r = simulate_run(sc);
        ClickModel cm = click_model(sc.op);
        Observed o = observe(r, sc.n_pulses);
        double zc = (o.p_c - cm.p_c) / std::sqrt(cm.p_c * (1.0 - cm.p_c) / double(sc.n_pulses));
        double ze = (o.e - cm.e_tot) / std::sqrt(cm.e_tot * (1.0 - cm.e_tot) / double(o.sifted));
        bool dead = dead_time_respected(r.stream, sc.op.link.dead_time_ns);
        ok &= std::abs(zc) < 3.0 && std::abs(ze) < 3.0 && dead;
        d += fmt("%.2f dB z(p_c)=%+.2f z(e)=%+.2f%s; ", L, zc, ze, dead ? "" : " DEAD-TIME VIOLATION");
    }
    return {ok, d + "dead-time spacing holds"};
}

Outcome post_processing() {
    bool ok = true;
    std::string d;
    // g2 round trips at 228 MHz, overlap-corrected estimator
    for (double g2 : {0.056, 0.0243, 0.0}) {
        Scenario sc;
        sc.op = baseline_op().with_loss(0.0);
        sc.op.source.g2_zero = g2;
        sc.n_pulses = 20'000'000;
        sc.seed = 3000 + static_cast<std::uint64_t>(g2 * 1e4);
        HbtResult h = simulate_hbt(sc, HbtOptions{});
        ArrivalModel am = ArrivalModel::from(sc.op.source, sc.op.link, sc.op.protocol.clock_rate_hz,
                                             sc.op.options.lifetime_limited_emission);
        G2Estimate est = g2_zero_corrected(h.histogram, am);
        bool hit = std::abs(est.value - g2) <= 3.0 * est.sigma;
        ok &= hit;
        d += fmt("g2 %.4f -> %.4f +- %.4f; ", g2, est.value, est.sigma);
    }
    // truth table, back-to-back
    std::vector<SimulationResult> runs;
    for (int s = 0; s < 4; ++s) {
        Scenario sc;
        sc.op = baseline_op().with_loss(0.0);
        sc.n_pulses = 2'000'000;
        sc.seed = 4000 + s;
        sc.static_state = static_cast<State>(s);
        runs.push_back(simulate_run(sc));
    }
    std::vector<const TimeTagStream*> ptrs;
    for (auto& r : runs) ptrs.push_back(&r.stream);
    double fid = fidelity(truth_table(ptrs).normalize());
    ok &= fid >= 0.99;
    d += fmt("fidelity %.5f; ", fid);
    // lifetime from a reference-tagged stream
    Scenario sc;
    sc.op = baseline_op().with_loss(0.0);
    sc.n_pulses = 10'000'000;
    sc.seed = 4100;
    sc.emit_reference = true;
    SimulationResult r = simulate_run(sc);
    CorrelationHistogram h = correlate(r.stream, 10.0);
    LifetimeFit f = fit_lifetime(h, sc.op.link.arrival_offset_ps + 4.0 * sc.op.link.jitter_ps,
                                 sc.op.protocol.period_ps());
    bool life = std::abs(f.lifetime_ps - 592.5) <= 0.05 * 592.5;
    ok &= life;
    d += fmt("lifetime %.1f ps (592.5 +- 5%%)", f.lifetime_ps);
    return {ok, d};
}

Outcome session_integrity() {
    const int runs = 100;
    struct Run {
        bool equal = false, conserved = false, aborted = true;
        std::uint64_t final_length = 0;
    };
    std::vector<Run> out(runs);
    parallel_for(runs, 0, [&](std::size_t i) {
        Scenario sc;
        sc.op = baseline_op();
        sc.seed = 9000 + i;
        sc.threads = 1;
        KeyPolicy pol;
        pol.block_size = 1e4;
        SessionResult r = run_session(sc, pol);
        out[i] = {r.alice_key == r.bob_key && r.ledger.verified, r.ledger.conserved(), r.ledger.aborted(),
                  r.ledger.final_length};
    });
    int equal = 0, conserved = 0, keyed = 0;
    for (const auto& r : out) {
        equal += r.equal;
        conserved += r.conserved;
        keyed += !r.aborted && r.final_length > 0;
    }
    // Cascade envelope at n = 1e5
    double worst[3] = {};
    const double rates[] = {0.002, 0.0065, 0.02};
    const int trials = 20;
    std::vector<double> f(3 * trials);
    bool corrected = true;
    std::vector<int> fixed(3 * trials, 0);
    parallel_for(f.size(), 0, [&](std::size_t i) {
        double e = rates[i / trials];
        BitString a = stream_bits(7000 + i, 100000);
        BitString b = with_errors(a, e, 8000 + i);
        CascadeResult r = reconcile(a, b, e, 9000 + i);
        fixed[i] = r.corrected == a;
        f[i] = double(r.leaked_bits) / (1e5 * binary_entropy(e));
    });
    for (std::size_t i = 0; i < f.size(); ++i) {
        worst[i / trials] = std::max(worst[i / trials], f[i]);
        corrected &= fixed[i] != 0;
    }
    const double envelope = 1.16 * 1.15;
    bool cascade_ok = corrected && worst[0] <= envelope && worst[1] <= envelope && worst[2] <= envelope;
    // Toeplitz collisions at 16 output bits
    const int ell = 16;
    const std::size_t pairs = 1'000'000, chunks = 64;
    std::vector<std::uint64_t> coll(chunks, 0);
    parallel_for(chunks, 0, [&](std::size_t c) {
        for (std::size_t i = c; i < pairs; i += chunks) {
            BitString x = stream_bits(rng::hash2(11, i), 128), y = stream_bits(rng::hash2(12, i), 128);
            if (x == y) continue;
            std::uint64_t seed = rng::hash2(13, i);
            coll[c] += toeplitz_hash(x, ell, seed) == toeplitz_hash(y, ell, seed);
        }
    });
    std::uint64_t collisions = 0;
    for (auto c : coll) collisions += c;
    double p = std::ldexp(1.0, -ell);
    double freq = double(collisions) / double(pairs);
    double limit = p + 3.0 * std::sqrt(p * (1.0 - p) / double(pairs));
    bool ok = equal == runs && conserved == runs && keyed == runs && cascade_ok && freq <= limit;
    return {ok, fmt("%d/%d identical keys, %d/%d ledgers conserved, %d positive; Cascade leak/(n h) worst "
                    "%.3f/%.3f/%.3f <= %.3f; Toeplitz collisions %.3e <= %.3e",
                    equal, runs, conserved, runs, keyed, worst[0], worst[1], worst[2], envelope, freq, limit)};
}

Outcome temporal_filter() {
    auto run_filter = [](const OperatingPoint& op, std::uint64_t truth_pulses, std::uint64_t seed) {
        std::vector<SimulationResult> runs;
        for (int s = 0; s < 4; ++s) {
            Scenario sc;
            sc.op = op;
            sc.n_pulses = truth_pulses;
            sc.seed = seed + s;
            sc.static_state = static_cast<State>(s);
            runs.push_back(simulate_run(sc));
        }
        std::vector<const TimeTagStream*> ptrs;
        for (auto& r : runs) ptrs.push_back(&r.stream);
        Scenario hs;
        hs.op = op.with_loss(0.0);
        hs.n_pulses = 20'000'000;
        hs.seed = seed + 10;
        HbtOptions ho;
        ho.phase_matrix = true;
        HbtResult hbt = simulate_hbt(hs, ho);
        TemporalFilterData data = build_filter_data(ptrs, hbt, 10.0);
        return optimize_temporal_window(data, op, FilterObjective{});
    };
    OperatingPoint base = baseline_op();
    FilterResult b = run_filter(base, 200'000'000, 5000);
    OperatingPoint dark = base;
    dark.link.dark_count_prob = 5e-6;  // dark counts dominate the window tail
    FilterResult d = run_filter(dark, 200'000'000, 6000);
    double sb0 = b.unfiltered.report.skb_per_pulse, sb1 = b.best.report.skb_per_pulse;
    double sd0 = d.unfiltered.report.skb_per_pulse, sd1 = d.best.report.skb_per_pulse;
    bool ok = sb1 >= sb0 && sd1 > sd0;
    return {ok, fmt("deployed setting %.3e -> %.3e; dark-dominated %.3e -> %.3e (window [%.0f, +%.0f] ps)", sb0, sb1,
                    sd0, sd1, d.best.window.start_ps, d.best.window.width_ps)};
}

Outcome polarization() {
    const double floor = *qber_total(baseline_op());
    const int seeds = 100;
    double worst = -1.0;
    int max_probes = 0;
    bool monotone = true;
    for (int s = 1; s <= seeds; ++s) {
        PolarizationDrift d = random_drift(static_cast<std::uint64_t>(s));
        auto probe = [&](const CompensatorState& c) { return measured_qber(d, c, floor); };
        CompensationResult r = compensate(CompensatorState{}, probe, 200);
        worst = std::max(worst, measured_qber(d, r.state, floor) - floor);
        max_probes = std::max(max_probes, r.probes_used);
        for (std::size_t i = 1; i < r.accepted_qber.size(); ++i)
            monotone &= r.accepted_qber[i] <= r.accepted_qber[i - 1];
    }
    bool ok = worst <= 1e-4 && max_probes <= 200 && monotone;
    return {ok, fmt("%d seeds, worst residual - e_tot = %.2e (<= 1e-4), max probes %d, accepted steps %s", seeds,
                    worst, max_probes, monotone ? "monotone" : "NOT monotone")};
}

}  // namespace

int main() {
    criterion("MTL reproduction", 10, mtl_reproduction);
    criterion("Operating-point rate", 1, operating_point_rate);
    criterion("QBER envelope", 1, qber_envelope);
    criterion("Clock-rate trends", 5, clock_rate_trends);
    criterion("Statistical-bound soundness", 60, statistical_bounds);
    criterion("Analytic-Monte Carlo consistency", 300, analytic_mc);
    criterion("Post-processing round trips", 300, post_processing);
    criterion("Key-session integrity", 600, session_integrity);
    criterion("Temporal-filter contract", 600, temporal_filter);
    criterion("Polarization compensation", 600, polarization);
    std::printf("%d of 10 criteria failed\n", failures);
    return failures;
}
