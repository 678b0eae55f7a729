#include "qkd/montecarlo.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "qkd/parallel.hpp"

namespace qkd {

namespace {

constexpr std::uint64_t kChunkPulses = 1ull << 22;
constexpr std::uint64_t kAliceSalt = 0x616c696365ULL;
constexpr std::uint64_t kChunkSalt = 0x6368756e6bULL;
constexpr std::uint64_t kHbtSalt = 0x686274ULL;

// Per-pulse photon statistics after loss, shared by the BB84 and HBT chains.
struct Emission {
    double period_ps = 0.0;
    double lifetime_ps = 0.0;
    double capture = 1.0;  // P(emission delay < period) when truncated
    bool truncated = false;
    double offset_ps = 0.0;
    double jitter_ps = 0.0;
    std::array<double, 3> p{};          // emitted photon number
    double eta = 0.0;                   // per-photon survival to a click
    std::array<double, 3> survivors{};  // photons reaching a detector

    double delay(rng::Xoshiro256& g) const {
        double u = g.uniform();
        double e = truncated ? -lifetime_ps * std::log1p(-u * capture) : -lifetime_ps * std::log1p(-u);
        double t = offset_ps + e;
        if (jitter_ps > 0.0) t += jitter_ps * g.normal();
        return t;
    }

    // photons emitted by a pulse, given how many survived
    int emitted(int surv, rng::Xoshiro256& g) const {
        if (surv == 2) return 2;
        double lost = 1.0 - eta;
        if (surv == 1) {
            double one = p[1] * eta;
            double two = p[2] * 2.0 * eta * lost;
            return g.uniform() * (one + two) < one ? 1 : 2;
        }
        double w0 = p[0], w1 = p[1] * lost, w2 = p[2] * lost * lost;
        double u = g.uniform() * (w0 + w1 + w2);
        return u < w0 ? 0 : (u < w0 + w1 ? 1 : 2);
    }
};

Emission make_emission(const OperatingPoint& op, double jitter_ps) {
    const SourceModel& s = op.source;
    Emission e;
    e.period_ps = op.protocol.period_ps();
    e.lifetime_ps = s.lifetime_ps;
    e.truncated = op.options.lifetime_limited_emission;
    e.offset_ps = op.link.arrival_offset_ps;
    e.jitter_ps = jitter_ps;
    double n = s.mean_photon_number * s.pre_attenuation;
    if (e.truncated) {
        e.capture = emission_capture_fraction(s.lifetime_ps, e.period_ps);
        n /= emission_capture_fraction(s.lifetime_ps, 1e12 / s.reference_rate_hz);
    }
    e.p[2] = s.g2_zero * n * n / 2.0;
    e.p[1] = n - 2.0 * e.p[2];
    e.p[0] = 1.0 - e.p[1] - e.p[2];
    if (e.p[1] < 0.0 || e.p[0] < 0.0)
        throw ValidationError("source.g2_zero", "photon-number distribution is invalid (g2 <n> > 1)");
    e.eta = op.link.system_efficiency() * e.capture;
    double l = 1.0 - e.eta;
    e.survivors[1] = e.p[1] * e.eta + e.p[2] * 2.0 * e.eta * l;
    e.survivors[2] = e.p[2] * e.eta * e.eta;
    e.survivors[0] = 1.0 - e.survivors[1] - e.survivors[2];
    return e;
}

// Joint (survivors, dark mask) outcome of a pulse, conditioned on at least one event.
struct OutcomeTable {
    std::vector<double> cdf;
    std::vector<std::pair<int, unsigned>> outcome;
    double log_null = 0.0;  // log P(nothing happens)
    bool never = false;

    OutcomeTable(const Emission& e, double p_dark, int detectors) {
        double any_photon = e.survivors[1] + e.survivors[2];
        log_null = std::log1p(-any_photon) + detectors * std::log1p(-p_dark);
        double p_event = -std::expm1(log_null);
        never = !(p_event > 0.0);
        if (never) return;
        double acc = 0.0;
        unsigned masks = 1u << detectors;
        for (int s = 0; s < 3; ++s)
            for (unsigned m = 0; m < masks; ++m) {
                if (s == 0 && m == 0) continue;
                double pm = 1.0;
                for (int d = 0; d < detectors; ++d) pm *= (m >> d & 1u) ? p_dark : 1.0 - p_dark;
                double w = e.survivors[s] * pm;
                if (w <= 0.0) continue;
                acc += w;
                cdf.push_back(acc);
                outcome.emplace_back(s, m);
            }
        for (double& c : cdf) c /= acc;
        cdf.back() = 1.0;
    }

    std::pair<int, unsigned> draw(rng::Xoshiro256& g) const {
        double u = g.uniform();
        auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        if (it == cdf.end()) --it;
        return outcome[static_cast<std::size_t>(it - cdf.begin())];
    }
};

void check_time_range(std::uint64_t n_pulses, double period_ps) {
    double span = (static_cast<double>(n_pulses) + 16.0) * period_ps;
    if (!(span < 9.0e18)) throw ValidationError("n_pulses", "run length overflows 64-bit picoseconds");
}

std::int64_t to_ps(double t) { return static_cast<std::int64_t>(std::llround(t)); }

// Keeps clicks separated by at least dead_ps on each channel.
std::uint64_t apply_dead_time(std::vector<TimeTag>& tags, std::int64_t dead_ps) {
    std::array<std::int64_t, 5> last;
    last.fill(std::numeric_limits<std::int64_t>::min());
    std::size_t out = 0;
    std::uint64_t dropped = 0;
    for (std::size_t i = 0; i < tags.size(); ++i) {
        auto ch = static_cast<std::size_t>(tags[i].channel);
        if (last[ch] != std::numeric_limits<std::int64_t>::min() && tags[i].time_ps - last[ch] < dead_ps) {
            ++dropped;
            continue;
        }
        last[ch] = tags[i].time_ps;
        tags[out++] = tags[i];
    }
    tags.resize(out);
    return dropped;
}

void sort_tags(std::vector<TimeTag>& tags) {
    std::stable_sort(tags.begin(), tags.end(), [](const TimeTag& a, const TimeTag& b) {
        if (a.time_ps != b.time_ps) return a.time_ps < b.time_ps;
        return a.channel < b.channel;
    });
}

}  // namespace

State AliceRecord::state(std::uint64_t pulse) const {
    if (fixed_) return *fixed_;
    std::uint64_t w = rng::hash2(seed_, pulse);
    Basis b = rng::to_unit(w) < basis_bias_ ? Basis::X : Basis::Z;
    return state_of(b, static_cast<int>(w & 1u));
}

std::vector<State> AliceRecord::materialize(std::uint64_t n_pulses) const {
    std::vector<State> out(n_pulses);
    for (std::uint64_t i = 0; i < n_pulses; ++i) out[i] = state(i);
    return out;
}

void Scenario::validate() const {
    op.validate();
    if (n_pulses < 1) throw ValidationError("simulation.n_pulses", "must be >= 1");
    if (!(jitter() >= 0.0)) throw ValidationError("simulation.jitter_sigma_ps", "must be >= 0");
    if (op.link.detector_count != 4)
        throw ValidationError("link.detector_count", "the BB84 receiver has exactly 4 detectors");
    check_time_range(n_pulses, op.protocol.period_ps());
}

int sample_photon_number(const SourceModel& source, rng::Xoshiro256& g) {
    double n = source.mean_photon_number * source.pre_attenuation;
    double p2 = source.g2_zero * n * n / 2.0;
    double p1 = n - 2.0 * p2;
    if (p1 < 0.0) throw ValidationError("source.g2_zero", "photon-number distribution is invalid");
    double u = g.uniform();
    return u < p2 ? 2 : (u < p2 + p1 ? 1 : 0);
}

SimulationResult simulate_run(const Scenario& sc) {
    sc.validate();
    const OperatingPoint& op = sc.op;
    const Emission em = make_emission(op, sc.jitter());
    const double p_dark = scaled_dark_count_prob(op.link, op.protocol.clock_rate_hz);
    const OutcomeTable table(em, p_dark, 4);
    const double px = op.protocol.basis_bias;
    const double p_mis = op.link.misalignment_prob;
    const double T = em.period_ps;

    SimulationResult result;
    result.alice = AliceRecord(rng::hash2(sc.seed, kAliceSalt), px, sc.static_state);
    const AliceRecord& alice = result.alice;

    // P(port bit 0 | prepared state, Bob basis)
    double prob0[4][2];
    Jones u = sc.drift ? sc.drift->jones() : Jones::Identity();
    for (int s = 0; s < 4; ++s)
        for (int b = 0; b < 2; ++b) {
            State zero = state_of(static_cast<Basis>(b), 0);
            prob0[s][b] = transition_probability(u, static_cast<State>(s), zero);
        }

    std::uint64_t n_chunks = (sc.n_pulses + kChunkPulses - 1) / kChunkPulses;
    std::vector<std::vector<TimeTag>> parts(n_chunks);
    std::vector<std::uint64_t> darks(n_chunks, 0);

    if (!table.never) {
        parallel_for(n_chunks, sc.threads, [&](std::size_t c) {
            rng::Xoshiro256 g(rng::hash3(sc.seed, kChunkSalt, c));
            std::uint64_t begin = c * kChunkPulses;
            std::uint64_t end = std::min(sc.n_pulses, begin + kChunkPulses);
            auto& out = parts[c];
            std::uint64_t i = begin;
            bool first = true;
            for (;;) {
                std::uint64_t gap = g.geometric_log(table.log_null);
                if (gap >= end - i) break;
                i += first ? gap : gap + 1;
                first = false;
                if (i >= end) break;

                auto [surv, mask] = table.draw(g);
                State st = alice.state(i);
                int photons = em.emitted(surv, g);
                std::uint8_t truth = TimeTag::pack(st, photons, false);
                double start = static_cast<double>(i) * T;

                // coincident photons collapse onto the first-arriving detector
                double best_t = std::numeric_limits<double>::infinity();
                Channel best_ch = Channel::H;
                for (int k = 0; k < surv; ++k) {
                    int b = g.uniform() < px ? 1 : 0;
                    int bit = g.uniform() < prob0[index_of(st)][b] ? 0 : 1;
                    if (g.uniform() < p_mis) bit ^= 1;
                    double t = em.delay(g);
                    if (t < best_t) {
                        best_t = t;
                        best_ch = channel_of(state_of(static_cast<Basis>(b), bit));
                    }
                }
                if (surv > 0) out.push_back({to_ps(start + best_t), i, best_ch, truth});
                for (int d = 0; d < 4; ++d) {
                    if (!(mask >> d & 1u)) continue;
                    double t = g.uniform() * T;
                    out.push_back({to_ps(start + t), i, static_cast<Channel>(d),
                                   static_cast<std::uint8_t>(truth | TimeTag::kDark)});
                    ++darks[c];
                }
                if (i + 1 >= end) break;
            }
        });
    }

    std::vector<TimeTag>& tags = result.stream.tags;
    std::size_t total = 0;
    for (auto& p : parts) total += p.size();
    tags.reserve(total);
    for (auto& p : parts) {
        tags.insert(tags.end(), p.begin(), p.end());
        std::vector<TimeTag>().swap(p);
    }
    sort_tags(tags);
    result.stats.candidate_clicks = tags.size();
    for (auto d : darks) result.stats.dark_clicks += d;
    result.stats.dead_time_losses = apply_dead_time(tags, to_ps(op.link.dead_time_ns * 1e3));

    if (sc.emit_reference) {
        std::vector<TimeTag> refs;
        refs.reserve(sc.n_pulses);
        for (std::uint64_t i = 0; i < sc.n_pulses; ++i)
            refs.push_back({to_ps(static_cast<double>(i) * T), i, Channel::reference, 0});
        std::vector<TimeTag> merged;
        merged.reserve(refs.size() + tags.size());
        std::merge(refs.begin(), refs.end(), tags.begin(), tags.end(), std::back_inserter(merged),
                   [](const TimeTag& a, const TimeTag& b) { return a.time_ps < b.time_ps; });
        tags.swap(merged);
    }
    result.stream.period_ps = T;
    result.stream.n_pulses = sc.n_pulses;
    return result;
}

HbtResult simulate_hbt(const Scenario& sc, const HbtOptions& options) {
    sc.validate();
    if (!(options.bin_width_ps > 0.0)) throw ValidationError("bin_width_ps", "must be positive");
    if (options.side_peaks < 1) throw ValidationError("side_peaks", "must be >= 1");
    const OperatingPoint& op = sc.op;
    const Emission em = make_emission(op, sc.jitter());
    const double p_dark = scaled_dark_count_prob(op.link, op.protocol.clock_rate_hz);
    const OutcomeTable table(em, p_dark, 2);
    const double T = em.period_ps;

    std::uint64_t n_chunks = (sc.n_pulses + kChunkPulses - 1) / kChunkPulses;
    std::vector<std::vector<TimeTag>> parts(n_chunks);
    if (!table.never) {
        parallel_for(n_chunks, sc.threads, [&](std::size_t c) {
            rng::Xoshiro256 g(rng::hash3(sc.seed, kHbtSalt, c));
            std::uint64_t begin = c * kChunkPulses;
            std::uint64_t end = std::min(sc.n_pulses, begin + kChunkPulses);
            std::uint64_t i = begin;
            bool first = true;
            for (;;) {
                std::uint64_t gap = g.geometric_log(table.log_null);
                if (gap >= end - i) break;
                i += first ? gap : gap + 1;
                first = false;
                if (i >= end) break;
                auto [surv, mask] = table.draw(g);
                double start = static_cast<double>(i) * T;
                double first_t[2] = {std::numeric_limits<double>::infinity(),
                                     std::numeric_limits<double>::infinity()};
                for (int k = 0; k < surv; ++k) {
                    int d = g.uniform() < 0.5 ? 0 : 1;
                    first_t[d] = std::min(first_t[d], em.delay(g));
                }
                for (int d = 0; d < 2; ++d) {
                    if (mask >> d & 1u) first_t[d] = std::min(first_t[d], g.uniform() * T);
                    if (std::isfinite(first_t[d]))
                        parts[c].push_back({to_ps(start + first_t[d]), i, static_cast<Channel>(d), 0});
                }
                if (i + 1 >= end) break;
            }
        });
    }
    std::vector<TimeTag> tags;
    for (auto& p : parts) tags.insert(tags.end(), p.begin(), p.end());
    sort_tags(tags);
    apply_dead_time(tags, to_ps(op.link.dead_time_ns * 1e3));

    std::vector<std::int64_t> ta, tb;
    for (const auto& t : tags) (t.channel == Channel::H ? ta : tb).push_back(t.time_ps);

    HbtResult r;
    r.period_ps = T;
    r.side_peaks = options.side_peaks;
    r.clicks_a = ta.size();
    r.clicks_b = tb.size();
    const double range = (options.side_peaks + 0.5) * T;
    auto& h = r.histogram;
    h.bin_width_ps = options.bin_width_ps;
    h.origin_ps = -range;
    h.period_ps = T;
    h.counts.assign(static_cast<std::size_t>(std::ceil(2.0 * range / options.bin_width_ps)), 0);

    if (options.phase_matrix) {
        r.phase_bins = static_cast<std::size_t>(std::ceil(T / options.phase_bin_ps));
        r.central.assign(r.phase_bins * r.phase_bins, 0.0);
        r.side.assign(r.phase_bins * r.phase_bins, 0.0);
    }
    auto phase_of = [&](std::int64_t t, std::int64_t& pulse) {
        double x = static_cast<double>(t);
        double k = std::floor(x / T);
        pulse = static_cast<std::int64_t>(k);
        auto bin = static_cast<std::size_t>((x - k * T) / options.phase_bin_ps);
        return std::min(bin, r.phase_bins - 1);
    };

    std::size_t lo = 0;
    for (std::int64_t a : ta) {
        while (lo < tb.size() && static_cast<double>(tb[lo] - a) < -range) ++lo;
        for (std::size_t j = lo; j < tb.size(); ++j) {
            double d = static_cast<double>(tb[j] - a);
            if (d >= range) break;
            auto bin = static_cast<std::size_t>((d + range) / options.bin_width_ps);
            if (bin < h.counts.size()) ++h.counts[bin];
            if (options.phase_matrix) {
                std::int64_t pa, pb;
                std::size_t ba = phase_of(a, pa), bb = phase_of(tb[j], pb);
                std::int64_t dj = pb - pa;
                if (dj == 0)
                    r.central[ba * r.phase_bins + bb] += 1.0;
                else if (std::abs(dj) <= options.side_peaks)
                    r.side[ba * r.phase_bins + bb] += 1.0;
            }
        }
    }
    return r;
}

CorrelationHistogram simulate_g2_histogram(const Scenario& scenario, double bin_width_ps) {
    HbtOptions o;
    o.bin_width_ps = bin_width_ps;
    return simulate_hbt(scenario, o).histogram;
}

}  // namespace qkd
