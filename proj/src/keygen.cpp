#include "qkd/keygen.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "json.hpp"
#include "qkd/rng.hpp"

namespace qkd {

namespace {

constexpr std::uint64_t kSampleSalt = 0x73616d706c65ULL;
constexpr std::uint64_t kCascadeSalt = 0x63617363ULL;
constexpr std::uint64_t kVerifySalt = 0x766572ULL;
constexpr std::uint64_t kPaSalt = 0x7061ULL;

}  // namespace

SiftResult sift(const AliceRecord& alice, const TimeTagStream& detections, const KeyWindow& window,
                std::uint64_t run_id) {
    const double T = detections.period_ps;
    if (!(T > 0.0)) throw ValidationError("period_ps", "sifting needs the clock period");
    SiftResult r;
    r.z.alice.basis = r.z.bob.basis = Basis::Z;
    r.x.alice.basis = r.x.bob.basis = Basis::X;
    for (SiftedKey* k : {&r.z.alice, &r.z.bob, &r.x.alice, &r.x.bob}) k->run_id = run_id;

    bool any = false;
    std::uint64_t last = 0;
    for (const auto& t : detections.tags) {
        if (!is_detector(t.channel) || t.time_ps < 0) continue;
        double time = static_cast<double>(t.time_ps);
        double k = std::floor(time / T);
        if (!window.contains(time - k * T)) {
            ++r.outside_window;
            continue;
        }
        auto pulse = static_cast<std::uint64_t>(k);
        if (any && pulse == last) {
            ++r.extra_detections;
            continue;
        }
        any = true;
        last = pulse;
        ++r.detected_pulses;
        State a = alice.state(pulse);
        State b = port_state(t.channel);
        if (basis_of(a) != basis_of(b)) {
            ++r.basis_mismatch;
            continue;
        }
        SiftedPair& p = basis_of(a) == Basis::Z ? r.z : r.x;
        p.alice.bits.push_back(bit_of(a));
        p.alice.pulses.push_back(pulse);
        p.bob.bits.push_back(bit_of(b));
        p.bob.pulses.push_back(pulse);
    }
    return r;
}

ErrorEstimate estimate_error_rate(SiftedPair& pair, double disclose_fraction, std::uint64_t seed) {
    if (!(disclose_fraction > 0.0 && disclose_fraction < 1.0))
        throw ValidationError("disclose_fraction", "must lie in (0, 1)");
    const std::size_t n = pair.alice.bits.size();
    if (pair.bob.bits.size() != n) throw ValidationError("keys", "Alice and Bob keys differ in length");
    auto k = static_cast<std::size_t>(std::llround(disclose_fraction * static_cast<double>(n)));
    if (k == 0) throw InsufficientStatisticsError("disclosed sample would be empty");

    // partial Fisher-Yates picks k distinct positions
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng::Xoshiro256 g(seed);
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + g.below(n - i)]);
    std::vector<bool> chosen(n, false);
    for (std::size_t i = 0; i < k; ++i) chosen[idx[i]] = true;

    ErrorEstimate e;
    e.disclosed = k;
    SiftedPair rest;
    rest.alice.basis = pair.alice.basis;
    rest.bob.basis = pair.bob.basis;
    rest.alice.run_id = pair.alice.run_id;
    rest.bob.run_id = pair.bob.run_id;
    for (std::size_t i = 0; i < n; ++i) {
        bool a = pair.alice.bits.get(i), b = pair.bob.bits.get(i);
        if (chosen[i]) {
            e.errors += a != b;
            continue;
        }
        rest.alice.bits.push_back(a);
        rest.bob.bits.push_back(b);
        if (i < pair.alice.pulses.size()) rest.alice.pulses.push_back(pair.alice.pulses[i]);
        if (i < pair.bob.pulses.size()) rest.bob.pulses.push_back(pair.bob.pulses[i]);
    }
    e.error_rate = static_cast<double>(e.errors) / static_cast<double>(k);
    pair = std::move(rest);
    return e;
}

namespace {

class Cascade {
public:
    Cascade(const BitString& alice, const BitString& bob) : a_(alice), b_(bob), n_(alice.size()) {}

    // returns the number of blocks that were odd when the pass started
    std::size_t pass(std::size_t block, std::uint64_t shuffle_seed, bool identity) {
        std::vector<std::uint32_t> perm(n_);
        std::iota(perm.begin(), perm.end(), 0u);
        if (!identity) {
            rng::Xoshiro256 g(shuffle_seed);
            rng::shuffle(perm.begin(), perm.end(), g);
        }
        std::vector<std::uint32_t> where(n_);
        for (std::uint32_t i = 0; i < n_; ++i) where[perm[i]] = i;
        std::size_t blocks = (n_ + block - 1) / block;
        std::vector<std::uint8_t> ap(blocks), bp(blocks);
        for (std::size_t k = 0; k < blocks; ++k) {
            std::size_t lo = k * block, hi = std::min(n_, lo + block);
            ap[k] = range_parity(a_, perm, lo, hi);
            bp[k] = range_parity(b_, perm, lo, hi);
        }
        leaked_ += blocks;
        messages_.push_back(blocks);
        perms_.push_back(std::move(perm));
        wheres_.push_back(std::move(where));
        sizes_.push_back(block);
        apar_.push_back(std::move(ap));
        bpar_.push_back(std::move(bp));

        std::size_t p = perms_.size() - 1;
        std::deque<std::pair<std::size_t, std::size_t>> queue;
        std::size_t odd = 0;
        for (std::size_t k = 0; k < blocks; ++k)
            if (apar_[p][k] != bpar_[p][k]) {
                queue.emplace_back(p, k);
                ++odd;
            }
        while (!queue.empty()) {
            auto [q, k] = queue.front();
            queue.pop_front();
            if (apar_[q][k] == bpar_[q][k]) continue;
            correct(q, k, queue);
        }
        return odd;
    }

    BitString take() { return std::move(b_); }
    std::size_t leaked() const { return leaked_; }
    std::size_t corrected() const { return corrected_; }
    std::vector<std::size_t>& messages() { return messages_; }

private:
    static std::uint8_t range_parity(const BitString& s, const std::vector<std::uint32_t>& perm, std::size_t lo,
                                     std::size_t hi) {
        std::uint8_t p = 0;
        for (std::size_t i = lo; i < hi; ++i) p ^= static_cast<std::uint8_t>(s.get(perm[i]));
        return p;
    }

    void correct(std::size_t q, std::size_t k, std::deque<std::pair<std::size_t, std::size_t>>& queue) {
        const auto& perm = perms_[q];
        std::size_t lo = k * sizes_[q], hi = std::min(n_, lo + sizes_[q]);
        while (hi - lo > 1) {
            std::size_t mid = lo + (hi - lo) / 2;
            ++leaked_;
            ++messages_.back();
            if (range_parity(a_, perm, lo, mid) != range_parity(b_, perm, lo, mid))
                hi = mid;
            else
                lo = mid;
        }
        std::uint32_t bit = perm[lo];
        b_.flip(bit);
        ++corrected_;
        for (std::size_t r = 0; r < perms_.size(); ++r) {
            std::size_t blk = wheres_[r][bit] / sizes_[r];
            bpar_[r][blk] ^= 1u;
            if (r != q && apar_[r][blk] != bpar_[r][blk]) queue.emplace_back(r, blk);
        }
    }

    const BitString& a_;
    BitString b_;
    std::size_t n_;
    std::size_t leaked_ = 0;
    std::size_t corrected_ = 0;
    std::vector<std::size_t> messages_;
    std::vector<std::vector<std::uint32_t>> perms_, wheres_;
    std::vector<std::size_t> sizes_;
    std::vector<std::vector<std::uint8_t>> apar_, bpar_;
};

}  // namespace

CascadeResult reconcile(const BitString& alice, const BitString& bob, double qber_estimate, std::uint64_t seed,
                        const CascadeOptions& options) {
    if (alice.size() != bob.size()) throw ValidationError("keys", "Alice and Bob keys differ in length");
    if (alice.size() > 0xffffffffULL) throw ValidationError("keys", "key too long for reconciliation");
    CascadeResult r;
    const std::size_t n = alice.size();
    if (n == 0) return r;
    double e = std::max(qber_estimate, options.qber_floor);
    auto k1 = static_cast<std::size_t>(std::ceil(options.first_block_factor / e));
    k1 = std::clamp<std::size_t>(k1, 2, std::max<std::size_t>(2, n));

    Cascade c(alice, bob);
    std::size_t block = k1;
    for (int pass = 0;; ++pass) {
        std::size_t odd = c.pass(block, rng::hash2(seed, static_cast<std::uint64_t>(pass)), pass == 0);
        r.passes = pass + 1;
        if (odd == 0 && (pass == 0 || r.passes >= options.min_passes)) break;
        if (r.passes >= options.max_passes)
            throw ReconciliationError("Cascade still finds odd-parity blocks after the pass cap");
        block = std::min(n, 2 * block);
    }
    r.leaked_bits = c.leaked();
    r.corrected_errors = c.corrected();
    r.messages = c.messages();
    r.corrected = c.take();
    return r;
}

int verification_tag_bits(double eps_cor) {
    if (!(eps_cor > 0.0 && eps_cor < 1.0)) throw ValidationError("eps_cor", "must lie in (0, 1)");
    return static_cast<int>(std::ceil(std::log2(2.0 / eps_cor) - 1e-12));
}

BitString toeplitz_hash(const BitString& key, std::size_t out_bits, std::uint64_t seed) {
    BitString out(out_bits);
    if (out_bits == 0) return out;
    const std::size_t n = key.size();
    // T[i][j] = s[i + n - 1 - j], so out_i = <s[i, i + n), reverse(key)>
    BitString s = stream_bits(seed, n + out_bits - 1);
    BitString rev = key.reversed();
    for (std::size_t i = 0; i < out_bits; ++i)
        if (s.dot_at(rev, i)) out.set(i, true);
    return out;
}

bool verify(const BitString& alice, const BitString& bob, double eps_cor, std::uint64_t seed) {
    if (alice.size() != bob.size()) throw ValidationError("keys", "Alice and Bob keys differ in length");
    auto t = static_cast<std::size_t>(verification_tag_bits(eps_cor));
    return toeplitz_hash(alice, t, seed) == toeplitz_hash(bob, t, seed);
}

BitString privacy_amplify(const BitString& key, std::size_t final_length, std::uint64_t seed) {
    if (final_length > key.size())
        throw ValidationError("final_length", "exceeds the reconciled key length");
    return toeplitz_hash(key, final_length, seed);
}

bool KeySessionLedger::conserved() const {
    if (detected_pulses != sifted_z + sifted_x + basis_mismatch) return false;
    if (key_bits + disclosed != sifted_z + sifted_x) return false;
    if (aborted() && final_length != 0) return false;
    if (!aborted() && key_bits != leaked_bits + verification_bits + pa_shortening + final_length) return false;
    return true;
}

std::uint64_t pulses_for_block(const OperatingPoint& op, double block_size) {
    if (!(block_size >= 1.0)) throw ValidationError("block_size", "must be >= 1");
    double pz = 1.0 - op.protocol.basis_bias;
    double pc = click_probability(op);
    if (!(pc > 0.0)) throw ValidationError("block_size", "no clicks at this operating point");
    double n = std::ceil(block_size / (pc * pz * pz));
    if (!(n < 9.0e18)) throw ValidationError("block_size", "pulse count overflows");
    return static_cast<std::uint64_t>(n);
}

SessionResult run_session(const Scenario& scenario_in, const KeyPolicy& policy) {
    Scenario sc = scenario_in;
    if (policy.block_size) sc.n_pulses = pulses_for_block(sc.op, *policy.block_size);
    sc.emit_reference = false;
    sc.static_state.reset();
    sc.validate();
    if (!(policy.disclose_fraction > 0.0 && policy.disclose_fraction < 1.0))
        throw ValidationError("policy.disclose_fraction", "must lie in (0, 1)");

    SessionResult out;
    KeySessionLedger& L = out.ledger;
    auto& log = out.transcript;
    L.seeds = {sc.seed, rng::hash2(sc.seed, kSampleSalt), rng::hash2(sc.seed, kCascadeSalt),
               rng::hash2(sc.seed, kVerifySalt), rng::hash2(sc.seed, kPaSalt)};
    L.n_pulses = sc.n_pulses;
    L.acquisition_time_s = static_cast<double>(sc.n_pulses) / sc.op.protocol.clock_rate_hz;
    auto abort = [&](const char* stage, const std::string& why) {
        L.abort_stage = stage;
        L.abort_reason = why;
        L.final_length = 0;
        L.secret_fraction = 0.0;
        out.alice_key = BitString();
        out.bob_key = BitString();
        return out;
    };

    SimulationResult sim;
    try {
        sim = simulate_run(sc);
    } catch (const ValidationError&) {
        throw;
    } catch (const std::exception& e) {
        throw SessionError("simulation", e.what());
    }

    SiftResult s = sift(sim.alice, sim.stream, policy.window, sc.seed);
    L.detected_pulses = s.detected_pulses;
    L.basis_mismatch = s.basis_mismatch;
    L.sifted_z = s.z.alice.bits.size();
    L.sifted_x = s.x.alice.bits.size();
    log.push_back({"sifting", "bob", "detected pulse indices and bases", 2 * s.detected_pulses});
    log.push_back({"sifting", "alice", "basis match flags", s.detected_pulses});

    // parameter estimation: a sample of the X key is disclosed
    ErrorEstimate est;
    try {
        est = estimate_error_rate(s.x, policy.disclose_fraction, L.seeds.sampling);
    } catch (const InsufficientStatisticsError& e) {
        L.key_bits = L.sifted_z + L.sifted_x;
        return abort("parameter_estimation", e.what());
    }
    L.disclosed = est.disclosed;
    L.disclosed_errors = est.errors;
    L.qber_estimate = est.error_rate;
    log.push_back({"parameter_estimation", "alice", "sample positions and bits", 2 * est.disclosed});
    log.push_back({"parameter_estimation", "bob", "sample bits", est.disclosed});

    BitString ka = s.z.alice.bits, kb = s.z.bob.bits;
    for (std::size_t i = 0; i < s.x.alice.bits.size(); ++i) {
        ka.push_back(s.x.alice.bits.get(i));
        kb.push_back(s.x.bob.bits.get(i));
    }
    L.key_bits = ka.size();
    L.actual_errors = ka.hamming(kb);

    FiniteBlockInput in;
    in.n_x = static_cast<double>(L.sifted_x);
    in.n_z = static_cast<double>(L.sifted_z);
    in.e_x = est.error_rate;
    in.e_z = est.error_rate;
    in.n_sent = static_cast<double>(sc.n_pulses);
    in.budget = sc.op.budget;
    in.f_ec = sc.op.protocol.error_correction_inefficiency;
    in.clock_rate_hz = sc.op.protocol.clock_rate_hz;
    in.acquisition_time_s = L.acquisition_time_s;
    in.p_m = multiphoton_bound(sc.op);
    in.basis_bias = sc.op.protocol.basis_bias;
    in.sample_size = static_cast<double>(est.disclosed);
    if (sc.op.options.phase_error == PhaseErrorModel::vacuum_aware) {
        double px = sc.op.protocol.basis_bias;
        double window = policy.window.full() ? 1.0 : std::min(1.0, policy.window.width_ps / sc.op.protocol.period_ps());
        in.vacuum_errors_x = rate_inputs(sc.op).vacuum_errors * in.n_sent * px * px * window;
    }
    if (in.n_z < 1.0 || in.key_bits() < 1.0) return abort("parameter_estimation", "sifted key is empty");

    // a positive key must be possible even with free reconciliation
    {
        FiniteBlockInput probe = in;
        probe.leakage_bits = 0.0;
        FiniteKeyReport pre = finite_skb_per_pulse(probe);
        if (pre.zero_key) {
            L.finite = pre;
            return abort("parameter_estimation", "finite-key bracket is not positive");
        }
    }

    CascadeResult cas;
    try {
        cas = reconcile(ka, kb, est.error_rate, L.seeds.cascade, policy.cascade);
    } catch (const ReconciliationError& e) {
        return abort("reconciliation", e.what());
    }
    L.leaked_bits = cas.leaked_bits;
    L.cascade_passes = cas.passes;
    for (std::size_t p = 0; p < cas.messages.size(); ++p)
        log.push_back({"reconciliation", "alice", "pass " + std::to_string(p + 1) + " parities", cas.messages[p]});
    log.push_back({"reconciliation", "bob", "block parities and search requests", cas.leaked_bits});

    L.verification_bits = static_cast<std::uint64_t>(verification_tag_bits(sc.op.budget.eps_cor));
    L.verified = verify(ka, cas.corrected, sc.op.budget.eps_cor, L.seeds.verification);
    log.push_back({"verification", "alice", "hash seed and tag", 64 + L.verification_bits});
    if (!L.verified) return abort("verification", "reconciled keys differ");

    in.leakage_bits = static_cast<double>(cas.leaked_bits);
    FiniteKeyReport rep = finite_skb_per_pulse(in);
    L.finite = rep;
    std::uint64_t budget = L.key_bits - std::min<std::uint64_t>(L.key_bits, L.leaked_bits + L.verification_bits);
    std::uint64_t ell = std::min<std::uint64_t>(rep.final_key_length, budget);
    if (ell == 0) return abort("privacy_amplification", "no secret bits remain after the finite-key bound");
    if (L.key_bits < L.leaked_bits + L.verification_bits + ell)
        throw SessionError("privacy_amplification", "ledger underflow");

    L.final_length = ell;
    L.pa_shortening = L.key_bits - L.leaked_bits - L.verification_bits - ell;
    L.secret_fraction = static_cast<double>(ell) / static_cast<double>(sc.n_pulses);
    log.push_back({"privacy_amplification", "alice", "Toeplitz seed", 64});
    out.alice_key = privacy_amplify(ka, ell, L.seeds.privacy_amplification);
    out.bob_key = privacy_amplify(cas.corrected, ell, L.seeds.privacy_amplification);
    return out;
}

std::string ledger_json(const KeySessionLedger& L) {
    nlohmann::ordered_json j;
    j["n_pulses"] = L.n_pulses;
    j["acquisition_time_s"] = L.acquisition_time_s;
    j["detected_pulses"] = L.detected_pulses;
    j["basis_mismatch"] = L.basis_mismatch;
    j["sifted_z"] = L.sifted_z;
    j["sifted_x"] = L.sifted_x;
    j["disclosed"] = L.disclosed;
    j["disclosed_errors"] = L.disclosed_errors;
    j["qber_estimate"] = L.qber_estimate;
    j["key_bits"] = L.key_bits;
    j["actual_errors"] = L.actual_errors;
    j["leaked_bits"] = L.leaked_bits;
    j["cascade_passes"] = L.cascade_passes;
    j["verification_bits"] = L.verification_bits;
    j["verified"] = L.verified;
    j["pa_shortening"] = L.pa_shortening;
    j["final_length"] = L.final_length;
    j["secret_fraction"] = L.secret_fraction;
    if (L.finite) {
        const auto& f = *L.finite;
        j["finite_key"] = {{"multiphoton_upper", f.multiphoton_upper},
                    {"n_nmp_lower", f.n_nmp_lower},
                    {"phase_error_upper", f.phase_error_upper},
                    {"lambda_ec", f.lambda_ec},
                    {"verification_bits", f.verification_bits},
                    {"pa_bits", f.pa_bits},
                    {"bracket_bits", f.bracket_bits},
                    {"skb_per_pulse", f.skb_per_pulse}};
    }
    j["abort_stage"] = L.abort_stage;
    j["abort_reason"] = L.abort_reason;
    j["conserved"] = L.conserved();
    j["seeds"] = {{"simulation", L.seeds.simulation},
                  {"sampling", L.seeds.sampling},
                  {"cascade", L.seeds.cascade},
                  {"verification", L.seeds.verification},
                  {"privacy_amplification", L.seeds.privacy_amplification}};
    return j.dump(2);
}

}  // namespace qkd
