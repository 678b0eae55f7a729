#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "qkd/bb84.hpp"
#include "qkd/keyrate.hpp"
#include "qkd/polcomp.hpp"
#include "qkd/rng.hpp"
#include "qkd/tagio.hpp"

namespace qkd {

// Alice's preparation, regenerated on demand from (seed, pulse index).
class AliceRecord {
public:
    AliceRecord() = default;
    AliceRecord(std::uint64_t seed, double basis_bias, std::optional<State> fixed = std::nullopt)
        : seed_(seed), basis_bias_(basis_bias), fixed_(fixed) {}

    State state(std::uint64_t pulse) const;
    Basis basis(std::uint64_t pulse) const { return basis_of(state(pulse)); }
    int bit(std::uint64_t pulse) const { return bit_of(state(pulse)); }
    std::vector<State> materialize(std::uint64_t n_pulses) const;

    std::uint64_t seed() const { return seed_; }
    double basis_bias() const { return basis_bias_; }
    std::optional<State> fixed_state() const { return fixed_; }

private:
    std::uint64_t seed_ = 0;
    double basis_bias_ = 0.5;
    std::optional<State> fixed_;
};

struct Scenario {
    OperatingPoint op;
    std::optional<double> jitter_sigma_ps;  // defaults to op.link.jitter_ps
    std::optional<PolarizationDrift> drift;
    std::uint64_t n_pulses = 1'000'000;
    std::uint64_t seed = 1;
    bool emit_reference = false;
    std::optional<State> static_state;  // truth-table runs encode one state
    int threads = 0;

    double jitter() const { return jitter_sigma_ps ? *jitter_sigma_ps : op.link.jitter_ps; }
    void validate() const;
};

struct SimulationStats {
    std::uint64_t candidate_clicks = 0;
    std::uint64_t dead_time_losses = 0;
    std::uint64_t dark_clicks = 0;
};

struct SimulationResult {
    AliceRecord alice;
    TimeTagStream stream;
    SimulationStats stats;
};

// P(2) = g2 n^2 / 2, P(1) = n - 2 P(2), with n = <n> * pre_attenuation
int sample_photon_number(const SourceModel& source, rng::Xoshiro256& g);

SimulationResult simulate_run(const Scenario& scenario);

struct HbtOptions {
    double bin_width_ps = 10.0;
    int side_peaks = 5;         // histogram spans +-(side_peaks + 1/2) periods
    bool phase_matrix = false;  // also accumulate the 2D arrival-phase matrices
    double phase_bin_ps = 10.0;
};

struct HbtResult {
    CorrelationHistogram histogram;  // delay = t_B - t_A
    double period_ps = 0.0;
    // phase_bins x phase_bins, [phase_A * bins + phase_B]
    std::size_t phase_bins = 0;
    std::vector<double> central;
    std::vector<double> side;
    int side_peaks = 0;
    std::uint64_t clicks_a = 0;
    std::uint64_t clicks_b = 0;
};

// 50:50 beam splitter onto two detectors placed after the scenario's link.
HbtResult simulate_hbt(const Scenario& scenario, const HbtOptions& options);
CorrelationHistogram simulate_g2_histogram(const Scenario& scenario, double bin_width_ps);

}  // namespace qkd
