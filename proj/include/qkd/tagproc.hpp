#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <stdexcept>
#include <vector>

#include "qkd/keyrate.hpp"
#include "qkd/montecarlo.hpp"
#include "qkd/tagio.hpp"
#include "qkd/timing.hpp"

namespace qkd {

class EmptyInputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InsufficientStatisticsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Acceptance window on the arrival phase, [start, start + width) within a period.
struct KeyWindow {
    double start_ps = 0.0;
    double width_ps = std::numeric_limits<double>::infinity();

    bool contains(double phase_ps) const { return phase_ps >= start_ps && phase_ps - start_ps < width_ps; }
    bool full() const { return start_ps <= 0.0 && !(width_ps < std::numeric_limits<double>::infinity()); }
};

double arrival_phase(std::int64_t time_ps, double period_ps);

// Signal time minus the latest reference tag at or before it.
CorrelationHistogram correlate(const TimeTagStream& stream, double bin_width_ps,
                               Channel reference = Channel::reference);
// Same, against the stream's nominal clock instead of reference tags.
CorrelationHistogram fold_to_clock(const TimeTagStream& stream, double bin_width_ps);

struct LifetimeFit {
    double lifetime_ps = 0.0;
    double sigma_ps = 0.0;
    std::uint64_t counts = 0;
};

// Binned maximum likelihood for an exponential truncated to [fit_start, fit_end).
LifetimeFit fit_lifetime(const CorrelationHistogram& h, double fit_start_ps, double fit_end_ps);

// Highest bin over the lowest 5-bin running mean; infinite when the valley is empty.
double peak_to_valley(const CorrelationHistogram& h);

struct G2Estimate {
    double value = 0.0;
    double sigma = 0.0;
    double central = 0.0;    // counts in the zero-delay period
    double side_mean = 0.0;  // mean counts per side period
    int side_peaks = 0;
};

// Central-peak area over mean side-peak area; peaks are whole periods
// centred on multiples of h.period_ps.
G2Estimate g2_zero(const CorrelationHistogram& h, int side_peaks = 0, double min_side_counts = 10.0);

// Undoes the leakage of peak tails into neighbouring periods, which
// inflates the raw ratio once the lifetime is a sizeable part of the period.
G2Estimate g2_zero_corrected(const CorrelationHistogram& h, const ArrivalModel& arrival,
                             int side_peaks = 0, double min_side_counts = 10.0);

struct TruthTable {
    // rows: encoded state, columns: decoded port, both in H, V, D, A order
    std::array<std::array<double, 4>, 4> counts{};
    bool normalized = false;

    // each row's matched pair and crossed pair sum to 1
    TruthTable normalize() const;
    static TruthTable ideal();
};

// Accumulates detections of a stream in which every pulse encodes `encoded`.
void accumulate_truth(TruthTable& table, const TimeTagStream& stream, State encoded,
                      const KeyWindow& window = {});
// One static stream per state, in H, V, D, A order.
TruthTable truth_table(const std::vector<const TimeTagStream*>& by_state, const KeyWindow& window = {});

double fidelity(const TruthTable& table);

struct TableQber {
    double z = 0.0;
    double x = 0.0;
    double combined = 0.0;
};

TableQber qber_from_table(const TruthTable& table);

void write_truth_table_csv(std::ostream& os, const TruthTable& table);

// Arrival-phase histograms on a common bin grid, collected from four static
// truth-table runs and an HBT run with phase matrices.
struct TemporalFilterData {
    double period_ps = 0.0;
    double bin_ps = 10.0;
    std::size_t bins = 0;
    std::uint64_t pulses_per_state = 0;
    std::vector<std::array<std::array<std::uint64_t, 4>, 4>> truth;  // [bin][state][port]
    std::vector<std::uint64_t> signal;                              // photon clicks per bin
    std::vector<double> central;                                    // bins x bins
    std::vector<double> side;
    int side_peaks = 0;
};

TemporalFilterData build_filter_data(const std::vector<const TimeTagStream*>& by_state, const HbtResult& hbt,
                                     double bin_ps);

struct FilterObjective {
    Regime regime = Regime::asymptotic;
    double block_size = 1e8;
    // experimental: the g2 window may differ from the key window
    bool independent_windows = false;
};

struct WindowStats {
    KeyWindow window;
    KeyWindow g2_window;
    double p_c = 0.0;
    double e_tot = 0.0;
    double g2 = 0.0;
    double signal_fraction = 1.0;
    double p_m = 0.0;
    KeyRateReport report;
};

struct FilterResult {
    WindowStats best;
    WindowStats unfiltered;
    std::size_t candidates = 0;
};

WindowStats evaluate_window(const TemporalFilterData& data, const OperatingPoint& op,
                            const FilterObjective& objective, std::size_t key_lo, std::size_t key_hi,
                            std::size_t g2_lo, std::size_t g2_hi);

// Exhaustive search over (start, width) on the bin grid; the full window is
// always a candidate so the result is never worse than unfiltered.
FilterResult optimize_temporal_window(const TemporalFilterData& data, const OperatingPoint& op,
                                      const FilterObjective& objective, int threads = 0);

}  // namespace qkd
