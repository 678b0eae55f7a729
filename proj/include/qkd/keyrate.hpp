#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qkd/finitekey.hpp"
#include "qkd/params.hpp"

namespace qkd {

struct OperatingPoint {
    SourceModel source;
    LinkModel link;
    ProtocolParams protocol;
    SecurityBudget budget;
    ModelOptions options;

    void validate() const;
    OperatingPoint with_loss(double loss_db) const;
    OperatingPoint with_clock_rate(double hz) const;
    // <n> after pre-attenuation and, if enabled, the lifetime-limited capture
    double effective_mean_photon_number() const;
};

// Every intermediate of the click/QBER channel model.
struct ClickModel {
    double n_eff = 0.0;
    double eta_sys = 0.0;
    double p_signal = 0.0;      // photon-induced click, before dead time
    double p_dark_scaled = 0.0;  // one detector, one window
    double p_dark_total = 0.0;
    double p_raw = 0.0;          // 1 - (1 - p_dark_total)(1 - p_signal)
    double live_fraction = 1.0;  // dead-time survival
    double p_c = 0.0;
    double error_raw = 0.0;  // p_mis * p_signal + 0.5 * dark-only clicks
    double e_tot = 0.0;
    double vacuum_yield = 0.0;  // click probability for a vacuum pulse, after dead time
    double vacuum_prob = 0.0;   // lower bound on P(no photon) at the multiphoton plane
};

ClickModel click_model(const OperatingPoint& op);

// g2 * n_eff^2 / 2, with n_eff = <n> * pre_attenuation (* eta_T at channel input)
double multiphoton_bound(const SourceModel& source, ReferencePlane plane,
                         double transmitter_efficiency = 1.0);
double multiphoton_bound(const OperatingPoint& op);

double click_probability(const OperatingPoint& op);

// non-paralyzable: rate / (1 + rate * tau)
double rate_after_deadtime(double rate_hz, double dead_time_ns);

// nullopt when no click is possible
std::optional<double> qber_total(const OperatingPoint& op);

enum class Regime { asymptotic, finite };

const char* to_string(Regime r);

struct KeyRateReport {
    double p_c = 0.0;
    double p_m = 0.0;
    double p_c1_lower = 0.0;
    double e_tot = 0.0;
    double e1_upper = 0.0;
    double skb_per_pulse = 0.0;
    double skr = 0.0;  // bits/s
    Regime regime = Regime::asymptotic;
    bool zero_key = false;
    std::optional<FiniteKeyReport> finite;
};

// Measured or modelled per-pulse quantities feeding the asymptotic formula.
struct RateInputs {
    double p_c = 0.0;
    double p_m = 0.0;
    double e_tot = 0.0;
    // expected dark-count errors per pulse on vacuum pulses; 0 = conservative
    double vacuum_errors = 0.0;
};

KeyRateReport skb_from_measurements(const RateInputs& in, const ProtocolParams& protocol);
RateInputs rate_inputs(const OperatingPoint& op);
KeyRateReport asymptotic_skb_per_pulse(const OperatingPoint& op);

// Block with n_R^Z = block_size sifted Z bits at this operating point.
FiniteBlockInput finite_block_input(const OperatingPoint& op, double block_size);
FiniteBlockInput finite_block_input(const RateInputs& measured, const OperatingPoint& op, double block_size);
KeyRateReport finite_key_report(const OperatingPoint& op, double block_size);
KeyRateReport finite_from_measurements(const RateInputs& measured, const OperatingPoint& op,
                                       double block_size);

struct RegimeSpec {
    Regime regime = Regime::asymptotic;
    double block_size = 0.0;  // n_R^Z, finite only

    static RegimeSpec asymptotic() { return {}; }
    static RegimeSpec finite(double n) { return {Regime::finite, n}; }
    std::string label() const;
};

KeyRateReport evaluate(const OperatingPoint& op, const RegimeSpec& regime);

class NoPositiveKeyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct MtlResult {
    double loss_db = 0.0;
    bool monotone = true;  // S(L) checked non-increasing across the bracket
    int iterations = 0;
};

MtlResult max_tolerable_loss(const OperatingPoint& op, const RegimeSpec& regime,
                             double tolerance_db = 0.01);

struct FreeParameters {
    bool pre_attenuation = false;
    bool basis_bias = false;
};

struct OptimizationResult {
    OperatingPoint op;
    KeyRateReport report;
    KeyRateReport initial;
    int evaluations = 0;
    bool improved = false;
};

OptimizationResult optimize_operating_point(const OperatingPoint& op, FreeParameters free,
                                            const RegimeSpec& regime);

enum class SweepAxis { loss, clock_rate, dataset };

struct DatasetRow {
    std::string label;
    double mean_photon_number = 0.0;
    double g2_zero = 0.0;
};

struct SweepRow {
    double axis_value = 0.0;
    std::string label;
    KeyRateReport report;
};

// Rows must carry (label, mean_photon_number, g2_zero); errors name the row.
std::vector<DatasetRow> read_dataset_csv(const std::string& path);

std::vector<SweepRow> sweep(const OperatingPoint& op, SweepAxis axis, const std::vector<double>& grid,
                            const std::vector<DatasetRow>& dataset,
                            const std::vector<RegimeSpec>& regimes, int threads = 0);

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

}  // namespace qkd
