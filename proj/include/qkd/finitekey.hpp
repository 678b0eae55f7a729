#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>

#include "qkd/params.hpp"

namespace qkd {

class DegenerateBlockError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct FiniteBlockInput {
    double n_x = 0.0;  // sifted X-basis bits
    double n_z = 0.0;  // sifted Z-basis bits
    double e_x = 0.0;
    double e_z = 0.0;
    double n_sent = 0.0;
    SecurityBudget budget;
    double f_ec = 1.16;
    double clock_rate_hz = 228e6;
    double acquisition_time_s = 0.0;
    double p_m = 0.0;
    double basis_bias = 0.5;
    // Fraction of multiphoton pulses that can land in the sifted counts.
    // Unset means p_sift(basis_bias).
    std::optional<double> multiphoton_share;
    // Expected dark-count errors from vacuum pulses among the n_x X bits.
    // Zero disables the vacuum correction of the phase error.
    double vacuum_errors_x = 0.0;
    // When set, only this many X bits are disclosed for estimation and they
    // are removed from the key. Unset: all X bits serve as the sample.
    std::optional<double> sample_size;
    // Measured reconciliation leakage; replaces the leakage model.
    std::optional<double> leakage_bits;

    void validate() const;
    double sifted_bits() const { return n_x + n_z; }
    double key_bits() const { return n_x + n_z - (sample_size ? *sample_size : 0.0); }
    double sample_bits() const { return sample_size ? *sample_size : n_x; }
    int estimation_steps() const { return vacuum_errors_x > 0.0 ? 3 : 2; }
    double eps_step() const { return budget.eps_pe / estimation_steps(); }
};

struct FiniteKeyReport {
    double multiphoton_upper = 0.0;  // m-bar
    double n_nmp_lower = 0.0;
    double gamma = 0.0;
    double phase_error_upper = 0.0;
    double lambda_ec = 0.0;
    double verification_bits = 0.0;
    double pa_bits = 0.0;
    double bracket_bits = 0.0;  // unclamped key-length numerator in bits
    double skb_per_pulse = 0.0;
    std::uint64_t final_key_length = 0;
    bool zero_key = false;

    // per-bit bracket of the key-length formula, never above 1
    double bracket() const { return n_nmp_lower > 0.0 ? bracket_bits / n_nmp_lower : 0.0; }
};

// Multiplicative Chernoff bounds on a sum of independent indicators with
// expectation `mean`: P(X >= upper) <= eps and P(X <= lower) <= eps.
double chernoff_upper(double mean, double eps);
double chernoff_lower(double mean, double eps);

// Inverse direction: bounds on the expectation given an observed sum.
double chernoff_mean_upper(double observed, double eps);
double chernoff_mean_lower(double observed, double eps);

// Sampling without replacement: k bits are drawn from a population of n + k.
// The error rate of the remaining n exceeds the sample rate by more than
// gamma with probability <= eps (Serfling's inequality).
double serfling_gamma(double n_rest, double k_sample, double eps);

double multiphoton_upper(const FiniteBlockInput& in);
double nonmultiphoton_lower(const FiniteBlockInput& in);
double phase_error_upper(const FiniteBlockInput& in);

using LeakageModel = std::function<double(double n, double qber, double f_ec, double eps_cor)>;

// n * f_EC * h(qber); verification is charged separately
double ec_leakage(double n, double qber, double f_ec, double eps_cor);

FiniteKeyReport finite_skb_per_pulse(const FiniteBlockInput& in, const LeakageModel& leakage = {});

}  // namespace qkd
