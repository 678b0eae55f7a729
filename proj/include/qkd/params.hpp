#pragma once

#include <stdexcept>
#include <string>

namespace qkd {

// Thrown by every validate(); field() names the offending parameter.
class ValidationError : public std::invalid_argument {
public:
    ValidationError(std::string field, const std::string& message);
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

struct SourceModel {
    double mean_photon_number = 0.138;
    double g2_zero = 0.0243;
    double lifetime_ps = 592.5;
    double pre_attenuation = 1.0;
    // clock rate at which mean_photon_number was characterised
    double reference_rate_hz = 228e6;

    void validate() const;
};

struct LinkModel {
    double transmitter_efficiency = 0.464;
    double receiver_efficiency = 0.740;
    double detector_efficiency = 0.740;
    double dark_count_prob = 8.74e-7;  // per detector per window at the reference rate
    double dark_count_reference_rate_hz = 228e6;
    double dead_time_ns = 35.865;
    double misalignment_prob = 2.57e-4;
    double channel_loss_db = 25.49;
    double fibre_attenuation_db_per_km = 0.1956;
    int detector_count = 4;
    // treat receiver_efficiency as already containing detector_efficiency
    bool receiver_includes_detector = false;
    // detection timing relative to the start of the pulse window
    double jitter_ps = 50.0;
    double arrival_offset_ps = 250.0;

    double channel_transmittance() const;
    // eta_T * 10^(-L/10) * eta_R * eta_D
    double system_efficiency() const;
    void validate() const;
};

struct ProtocolParams {
    double clock_rate_hz = 228e6;
    double acquisition_time_s = 1.0;
    double basis_bias = 0.5;  // probability of the X basis
    double block_size = 1e5;  // n_R^Z
    double error_correction_inefficiency = 1.16;

    double period_ps() const { return 1e12 / clock_rate_hz; }
    void validate() const;
};

struct SecurityBudget {
    double eps_sec = 1e-10;
    double eps_cor = 1e-15;
    double eps_pe = 2e-10 / 3;
    double eps_ec = 1e-10 / 6;
    double eps_pa = 1e-10 / 6;

    void validate() const;
};

enum class ReferencePlane { first_lens, channel_input };

// conservative: every error is charged to single-photon events.
// vacuum_aware: expected dark-count errors on vacuum pulses are removed first.
enum class PhaseErrorModel { conservative, vacuum_aware };

enum class DeadTimeModel { none, aggregate, per_detector };

struct ModelOptions {
    ReferencePlane multiphoton_plane = ReferencePlane::channel_input;
    PhaseErrorModel phase_error = PhaseErrorModel::conservative;
    DeadTimeModel dead_time = DeadTimeModel::per_detector;
    // emission later than one period is lost (the emitter is re-excited)
    bool lifetime_limited_emission = true;
};

double binary_entropy(double x);
double sift_ratio(double p_x);
double loss_to_length(double loss_db, double attenuation_db_per_km);
double length_to_loss(double length_km, double attenuation_db_per_km);
double db_to_transmittance(double loss_db);

// Per-detector dark-count probability per window at clock_rate_hz.
double scaled_dark_count_prob(const LinkModel& link, double clock_rate_hz);

// Fraction of emission landing within one period: 1 - exp(-T/tau).
double emission_capture_fraction(double lifetime_ps, double period_ps);

double normal_cdf(double x);

const char* to_string(ReferencePlane p);
const char* to_string(PhaseErrorModel m);
const char* to_string(DeadTimeModel m);

}  // namespace qkd
