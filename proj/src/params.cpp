#include "qkd/params.hpp"

#include <cmath>

namespace qkd {

ValidationError::ValidationError(std::string field, const std::string& message)
    : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}

namespace {

void require(bool ok, const char* field, const char* message) {
    if (!ok) throw ValidationError(field, message);
}

bool finite(double x) { return std::isfinite(x); }

bool open_unit(double x) { return finite(x) && x > 0.0 && x < 1.0; }

}  // namespace

void SourceModel::validate() const {
    require(finite(mean_photon_number) && mean_photon_number > 0.0 && mean_photon_number < 1.0,
            "source.mean_photon_number", "must lie in (0, 1)");
    require(finite(g2_zero) && g2_zero >= 0.0 && g2_zero <= 1.0, "source.g2_zero",
            "must lie in [0, 1]");
    require(finite(lifetime_ps) && lifetime_ps > 0.0, "source.lifetime_ps", "must be positive");
    require(finite(pre_attenuation) && pre_attenuation > 0.0 && pre_attenuation <= 1.0,
            "source.pre_attenuation", "must lie in (0, 1]");
    require(finite(reference_rate_hz) && reference_rate_hz > 0.0, "source.reference_rate_hz",
            "must be positive");
}

double LinkModel::channel_transmittance() const { return db_to_transmittance(channel_loss_db); }

double LinkModel::system_efficiency() const {
    double eta = transmitter_efficiency * channel_transmittance() * receiver_efficiency;
    if (!receiver_includes_detector) eta *= detector_efficiency;
    return eta;
}

void LinkModel::validate() const {
    auto eff = [](double x) { return finite(x) && x > 0.0 && x <= 1.0; };
    require(eff(transmitter_efficiency), "link.transmitter_efficiency", "must lie in (0, 1]");
    require(eff(receiver_efficiency), "link.receiver_efficiency", "must lie in (0, 1]");
    require(eff(detector_efficiency), "link.detector_efficiency", "must lie in (0, 1]");
    require(finite(dark_count_prob) && dark_count_prob >= 0.0 && dark_count_prob < 1.0,
            "link.dark_count_prob", "must lie in [0, 1)");
    require(finite(dark_count_reference_rate_hz) && dark_count_reference_rate_hz > 0.0,
            "link.dark_count_reference_rate_hz", "must be positive");
    require(finite(dead_time_ns) && dead_time_ns >= 0.0, "link.dead_time_ns", "must be >= 0");
    require(finite(misalignment_prob) && misalignment_prob >= 0.0 && misalignment_prob <= 0.5,
            "link.misalignment_prob", "must lie in [0, 0.5]");
    require(finite(channel_loss_db) && channel_loss_db >= 0.0, "link.channel_loss_db",
            "must be >= 0");
    require(finite(fibre_attenuation_db_per_km) && fibre_attenuation_db_per_km > 0.0,
            "link.fibre_attenuation_db_per_km", "must be positive");
    require(detector_count >= 1, "link.detector_count", "must be >= 1");
    require(finite(jitter_ps) && jitter_ps >= 0.0, "link.jitter_ps", "must be >= 0");
    require(finite(arrival_offset_ps) && arrival_offset_ps >= 0.0, "link.arrival_offset_ps",
            "must be >= 0");
}

void ProtocolParams::validate() const {
    require(finite(clock_rate_hz) && clock_rate_hz > 0.0, "protocol.clock_rate_hz",
            "must be positive");
    require(finite(acquisition_time_s) && acquisition_time_s > 0.0, "protocol.acquisition_time_s",
            "must be positive");
    require(open_unit(basis_bias), "protocol.basis_bias", "must lie in (0, 1)");
    require(finite(block_size) && block_size >= 1.0, "protocol.block_size", "must be >= 1");
    require(finite(error_correction_inefficiency) && error_correction_inefficiency >= 1.0,
            "protocol.error_correction_inefficiency", "must be >= 1");
}

void SecurityBudget::validate() const {
    require(open_unit(eps_sec), "security.eps_sec", "must lie in (0, 1)");
    require(open_unit(eps_cor), "security.eps_cor", "must lie in (0, 1)");
    require(open_unit(eps_pe), "security.eps_pe", "must lie in (0, 1)");
    require(open_unit(eps_ec), "security.eps_ec", "must lie in (0, 1)");
    require(open_unit(eps_pa), "security.eps_pa", "must lie in (0, 1)");
    // allow one ulp-scale rounding on the sum
    require(eps_pe + eps_ec + eps_pa <= eps_sec * (1.0 + 1e-12), "security.eps_pe",
            "eps_pe + eps_ec + eps_pa exceeds eps_sec");
}

double binary_entropy(double x) {
    if (!(x >= 0.0 && x <= 1.0)) throw DomainError("binary_entropy: argument outside [0, 1]");
    if (x == 0.0 || x == 1.0) return 0.0;
    return -x * std::log2(x) - (1.0 - x) * std::log2(1.0 - x);
}

double sift_ratio(double p_x) {
    if (!(p_x >= 0.0 && p_x <= 1.0)) throw DomainError("sift_ratio: argument outside [0, 1]");
    return p_x * p_x + (1.0 - p_x) * (1.0 - p_x);
}

double loss_to_length(double loss_db, double attenuation_db_per_km) {
    if (!(attenuation_db_per_km > 0.0))
        throw DomainError("loss_to_length: attenuation must be positive");
    return loss_db / attenuation_db_per_km;
}

double length_to_loss(double length_km, double attenuation_db_per_km) {
    if (!(attenuation_db_per_km > 0.0))
        throw DomainError("length_to_loss: attenuation must be positive");
    return length_km * attenuation_db_per_km;
}

double db_to_transmittance(double loss_db) { return std::pow(10.0, -loss_db / 10.0); }

double scaled_dark_count_prob(const LinkModel& link, double clock_rate_hz) {
    // longer windows collect proportionally more dark counts
    double p = link.dark_count_prob * link.dark_count_reference_rate_hz / clock_rate_hz;
    return p < 1.0 ? p : 1.0;
}

double emission_capture_fraction(double lifetime_ps, double period_ps) {
    return -std::expm1(-period_ps / lifetime_ps);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

const char* to_string(ReferencePlane p) {
    return p == ReferencePlane::first_lens ? "first_lens" : "channel_input";
}

const char* to_string(PhaseErrorModel m) {
    return m == PhaseErrorModel::conservative ? "conservative" : "vacuum_aware";
}

const char* to_string(DeadTimeModel m) {
    switch (m) {
    case DeadTimeModel::none: return "none";
    case DeadTimeModel::aggregate: return "aggregate";
    default: return "per_detector";
    }
}

}  // namespace qkd
