#pragma once

#include "qkd/params.hpp"

namespace qkd {

// Detection-time distribution within one pulse window. Signal photons
// arrive at offset + exponential emission delay + Gaussian jitter; with
// truncation the emission delay is conditioned to be shorter than a period.
// Dark counts are uniform over the window.
struct ArrivalModel {
    double period_ps = 1e12 / 228e6;
    double lifetime_ps = 592.5;
    double jitter_ps = 50.0;
    double offset_ps = 250.0;
    bool truncated = true;

    static ArrivalModel from(const SourceModel& source, const LinkModel& link,
                             double clock_rate_hz, bool truncated);

    double signal_pdf(double x) const;
    double signal_cdf(double x) const;
    double dark_pdf(double x) const;
    double dark_cdf(double x) const;
    // support of the signal density, padded for jitter
    double signal_lo() const;
    double signal_hi() const;
};

// Expected number of later windows a click makes the same detector miss.
// signal_weight is the fraction of clicks that come from photons.
double effective_dead_windows(const ArrivalModel& m, double signal_weight, double dead_time_ps);

// P(X_b - X_a <= delta) for two independent signal arrivals.
double signal_difference_cdf(const ArrivalModel& m, double delta_ps);

}  // namespace qkd
