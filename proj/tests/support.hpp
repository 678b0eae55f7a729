#pragma once

// Shared fixtures and exact tail oracles for the test suites.

#include <algorithm>
#include <cmath>
#include <vector>

#include "qkd/keyrate.hpp"

namespace qkd::test {

// The deployed-fibre operating point as configured in scenarios/baseline.json.
inline OperatingPoint baseline_op() {
    OperatingPoint op;
    op.link.receiver_includes_detector = true;
    op.options.multiphoton_plane = ReferencePlane::channel_input;
    op.options.phase_error = PhaseErrorModel::vacuum_aware;
    op.options.dead_time = DeadTimeModel::per_detector;
    op.options.lifetime_limited_emission = true;
    return op;
}

inline double log_choose(double n, double k) {
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

inline double binom_pmf(int n, double p, int k) {
    if (p <= 0.0) return k == 0 ? 1.0 : 0.0;
    if (p >= 1.0) return k == n ? 1.0 : 0.0;
    return std::exp(log_choose(n, k) + k * std::log(p) + (n - k) * std::log1p(-p));
}

// P(X >= x) for X ~ Bin(n, p), x real
inline double binom_upper_tail(int n, double p, double x) {
    double s = 0.0;
    for (int k = std::max(0, static_cast<int>(std::ceil(x))); k <= n; ++k) s += binom_pmf(n, p, k);
    return s;
}

// P(X <= x)
inline double binom_lower_tail(int n, double p, double x) {
    double s = 0.0;
    int hi = std::min(n, static_cast<int>(std::floor(x)));
    for (int k = 0; k <= hi; ++k) s += binom_pmf(n, p, k);
    return s;
}

// P(j errors in a k-subset) when the population of size total holds errors errors.
inline double hypergeom_pmf(int total, int errors, int k, int j) {
    if (j < std::max(0, k - (total - errors)) || j > std::min(k, errors)) return 0.0;
    return std::exp(log_choose(errors, j) + log_choose(total - errors, k - j) - log_choose(total, k));
}

}  // namespace qkd::test
