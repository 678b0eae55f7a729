#include "qkd/finitekey.hpp"

#include <algorithm>
#include <cmath>

namespace qkd {

namespace {

double beta_of(double eps) {
    if (!(eps > 0.0 && eps <= 1.0)) throw DomainError("chernoff: eps must lie in (0, 1]");
    return -std::log(eps);
}

void check_mean(double mean) {
    if (!(mean >= 0.0) || !std::isfinite(mean)) throw DomainError("chernoff: mean must be >= 0");
}

}  // namespace

double chernoff_upper(double mean, double eps) {
    check_mean(mean);
    double b = beta_of(eps);
    return mean + 0.5 * b + std::sqrt(2.0 * b * mean + 0.25 * b * b);
}

double chernoff_lower(double mean, double eps) {
    check_mean(mean);
    double b = beta_of(eps);
    return std::max(0.0, mean - std::sqrt(2.0 * b * mean));
}

double chernoff_mean_upper(double observed, double eps) {
    check_mean(observed);
    double b = beta_of(eps);
    // solve mu - sqrt(2 b mu) = observed
    double s = 0.5 * (std::sqrt(2.0 * b) + std::sqrt(2.0 * b + 4.0 * observed));
    return s * s;
}

double chernoff_mean_lower(double observed, double eps) {
    check_mean(observed);
    double b = beta_of(eps);
    // solve mu + b/2 + sqrt(2 b mu + b^2/4) = observed
    if (observed <= b) return 0.0;
    return std::max(0.0, observed + 0.5 * b - std::sqrt(2.0 * observed * b + 0.25 * b * b));
}

double serfling_gamma(double n_rest, double k_sample, double eps) {
    if (!(n_rest > 0.0) || !(k_sample > 0.0))
        throw DegenerateBlockError("serfling_gamma: empty sample or population");
    double b = beta_of(eps);
    return std::sqrt((n_rest + k_sample) * (k_sample + 1.0) * b /
                     (2.0 * n_rest * k_sample * k_sample));
}

void FiniteBlockInput::validate() const {
    auto bad = [](const char* f, const char* m) { throw ValidationError(f, m); };
    if (!(n_x >= 0.0) || !(n_z >= 0.0)) bad("n_x", "counts must be >= 0");
    if (!(n_sent > 0.0)) bad("n_sent", "must be positive");
    if (n_x + n_z > n_sent * (1.0 + 1e-12)) bad("n_x", "n_x + n_z exceeds n_sent");
    if (!(e_x >= 0.0 && e_x <= 0.5)) bad("e_x", "must lie in [0, 0.5]");
    if (!(e_z >= 0.0 && e_z <= 0.5)) bad("e_z", "must lie in [0, 0.5]");
    if (!(f_ec >= 1.0)) bad("f_ec", "must be >= 1");
    if (!(clock_rate_hz > 0.0)) bad("clock_rate_hz", "must be positive");
    if (!(acquisition_time_s > 0.0)) bad("acquisition_time_s", "must be positive");
    if (clock_rate_hz * acquisition_time_s < n_sent * (1.0 - 1e-9))
        bad("acquisition_time_s", "R * t is smaller than n_sent");
    if (!(p_m >= 0.0 && p_m <= 1.0)) bad("p_m", "must lie in [0, 1]");
    if (!(basis_bias > 0.0 && basis_bias < 1.0)) bad("basis_bias", "must lie in (0, 1)");
    if (multiphoton_share && !(*multiphoton_share >= 0.0 && *multiphoton_share <= 1.0))
        bad("multiphoton_share", "must lie in [0, 1]");
    if (!(vacuum_errors_x >= 0.0)) bad("vacuum_errors_x", "must be >= 0");
    if (sample_size && !(*sample_size >= 0.0 && *sample_size <= n_x))
        bad("sample_size", "must lie in [0, n_x]");
    if (leakage_bits && !(*leakage_bits >= 0.0)) bad("leakage_bits", "must be >= 0");
    budget.validate();
}

double multiphoton_upper(const FiniteBlockInput& in) {
    double share = in.multiphoton_share ? *in.multiphoton_share : sift_ratio(in.basis_bias);
    return chernoff_upper(in.n_sent * in.p_m * share, in.eps_step());
}

double nonmultiphoton_lower(const FiniteBlockInput& in) {
    // worst case: every multiphoton pulse arrives and lands in the key
    return std::max(0.0, in.key_bits() - multiphoton_upper(in));
}

double phase_error_upper(const FiniteBlockInput& in) {
    if (in.n_x < 1.0 || in.n_z < 1.0)
        throw DegenerateBlockError("phase_error_upper: a basis has no detections");
    double n_r = in.sifted_bits();
    double k = in.sample_bits();
    if (k < 1.0) throw DegenerateBlockError("phase_error_upper: empty estimation sample");
    double m_bar = multiphoton_upper(in);

    // multiphoton events split across subsets in proportion to their size
    double nmp_sample = k - m_bar * k / n_r;
    double rest = in.sample_size ? n_r - k : in.n_z;
    double nmp_rest = rest - m_bar * rest / n_r;
    if (nmp_sample <= 0.0 || nmp_rest <= 0.0) return 0.5;

    double errors = in.e_x * k;
    if (in.vacuum_errors_x > 0.0)
        errors -= chernoff_lower(in.vacuum_errors_x * k / in.n_x, in.eps_step());
    double e_nmp = std::clamp(errors / nmp_sample, 0.0, 0.5);
    double gamma = serfling_gamma(nmp_rest, nmp_sample, in.eps_step());
    return std::min(0.5, e_nmp + gamma);
}

double ec_leakage(double n, double qber, double f_ec, double /*eps_cor*/) {
    if (!(n >= 0.0)) throw DomainError("ec_leakage: n must be >= 0");
    return n * f_ec * binary_entropy(qber);
}

FiniteKeyReport finite_skb_per_pulse(const FiniteBlockInput& in, const LeakageModel& leakage) {
    in.validate();
    FiniteKeyReport r;
    r.multiphoton_upper = multiphoton_upper(in);
    r.n_nmp_lower = nonmultiphoton_lower(in);
    double n_r = in.sifted_bits();
    r.verification_bits = std::log2(2.0 / in.budget.eps_cor);
    r.pa_bits = 2.0 * std::log2(1.0 / (2.0 * in.budget.eps_pa));
    double key = in.key_bits();
    double e_key = n_r > 0.0 ? (in.e_x * in.n_x + in.e_z * in.n_z) / n_r : 0.0;
    if (in.leakage_bits)
        r.lambda_ec = *in.leakage_bits;
    else if (leakage)
        r.lambda_ec = leakage(key, e_key, in.f_ec, in.budget.eps_cor);
    else
        r.lambda_ec = ec_leakage(key, e_key, in.f_ec, in.budget.eps_cor);

    if (r.n_nmp_lower <= 0.0 || in.n_x < 1.0 || in.n_z < 1.0) {
        r.phase_error_upper = 0.5;
        r.bracket_bits = -r.lambda_ec - r.verification_bits - r.pa_bits;
        r.zero_key = true;
        return r;
    }
    r.phase_error_upper = phase_error_upper(in);
    double k = in.sample_bits();
    double m_bar = r.multiphoton_upper;
    double nmp_sample = k - m_bar * k / n_r;
    double rest = in.sample_size ? n_r - k : in.n_z;
    if (nmp_sample > 0.0 && rest - m_bar * rest / n_r > 0.0)
        r.gamma = serfling_gamma(rest - m_bar * rest / n_r, nmp_sample, in.eps_step());

    r.bracket_bits = r.n_nmp_lower * (1.0 - binary_entropy(r.phase_error_upper)) - r.lambda_ec -
                     r.verification_bits - r.pa_bits;
    if (r.bracket_bits <= 0.0) {
        r.zero_key = true;
        return r;
    }
    double pulses = in.clock_rate_hz * in.acquisition_time_s;
    r.skb_per_pulse = r.bracket_bits / pulses;
    r.final_key_length = static_cast<std::uint64_t>(std::floor(r.bracket_bits));
    return r;
}

}  // namespace qkd
