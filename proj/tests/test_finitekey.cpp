#include "doctest.h"

#include <cmath>

#include "qkd/finitekey.hpp"
#include "qkd/keyrate.hpp"
#include "support.hpp"

using namespace qkd;
using namespace qkd::test;

TEST_CASE("Chernoff closed forms") {
    double b = -std::log(1e-6);
    CHECK(chernoff_upper(100.0, 1e-6) == doctest::Approx(100.0 + b / 2 + std::sqrt(2 * b * 100 + b * b / 4)));
    CHECK(chernoff_lower(100.0, 1e-6) == doctest::Approx(100.0 - std::sqrt(2 * b * 100)));
    CHECK(chernoff_lower(1.0, 1e-6) == 0.0);
    CHECK(chernoff_upper(0.0, 1e-6) == doctest::Approx(b));
    CHECK_THROWS_AS(chernoff_upper(-1.0, 1e-6), DomainError);
    CHECK_THROWS_AS(chernoff_upper(1.0, 0.0), DomainError);
}

TEST_CASE("inverse Chernoff bounds invert the forward ones") {
    for (double mu : {50.0, 1e3, 1e6}) {
        for (double eps : {1e-3, 1e-10}) {
            if (chernoff_lower(mu, eps) <= 0.0) continue;
            CHECK(chernoff_mean_upper(chernoff_lower(mu, eps), eps) == doctest::Approx(mu).epsilon(1e-9));
            double up = chernoff_upper(mu, eps);
            CHECK(chernoff_mean_lower(up, eps) == doctest::Approx(mu).epsilon(1e-9));
        }
    }
}

TEST_CASE("Chernoff coverage against exact binomial tails") {
    for (int n : {100, 1000, 10000}) {
        for (double p : {1e-3, 1e-2, 1e-1}) {
            for (double eps : {1e-3, 1e-6}) {
                double mu = n * p;
                CAPTURE(n);
                CAPTURE(p);
                CAPTURE(eps);
                CHECK(binom_upper_tail(n, p, chernoff_upper(mu, eps)) <= eps);
                double lo = chernoff_lower(mu, eps);
                // strictly below the bound is the failure event
                double below = lo > 0.0 ? binom_lower_tail(n, p, std::ceil(lo) - 1.0) : 0.0;
                CHECK(below <= eps);
                // the interval on the mean covers mu except with probability eps
                double miss_up = 0.0, miss_lo = 0.0;
                for (int k = 0; k <= n; ++k) {
                    double pk = binom_pmf(n, p, k);
                    if (pk < 1e-300) continue;
                    if (chernoff_mean_upper(k, eps) < mu) miss_up += pk;
                    if (chernoff_mean_lower(k, eps) > mu) miss_lo += pk;
                }
                CHECK(miss_up <= eps);
                CHECK(miss_lo <= eps);
            }
        }
    }
}

TEST_CASE("Serfling gamma covers exact hypergeometric sampling") {
    for (int total : {100, 300, 1000}) {
        for (double frac : {0.1, 0.3, 0.5}) {
            int k = static_cast<int>(total * frac);
            int rest = total - k;
            for (double eps : {1e-3, 1e-6}) {
                double gamma = serfling_gamma(rest, k, eps);
                double worst = 0.0;
                for (int errors = 0; errors <= total; errors += (total > 300 ? 5 : 1)) {
                    double fail = 0.0;
                    for (int j = 0; j <= std::min(k, errors); ++j) {
                        double rest_rate = static_cast<double>(errors - j) / rest;
                        if (rest_rate > static_cast<double>(j) / k + gamma) fail += hypergeom_pmf(total, errors, k, j);
                    }
                    worst = std::max(worst, fail);
                }
                CAPTURE(total);
                CAPTURE(k);
                CAPTURE(eps);
                CHECK(worst <= eps);
            }
        }
    }
    CHECK_THROWS_AS(serfling_gamma(0.0, 10.0, 1e-6), DegenerateBlockError);
}

TEST_CASE("phase-error bound covers the sampling failure rate") {
    // No multiphoton events: the bound reduces to sample rate plus a
    // Serfling margin on the nmp split, which must cover the exact tail.
    const int total = 1000, k = 300;
    FiniteBlockInput in;
    in.n_x = k;
    in.n_z = total - k;
    in.sample_size = k;
    in.n_sent = 1e6;
    in.clock_rate_hz = 1e6;
    in.acquisition_time_s = 1.0;
    in.p_m = 0.0;
    double worst = 0.0;
    for (int errors = 0; errors <= total / 2; errors += 3) {
        double fail = 0.0;
        for (int j = 0; j <= std::min(k, errors); ++j) {
            in.e_x = static_cast<double>(j) / k;
            double bound = phase_error_upper(in);
            double rest_rate = static_cast<double>(errors - j) / (total - k);
            // 0.5 is the saturated bound: it already charges a full bit per key bit
            if (bound < 0.5 && rest_rate > bound) fail += hypergeom_pmf(total, errors, k, j);
        }
        worst = std::max(worst, fail);
    }
    CHECK(worst <= in.eps_step());
}

TEST_CASE("finite report pieces at the deployed setting") {
    OperatingPoint op = baseline_op();
    FiniteBlockInput in = finite_block_input(op, 1e5);
    CHECK(in.n_z == 1e5);
    CHECK(in.n_x == doctest::Approx(1e5));
    CHECK(in.acquisition_time_s * in.clock_rate_hz == doctest::Approx(in.n_sent));
    FiniteKeyReport r = finite_skb_per_pulse(in);
    CHECK(r.verification_bits == doctest::Approx(std::log2(2e15)));
    CHECK(r.pa_bits == doctest::Approx(2.0 * std::log2(1.0 / (2.0 * 1e-10 / 6))));
    CHECK(r.phase_error_upper > in.e_x);
    CHECK(r.n_nmp_lower < in.n_x + in.n_z);
    CHECK(r.final_key_length == static_cast<std::uint64_t>(std::floor(r.bracket_bits)));
    CHECK(r.bracket() <= 1.0);
    CHECK(r.skb_per_pulse == doctest::Approx(2.776e-5).epsilon(2e-3));
}

TEST_CASE("degenerate blocks") {
    FiniteBlockInput in;
    in.n_x = 0.0;
    in.n_z = 10.0;
    in.n_sent = 100.0;
    in.clock_rate_hz = 100.0;
    in.acquisition_time_s = 1.0;
    CHECK_THROWS_AS(phase_error_upper(in), DegenerateBlockError);
    FiniteKeyReport r = finite_skb_per_pulse(in);
    CHECK(r.zero_key);
    CHECK(r.final_key_length == 0);
    in.n_x = 200.0;
    CHECK_THROWS_AS(in.validate(), ValidationError);
}

TEST_CASE("measured leakage replaces the model") {
    FiniteBlockInput in = finite_block_input(baseline_op(), 1e5);
    FiniteKeyReport model = finite_skb_per_pulse(in);
    in.leakage_bits = model.lambda_ec + 1000.0;
    FiniteKeyReport measured = finite_skb_per_pulse(in);
    CHECK(measured.bracket_bits == doctest::Approx(model.bracket_bits - 1000.0));
}
