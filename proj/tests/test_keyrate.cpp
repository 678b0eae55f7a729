#include "doctest.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "qkd/keyrate.hpp"
#include "support.hpp"

using namespace qkd;
using qkd::test::baseline_op;

TEST_CASE("binary entropy and unit conversions") {
    CHECK(binary_entropy(0.0) == 0.0);
    CHECK(binary_entropy(1.0) == 0.0);
    CHECK(binary_entropy(0.5) == doctest::Approx(1.0));
    CHECK(binary_entropy(0.11) == doctest::Approx(0.4999160).epsilon(1e-6));
    CHECK_THROWS_AS(binary_entropy(-0.1), DomainError);
    CHECK(sift_ratio(0.5) == 0.5);
    CHECK(sift_ratio(0.1) == doctest::Approx(0.82));
    CHECK(loss_to_length(25.49, 0.1956) == doctest::Approx(130.317).epsilon(1e-5));
    CHECK(length_to_loss(80.0, 0.2) == doctest::Approx(16.0));
    CHECK(db_to_transmittance(30.0) == doctest::Approx(1e-3));
    CHECK(emission_capture_fraction(592.5, 1e12 / 228e6) == doctest::Approx(1.0 - std::exp(-4385.9649 / 592.5)));
}

TEST_CASE("validation names the offending field") {
    OperatingPoint op = baseline_op();
    op.source.g2_zero = 1.5;
    try {
        op.validate();
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(e.field() == "source.g2_zero");
    }
    op = baseline_op();
    op.link.misalignment_prob = 0.7;
    CHECK_THROWS_AS(op.validate(), ValidationError);
    op = baseline_op();
    op.budget.eps_pe = 1e-10;
    CHECK_THROWS_AS(op.validate(), ValidationError);
    op = baseline_op();
    op.protocol.basis_bias = 1.0;
    CHECK_THROWS_AS(op.validate(), ValidationError);
}

TEST_CASE("click model against a hand computation without dead time") {
    // Recomputed term by term from the baseline parameters.
    OperatingPoint op = baseline_op().with_loss(10.0);
    op.options.dead_time = DeadTimeModel::none;
    op.options.lifetime_limited_emission = false;
    double eta = 0.464 * 0.1 * 0.740;
    double n = 0.138;
    double p_sig = eta * n - 0.0243 * n * n / 2.0 * eta * eta;
    double pd = 1.0 - std::pow(1.0 - 8.74e-7, 4);
    double p_raw = pd + p_sig - pd * p_sig;
    ClickModel c = click_model(op);
    CHECK(c.eta_sys == doctest::Approx(eta));
    CHECK(c.p_c == doctest::Approx(p_raw).epsilon(1e-12));
    double err = 2.57e-4 * p_sig + 0.5 * pd * (1.0 - p_sig);
    CHECK(c.e_tot == doctest::Approx(err / p_raw).epsilon(1e-12));
    // channel-input multiphoton bound: g2 (n eta_T)^2 / 2
    CHECK(multiphoton_bound(op) == doctest::Approx(0.0243 * std::pow(0.138 * 0.464, 2) / 2.0));
}

TEST_CASE("frozen operating-point values at the deployed setting") {
    OperatingPoint op = baseline_op();
    CHECK(click_probability(op.with_loss(0.0)) == doctest::Approx(0.043325).epsilon(2e-4));
    KeyRateReport a = asymptotic_skb_per_pulse(op);
    CHECK(a.skb_per_pulse == doctest::Approx(3.501e-5).epsilon(1e-3));
    CHECK(a.e_tot == doctest::Approx(0.012976).epsilon(1e-3));
    // target operating point: 4.80e-5 within a factor 1.5
    CHECK(a.skb_per_pulse > 4.80e-5 / 1.5);
    CHECK(a.skb_per_pulse < 4.80e-5 * 1.5);
    KeyRateReport f5 = finite_key_report(op, 1e5);
    KeyRateReport f8 = finite_key_report(op, 1e8);
    CHECK(f5.skb_per_pulse == doctest::Approx(2.776e-5).epsilon(2e-3));
    CHECK(f8.skb_per_pulse == doctest::Approx(3.47e-5).epsilon(2e-3));
    CHECK(f8.skb_per_pulse >= 2e-5);
}

TEST_CASE("library defaults are the conservative reading") {
    OperatingPoint op;
    KeyRateReport r = asymptotic_skb_per_pulse(op);
    CHECK(r.skb_per_pulse == doctest::Approx(1.327e-5).epsilon(2e-3));
    CHECK(max_tolerable_loss(op, RegimeSpec::asymptotic()).loss_db == doctest::Approx(27.05).epsilon(1e-3));
}

TEST_CASE("finite rate approaches the asymptotic rate from below") {
    OperatingPoint op = baseline_op();
    double a = asymptotic_skb_per_pulse(op).skb_per_pulse;
    double prev = 0.0;
    for (double n : {1e3, 1e4, 1e5, 1e6, 1e8, 1e10}) {
        double s = finite_key_report(op, n).skb_per_pulse;
        CHECK(s <= a * (1.0 + 1e-9));
        CHECK(s >= prev);
        prev = s;
    }
    CHECK(prev == doctest::Approx(a).epsilon(2e-3));
}

TEST_CASE("MTLs and their ordering") {
    OperatingPoint op = baseline_op();
    double asym = max_tolerable_loss(op, RegimeSpec::asymptotic()).loss_db;
    double f3 = max_tolerable_loss(op, RegimeSpec::finite(1e3)).loss_db;
    double f5 = max_tolerable_loss(op, RegimeSpec::finite(1e5)).loss_db;
    double f8 = max_tolerable_loss(op, RegimeSpec::finite(1e8)).loss_db;
    CHECK(asym == doctest::Approx(28.911).epsilon(5e-4));
    CHECK(f3 == doctest::Approx(24.419).epsilon(5e-4));
    CHECK(f5 == doctest::Approx(28.530).epsilon(5e-4));
    CHECK(f8 == doctest::Approx(28.892).epsilon(5e-4));
    CHECK(f3 < f5);
    CHECK(f5 < f8);
    CHECK(f8 < asym);
    CHECK(max_tolerable_loss(op, RegimeSpec::finite(1e10)).loss_db == doctest::Approx(28.911).epsilon(5e-4));
}

TEST_CASE("MTL brackets the zero crossing") {
    OperatingPoint op = baseline_op();
    MtlResult m = max_tolerable_loss(op, RegimeSpec::finite(1e5));
    CHECK(m.monotone);
    CHECK(evaluate(op.with_loss(m.loss_db - 0.02), RegimeSpec::finite(1e5)).skb_per_pulse > 0.0);
    CHECK(evaluate(op.with_loss(m.loss_db + 0.02), RegimeSpec::finite(1e5)).skb_per_pulse == 0.0);
}

TEST_CASE("no positive key at zero loss raises") {
    OperatingPoint op = baseline_op();
    op.source.g2_zero = 1.0;
    op.source.mean_photon_number = 0.9;
    op.link.receiver_efficiency = 0.01;
    CHECK_THROWS_AS(max_tolerable_loss(op, RegimeSpec::asymptotic()), NoPositiveKeyError);
}

TEST_CASE("QBER limits") {
    OperatingPoint op = baseline_op();
    CHECK(*qber_total(op.with_loss(200.0)) == doctest::Approx(0.5).epsilon(1e-6));
    op.link.dark_count_prob = 0.0;
    CHECK(*qber_total(op) == doctest::Approx(2.57e-4).epsilon(1e-9));
    double e = *qber_total(baseline_op());
    CHECK(e > 0.003);
    CHECK(e < 0.013);
}

TEST_CASE("QBER grows and rate falls with loss") {
    OperatingPoint op = baseline_op();
    double prev_e = 0.0, prev_s = 1.0;
    for (double L = 0.0; L <= 28.0; L += 2.0) {
        KeyRateReport r = asymptotic_skb_per_pulse(op.with_loss(L));
        CHECK(r.e_tot > prev_e);
        CHECK(r.skb_per_pulse < prev_s);
        prev_e = r.e_tot;
        prev_s = r.skb_per_pulse;
    }
}

TEST_CASE("clock-rate trends at 80 km") {
    OperatingPoint op = baseline_op();
    double L = length_to_loss(80.0, op.link.fibre_attenuation_db_per_km);
    const double rates[] = {76e6, 228e6, 608e6, 1063e6};
    const double e_ref[] = {0.00428, 0.00161, 0.00080, 0.00062};
    const double skr_ref[] = {44953, 137900, 347500, 517820};
    double prev_e = 1.0, prev_skr = 0.0, skr608 = 0.0;
    for (int i = 0; i < 4; ++i) {
        KeyRateReport r = asymptotic_skb_per_pulse(op.with_loss(L).with_clock_rate(rates[i]));
        CHECK(r.e_tot == doctest::Approx(e_ref[i]).epsilon(0.01));
        CHECK(r.skr == doctest::Approx(skr_ref[i]).epsilon(0.01));
        CHECK(r.e_tot < prev_e);
        CHECK(r.skr > prev_skr);
        if (i == 2) skr608 = r.skr;
        if (i == 3) CHECK(r.skr / skr608 < 1063.0 / 608.0);
        prev_e = r.e_tot;
        prev_skr = r.skr;
    }
}

TEST_CASE("dead time only removes clicks") {
    OperatingPoint op = baseline_op().with_loss(0.0);
    double per = click_probability(op);
    op.options.dead_time = DeadTimeModel::none;
    double none = click_probability(op);
    op.options.dead_time = DeadTimeModel::aggregate;
    double agg = click_probability(op);
    CHECK(per < none);
    CHECK(agg < per);
    CHECK(rate_after_deadtime(1e9, 35.865) == doctest::Approx(1e9 / (1.0 + 35.865)));
}

TEST_CASE("skb from measurements handles the edge cases") {
    ProtocolParams p;
    RateInputs in{1e-4, 2e-4, 0.01, 0.0};
    KeyRateReport r = skb_from_measurements(in, p);
    CHECK(r.zero_key);
    CHECK(r.skb_per_pulse == 0.0);
    in = {1e-3, 1e-5, 0.01, 0.0};
    r = skb_from_measurements(in, p);
    double p1 = 1e-3 - 1e-5;
    double e1 = 0.01 * 1e-3 / p1;
    CHECK(r.skb_per_pulse ==
          doctest::Approx(0.5 * (p1 * (1.0 - binary_entropy(e1)) - 1.16 * 1e-3 * binary_entropy(0.01))));
}

TEST_CASE("optimiser never does worse than the start") {
    OperatingPoint op = baseline_op();
    FreeParameters fp;
    fp.pre_attenuation = true;
    fp.basis_bias = true;
    OptimizationResult r = optimize_operating_point(op, fp, RegimeSpec::finite(1e5));
    CHECK(r.report.skb_per_pulse >= r.initial.skb_per_pulse);
    CHECK(r.op.source.pre_attenuation <= 1.0);
    CHECK(r.op.protocol.basis_bias > 0.0);
    CHECK(r.op.protocol.basis_bias < 1.0);
}

TEST_CASE("loss sweep is deterministic across thread counts") {
    OperatingPoint op = baseline_op();
    std::vector<double> grid;
    for (int i = 0; i <= 30; ++i) grid.push_back(i);
    auto a = sweep(op, SweepAxis::loss, grid, {}, {RegimeSpec::asymptotic(), RegimeSpec::finite(1e5)}, 1);
    auto b = sweep(op, SweepAxis::loss, grid, {}, {RegimeSpec::asymptotic(), RegimeSpec::finite(1e5)}, 4);
    std::ostringstream sa, sb;
    write_sweep_csv(sa, a);
    write_sweep_csv(sb, b);
    CHECK(sa.str() == sb.str());
    CHECK(a.size() == 62);
}

TEST_CASE("dataset rows are validated") {
    const char* path = "dataset_test.csv";
    {
        std::ofstream os(path);
        os << "label,mean_photon_number,g2_zero\nA,0.1,0.02\nB,0.2,oops\n";
    }
    CHECK_THROWS_AS(read_dataset_csv(path), ValidationError);
    {
        std::ofstream os(path);
        os << "label,mean_photon_number,g2_zero\nA,0.1,0.02\nB,0.2,0.05\n";
    }
    auto rows = read_dataset_csv(path);
    REQUIRE(rows.size() == 2);
    auto out = sweep(baseline_op(), SweepAxis::dataset, {}, rows, {RegimeSpec::asymptotic()});
    CHECK(out.size() == 2);
    CHECK(out[1].label.find("B") != std::string::npos);
}
