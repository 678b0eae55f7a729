#include "qkd/polcomp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include "qkd/keyrate.hpp"

namespace qkd {

namespace {

constexpr double pi = std::numbers::pi;

double wrap_pi(double a) {
    double w = std::fmod(a, pi);
    if (w < 0.0) w += pi;
    if (w >= pi) w = 0.0;
    return w;
}

Rotation3 axis_rotation(int axis, double angle) {
    return Eigen::AngleAxisd(angle, Rotation3::Identity().col(axis)).toRotationMatrix();
}

}  // namespace

double PolarizationDrift::angle() const {
    double w = std::min(1.0, std::abs(rotation.normalized().w()));
    return 2.0 * std::acos(w);
}

PolarizationDrift apply_drift(const PolarizationDrift& drift, double dt_s) {
    PolarizationDrift out = drift;
    double step = drift.drift_rate * dt_s;
    if (!(step > 0.0)) return out;
    rng::CounterStream stream(drift.seed);
    double z = 2.0 * stream.unit(2 * drift.steps) - 1.0;
    double phi = 2.0 * pi * stream.unit(2 * drift.steps + 1);
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    Eigen::Vector3d axis(r * std::cos(phi), r * std::sin(phi), z);
    out.rotation = (Eigen::Quaterniond(Eigen::AngleAxisd(step, axis)) * drift.rotation).normalized();
    out.steps = drift.steps + 1;
    return out;
}

PolarizationDrift random_drift(std::uint64_t seed, double drift_rate) {
    rng::Xoshiro256 g(rng::hash2(seed, 0x706f6c));
    Eigen::Quaterniond q(g.normal(), g.normal(), g.normal(), g.normal());
    PolarizationDrift d;
    d.rotation = q.normalized();
    d.drift_rate = drift_rate;
    d.seed = seed;
    return d;
}

Jones CompensatorState::jones() const {
    Jones j = half_wave(angles[1]) * quarter_wave(angles[0]);
    if (config == PlateConfig::qwp_hwp_qwp) j = quarter_wave(angles[2]) * j;
    return j;
}

void CompensatorState::wrap() {
    for (double& a : angles) a = wrap_pi(a);
    if (config == PlateConfig::qwp_hwp) angles[2] = 0.0;
}

CompensatorState plates_for_rotation(const Rotation3& r) {
    // r = Rz(a) Ry(b) Rz(c); the stack Q(t3) H(t2) Q(t1) maps to
    // Rz(2 t3) Ry(2 t3 + 2 t1 - 4 t2) Rz(-2 t1) in Stokes space.
    double a, b, c;
    double sb = std::hypot(r(0, 2), r(1, 2));
    b = std::atan2(sb, r(2, 2));
    if (sb > 1e-12) {
        a = std::atan2(r(1, 2), r(0, 2));
        c = std::atan2(r(2, 1), -r(2, 0));
    } else if (r(2, 2) > 0.0) {
        a = std::atan2(r(1, 0), r(0, 0));
        c = 0.0;
    } else {
        a = std::atan2(-r(1, 0), -r(0, 0));
        c = 0.0;
    }
    CompensatorState s;
    s.config = PlateConfig::qwp_hwp_qwp;
    s.angles = {-c / 2.0, (a - b - c) / 4.0, a / 2.0};
    s.wrap();
    return s;
}

BasisQber rotation_qber(const Rotation3& m) {
    BasisQber q;
    q.z = std::clamp(0.5 * (1.0 - m(0, 0)), 0.0, 1.0);
    q.x = std::clamp(0.5 * (1.0 - m(1, 1)), 0.0, 1.0);
    return q;
}

BasisQber combine_floor(BasisQber rot, double floor) {
    auto mix = [floor](double e) { return e * (1.0 - floor) + (1.0 - e) * floor; };
    return {mix(rot.z), mix(rot.x)};
}

double measured_qber(const PolarizationDrift& drift, const CompensatorState& comp, double floor,
                     ShotNoise noise) {
    BasisQber q = combine_floor(rotation_qber(comp.stokes() * drift.stokes()), floor);
    if (noise.photons > 0 && noise.rng) {
        double n = static_cast<double>(noise.photons);
        q.z = static_cast<double>(noise.rng->binomial(noise.photons, q.z)) / n;
        q.x = static_cast<double>(noise.rng->binomial(noise.photons, q.x)) / n;
    }
    return q.mean();
}

double measured_qber(const PolarizationDrift& drift, const CompensatorState& comp,
                     const OperatingPoint& op, ShotNoise noise) {
    auto e = qber_total(op);
    return measured_qber(drift, comp, e ? *e : 0.5, noise);
}

CompensationResult compensate(const CompensatorState& start, const QberProbe& probe, int budget,
                              CompensateOptions options) {
    if (budget < 1) throw ValidationError("budget", "must be >= 1");
    CompensationResult out;
    out.state = start;
    out.state.wrap();
    double fx = probe(out.state);
    out.probes_used = 1;
    out.state.qber_estimate = std::clamp(fx, 0.0, 0.5);

    const bool three = start.config == PlateConfig::qwp_hwp_qwp;
    const int dims = three ? 3 : 2;
    Rotation3 current = three ? out.state.stokes() : Rotation3::Identity();
    double step = options.initial_step;

    while (step >= options.min_step) {
        bool moved = false;
        for (int k = 0; k < dims && !moved; ++k) {
            for (double sign : {1.0, -1.0}) {
                if (out.probes_used >= budget) {
                    out.budget_exhausted = true;
                    return out;
                }
                CompensatorState cand;
                Rotation3 cand_rot;
                if (three) {
                    cand_rot = axis_rotation(k, sign * step) * current;
                    cand = plates_for_rotation(cand_rot);
                } else {
                    cand = out.state;
                    cand.angles[k] += sign * step;
                    cand.wrap();
                }
                double v = probe(cand);
                ++out.probes_used;
                if (v < fx) {
                    fx = v;
                    cand.iterations = out.state.iterations + 1;
                    cand.qber_estimate = std::clamp(v, 0.0, 0.5);
                    out.state = cand;
                    if (three) current = cand_rot;
                    out.accepted_qber.push_back(v);
                    moved = true;
                    break;
                }
            }
        }
        if (!moved) step *= 0.5;
    }
    out.converged = true;
    return out;
}

std::vector<TrackingSample> track_drift(PolarizationDrift drift, CompensatorState comp,
                                        double floor, const TrackingOptions& options) {
    std::vector<TrackingSample> trace;
    trace.reserve(static_cast<std::size_t>(std::max(0, options.steps)));
    for (int i = 1; i <= options.steps; ++i) {
        drift = apply_drift(drift, options.dt_s);
        auto probe = [&](const CompensatorState& c) {
            return measured_qber(drift, c, floor, options.noise);
        };
        CompensationResult res = compensate(comp, probe, options.probes_per_step, options.search);
        comp = res.state;
        TrackingSample s;
        s.time_s = i * options.dt_s;
        s.drift_angle = drift.angle();
        s.residual_qber = measured_qber(drift, comp, floor);
        s.probes_used = res.probes_used;
        trace.push_back(s);
    }
    return trace;
}

void write_trace_csv(std::ostream& os, const std::vector<TrackingSample>& trace) {
    os << "time_s,drift_angle,residual_qber,probes_used\n";
    char buf[160];
    for (const auto& s : trace) {
        std::snprintf(buf, sizeof buf, "%.6f,%.10g,%.10g,%d\n", s.time_s, s.drift_angle,
                      s.residual_qber, s.probes_used);
        os << buf;
    }
}

}  // namespace qkd
