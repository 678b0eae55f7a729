#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "qkd/jones.hpp"
#include "qkd/rng.hpp"

namespace qkd {

struct OperatingPoint;

// Lumped fibre birefringence as a Poincare-sphere rotation that performs a
// random walk of drift_rate radians per second.
struct PolarizationDrift {
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    double drift_rate = 0.0;  // rad/s
    std::uint64_t seed = 0;
    std::uint64_t steps = 0;  // random-walk steps taken so far

    Jones jones() const { return jones_from_rotation(rotation); }
    Rotation3 stokes() const { return rotation.toRotationMatrix(); }
    // total rotation angle away from the identity
    double angle() const;
};

PolarizationDrift apply_drift(const PolarizationDrift& drift, double dt_s);

// Haar-random static fibre transform
PolarizationDrift random_drift(std::uint64_t seed, double drift_rate = 0.0);

enum class PlateConfig { qwp_hwp, qwp_hwp_qwp };

// Retarder stack at the receiver. angles[0] is the first plate the light
// meets: QWP, HWP, then (three-plate mode) a second QWP.
struct CompensatorState {
    PlateConfig config = PlateConfig::qwp_hwp_qwp;
    std::array<double, 3> angles{0.0, 0.0, 0.0};
    double qber_estimate = 0.5;
    int iterations = 0;

    int plates() const { return config == PlateConfig::qwp_hwp ? 2 : 3; }
    Jones jones() const;
    Rotation3 stokes() const { return stokes_rotation(jones()); }
    void wrap();
};

// Three-plate settings realising the given Stokes rotation (ZYZ Euler angles).
CompensatorState plates_for_rotation(const Rotation3& r);

struct BasisQber {
    double z = 0.0;
    double x = 0.0;
    double mean() const { return 0.5 * (z + x); }
};

// Matched-basis error of a residual rotation, no intrinsic floor.
BasisQber rotation_qber(const Rotation3& residual);

// Adds an intrinsic error floor: e_rot (1 - f) + (1 - e_rot) f.
BasisQber combine_floor(BasisQber rotation, double floor);

struct ShotNoise {
    std::uint64_t photons = 0;  // sifted bits per probe and basis
    rng::Xoshiro256* rng = nullptr;
};

double measured_qber(const PolarizationDrift& drift, const CompensatorState& comp, double floor,
                     ShotNoise noise = {});
double measured_qber(const PolarizationDrift& drift, const CompensatorState& comp,
                     const OperatingPoint& op, ShotNoise noise = {});

using QberProbe = std::function<double(const CompensatorState&)>;

struct CompensateOptions {
    double initial_step = 1.5707963267948966;  // rad
    double min_step = 1e-7;
};

struct CompensationResult {
    CompensatorState state;
    int probes_used = 0;
    bool budget_exhausted = false;
    bool converged = false;
    std::vector<double> accepted_qber;  // probe value after each accepted move
};

// Derivative-free compass search on the probed QBER. With three plates the
// search moves along rotations about the fixed S1/S2/S3 axes and maps back
// to plate angles in closed form; with two plates it moves the angles.
CompensationResult compensate(const CompensatorState& start, const QberProbe& probe, int budget,
                              CompensateOptions options = {});

struct TrackingSample {
    double time_s = 0.0;
    double drift_angle = 0.0;
    double residual_qber = 0.0;
    int probes_used = 0;
};

struct TrackingOptions {
    int steps = 1000;
    double dt_s = 1.0;
    int probes_per_step = 12;
    CompensateOptions search{0.05, 1e-6};
    ShotNoise noise;
};

// Closed loop: drift for dt, then a bounded compensation round.
std::vector<TrackingSample> track_drift(PolarizationDrift drift, CompensatorState comp,
                                        double floor, const TrackingOptions& options);

void write_trace_csv(std::ostream& os, const std::vector<TrackingSample>& trace);

}  // namespace qkd
