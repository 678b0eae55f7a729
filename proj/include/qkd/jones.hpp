#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "qkd/bb84.hpp"

// Jones calculus and its Stokes-space (Poincare sphere) image.
// Stokes axes: S1 = H/V, S2 = D/A, S3 = circular.
namespace qkd {

using Jones = Eigen::Matrix2cd;
using JonesVector = Eigen::Vector2cd;
using Rotation3 = Eigen::Matrix3d;

JonesVector jones_vector(State s);

// Linear retarder with fast axis at `angle`, phase delay `retardance`.
Jones waveplate(double angle, double retardance);
Jones quarter_wave(double angle);
Jones half_wave(double angle);

// M_ij = Tr(sigma_i U sigma_j U^dagger) / 2
Rotation3 stokes_rotation(const Jones& u);

// SU(2) element whose Stokes image is the given rotation.
Jones jones_from_rotation(const Eigen::Quaterniond& q);

// |<out|U|in>|^2
double transition_probability(const Jones& u, State in, State out);

}  // namespace qkd
