#include "qkd/jones.hpp"

#include <cmath>
#include <complex>
#include <numbers>

namespace qkd {

namespace {

using cd = std::complex<double>;

const Jones& pauli(int i) {
    static const Jones s[3] = {
        (Jones() << 1, 0, 0, -1).finished(),
        (Jones() << 0, 1, 1, 0).finished(),
        (Jones() << 0, cd(0, -1), cd(0, 1), 0).finished(),
    };
    return s[i];
}

}  // namespace

JonesVector jones_vector(State s) {
    const double r = 1.0 / std::sqrt(2.0);
    switch (s) {
    case State::H: return JonesVector(1.0, 0.0);
    case State::V: return JonesVector(0.0, 1.0);
    case State::D: return JonesVector(r, r);
    default: return JonesVector(r, -r);
    }
}

Jones waveplate(double angle, double retardance) {
    double c = std::cos(angle), s = std::sin(angle);
    Eigen::Matrix2d r;
    r << c, -s, s, c;
    Jones d = Jones::Zero();
    d(0, 0) = std::polar(1.0, -retardance / 2.0);
    d(1, 1) = std::polar(1.0, retardance / 2.0);
    return r.cast<cd>() * d * r.transpose().cast<cd>();
}

Jones quarter_wave(double angle) { return waveplate(angle, std::numbers::pi / 2.0); }

Jones half_wave(double angle) { return waveplate(angle, std::numbers::pi); }

Rotation3 stokes_rotation(const Jones& u) {
    Rotation3 m;
    Jones ud = u.adjoint();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m(i, j) = 0.5 * (pauli(i) * u * pauli(j) * ud).trace().real();
    return m;
}

Jones jones_from_rotation(const Eigen::Quaterniond& q) {
    // exp(-i theta/2 n.sigma) rotates Stokes vectors by +theta about n
    Eigen::Quaterniond n = q.normalized();
    Jones u = Jones::Identity() * cd(n.w(), 0.0);
    u -= cd(0, 1) * (n.x() * pauli(0) + n.y() * pauli(1) + n.z() * pauli(2));
    return u;
}

double transition_probability(const Jones& u, State in, State out) {
    cd amp = jones_vector(out).dot(u * jones_vector(in));
    return std::norm(amp);
}

}  // namespace qkd
