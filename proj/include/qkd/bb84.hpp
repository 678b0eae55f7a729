#pragma once

#include <cstdint>

namespace qkd {

// H = Z0, V = Z1, D = X0, A = X1. Detector channels use the same numbering.
enum class State : std::uint8_t { H = 0, V = 1, D = 2, A = 3 };
enum class Basis : std::uint8_t { Z = 0, X = 1 };

constexpr Basis basis_of(State s) { return static_cast<std::uint8_t>(s) < 2 ? Basis::Z : Basis::X; }
constexpr int bit_of(State s) { return static_cast<std::uint8_t>(s) & 1; }
constexpr State state_of(Basis b, int bit) {
    return static_cast<State>((b == Basis::X ? 2 : 0) + (bit & 1));
}
constexpr int index_of(State s) { return static_cast<int>(s); }

inline const char* to_string(State s) {
    switch (s) {
    case State::H: return "H";
    case State::V: return "V";
    case State::D: return "D";
    default: return "A";
    }
}

inline const char* to_string(Basis b) { return b == Basis::Z ? "Z" : "X"; }

}  // namespace qkd
