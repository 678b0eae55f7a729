#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"
#include "qkd/keygen.hpp"
#include "qkd/keyrate.hpp"
#include "qkd/montecarlo.hpp"
#include "qkd/polcomp.hpp"

namespace qkd {

struct DriftSettings {
    double rate_rad_per_s = 0.0;
    std::uint64_t seed = 1;
    bool random_initial = true;  // Haar-random starting rotation
};

struct PolcompSettings {
    PlateConfig plates = PlateConfig::qwp_hwp_qwp;
    int budget = 200;
    std::uint64_t photons = 0;  // shot-noise budget per probe, 0 = noise-free
    int steps = 1000;
    double dt_s = 1.0;
    int probes_per_step = 12;
};

// Everything a scenario file can set. Sections: source, link, protocol,
// security, options, simulation, session, polcomp.
struct ScenarioConfig {
    OperatingPoint op;
    std::uint64_t n_pulses = 1'000'000;
    std::uint64_t seed = 1;
    std::optional<double> jitter_sigma_ps;
    std::optional<DriftSettings> drift;
    KeyPolicy policy;
    PolcompSettings polcomp;
    nlohmann::ordered_json resolved;  // after base and overrides

    Scenario scenario() const;
    std::optional<PolarizationDrift> drift_state() const;
};

// Reads a scenario file, following "base" (a path relative to the file) and
// then applying "overrides" (dotted paths such as "link.channel_loss_db").
nlohmann::ordered_json resolve_scenario_json(const std::string& path);

// Sets a dotted path; intermediate objects are created as needed.
void set_dotted(nlohmann::ordered_json& j, const std::string& dotted, const nlohmann::ordered_json& value);

// Unknown or mistyped fields and violated invariants raise ValidationError
// naming the first offending field.
ScenarioConfig scenario_from_json(const nlohmann::ordered_json& j);
ScenarioConfig load_scenario(const std::string& path);

ReferencePlane parse_reference_plane(const std::string& s);
PhaseErrorModel parse_phase_error(const std::string& s);
DeadTimeModel parse_dead_time(const std::string& s);

}  // namespace qkd
