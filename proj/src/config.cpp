#include "qkd/config.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>

namespace qkd {

using json = nlohmann::ordered_json;

namespace {

template <class E>
E parse_enum(const std::string& s, const char* field, std::initializer_list<E> values) {
    for (E v : values)
        if (s == to_string(v)) return v;
    std::string allowed;
    for (E v : values) allowed += std::string(allowed.empty() ? "" : ", ") + to_string(v);
    throw ValidationError(field, "unknown value '" + s + "' (expected " + allowed + ")");
}

const char* plate_name(PlateConfig p) { return p == PlateConfig::qwp_hwp ? "qwp_hwp" : "qwp_hwp_qwp"; }

double as_number(const json& v, const std::string& field) {
    if (!v.is_number()) throw ValidationError(field, "must be a number");
    return v.get<double>();
}

std::uint64_t as_count(const json& v, const std::string& field) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) {
        if (v.get<std::int64_t>() < 0) throw ValidationError(field, "must be >= 0");
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
    }
    if (v.is_number_float()) {
        double d = v.get<double>();
        if (d >= 0.0 && d < 1.8e19 && d == std::floor(d)) return static_cast<std::uint64_t>(d);
    }
    throw ValidationError(field, "must be a non-negative integer");
}

bool as_bool(const json& v, const std::string& field) {
    if (!v.is_boolean()) throw ValidationError(field, "must be true or false");
    return v.get<bool>();
}

std::string as_string(const json& v, const std::string& field) {
    if (!v.is_string()) throw ValidationError(field, "must be a string");
    return v.get<std::string>();
}

using Setter = std::function<void(const json&, const std::string&)>;

void bind_section(const json& j, const std::string& section, const std::map<std::string, Setter>& fields) {
    if (!j.contains(section)) return;
    const json& s = j.at(section);
    if (!s.is_object()) throw ValidationError(section, "must be an object");
    for (auto it = s.begin(); it != s.end(); ++it) {
        std::string name = section + "." + it.key();
        auto f = fields.find(it.key());
        if (f == fields.end()) throw ValidationError(name, "unknown field");
        f->second(it.value(), name);
    }
}

Setter num(double& x) {
    return [&x](const json& v, const std::string& f) { x = as_number(v, f); };
}
Setter flag(bool& x) {
    return [&x](const json& v, const std::string& f) { x = as_bool(v, f); };
}

void merge_into(json& dst, const json& src) {
    for (auto it = src.begin(); it != src.end(); ++it) {
        if (it.value().is_object() && dst.contains(it.key()) && dst[it.key()].is_object())
            merge_into(dst[it.key()], it.value());
        else
            dst[it.key()] = it.value();
    }
}

json resolve(const std::filesystem::path& path, int depth) {
    if (depth > 8) throw ValidationError("base", "scenario inheritance is nested too deeply");
    std::ifstream in(path);
    if (!in) throw ValidationError("scenario", "cannot open " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError("scenario", path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw ValidationError("scenario", "top level must be an object");
    json out = json::object();
    if (j.contains("base")) {
        std::filesystem::path base = as_string(j["base"], "base");
        if (base.is_relative()) base = path.parent_path() / base;
        out = resolve(base, depth + 1);
    }
    json own = j;
    own.erase("base");
    own.erase("overrides");
    merge_into(out, own);
    if (j.contains("overrides")) {
        const json& o = j["overrides"];
        if (!o.is_object()) throw ValidationError("overrides", "must be an object of dotted paths");
        for (auto it = o.begin(); it != o.end(); ++it) set_dotted(out, it.key(), it.value());
    }
    return out;
}

}  // namespace

ReferencePlane parse_reference_plane(const std::string& s) {
    return parse_enum(s, "options.multiphoton_plane", {ReferencePlane::first_lens, ReferencePlane::channel_input});
}

PhaseErrorModel parse_phase_error(const std::string& s) {
    return parse_enum(s, "options.phase_error", {PhaseErrorModel::conservative, PhaseErrorModel::vacuum_aware});
}

DeadTimeModel parse_dead_time(const std::string& s) {
    return parse_enum(s, "options.dead_time",
                      {DeadTimeModel::none, DeadTimeModel::aggregate, DeadTimeModel::per_detector});
}

void set_dotted(json& j, const std::string& dotted, const json& value) {
    if (dotted.empty()) throw ValidationError("overrides", "empty path");
    json* cur = &j;
    std::size_t start = 0;
    for (;;) {
        std::size_t dot = dotted.find('.', start);
        std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ValidationError(dotted, "malformed dotted path");
        if (dot == std::string::npos) {
            (*cur)[key] = value;
            return;
        }
        if (!cur->contains(key) || !(*cur)[key].is_object()) (*cur)[key] = json::object();
        cur = &(*cur)[key];
        start = dot + 1;
    }
}

json resolve_scenario_json(const std::string& path) { return resolve(path, 0); }

ScenarioConfig scenario_from_json(const json& j) {
    if (!j.is_object()) throw ValidationError("scenario", "top level must be an object");
    static const std::map<std::string, int> sections = {
        {"name", 0},   {"description", 0}, {"source", 1},  {"link", 1},    {"protocol", 1},
        {"security", 1}, {"options", 1},   {"simulation", 1}, {"session", 1}, {"polcomp", 1}};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!sections.count(it.key())) throw ValidationError(it.key(), "unknown section");

    ScenarioConfig c;
    c.resolved = j;
    OperatingPoint& op = c.op;
    SourceModel& s = op.source;
    bind_section(j, "source", {{"mean_photon_number", num(s.mean_photon_number)},
                               {"g2_zero", num(s.g2_zero)},
                               {"lifetime_ps", num(s.lifetime_ps)},
                               {"pre_attenuation", num(s.pre_attenuation)},
                               {"reference_rate_hz", num(s.reference_rate_hz)}});
    LinkModel& l = op.link;
    bind_section(j, "link",
                 {{"transmitter_efficiency", num(l.transmitter_efficiency)},
                  {"receiver_efficiency", num(l.receiver_efficiency)},
                  {"detector_efficiency", num(l.detector_efficiency)},
                  {"dark_count_prob", num(l.dark_count_prob)},
                  {"dark_count_reference_rate_hz", num(l.dark_count_reference_rate_hz)},
                  {"dead_time_ns", num(l.dead_time_ns)},
                  {"misalignment_prob", num(l.misalignment_prob)},
                  {"channel_loss_db", num(l.channel_loss_db)},
                  {"fibre_attenuation_db_per_km", num(l.fibre_attenuation_db_per_km)},
                  {"detector_count",
                   [&l](const json& v, const std::string& f) {
                       if (!v.is_number_integer()) throw ValidationError(f, "must be an integer");
                       l.detector_count = v.get<int>();
                   }},
                  {"receiver_includes_detector", flag(l.receiver_includes_detector)},
                  {"jitter_ps", num(l.jitter_ps)},
                  {"arrival_offset_ps", num(l.arrival_offset_ps)}});
    ProtocolParams& p = op.protocol;
    bind_section(j, "protocol", {{"clock_rate_hz", num(p.clock_rate_hz)},
                                 {"acquisition_time_s", num(p.acquisition_time_s)},
                                 {"basis_bias", num(p.basis_bias)},
                                 {"block_size", num(p.block_size)},
                                 {"error_correction_inefficiency", num(p.error_correction_inefficiency)}});
    SecurityBudget& b = op.budget;
    bind_section(j, "security", {{"eps_sec", num(b.eps_sec)},
                                 {"eps_cor", num(b.eps_cor)},
                                 {"eps_pe", num(b.eps_pe)},
                                 {"eps_ec", num(b.eps_ec)},
                                 {"eps_pa", num(b.eps_pa)}});
    ModelOptions& o = op.options;
    bind_section(j, "options",
                 {{"multiphoton_plane",
                   [&o](const json& v, const std::string& f) { o.multiphoton_plane = parse_reference_plane(as_string(v, f)); }},
                  {"phase_error",
                   [&o](const json& v, const std::string& f) { o.phase_error = parse_phase_error(as_string(v, f)); }},
                  {"dead_time",
                   [&o](const json& v, const std::string& f) { o.dead_time = parse_dead_time(as_string(v, f)); }},
                  {"lifetime_limited_emission", flag(o.lifetime_limited_emission)}});

    DriftSettings drift;
    bool has_drift = false;
    bind_section(j, "simulation",
                 {{"n_pulses", [&c](const json& v, const std::string& f) { c.n_pulses = as_count(v, f); }},
                  {"seed", [&c](const json& v, const std::string& f) { c.seed = as_count(v, f); }},
                  {"jitter_sigma_ps", [&c](const json& v, const std::string& f) { c.jitter_sigma_ps = as_number(v, f); }},
                  {"drift_rate_rad_per_s",
                   [&](const json& v, const std::string& f) {
                       drift.rate_rad_per_s = as_number(v, f);
                       has_drift = true;
                   }},
                  {"drift_seed",
                   [&](const json& v, const std::string& f) {
                       drift.seed = as_count(v, f);
                       has_drift = true;
                   }},
                  {"drift_random_initial",
                   [&](const json& v, const std::string& f) {
                       drift.random_initial = as_bool(v, f);
                       has_drift = true;
                   }}});
    if (has_drift) c.drift = drift;

    KeyPolicy& k = c.policy;
    bind_section(j, "session",
                 {{"disclose_fraction", num(k.disclose_fraction)},
                  {"block_size", [&k](const json& v, const std::string& f) { k.block_size = as_number(v, f); }},
                  {"window_start_ps", num(k.window.start_ps)},
                  {"window_width_ps", num(k.window.width_ps)},
                  {"cascade_first_block_factor", num(k.cascade.first_block_factor)}});

    PolcompSettings& pc = c.polcomp;
    bind_section(j, "polcomp",
                 {{"plates",
                   [&pc](const json& v, const std::string& f) {
                       std::string s = as_string(v, f);
                       if (s == plate_name(PlateConfig::qwp_hwp))
                           pc.plates = PlateConfig::qwp_hwp;
                       else if (s == plate_name(PlateConfig::qwp_hwp_qwp))
                           pc.plates = PlateConfig::qwp_hwp_qwp;
                       else
                           throw ValidationError(f, "expected qwp_hwp or qwp_hwp_qwp");
                   }},
                  {"budget", [&pc](const json& v, const std::string& f) { pc.budget = static_cast<int>(as_count(v, f)); }},
                  {"photons", [&pc](const json& v, const std::string& f) { pc.photons = as_count(v, f); }},
                  {"steps", [&pc](const json& v, const std::string& f) { pc.steps = static_cast<int>(as_count(v, f)); }},
                  {"dt_s", num(pc.dt_s)},
                  {"probes_per_step",
                   [&pc](const json& v, const std::string& f) { pc.probes_per_step = static_cast<int>(as_count(v, f)); }}});

    op.validate();
    if (c.jitter_sigma_ps && !(*c.jitter_sigma_ps >= 0.0))
        throw ValidationError("simulation.jitter_sigma_ps", "must be >= 0");
    if (c.n_pulses < 1) throw ValidationError("simulation.n_pulses", "must be >= 1");
    if (c.drift && !(c.drift->rate_rad_per_s >= 0.0))
        throw ValidationError("simulation.drift_rate_rad_per_s", "must be >= 0");
    if (!(k.disclose_fraction > 0.0 && k.disclose_fraction < 1.0))
        throw ValidationError("session.disclose_fraction", "must lie in (0, 1)");
    if (k.block_size && !(*k.block_size >= 1.0)) throw ValidationError("session.block_size", "must be >= 1");
    if (!(k.window.start_ps >= 0.0)) throw ValidationError("session.window_start_ps", "must be >= 0");
    if (!(k.window.width_ps > 0.0)) throw ValidationError("session.window_width_ps", "must be positive");
    if (pc.budget < 1) throw ValidationError("polcomp.budget", "must be >= 1");
    if (!(pc.dt_s >= 0.0)) throw ValidationError("polcomp.dt_s", "must be >= 0");
    if (pc.probes_per_step < 1) throw ValidationError("polcomp.probes_per_step", "must be >= 1");
    return c;
}

ScenarioConfig load_scenario(const std::string& path) { return scenario_from_json(resolve_scenario_json(path)); }

Scenario ScenarioConfig::scenario() const {
    Scenario s;
    s.op = op;
    s.jitter_sigma_ps = jitter_sigma_ps;
    s.drift = drift_state();
    s.n_pulses = n_pulses;
    s.seed = seed;
    return s;
}

std::optional<PolarizationDrift> ScenarioConfig::drift_state() const {
    if (!drift) return std::nullopt;
    PolarizationDrift d;
    if (drift->random_initial) d = random_drift(drift->seed, drift->rate_rad_per_s);
    d.drift_rate = drift->rate_rad_per_s;
    d.seed = drift->seed;
    return d;
}

}  // namespace qkd
