#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "qkd/config.hpp"
#include "support.hpp"

using namespace qkd;
using json = nlohmann::ordered_json;

#ifndef QKD_SCENARIO_DIR
#define QKD_SCENARIO_DIR "scenarios"
#endif

namespace {

std::string field_of(const json& j) {
    try {
        scenario_from_json(j);
    } catch (const ValidationError& e) {
        return e.field();
    }
    return "";
}

}  // namespace

TEST_CASE("baseline scenario file matches the test fixture") {
    ScenarioConfig c = load_scenario(QKD_SCENARIO_DIR "/baseline.json");
    OperatingPoint ref = qkd::test::baseline_op();
    CHECK(asymptotic_skb_per_pulse(c.op).skb_per_pulse == doctest::Approx(asymptotic_skb_per_pulse(ref).skb_per_pulse));
    CHECK(c.op.link.receiver_includes_detector);
    CHECK(c.op.options.phase_error == PhaseErrorModel::vacuum_aware);
    CHECK(c.n_pulses == 10'000'000);
    CHECK(c.jitter_sigma_ps);
}

TEST_CASE("inheritance and overrides") {
    ScenarioConfig imp = load_scenario(QKD_SCENARIO_DIR "/improved.json");
    CHECK(imp.op.link.transmitter_efficiency == doctest::Approx(0.60));
    CHECK(imp.op.link.channel_loss_db == doctest::Approx(25.49));  // inherited
    CHECK(imp.resolved.contains("link"));
    CHECK_FALSE(imp.resolved.contains("overrides"));

    auto dir = std::filesystem::temp_directory_path() / "qkd_config_test";
    std::filesystem::create_directories(dir);
    {
        std::ofstream(dir / "a.json") << R"({"base": "b.json"})";
        std::ofstream(dir / "b.json") << R"({"base": "a.json"})";
    }
    CHECK_THROWS_AS(resolve_scenario_json((dir / "a.json").string()), ValidationError);
    {
        std::ofstream(dir / "bad.json") << "{ not json";
    }
    CHECK_THROWS_AS(load_scenario((dir / "bad.json").string()), ValidationError);
    CHECK_THROWS_AS(load_scenario((dir / "missing.json").string()), ValidationError);
}

TEST_CASE("dotted paths") {
    json j = json::object();
    set_dotted(j, "link.channel_loss_db", 12.5);
    set_dotted(j, "simulation.seed", 3);
    CHECK(j["link"]["channel_loss_db"] == 12.5);
    ScenarioConfig c = scenario_from_json(j);
    CHECK(c.op.link.channel_loss_db == 12.5);
    CHECK(c.seed == 3);
}

TEST_CASE("errors name the offending field") {
    CHECK(field_of(json{{"link", {{"bogus", 1}}}}) == "link.bogus");
    CHECK(field_of(json{{"nonsense", {}}}) == "nonsense");
    CHECK(field_of(json{{"source", {{"g2_zero", 3.0}}}}) == "source.g2_zero");
    CHECK(field_of(json{{"source", {{"g2_zero", "high"}}}}) == "source.g2_zero");
    CHECK(field_of(json{{"options", {{"phase_error", "optimistic"}}}}) == "options.phase_error");
    CHECK(field_of(json{{"simulation", {{"n_pulses", -5}}}}) == "simulation.n_pulses");
    CHECK(field_of(json{{"session", {{"disclose_fraction", 1.5}}}}) == "session.disclose_fraction");
    CHECK(field_of(json{{"polcomp", {{"plates", "five"}}}}) == "polcomp.plates");
    CHECK(field_of(json{{"link", {{"channel_loss_db", 10}}}}) == "");
}

TEST_CASE("enum names round trip") {
    for (auto p : {ReferencePlane::first_lens, ReferencePlane::channel_input})
        CHECK(parse_reference_plane(to_string(p)) == p);
    for (auto m : {PhaseErrorModel::conservative, PhaseErrorModel::vacuum_aware})
        CHECK(parse_phase_error(to_string(m)) == m);
    for (auto m : {DeadTimeModel::none, DeadTimeModel::aggregate, DeadTimeModel::per_detector})
        CHECK(parse_dead_time(to_string(m)) == m);
    CHECK_THROWS_AS(parse_dead_time("sometimes"), ValidationError);
}

TEST_CASE("scenario assembly") {
    json j = {{"simulation", {{"drift_rate_rad_per_s", 0.01}, {"drift_seed", 4}, {"n_pulses", 1000}}}};
    ScenarioConfig c = scenario_from_json(j);
    Scenario s = c.scenario();
    CHECK(s.n_pulses == 1000);
    REQUIRE(s.drift);
    CHECK(s.drift->drift_rate == doctest::Approx(0.01));
    CHECK(c.drift_state());
}
