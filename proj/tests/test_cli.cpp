#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kWork = fs::temp_directory_path() / "qkdbench_cli_test";

int run(const std::string& args) {
    std::string cmd = std::string(QKDBENCH) + " " + args + " > /dev/null 2>&1";
    int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string scenario(const char* name) { return std::string(QKD_SCENARIO_DIR) + "/" + name; }

std::string out(const std::string& name) { return (kWork / name).string(); }

json manifest(const std::string& name) {
    std::ifstream in(kWork / name / "manifest.json");
    return json::parse(in);
}

struct Fresh {
    Fresh() {
        fs::remove_all(kWork);
        fs::create_directories(kWork);
    }
};

}  // namespace

TEST_CASE("exit code 0 on a positive key, 2 on zero key") {
    Fresh f;
    CHECK(run("keyrate -s " + scenario("baseline.json") + " -o " + out("k0")) == 0);
    CHECK(run("keyrate -s " + scenario("baseline.json") + " --loss 40 -o " + out("k40")) == 2);
    CHECK(run("keyrate -s " + scenario("baseline.json") + " --regime finite --block-size 1e8 -o " + out("kf")) == 0);
    CHECK(run("mtl -s " + scenario("degenerate.json") + " -o " + out("deg")) == 2);
    CHECK(run("optimize -s " + scenario("baseline.json") + " -o " + out("opt")) == 0);
    CHECK(run("session -s " + scenario("baseline.json") + " --set link.channel_loss_db=40 --block-size 1e3 -o " +
              out("s40")) == 2);
}

TEST_CASE("exit code 3 on validation errors") {
    Fresh f;
    CHECK(run("keyrate --set link.bogus=1 -o " + out("a")) == 3);
    CHECK(run("keyrate --set source.g2_zero=2 -o " + out("b")) == 3);
    CHECK(run("keyrate --set nokeyvalue -o " + out("c")) == 3);
    CHECK(run("keyrate -s " + out("missing.json") + " -o " + out("d")) == 3);
    CHECK(run("keyrate --regime sideways -o " + out("e")) == 3);
    CHECK(run("mtl --regimes asymptotic,zero -o " + out("f")) == 3);
    CHECK(run("sweep --axis temperature -o " + out("g")) == 3);
    CHECK(run("simulate --format xml --n-pulses 10 -o " + out("h")) == 3);
    CHECK(run("polcomp --mode spin -o " + out("i")) == 3);
    CHECK(run("frobnicate") == 3);
    {
        std::ofstream(kWork / "empty.bin");
    }
    CHECK(run("analyze --tags " + out("empty.bin") + " -o " + out("j")) == 3);
    CHECK_FALSE(fs::exists(kWork / "j" / "manifest.json"));
    {
        std::ofstream(kWork / "trunc.bin") << "123456789012345";
    }
    CHECK(run("analyze --tags " + out("trunc.bin") + " -o " + out("k")) == 3);
}

TEST_CASE("exit code 4 on runtime aborts, with no partial outputs") {
    Fresh f;
    {
        std::ofstream(kWork / "file") << "x";
    }
    CHECK(run("keyrate -o " + out("file") + "/sub") == 4);
    CHECK(run("simulate --n-pulses 1000 -o " + out("file") + "/sub") == 4);
    CHECK(run("sweep --axis dataset --dataset " + out("nope.csv") + " -o " + out("sw")) == 3);
    for (auto& e : fs::recursive_directory_iterator(kWork)) CHECK(e.path().extension() != ".tmp");
}

TEST_CASE("simulation commands are bit-identical on re-run") {
    Fresh f;
    const std::string sim = "simulate -s " + scenario("baseline.json") + " --n-pulses 2000000 --seed 17 --set link.channel_loss_db=5 -o ";
    REQUIRE(run(sim + out("s1")) == 0);
    REQUIRE(run(sim + out("s2") + " --threads 1") == 0);
    json a = manifest("s1"), b = manifest("s2");
    CHECK(a["outputs"] == b["outputs"]);
    CHECK(a["outputs"].size() == 3);
    CHECK(a["seed"] == 17);
    CHECK(a.contains("csv_schema_version"));
    CHECK(a.contains("timestamp"));
    CHECK(a["scenario"]["link"]["channel_loss_db"] == 5);

    const std::string ses = "session -s " + scenario("baseline.json") + " --block-size 1e4 --seed 3 -o ";
    REQUIRE(run(ses + out("k1")) == 0);
    REQUIRE(run(ses + out("k2")) == 0);
    CHECK(manifest("k1")["outputs"] == manifest("k2")["outputs"]);
    CHECK(fs::file_size(kWork / "k1" / "alice_key.bin") > 0);

    const std::string g2 = "g2 -s " + scenario("hbt_228.json") + " --n-pulses 1000000 -o ";
    REQUIRE(run(g2 + out("g1")) == 0);
    REQUIRE(run(g2 + out("g2")) == 0);
    CHECK(manifest("g1")["outputs"] == manifest("g2")["outputs"]);
}

TEST_CASE("analyze consumes simulate output") {
    Fresh f;
    const std::string sc = " -s " + scenario("baseline.json") + " --set link.channel_loss_db=10";
    REQUIRE(run("simulate" + sc + " --n-pulses 10000000 -o " + out("sim")) == 0);
    REQUIRE(run("analyze" + sc + " --tags " + out("sim/tags.bin") + " --alice " + out("sim/alice.json") + " -o " +
                out("an")) == 0);
    std::ifstream in(kWork / "an" / "analysis.json");
    json a = json::parse(in);
    CHECK(std::abs(a["qber_z_score"].get<double>()) < 3.0);
    CHECK(std::abs(a["p_c_z"].get<double>()) < 3.0);
    CHECK(a["lifetime_ps"].get<double>() == doctest::Approx(592.5).epsilon(0.05));
    CHECK(fs::exists(kWork / "an" / "histogram.csv"));
    // csv tags too
    REQUIRE(run("simulate" + sc + " --n-pulses 100000 --format csv -o " + out("simc")) == 0);
    CHECK(run("analyze" + sc + " --tags " + out("simc/tags.csv") + " -o " + out("anc")) == 0);
}

TEST_CASE("every output is listed in the manifest") {
    Fresh f;
    REQUIRE(run("sweep -s " + scenario("baseline.json") + " --from 0 --to 30 --step 5 -o " + out("sw")) == 0);
    REQUIRE(run("polcomp -s " + scenario("baseline.json") + " --seeds 5 -o " + out("pc")) == 0);
    REQUIRE(run("mtl -s " + scenario("improved.json") + " -o " + out("mi")) == 0);
    for (const char* d : {"sw", "pc", "mi"}) {
        json m = manifest(d);
        std::size_t files = 0;
        for (auto& e : fs::directory_iterator(kWork / d))
            if (e.path().filename() != "manifest.json") ++files;
        CHECK(files == m["outputs"].size());
    }
}

TEST_CASE("clock-rate sweep defaults to the standard rates") {
    Fresh f;
    REQUIRE(run("sweep -s " + scenario("baseline.json") + " --axis clock_rate --regimes asymptotic -o " + out("cr")) == 0);
    std::ifstream in(kWork / "cr" / "sweep.csv");
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 5);
    CHECK(run("sweep --axis clock_rate --rates 1e8,fast -o " + out("bad")) == 3);
}
