// qkdbench: command-line front end for the BB84 workbench.
//
// Exit codes: 0 success or positive key, 2 zero key, 3 validation error,
// 4 runtime abort.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "qkd/config.hpp"
#include "qkd/keygen.hpp"
#include "qkd/keyrate.hpp"
#include "qkd/montecarlo.hpp"
#include "qkd/parallel.hpp"
#include "qkd/polcomp.hpp"
#include "qkd/tagio.hpp"
#include "qkd/tagproc.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace qkd;

namespace {

constexpr const char* kToolVersion = "0.1.0";
constexpr int kCsvSchemaVersion = 1;

enum Exit { kOk = 0, kZeroKey = 2, kValidation = 3, kRuntime = 4 };

class RuntimeAbort : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string num(double x) {
    char b[64];
    std::snprintf(b, sizeof b, "%.10g", x);
    return b;
}

std::uint64_t fnv1a(const std::string& data) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char b[17];
    std::snprintf(b, sizeof b, "%016llx", static_cast<unsigned long long>(v));
    return b;
}

std::string utc_now() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char b[32];
    std::strftime(b, sizeof b, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return b;
}

// Output files are staged as temporaries and renamed together with the
// manifest on commit; anything staged is removed if the run aborts.
class RunOutputs {
public:
    RunOutputs(fs::path dir, std::string command) : dir_(std::move(dir)), command_(std::move(command)) {}
    RunOutputs(const RunOutputs&) = delete;
    RunOutputs& operator=(const RunOutputs&) = delete;

    ~RunOutputs() {
        if (committed_) return;
        std::error_code ec;
        for (const auto& f : files_) fs::remove(dir_ / (f.name + ".tmp"), ec);
    }

    void prepare(std::uintmax_t expected_bytes) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) throw RuntimeAbort("cannot create output directory " + dir_.string() + ": " + ec.message());
        auto sp = fs::space(dir_, ec);
        if (!ec && sp.available < expected_bytes + (1u << 20))
            throw RuntimeAbort("insufficient disk space in " + dir_.string() + " (need about " +
                               std::to_string(expected_bytes) + " bytes)");
    }

    void write(const std::string& name, const std::string& content) {
        fs::path tmp = dir_ / (name + ".tmp");
        std::ofstream os(tmp, std::ios::binary);
        os.write(content.data(), static_cast<std::streamsize>(content.size()));
        os.close();
        if (!os) throw RuntimeAbort("failed to write " + tmp.string());
        files_.push_back({name, content.size(), hex64(fnv1a(content))});
    }

    void commit(json manifest) {
        json outs = json::array();
        for (const auto& f : files_) outs.push_back({{"path", f.name}, {"bytes", f.bytes}, {"fnv1a64", f.hash}});
        manifest["outputs"] = outs;
        for (const auto& f : files_) fs::rename(dir_ / (f.name + ".tmp"), dir_ / f.name);
        std::ofstream os(dir_ / "manifest.json");
        os << manifest.dump(2) << '\n';
        committed_ = true;
    }

    const fs::path& dir() const { return dir_; }

private:
    struct File {
        std::string name;
        std::size_t bytes;
        std::string hash;
    };
    fs::path dir_;
    std::string command_;
    std::vector<File> files_;
    bool committed_ = false;
};

struct Common {
    std::string scenario_path;
    std::vector<std::string> sets;
    std::string out_dir;
    int threads = 0;
    std::optional<std::uint64_t> seed;
};

ScenarioConfig load_config(const Common& c) {
    json j = c.scenario_path.empty() ? json::object() : resolve_scenario_json(c.scenario_path);
    for (const auto& s : c.sets) {
        auto eq = s.find('=');
        if (eq == std::string::npos) throw ValidationError("--set", "expected key=value, got '" + s + "'");
        std::string key = s.substr(0, eq), val = s.substr(eq + 1);
        json v;
        try {
            v = json::parse(val);
        } catch (const json::parse_error&) {
            v = val;  // bare strings
        }
        set_dotted(j, key, v);
    }
    ScenarioConfig cfg = scenario_from_json(j);
    if (c.seed) cfg.seed = *c.seed;
    return cfg;
}

json manifest_base(const std::string& command, const Common& c, const ScenarioConfig& cfg,
                   const std::vector<std::string>& argv) {
    json m;
    m["command"] = command;
    m["arguments"] = argv;
    m["scenario_path"] = c.scenario_path;
    m["scenario"] = cfg.resolved;
    m["seed"] = cfg.seed;
    m["output_dir"] = c.out_dir;
    m["tool_version"] = kToolVersion;
    m["csv_schema_version"] = kCsvSchemaVersion;
    m["timestamp"] = utc_now();
    return m;
}

void print_report(const KeyRateReport& r) {
    std::printf("regime          %s\n", to_string(r.regime));
    std::printf("p_c             %s\n", num(r.p_c).c_str());
    std::printf("p_m             %s\n", num(r.p_m).c_str());
    std::printf("e_tot           %s\n", num(r.e_tot).c_str());
    std::printf("e1_upper        %s\n", num(r.e1_upper).c_str());
    std::printf("skb_per_pulse   %s\n", num(r.skb_per_pulse).c_str());
    std::printf("skr_bits_per_s  %s\n", num(r.skr).c_str());
    if (r.finite) std::printf("final_key_bits  %llu\n", static_cast<unsigned long long>(r.finite->final_key_length));
    std::printf("zero_key        %s\n", r.zero_key ? "yes" : "no");
}

RegimeSpec parse_regime(const std::string& s) {
    if (s == "asymptotic") return RegimeSpec::asymptotic();
    try {
        std::size_t used = 0;
        double n = std::stod(s, &used);
        if (used == s.size() && n >= 1.0) return RegimeSpec::finite(n);
    } catch (const std::logic_error&) {
    }
    throw ValidationError("--regimes", "expected 'asymptotic' or a block size, got '" + s + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep))
        if (!item.empty()) out.push_back(item);
    return out;
}

// ---- commands ----

int cmd_keyrate(const Common& c, const std::vector<std::string>& argv, std::optional<double> loss,
                const std::string& regime, double block) {
    ScenarioConfig cfg = load_config(c);
    OperatingPoint op = loss ? cfg.op.with_loss(*loss) : cfg.op;
    op.validate();
    RegimeSpec spec = regime == "asymptotic" ? RegimeSpec::asymptotic() : RegimeSpec::finite(block);
    if (regime != "asymptotic" && regime != "finite")
        throw ValidationError("--regime", "expected asymptotic or finite");
    KeyRateReport r = evaluate(op, spec);
    print_report(r);
    RunOutputs out(c.out_dir, "keyrate");
    out.prepare(1 << 12);
    std::ostringstream csv;
    write_sweep_csv(csv, {{op.link.channel_loss_db, spec.label(), r}});
    out.write("keyrate.csv", csv.str());
    out.commit(manifest_base("keyrate", c, cfg, argv));
    return r.skb_per_pulse > 0.0 ? kOk : kZeroKey;
}

int cmd_mtl(const Common& c, const std::vector<std::string>& argv, const std::string& regimes) {
    ScenarioConfig cfg = load_config(c);
    std::ostringstream csv;
    csv << "regime,block_size,mtl_db,length_km,monotone,iterations\n";
    for (const auto& name : split(regimes, ',')) {
        RegimeSpec spec = parse_regime(name);
        MtlResult m = max_tolerable_loss(cfg.op, spec);
        double km = loss_to_length(m.loss_db, cfg.op.link.fibre_attenuation_db_per_km);
        std::printf("%-12s MTL %8.3f dB  (%.2f km)%s\n", spec.label().c_str(), m.loss_db, km,
                    m.monotone ? "" : "  [non-monotone]");
        csv << spec.label() << ',' << num(spec.block_size) << ',' << num(m.loss_db) << ',' << num(km) << ','
            << (m.monotone ? 1 : 0) << ',' << m.iterations << '\n';
    }
    RunOutputs out(c.out_dir, "mtl");
    out.prepare(1 << 12);
    out.write("mtl.csv", csv.str());
    out.commit(manifest_base("mtl", c, cfg, argv));
    return kOk;
}

int cmd_sweep(const Common& c, const std::vector<std::string>& argv, const std::string& axis_name, double from,
              double to, double step, const std::string& dataset_path, const std::string& regimes,
              const std::string& rate_list) {
    ScenarioConfig cfg = load_config(c);
    SweepAxis axis;
    if (axis_name == "loss")
        axis = SweepAxis::loss;
    else if (axis_name == "clock_rate")
        axis = SweepAxis::clock_rate;
    else if (axis_name == "dataset")
        axis = SweepAxis::dataset;
    else
        throw ValidationError("--axis", "expected loss, clock_rate or dataset");
    std::vector<double> grid;
    std::vector<DatasetRow> dataset;
    if (axis == SweepAxis::dataset) {
        if (dataset_path.empty()) throw ValidationError("--dataset", "required for the dataset axis");
        dataset = read_dataset_csv(dataset_path);
    } else if (!rate_list.empty()) {
        for (const auto& r : split(rate_list, ',')) {
            try {
                grid.push_back(std::stod(r));
            } catch (const std::exception&) {
                throw ValidationError("--rates", "not a number: " + r);
            }
        }
    } else {
        if (!(step > 0.0) || !(to >= from)) throw ValidationError("--step", "need step > 0 and to >= from");
        for (int i = 0;; ++i) {
            double v = from + i * step;
            if (v > to + 1e-9 * std::abs(step)) break;
            grid.push_back(v);
        }
    }
    std::vector<RegimeSpec> specs;
    for (const auto& r : split(regimes, ',')) specs.push_back(parse_regime(r));
    auto rows = sweep(cfg.op, axis, grid, dataset, specs, c.threads);
    RunOutputs out(c.out_dir, "sweep");
    out.prepare(rows.size() * 256);
    std::ostringstream csv;
    write_sweep_csv(csv, rows);
    out.write("sweep.csv", csv.str());
    out.commit(manifest_base("sweep", c, cfg, argv));
    std::printf("%zu rows written to %s\n", rows.size(), (out.dir() / "sweep.csv").string().c_str());
    return kOk;
}

int cmd_optimize(const Common& c, const std::vector<std::string>& argv, const std::string& free_list,
                 const std::string& regime) {
    ScenarioConfig cfg = load_config(c);
    FreeParameters fp;
    for (const auto& f : split(free_list, ',')) {
        if (f == "pre_attenuation")
            fp.pre_attenuation = true;
        else if (f == "basis_bias")
            fp.basis_bias = true;
        else
            throw ValidationError("--free", "unknown parameter '" + f + "'");
    }
    OptimizationResult r = optimize_operating_point(cfg.op, fp, parse_regime(regime));
    std::printf("pre_attenuation %s\nbasis_bias      %s\n", num(r.op.source.pre_attenuation).c_str(),
                num(r.op.protocol.basis_bias).c_str());
    print_report(r.report);
    json j;
    j["pre_attenuation"] = r.op.source.pre_attenuation;
    j["basis_bias"] = r.op.protocol.basis_bias;
    j["skb_per_pulse"] = r.report.skb_per_pulse;
    j["initial_skb_per_pulse"] = r.initial.skb_per_pulse;
    j["evaluations"] = r.evaluations;
    j["improved"] = r.improved;
    RunOutputs out(c.out_dir, "optimize");
    out.prepare(1 << 12);
    out.write("optimize.json", j.dump(2) + "\n");
    out.commit(manifest_base("optimize", c, cfg, argv));
    return r.report.skb_per_pulse > 0.0 ? kOk : kZeroKey;
}

json alice_json(const AliceRecord& a, std::uint64_t n_pulses) {
    json j;
    j["n_pulses"] = n_pulses;
    j["seed"] = a.seed();
    j["basis_bias"] = a.basis_bias();
    j["fixed_state"] = a.fixed_state() ? std::string(to_string(*a.fixed_state())) : std::string();
    return j;
}

std::optional<State> parse_state(const std::string& s) {
    if (s.empty()) return std::nullopt;
    for (int i = 0; i < 4; ++i)
        if (s == to_string(static_cast<State>(i))) return static_cast<State>(i);
    throw ValidationError("state", "expected H, V, D or A");
}

int cmd_simulate(const Common& c, const std::vector<std::string>& argv, std::optional<std::uint64_t> n_pulses,
                 const std::string& format, bool reference, const std::string& static_state) {
    ScenarioConfig cfg = load_config(c);
    Scenario sc = cfg.scenario();
    if (n_pulses) sc.n_pulses = *n_pulses;
    sc.emit_reference = reference;
    sc.static_state = parse_state(static_state);
    sc.threads = c.threads;
    sc.validate();
    if (format != "binary" && format != "csv") throw ValidationError("--format", "expected binary or csv");

    double expected_tags = click_probability(sc.op) * 1.5 * static_cast<double>(sc.n_pulses) +
                           (reference ? static_cast<double>(sc.n_pulses) : 0.0);
    RunOutputs out(c.out_dir, "simulate");
    out.prepare(static_cast<std::uintmax_t>(expected_tags * (format == "csv" ? 40.0 : 10.0)));

    SimulationResult r = simulate_run(sc);
    std::ostringstream tags;
    if (format == "binary")
        write_tags_binary(tags, r.stream);
    else
        write_tags_csv(tags, r.stream);
    out.write(format == "binary" ? "tags.bin" : "tags.csv", tags.str());

    // ground truth summary
    std::uint64_t pulses = 0, sifted = 0, errors = 0;
    bool any = false;
    std::uint64_t last = 0;
    for (const auto& t : r.stream.tags) {
        if (!is_detector(t.channel)) continue;
        if (any && t.pulse == last) continue;
        any = true;
        last = t.pulse;
        ++pulses;
        State a = r.alice.state(t.pulse), b = port_state(t.channel);
        if (basis_of(a) == basis_of(b)) {
            ++sifted;
            errors += bit_of(a) != bit_of(b);
        }
    }
    ClickModel cm = click_model(sc.op);
    json s;
    s["n_pulses"] = sc.n_pulses;
    s["period_ps"] = r.stream.period_ps;
    s["detections"] = r.stream.detections();
    s["detected_pulses"] = pulses;
    s["p_c"] = static_cast<double>(pulses) / static_cast<double>(sc.n_pulses);
    s["p_c_analytic"] = cm.p_c;
    s["sifted"] = sifted;
    s["qber"] = sifted ? static_cast<double>(errors) / static_cast<double>(sifted) : 0.0;
    s["e_tot_analytic"] = cm.e_tot;
    s["candidate_clicks"] = r.stats.candidate_clicks;
    s["dead_time_losses"] = r.stats.dead_time_losses;
    s["dark_clicks"] = r.stats.dark_clicks;
    out.write("alice.json", alice_json(r.alice, sc.n_pulses).dump(2) + "\n");
    out.write("summary.json", s.dump(2) + "\n");
    std::printf("%s\n", s.dump(2).c_str());
    out.commit(manifest_base("simulate", c, cfg, argv));
    return kOk;
}

int cmd_analyze(const Common& c, const std::vector<std::string>& argv, const std::string& tags_path,
                const std::string& alice_path, double bin_width) {
    ScenarioConfig cfg = load_config(c);
    const OperatingPoint& op = cfg.op;
    const double T = op.protocol.period_ps();
    std::ifstream in(tags_path, std::ios::binary);
    if (!in) throw ValidationError("--tags", "cannot open " + tags_path);
    bool csv = fs::path(tags_path).extension() == ".csv";
    TimeTagStream stream = csv ? read_tags_csv(in, T) : read_tags_binary(in, T);
    if (stream.tags.empty()) throw EmptyInputError("tag file " + tags_path + " holds no records");
    if (stream.detections() == 0) throw EmptyInputError("tag file " + tags_path + " holds no detections");

    RunOutputs out(c.out_dir, "analyze");
    out.prepare(1 << 20);
    json a;
    a["records"] = stream.tags.size();
    a["detections"] = stream.detections();
    a["period_ps"] = T;
    CorrelationHistogram h = stream.has_reference() ? correlate(stream, bin_width) : fold_to_clock(stream, bin_width);
    a["histogram_source"] = stream.has_reference() ? "reference" : "clock";
    std::ostringstream hs;
    write_histogram_csv(hs, h);
    out.write("histogram.csv", hs.str());
    try {
        double start = op.link.arrival_offset_ps + 4.0 * op.link.jitter_ps;
        LifetimeFit f = fit_lifetime(h, start, T);
        a["lifetime_ps"] = f.lifetime_ps;
        a["lifetime_sigma_ps"] = f.sigma_ps;
    } catch (const std::exception& e) {
        a["lifetime_error"] = e.what();
    }
    a["peak_to_valley"] = peak_to_valley(h);

    // ground-truth QBER from labels, when present
    std::uint64_t sifted = 0, errors = 0;
    bool labelled = false;
    for (const auto& t : stream.tags) {
        if (!is_detector(t.channel) || !t.has_truth()) continue;
        labelled = true;
        State a_s = t.truth_state(), b = port_state(t.channel);
        if (basis_of(a_s) == basis_of(b)) {
            ++sifted;
            errors += bit_of(a_s) != bit_of(b);
        }
    }
    if (labelled && sifted) a["truth_qber"] = static_cast<double>(errors) / static_cast<double>(sifted);

    if (!alice_path.empty()) {
        std::ifstream ai(alice_path);
        if (!ai) throw ValidationError("--alice", "cannot open " + alice_path);
        json aj;
        try {
            aj = json::parse(ai);
        } catch (const json::parse_error& e) {
            throw ValidationError("--alice", e.what());
        }
        AliceRecord alice(aj.value("seed", std::uint64_t{0}), aj.value("basis_bias", 0.5),
                          parse_state(aj.value("fixed_state", std::string())));
        if (aj.contains("n_pulses")) stream.n_pulses = aj["n_pulses"].get<std::uint64_t>();
        SiftResult s = sift(alice, stream, cfg.policy.window);
        std::uint64_t ez = s.z.alice.bits.hamming(s.z.bob.bits), ex = s.x.alice.bits.hamming(s.x.bob.bits);
        std::uint64_t nz = s.z.alice.bits.size(), nx = s.x.alice.bits.size();
        double n_pulses = static_cast<double>(stream.n_pulses);
        double pc = static_cast<double>(s.detected_pulses) / n_pulses;
        double e = (nz + nx) ? static_cast<double>(ez + ex) / static_cast<double>(nz + nx) : 0.0;
        ClickModel cm = click_model(op);
        a["pulses_from_clock"] = stream.n_pulses;
        a["p_c"] = pc;
        a["p_c_analytic"] = cm.p_c;
        a["p_c_z"] = (pc - cm.p_c) / std::sqrt(cm.p_c * (1.0 - cm.p_c) / n_pulses);
        a["sifted_z"] = nz;
        a["sifted_x"] = nx;
        a["qber_z"] = nz ? static_cast<double>(ez) / static_cast<double>(nz) : 0.0;
        a["qber_x"] = nx ? static_cast<double>(ex) / static_cast<double>(nx) : 0.0;
        a["qber"] = e;
        a["e_tot_analytic"] = cm.e_tot;
        if (nz + nx)
            a["qber_z_score"] = (e - cm.e_tot) / std::sqrt(cm.e_tot * (1.0 - cm.e_tot) / static_cast<double>(nz + nx));
    }
    out.write("analysis.json", a.dump(2) + "\n");
    std::printf("%s\n", a.dump(2).c_str());
    out.commit(manifest_base("analyze", c, cfg, argv));
    return kOk;
}

int cmd_g2(const Common& c, const std::vector<std::string>& argv, std::optional<std::uint64_t> n_pulses,
           double loss, double bin_width, int side_peaks) {
    ScenarioConfig cfg = load_config(c);
    Scenario sc = cfg.scenario();
    sc.op = sc.op.with_loss(loss);
    if (n_pulses) sc.n_pulses = *n_pulses;
    sc.threads = c.threads;
    RunOutputs out(c.out_dir, "g2");
    out.prepare(1 << 20);
    HbtOptions o;
    o.bin_width_ps = bin_width;
    o.side_peaks = side_peaks;
    HbtResult h = simulate_hbt(sc, o);
    G2Estimate raw = g2_zero(h.histogram);
    ArrivalModel am = ArrivalModel::from(sc.op.source, sc.op.link, sc.op.protocol.clock_rate_hz,
                                         sc.op.options.lifetime_limited_emission);
    G2Estimate cor = g2_zero_corrected(h.histogram, am);
    json j;
    j["g2_scenario"] = sc.op.source.g2_zero;
    j["g2_raw"] = raw.value;
    j["g2_raw_sigma"] = raw.sigma;
    j["g2_corrected"] = cor.value;
    j["g2_corrected_sigma"] = cor.sigma;
    j["central_counts"] = raw.central;
    j["side_mean_counts"] = raw.side_mean;
    j["side_peaks"] = raw.side_peaks;
    j["clicks_a"] = h.clicks_a;
    j["clicks_b"] = h.clicks_b;
    std::ostringstream hs;
    write_histogram_csv(hs, h.histogram);
    out.write("g2_histogram.csv", hs.str());
    out.write("g2.json", j.dump(2) + "\n");
    std::printf("%s\n", j.dump(2).c_str());
    out.commit(manifest_base("g2", c, cfg, argv));
    return kOk;
}

int cmd_filter(const Common& c, const std::vector<std::string>& argv, std::uint64_t truth_pulses,
               std::uint64_t hbt_pulses, double bin_width, const std::string& regime, bool independent) {
    ScenarioConfig cfg = load_config(c);
    OperatingPoint op = cfg.op;
    RunOutputs out(c.out_dir, "filter");
    out.prepare(1 << 20);
    std::vector<SimulationResult> runs;
    for (int s = 0; s < 4; ++s) {
        Scenario sc = cfg.scenario();
        sc.n_pulses = truth_pulses;
        sc.seed = rng::hash2(cfg.seed, static_cast<std::uint64_t>(s));
        sc.static_state = static_cast<State>(s);
        sc.drift.reset();
        sc.threads = c.threads;
        runs.push_back(simulate_run(sc));
    }
    std::vector<const TimeTagStream*> streams;
    for (auto& r : runs) streams.push_back(&r.stream);
    Scenario hs = cfg.scenario();
    hs.op = op.with_loss(0.0);
    hs.n_pulses = hbt_pulses;
    hs.seed = rng::hash2(cfg.seed, 0x686274);
    hs.drift.reset();
    hs.threads = c.threads;
    HbtOptions ho;
    ho.phase_matrix = true;
    ho.phase_bin_ps = bin_width;
    HbtResult hbt = simulate_hbt(hs, ho);
    TemporalFilterData data = build_filter_data(streams, hbt, bin_width);
    FilterObjective obj;
    RegimeSpec spec = parse_regime(regime);
    obj.regime = spec.regime;
    obj.block_size = spec.block_size;
    obj.independent_windows = independent;
    FilterResult fr = optimize_temporal_window(data, op, obj, c.threads);

    auto stats = [](const WindowStats& w) {
        json j;
        j["start_ps"] = w.window.start_ps;
        j["width_ps"] = w.window.full() ? json(nullptr) : json(w.window.width_ps);
        j["g2_start_ps"] = w.g2_window.start_ps;
        j["g2_width_ps"] = w.g2_window.full() ? json(nullptr) : json(w.g2_window.width_ps);
        j["p_c"] = w.p_c;
        j["e_tot"] = w.e_tot;
        j["g2"] = w.g2;
        j["signal_fraction"] = w.signal_fraction;
        j["p_m"] = w.p_m;
        j["skb_per_pulse"] = w.report.skb_per_pulse;
        return j;
    };
    json j;
    j["regime"] = spec.label();
    j["independent_windows"] = independent;
    j["candidates"] = fr.candidates;
    j["unfiltered"] = stats(fr.unfiltered);
    j["filtered"] = stats(fr.best);
    KeyWindow w = fr.best.window;
    TruthTable tt = truth_table(streams, w).normalize();
    std::ostringstream ts;
    write_truth_table_csv(ts, tt);
    j["fidelity"] = fidelity(tt);
    out.write("truth_table.csv", ts.str());
    out.write("filter.json", j.dump(2) + "\n");
    std::printf("%s\n", j.dump(2).c_str());
    out.commit(manifest_base("filter", c, cfg, argv));
    return fr.best.report.skb_per_pulse > 0.0 ? kOk : kZeroKey;
}

int cmd_session(const Common& c, const std::vector<std::string>& argv, std::optional<double> block) {
    ScenarioConfig cfg = load_config(c);
    Scenario sc = cfg.scenario();
    sc.threads = c.threads;
    KeyPolicy policy = cfg.policy;
    if (block) policy.block_size = *block;
    if (!policy.block_size) policy.block_size = cfg.op.protocol.block_size;
    RunOutputs out(c.out_dir, "session");
    out.prepare(static_cast<std::uintmax_t>(*policy.block_size) + (1 << 20));
    SessionResult r = run_session(sc, policy);
    json tr = json::array();
    for (const auto& t : r.transcript)
        tr.push_back({{"stage", t.stage}, {"sender", t.sender}, {"message", t.message}, {"bits", t.bits}});
    out.write("ledger.json", ledger_json(r.ledger) + "\n");
    out.write("transcript.json", tr.dump(2) + "\n");
    if (!r.ledger.aborted()) {
        auto ab = r.alice_key.to_bytes(), bb = r.bob_key.to_bytes();
        out.write("alice_key.bin", std::string(ab.begin(), ab.end()));
        out.write("bob_key.bin", std::string(bb.begin(), bb.end()));
    }
    std::printf("%s\n", ledger_json(r.ledger).c_str());
    out.commit(manifest_base("session", c, cfg, argv));
    const std::string& stage = r.ledger.abort_stage;
    if (stage == "reconciliation" || stage == "verification") {
        std::fprintf(stderr, "session aborted at %s: %s\n", stage.c_str(), r.ledger.abort_reason.c_str());
        return kRuntime;
    }
    return r.ledger.final_length > 0 ? kOk : kZeroKey;
}

int cmd_polcomp(const Common& c, const std::vector<std::string>& argv, const std::string& mode, int seeds) {
    ScenarioConfig cfg = load_config(c);
    const PolcompSettings& ps = cfg.polcomp;
    auto floor = qber_total(cfg.op);
    double e = floor ? *floor : 0.5;
    RunOutputs out(c.out_dir, "polcomp");
    out.prepare(1 << 20);
    json j;
    j["mode"] = mode;
    j["e_tot"] = e;
    if (mode == "static") {
        if (seeds < 1) throw ValidationError("--seeds", "must be >= 1");
        std::ostringstream csv;
        csv << "seed,initial_qber,final_qber,probes_used,converged\n";
        double worst = 0.0;
        int max_probes = 0;
        for (int s = 1; s <= seeds; ++s) {
            PolarizationDrift d = random_drift(cfg.seed + static_cast<std::uint64_t>(s));
            rng::Xoshiro256 g(rng::hash2(cfg.seed, static_cast<std::uint64_t>(s)));
            ShotNoise noise{ps.photons, ps.photons ? &g : nullptr};
            CompensatorState start;
            start.config = ps.plates;
            auto probe = [&](const CompensatorState& st) { return measured_qber(d, st, e, noise); };
            double initial = measured_qber(d, start, e);
            CompensationResult r = compensate(start, probe, ps.budget);
            double fin = measured_qber(d, r.state, e);
            worst = std::max(worst, fin - e);
            max_probes = std::max(max_probes, r.probes_used);
            csv << cfg.seed + static_cast<std::uint64_t>(s) << ',' << num(initial) << ',' << num(fin) << ','
                << r.probes_used << ',' << (r.converged ? 1 : 0) << '\n';
        }
        j["seeds"] = seeds;
        j["worst_excess_qber"] = worst;
        j["max_probes"] = max_probes;
        out.write("compensation.csv", csv.str());
    } else if (mode == "track") {
        PolarizationDrift d = cfg.drift_state().value_or(random_drift(cfg.seed, 1e-3));
        CompensatorState start = plates_for_rotation(d.stokes().transpose());
        start.config = ps.plates;
        TrackingOptions to;
        to.steps = ps.steps;
        to.dt_s = ps.dt_s;
        to.probes_per_step = ps.probes_per_step;
        rng::Xoshiro256 g(rng::hash2(cfg.seed, 0x747261636b));
        to.noise = {ps.photons, ps.photons ? &g : nullptr};
        auto trace = track_drift(d, start, e, to);
        double mean = 0.0;
        for (const auto& t : trace) mean += t.residual_qber;
        j["steps"] = trace.size();
        j["mean_residual_qber"] = trace.empty() ? 0.0 : mean / static_cast<double>(trace.size());
        std::ostringstream csv;
        write_trace_csv(csv, trace);
        out.write("trace.csv", csv.str());
    } else {
        throw ValidationError("--mode", "expected static or track");
    }
    out.write("polcomp.json", j.dump(2) + "\n");
    std::printf("%s\n", j.dump(2).c_str());
    out.commit(manifest_base("polcomp", c, cfg, argv));
    return kOk;
}

void add_common(CLI::App* sub, Common& c, const std::string& name) {
    sub->add_option("-s,--scenario", c.scenario_path, "Scenario JSON file");
    sub->add_option("--set", c.sets, "Override a scenario field, e.g. link.channel_loss_db=20");
    sub->add_option("-o,--out", c.out_dir, "Run directory")->default_val("runs/" + name);
    sub->add_option("--seed", c.seed, "Override the scenario seed");
    sub->add_option("--threads", c.threads, "Worker threads (default: QKD_THREADS or all cores)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"qkdbench: BB84 single-photon QKD workbench"};
    app.require_subcommand(1);
    std::vector<std::string> args(argv, argv + argc);

    Common c;
    std::optional<double> loss;
    std::string regime = "asymptotic", regimes = "asymptotic,1e3,1e5,1e8", axis = "loss", dataset, format = "binary";
    std::string free_list = "pre_attenuation", tags_path, alice_path, static_state, mode = "static";
    std::string rates = "76e6,228e6,608e6,1063e6";
    double block = 1e8, from = 0.0, to = 30.0, step = 1.0, bin_width = 10.0, g2_loss = 0.0;
    std::optional<double> session_block;
    std::optional<std::uint64_t> n_pulses;
    std::uint64_t truth_pulses = 200'000'000, hbt_pulses = 20'000'000;
    bool reference = false, independent = false;
    int side_peaks = 5, seeds = 100;

    auto* keyrate = app.add_subcommand("keyrate", "Asymptotic or finite key rate at one operating point");
    add_common(keyrate, c, "keyrate");
    keyrate->add_option("--loss", loss, "Channel loss in dB");
    keyrate->add_option("--regime", regime, "asymptotic or finite");
    keyrate->add_option("--block-size", block, "n_R^Z for the finite regime");

    auto* mtl = app.add_subcommand("mtl", "Maximum tolerable loss per regime");
    add_common(mtl, c, "mtl");
    mtl->add_option("--regimes", regimes, "Comma list: asymptotic and/or block sizes");

    auto* sw = app.add_subcommand("sweep", "Key rate over a loss, clock-rate or dataset axis");
    add_common(sw, c, "sweep");
    sw->add_option("--axis", axis, "loss, clock_rate or dataset");
    sw->add_option("--from", from, "Grid start (dB or Hz)");
    sw->add_option("--to", to, "Grid end");
    sw->add_option("--step", step, "Grid step");
    sw->add_option("--rates", rates, "Comma list of clock rates in Hz; default when no grid is given");
    sw->add_option("--dataset", dataset, "CSV with label,mean_photon_number,g2_zero");
    sw->add_option("--regimes", regimes, "Comma list: asymptotic and/or block sizes");

    auto* opt = app.add_subcommand("optimize", "Optimise pre-attenuation and/or basis bias");
    add_common(opt, c, "optimize");
    opt->add_option("--free", free_list, "Comma list: pre_attenuation, basis_bias");
    opt->add_option("--regime", regime, "asymptotic or a block size");

    auto* sim = app.add_subcommand("simulate", "Monte Carlo time-tag stream");
    add_common(sim, c, "simulate");
    sim->add_option("--n-pulses", n_pulses);
    sim->add_option("--format", format, "binary or csv");
    sim->add_flag("--reference", reference, "Emit one reference tag per pulse");
    sim->add_option("--static-state", static_state, "Encode only this state (H, V, D, A)");

    auto* an = app.add_subcommand("analyze", "Histogram, lifetime and QBER from a tag file");
    add_common(an, c, "analyze");
    an->add_option("--tags", tags_path, "Tag file (.bin or .csv)")->required();
    an->add_option("--alice", alice_path, "alice.json written by simulate");
    an->add_option("--bin-width", bin_width);

    auto* g2 = app.add_subcommand("g2", "HBT simulation and g2(0) estimate");
    add_common(g2, c, "g2");
    g2->add_option("--n-pulses", n_pulses);
    g2->add_option("--loss", g2_loss, "Loss before the beam splitter in dB")->default_val(0.0);
    g2->add_option("--bin-width", bin_width);
    g2->add_option("--side-peaks", side_peaks);

    auto* fil = app.add_subcommand("filter", "Temporal filter optimisation from simulated histograms");
    add_common(fil, c, "filter");
    fil->add_option("--truth-pulses", truth_pulses, "Pulses per static-state run");
    fil->add_option("--hbt-pulses", hbt_pulses);
    fil->add_option("--bin-width", bin_width);
    fil->add_option("--regime", regime, "asymptotic or a block size");
    fil->add_flag("--independent-windows", independent, "Experimental: separate g2 window");

    auto* ses = app.add_subcommand("session", "End-to-end key session");
    add_common(ses, c, "session");
    ses->add_option("--block-size", session_block, "Target n_R^Z");

    auto* pol = app.add_subcommand("polcomp", "Polarisation compensation experiments");
    add_common(pol, c, "polcomp");
    pol->add_option("--mode", mode, "static or track");
    pol->add_option("--seeds", seeds, "Random static drifts (static mode)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kValidation;
    }

    try {
        if (*keyrate) return cmd_keyrate(c, args, loss, regime, block);
        if (*mtl) return cmd_mtl(c, args, regimes);
        if (*sw) {
            bool ranged = sw->count("--from") + sw->count("--to") + sw->count("--step") > 0;
            return cmd_sweep(c, args, axis, from, to, step, dataset, regimes,
                             axis == "clock_rate" && !ranged ? rates : "");
        }
        if (*opt) return cmd_optimize(c, args, free_list, regime);
        if (*sim) return cmd_simulate(c, args, n_pulses, format, reference, static_state);
        if (*an) return cmd_analyze(c, args, tags_path, alice_path, bin_width);
        if (*g2) return cmd_g2(c, args, n_pulses, g2_loss, bin_width, side_peaks);
        if (*fil) return cmd_filter(c, args, truth_pulses, hbt_pulses, bin_width, regime, independent);
        if (*ses) return cmd_session(c, args, session_block);
        if (*pol) return cmd_polcomp(c, args, mode, seeds);
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kValidation;
    } catch (const EmptyInputError& e) {
        std::fprintf(stderr, "empty input: %s\n", e.what());
        return kValidation;
    } catch (const NoPositiveKeyError& e) {
        std::fprintf(stderr, "no positive key: %s\n", e.what());
        return kZeroKey;
    } catch (const SessionError& e) {
        std::fprintf(stderr, "session aborted at %s\n", e.what());
        return kRuntime;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "runtime error: %s\n", e.what());
        return kRuntime;
    }
    return kRuntime;
}
