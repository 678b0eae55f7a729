#include "qkd/tagio.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "qkd/params.hpp"

namespace qkd {

const char* to_string(Channel c) {
    switch (c) {
    case Channel::H: return "H";
    case Channel::V: return "V";
    case Channel::D: return "D";
    case Channel::A: return "A";
    default: return "ref";
    }
}

bool TimeTagStream::has_reference() const {
    for (const auto& t : tags)
        if (t.channel == Channel::reference) return true;
    return false;
}

std::size_t TimeTagStream::detections() const {
    std::size_t n = 0;
    for (const auto& t : tags) n += is_detector(t.channel);
    return n;
}

std::uint64_t CorrelationHistogram::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

namespace {

std::uint64_t clock_pulse(std::int64_t t, double period_ps) {
    if (period_ps <= 0.0 || t < 0) return 0;
    return static_cast<std::uint64_t>(std::floor(static_cast<double>(t) / period_ps));
}

Channel parse_channel(const std::string& s, std::size_t line) {
    if (s == "H" || s == "0") return Channel::H;
    if (s == "V" || s == "1") return Channel::V;
    if (s == "D" || s == "2") return Channel::D;
    if (s == "A" || s == "3") return Channel::A;
    if (s == "ref" || s == "4") return Channel::reference;
    throw ValidationError("tags line " + std::to_string(line), "unknown channel '" + s + "'");
}

}  // namespace

void write_tags_binary(std::ostream& os, const TimeTagStream& stream) {
    unsigned char rec[kTagRecordBytes];
    for (const auto& t : stream.tags) {
        auto u = static_cast<std::uint64_t>(t.time_ps);
        for (int b = 0; b < 8; ++b) rec[b] = static_cast<unsigned char>(u >> (8 * b));
        rec[8] = static_cast<unsigned char>(t.channel);
        rec[9] = t.flags;
        os.write(reinterpret_cast<const char*>(rec), kTagRecordBytes);
    }
}

TimeTagStream read_tags_binary(std::istream& is, double period_ps) {
    TimeTagStream s;
    s.period_ps = period_ps;
    unsigned char rec[kTagRecordBytes];
    std::int64_t last = INT64_MIN;
    std::size_t index = 0;
    while (is.read(reinterpret_cast<char*>(rec), kTagRecordBytes)) {
        ++index;
        std::uint64_t u = 0;
        for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(rec[b]) << (8 * b);
        TimeTag t;
        t.time_ps = static_cast<std::int64_t>(u);
        if (rec[8] > 4)
            throw ValidationError("tags record " + std::to_string(index), "invalid channel");
        t.channel = static_cast<Channel>(rec[8]);
        t.flags = rec[9];
        if (t.time_ps < last)
            throw ValidationError("tags record " + std::to_string(index), "time went backwards");
        last = t.time_ps;
        t.pulse = clock_pulse(t.time_ps, period_ps);
        s.tags.push_back(t);
    }
    if (is.gcount() != 0)
        throw ValidationError("tags", "truncated record at end of file");
    if (!s.tags.empty() && period_ps > 0.0) s.n_pulses = s.tags.back().pulse + 1;
    return s;
}

void write_tags_csv(std::ostream& os, const TimeTagStream& stream) {
    os << "time_ps,channel,truth_state,truth_photons,dark\n";
    for (const auto& t : stream.tags) {
        os << t.time_ps << ',' << to_string(t.channel) << ',';
        if (t.has_truth())
            os << to_string(t.truth_state()) << ',' << t.truth_photons() << ',' << (t.dark() ? 1 : 0);
        else
            os << ",,";
        os << '\n';
    }
}

TimeTagStream read_tags_csv(std::istream& is, double period_ps) {
    TimeTagStream s;
    s.period_ps = period_ps;
    std::string line;
    if (!std::getline(is, line)) return s;
    std::size_t n = 1;
    std::int64_t last = INT64_MIN;
    while (std::getline(is, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        while (cells.size() < 5) cells.emplace_back();
        std::string where = "tags line " + std::to_string(n);
        TimeTag t;
        try {
            t.time_ps = std::stoll(cells[0]);
        } catch (const std::logic_error&) {
            throw ValidationError(where, "bad time_ps");
        }
        t.channel = parse_channel(cells[1], n);
        if (!cells[2].empty()) {
            Channel sc = parse_channel(cells[2], n);
            if (!is_detector(sc)) throw ValidationError(where, "bad truth_state");
            State st = port_state(sc);
            int photons = 0;
            try {
                photons = cells[3].empty() ? 0 : std::stoi(cells[3]);
            } catch (const std::logic_error&) {
                throw ValidationError(where, "bad truth_photons");
            }
            bool dark = !cells[4].empty() && cells[4] != "0";
            t.flags = TimeTag::pack(st, photons, dark);
        }
        if (t.time_ps < last) throw ValidationError(where, "time went backwards");
        last = t.time_ps;
        t.pulse = clock_pulse(t.time_ps, period_ps);
        s.tags.push_back(t);
    }
    if (!s.tags.empty() && period_ps > 0.0) s.n_pulses = s.tags.back().pulse + 1;
    return s;
}

void write_histogram_csv(std::ostream& os, const CorrelationHistogram& h) {
    os << "delay_ps,counts\n";
    char buf[96];
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.3f,%llu\n", h.bin_start(i),
                      static_cast<unsigned long long>(h.counts[i]));
        os << buf;
    }
}

}  // namespace qkd
