#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "qkd/bb84.hpp"

namespace qkd {

enum class Channel : std::uint8_t { H = 0, V = 1, D = 2, A = 3, reference = 4 };

constexpr bool is_detector(Channel c) { return static_cast<std::uint8_t>(c) < 4; }
constexpr State port_state(Channel c) { return static_cast<State>(static_cast<std::uint8_t>(c)); }
constexpr Channel channel_of(State s) { return static_cast<Channel>(static_cast<std::uint8_t>(s)); }

const char* to_string(Channel c);

struct TimeTag {
    std::int64_t time_ps = 0;
    std::uint64_t pulse = 0;  // origin pulse; clock-derived when read from file
    Channel channel = Channel::reference;
    // bits 0-1 emitted state, 2-3 photons in origin pulse, 4 dark count, 5 label present
    std::uint8_t flags = 0;

    static constexpr std::uint8_t kDark = 1u << 4;
    static constexpr std::uint8_t kHasTruth = 1u << 5;

    static std::uint8_t pack(State s, int photons, bool dark) {
        return static_cast<std::uint8_t>(index_of(s) | ((photons & 3) << 2) | (dark ? kDark : 0) |
                                         kHasTruth);
    }
    bool has_truth() const { return flags & kHasTruth; }
    State truth_state() const { return static_cast<State>(flags & 3); }
    int truth_photons() const { return (flags >> 2) & 3; }
    bool dark() const { return flags & kDark; }
};

struct TimeTagStream {
    std::vector<TimeTag> tags;  // non-decreasing time
    double period_ps = 0.0;
    std::uint64_t n_pulses = 0;

    bool has_reference() const;
    std::size_t detections() const;
};

struct CorrelationHistogram {
    double bin_width_ps = 10.0;
    double origin_ps = 0.0;  // delay at the left edge of bin 0
    std::vector<std::uint64_t> counts;
    double period_ps = 0.0;  // pulse period when the histogram spans several

    double bin_start(std::size_t i) const { return origin_ps + bin_width_ps * static_cast<double>(i); }
    double bin_center(std::size_t i) const { return bin_start(i) + 0.5 * bin_width_ps; }
    std::uint64_t total() const;
};

// Record: int64 time_ps, uint8 channel, uint8 flags, little-endian, no header.
constexpr std::size_t kTagRecordBytes = 10;

void write_tags_binary(std::ostream& os, const TimeTagStream& stream);
// period_ps > 0 recovers pulse indices from the clock
TimeTagStream read_tags_binary(std::istream& is, double period_ps);

// header: time_ps,channel,truth_state,truth_photons,dark
void write_tags_csv(std::ostream& os, const TimeTagStream& stream);
TimeTagStream read_tags_csv(std::istream& is, double period_ps);

void write_histogram_csv(std::ostream& os, const CorrelationHistogram& h);

}  // namespace qkd
