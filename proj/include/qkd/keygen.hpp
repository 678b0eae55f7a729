#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qkd/bits.hpp"
#include "qkd/finitekey.hpp"
#include "qkd/montecarlo.hpp"
#include "qkd/tagproc.hpp"

namespace qkd {

struct SiftedKey {
    Basis basis = Basis::Z;
    BitString bits;
    std::vector<std::uint64_t> pulses;  // strictly increasing
    std::uint64_t run_id = 0;
};

struct SiftedPair {
    SiftedKey alice;
    SiftedKey bob;
};

struct SiftResult {
    SiftedPair z;
    SiftedPair x;
    std::uint64_t detected_pulses = 0;   // pulses with a detection inside the window
    std::uint64_t basis_mismatch = 0;    // discarded by sifting
    std::uint64_t outside_window = 0;    // detections rejected by the key window
    std::uint64_t extra_detections = 0;  // later clicks in an already-detected pulse
};

// Pulse index comes from the clock: floor(time / period). The earliest
// detection in each pulse is kept.
SiftResult sift(const AliceRecord& alice, const TimeTagStream& detections, const KeyWindow& window = {},
                std::uint64_t run_id = 0);

struct ErrorEstimate {
    double error_rate = 0.0;
    std::size_t disclosed = 0;
    std::size_t errors = 0;
};

// Discloses a uniformly random subset of round(fraction * n) positions and
// removes it from both keys.
ErrorEstimate estimate_error_rate(SiftedPair& pair, double disclose_fraction, std::uint64_t seed);

class ReconciliationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CascadeOptions {
    double first_block_factor = 0.73;  // k1 = factor / qber
    int min_passes = 2;
    int max_passes = 16;
    double qber_floor = 1e-4;
};

struct CascadeResult {
    BitString corrected;
    std::size_t leaked_bits = 0;
    int passes = 0;
    std::size_t corrected_errors = 0;
    std::vector<std::size_t> messages;  // parity bits sent by Alice per pass
};

// Bob's key is corrected towards Alice's. Every parity Alice discloses is counted.
CascadeResult reconcile(const BitString& alice, const BitString& bob, double qber_estimate, std::uint64_t seed,
                        const CascadeOptions& options = {});

// ceil(log2(2 / eps_cor)) tag bits
int verification_tag_bits(double eps_cor);
BitString toeplitz_hash(const BitString& key, std::size_t out_bits, std::uint64_t seed);
bool verify(const BitString& alice, const BitString& bob, double eps_cor, std::uint64_t seed);

BitString privacy_amplify(const BitString& key, std::size_t final_length, std::uint64_t seed);

struct KeyPolicy {
    double disclose_fraction = 0.1;  // of the X-basis key
    std::optional<double> block_size;  // target n_R^Z; sets the pulse count
    KeyWindow window;
    CascadeOptions cascade;
};

struct TranscriptEntry {
    std::string stage;
    std::string sender;
    std::string message;
    std::uint64_t bits = 0;
};

struct SessionSeeds {
    std::uint64_t simulation = 0;
    std::uint64_t sampling = 0;
    std::uint64_t cascade = 0;
    std::uint64_t verification = 0;
    std::uint64_t privacy_amplification = 0;
};

struct KeySessionLedger {
    std::uint64_t n_pulses = 0;
    std::uint64_t detected_pulses = 0;
    std::uint64_t basis_mismatch = 0;
    std::uint64_t sifted_z = 0;
    std::uint64_t sifted_x = 0;
    std::uint64_t disclosed = 0;
    std::uint64_t disclosed_errors = 0;
    std::uint64_t key_bits = 0;  // sifted minus disclosed
    std::uint64_t actual_errors = 0;
    double qber_estimate = 0.0;
    std::uint64_t leaked_bits = 0;
    int cascade_passes = 0;
    std::uint64_t verification_bits = 0;
    bool verified = false;
    std::uint64_t pa_shortening = 0;
    std::uint64_t final_length = 0;
    double acquisition_time_s = 0.0;
    double secret_fraction = 0.0;  // final_length / (R t)
    std::optional<FiniteKeyReport> finite;
    std::string abort_stage;  // empty on success
    std::string abort_reason;
    SessionSeeds seeds;

    bool aborted() const { return !abort_stage.empty(); }
    // raw = kept + discarded + disclosed at every stage
    bool conserved() const;
};

struct SessionResult {
    KeySessionLedger ledger;
    BitString alice_key;
    BitString bob_key;
    std::vector<TranscriptEntry> transcript;
};

class SessionError : public std::runtime_error {
public:
    SessionError(std::string stage, const std::string& what)
        : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

// Pulses needed for block_size sifted Z bits at the analytic click rate.
std::uint64_t pulses_for_block(const OperatingPoint& op, double block_size);

SessionResult run_session(const Scenario& scenario, const KeyPolicy& policy = {});

std::string ledger_json(const KeySessionLedger& ledger);

}  // namespace qkd
