#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "usdqrng/certifier.hpp"
#include "usdqrng/device_models.hpp"
#include "usdqrng/extractor.hpp"
#include "usdqrng/statistics.hpp"

namespace usdqrng {

enum class Mode { Simulate, Certify, Extract, Run, Curve, Fluctuation };

std::string to_string(Mode m);
Mode parse_mode(const std::string& s);

struct PipelineConfig {
    Mode mode = Mode::Run;
    DeviceConfig device;
    std::optional<double> delta_override;
    std::uint64_t block_size = 50'000'000;  ///< events per block
    std::uint64_t blocks = 1;               ///< blocks to simulate when no input file is given
    double epsilon = 1e-9;
    double epsilon_ext = kDefaultExtractorEpsilon;
    std::uint64_t seed = 1;            ///< simulator seed
    bool simulate_dead_time = false;   ///< sequential dead time in the simulator
    bool refresh = true;               ///< solve a fresh certificate for every block
    bool strict = false;               ///< stop at the first block that fails certification
    bool pipelined = false;            ///< read the next block while the current one is processed
    bool report_timings = true;        ///< false writes the timing fields empty
    std::optional<double> h_min;       ///< certified entropy for extract mode

    // curve and fluctuation modes
    std::vector<double> grid;
    bool curve_dead_time = false;

    std::string input_path;   ///< events (certify, run) or packed raw bits (extract)
    std::string output_path;  ///< events (simulate), bits (run, extract) or CSV (curves)
    std::string seed_path;
    std::string bank_path;
    std::string report_path;   ///< block CSV
    std::string summary_path;  ///< human-readable summary

    /// Throws ConfigError (or DomainError for device fields) when inconsistent.
    void validate() const;
};

/// Applies one key=value setting; throws ConfigError for unknown keys or malformed values.
void apply_setting(PipelineConfig& config, const std::string& key, const std::string& value);

/// Reads flat key=value lines ('#' starts a comment) on top of `base`.
PipelineConfig parse_config(std::istream& in, PipelineConfig base = {});
PipelineConfig load_config(const std::string& path, PipelineConfig base = {});

/// Thrown in strict mode when a block cannot be certified.
class CertificationFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BlockReport {
    std::uint64_t index = 0;
    std::uint64_t n_events = 0;
    CountsTable counts;
    double delta = 0.0;
    double p_g_star = 1.0;
    double p_g_n = 1.0;
    double h_min = 0.0;
    std::uint64_t bits_out = 0;
    int certificate_index = -1;  ///< bank index, -1 for a certificate solved for this block
    DualCertificate certificate;  ///< the certificate behind p_g_N when certified
    bool certified = false;
    bool full = true;  ///< false for a trailing partial block
    std::string status;  ///< "ok" or a warning
    double ms_ingest = 0.0, ms_certify = 0.0, ms_extract = 0.0;
};

struct PipelineResult {
    std::vector<BlockReport> reports;
    std::uint64_t total_bits = 0;
    double wall_ms = 0.0;
    std::vector<std::string> warnings;
};

/// Source of encoded events (one byte per event).
class EventSource {
public:
    virtual ~EventSource() = default;
    /// Replaces `bytes` with up to `max_events` events; false at end of data.
    virtual bool next(std::vector<std::uint8_t>& bytes, std::uint64_t max_events) = 0;
};

/// Simulated blocks: block k uses a seed derived from (seed, k).
class SimulatorSource : public EventSource {
public:
    SimulatorSource(DeviceConfig device, std::uint64_t blocks, std::uint64_t seed, SimulationOptions options = {});
    bool next(std::vector<std::uint8_t>& bytes, std::uint64_t max_events) override;

private:
    DeviceConfig device_;
    std::uint64_t remaining_;
    std::uint64_t seed_;
    std::uint64_t index_ = 0;
    SimulationOptions options_;
};

class StreamSource : public EventSource {
public:
    explicit StreamSource(std::istream& in) : in_(in) {}
    bool next(std::vector<std::uint8_t>& bytes, std::uint64_t max_events) override;

private:
    std::istream& in_;
};

/// Seed derived for simulated block k.
std::uint64_t block_seed(std::uint64_t seed, std::uint64_t k) noexcept;

/// Packs a continuous bit stream into bytes (bit i of byte j is stream bit 8j+i).
class BitSink {
public:
    explicit BitSink(std::ostream* out) : out_(out) {}
    void append(const BitVector& bits);
    /// Writes the final partial byte, zero padded.
    void finish();
    std::uint64_t bits_written() const noexcept { return total_; }

private:
    std::ostream* out_;
    std::vector<std::uint8_t> buffer_;
    std::uint8_t partial_ = 0;
    unsigned partial_bits_ = 0;
    std::uint64_t total_ = 0;
};

/// Conclusiveness bits of encoded events: bit i is 1 when event i was inconclusive.
BitVector conclusive_bits(std::span<const std::uint8_t> encoded);

/// Certify (mode Certify) or certify and extract (mode Run) every block from `source`. Output
/// bits go to `bits` when given. Timings cover the whole call: loading the bank and the seed is
/// charged to the stage that first needs it.
PipelineResult run_pipeline(const PipelineConfig& config, EventSource& source, std::ostream* bits);

/// Extract mode: the input is a packed raw bit stream certified elsewhere at config.h_min.
PipelineResult run_extraction(const PipelineConfig& config, std::istream& raw, std::ostream* bits);

/// Simulate mode: writes config.blocks blocks of encoded events.
std::uint64_t write_simulated_events(const PipelineConfig& config, std::ostream& out);

/// Block CSV: one row per report, in block order.
void write_report_csv(std::ostream& out, std::span<const BlockReport> reports, bool timings = true);
/// Human-readable summary.
void write_summary(std::ostream& out, const PipelineResult& result, bool timings = true);
/// Both of the above.
void emit_report(const PipelineResult& result, std::ostream& csv, std::ostream& summary, bool timings = true);

}  // namespace usdqrng
