#include "usdqrng/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <future>
#include <iomanip>
#include <istream>
#include <iterator>
#include <limits>
#include <ostream>
#include <sstream>

#include "usdqrng/errors.hpp"

namespace usdqrng {

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
}

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

double parse_real(const std::string& key, const std::string& value) {
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (value.empty() || end != value.c_str() + value.size() || !std::isfinite(v))
        throw ConfigError("'" + key + "' expects a number, got '" + value + "'");
    return v;
}

std::uint64_t parse_count(const std::string& key, const std::string& value) {
    const double v = parse_real(key, value);  // accepts 5e7
    if (v < 0.0 || v != std::floor(v) || v > 9.0e18)
        throw ConfigError("'" + key + "' expects a non-negative integer, got '" + value + "'");
    return static_cast<std::uint64_t>(v);
}

bool parse_flag(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
    if (value == "false" || value == "0" || value == "no" || value == "off") return false;
    throw ConfigError("'" + key + "' expects true or false, got '" + value + "'");
}

std::vector<double> parse_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    std::stringstream ss(value);
    for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_real(key, trim(item)));
    return out;
}

}  // namespace

std::string to_string(Mode m) {
    switch (m) {
        case Mode::Simulate: return "simulate";
        case Mode::Certify: return "certify";
        case Mode::Extract: return "extract";
        case Mode::Run: return "run";
        case Mode::Curve: return "curve";
        case Mode::Fluctuation: return "fluctuation";
    }
    return "run";
}

Mode parse_mode(const std::string& s) {
    for (const Mode m : {Mode::Simulate, Mode::Certify, Mode::Extract, Mode::Run, Mode::Curve, Mode::Fluctuation})
        if (to_string(m) == s) return m;
    throw ConfigError("unknown mode '" + s + "'");
}

void PipelineConfig::validate() const {
    if (block_size < 10'000) throw ConfigError("block_size must be at least 10000 events");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in (0,1)");
    if (!(epsilon_ext > 0.0 && epsilon_ext < 1.0)) throw ConfigError("epsilon_ext must lie in (0,1)");
    if (delta_override && !(*delta_override >= 0.0 && *delta_override <= 1.0))
        throw ConfigError("delta_override must lie in [0,1]");
    if (mode == Mode::Extract && !h_min) throw ConfigError("extract mode needs h_min");
    if (h_min && !(*h_min >= 0.0 && *h_min <= 1.0)) throw ConfigError("h_min must lie in [0,1]");
    try {
        device.validate();
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
}

void apply_setting(PipelineConfig& c, const std::string& key, const std::string& raw_value) {
    const std::string v = trim(raw_value);
    auto& d = c.device;
    if (key == "mode") c.mode = parse_mode(v);
    else if (key == "encoding") d.encoding = parse_encoding(v);
    else if (key == "mean_photon_number" || key == "alpha_sq") d.mean_photon_number = parse_real(key, v);
    else if (key == "efficiency") d.efficiency = parse_real(key, v);
    else if (key == "dark_count_rate") d.dark_count_rate = parse_real(key, v);
    else if (key == "repetition_rate") d.repetition_rate = parse_real(key, v);
    else if (key == "bin_separation") d.bin_separation = parse_real(key, v);
    else if (key == "dead_time_effective") d.dead_time_effective = parse_real(key, v);
    else if (key == "p_x1") d.p_x1 = parse_real(key, v);
    else if (key == "alpha_max_ratio") d.alpha_max_ratio = parse_real(key, v);
    else if (key == "error_injection") d.error_injection = parse_real(key, v);
    else if (key == "delta_override") {
        if (v.empty() || v == "none") c.delta_override.reset();
        else c.delta_override = parse_real(key, v);
    }
    else if (key == "block_size") c.block_size = parse_count(key, v);
    else if (key == "blocks") c.blocks = parse_count(key, v);
    else if (key == "epsilon") c.epsilon = parse_real(key, v);
    else if (key == "epsilon_ext") c.epsilon_ext = parse_real(key, v);
    else if (key == "seed") c.seed = parse_count(key, v);
    else if (key == "simulate_dead_time") c.simulate_dead_time = parse_flag(key, v);
    else if (key == "refresh") c.refresh = parse_flag(key, v);
    else if (key == "strict") c.strict = parse_flag(key, v);
    else if (key == "pipelined") c.pipelined = parse_flag(key, v);
    else if (key == "report_timings") c.report_timings = parse_flag(key, v);
    else if (key == "h_min") c.h_min = parse_real(key, v);
    else if (key == "grid") c.grid = parse_list(key, v);
    else if (key == "curve_dead_time") c.curve_dead_time = parse_flag(key, v);
    else if (key == "input") c.input_path = v;
    else if (key == "output") c.output_path = v;
    else if (key == "seed_file") c.seed_path = v;
    else if (key == "bank") c.bank_path = v;
    else if (key == "report") c.report_path = v;
    else if (key == "summary") c.summary_path = v;
    else throw ConfigError("unknown configuration key '" + key + "'");
}

PipelineConfig parse_config(std::istream& in, PipelineConfig base) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        try {
            apply_setting(base, trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return base;
}

PipelineConfig load_config(const std::string& path, PipelineConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open configuration " + path);
    return parse_config(in, std::move(base));
}

// ---------------------------------------------------------------------------------------------

std::uint64_t block_seed(std::uint64_t seed, std::uint64_t k) noexcept {
    // splitmix64 finalizer over (seed, k)
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (k + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

SimulatorSource::SimulatorSource(DeviceConfig device, std::uint64_t blocks, std::uint64_t seed,
                                 SimulationOptions options)
    : device_(device), remaining_(blocks), seed_(seed), options_(options) {}

bool SimulatorSource::next(std::vector<std::uint8_t>& bytes, std::uint64_t max_events) {
    if (remaining_ == 0) return false;
    --remaining_;
    bytes = encode_events(simulate_block(device_, max_events, block_seed(seed_, index_++), options_));
    return true;
}

bool StreamSource::next(std::vector<std::uint8_t>& bytes, std::uint64_t max_events) {
    bytes = read_event_bytes(in_, max_events);
    return !bytes.empty();
}

void BitSink::append(const BitVector& bits) {
    const auto words = bits.words();
    const std::size_t n = bits.size();
    buffer_.clear();
    buffer_.reserve(n / 8 + 1);
    for (std::size_t i = 0; i < n; ++i) {
        partial_ |= static_cast<std::uint8_t>(((words[i >> 6] >> (i & 63)) & 1U) << partial_bits_);
        if (++partial_bits_ == 8) {
            buffer_.push_back(partial_);
            partial_ = 0;
            partial_bits_ = 0;
        }
    }
    total_ += n;
    if (out_ && !buffer_.empty()) {
        out_->write(reinterpret_cast<const char*>(buffer_.data()), static_cast<std::streamsize>(buffer_.size()));
        if (!*out_) throw IoError("failed to write output bits");
    }
}

void BitSink::finish() {
    if (partial_bits_ == 0) return;
    if (out_) {
        out_->put(static_cast<char>(partial_));
        if (!*out_) throw IoError("failed to write output bits");
    }
    partial_ = 0;
    partial_bits_ = 0;
}

BitVector conclusive_bits(std::span<const std::uint8_t> encoded) {
    BitVector v(encoded.size());
    auto words = v.words();
    for (std::size_t w = 0; w < words.size(); ++w) {
        std::uint64_t acc = 0;
        const std::size_t base = w * 64;
        const std::size_t end = std::min<std::size_t>(64, encoded.size() - base);
        for (std::size_t k = 0; k < end; ++k)
            acc |= static_cast<std::uint64_t>(((encoded[base + k] >> 1) & 3U) == 2U) << k;
        words[w] = acc;
    }
    return v;
}

// ---------------------------------------------------------------------------------------------

namespace {

// Seed and extractor, created when the first block needs them.
class ExtractorHolder {
public:
    ExtractorHolder(const PipelineConfig& c, std::vector<std::string>& warnings) : config_(c), warnings_(warnings) {}

    BitVector extract(const BitVector& raw, std::size_t m) {
        if (!ex_) build(raw.size());
        if (m > ex_->max_output_bits())
            throw ConfigError("seed supports " + std::to_string(ex_->max_output_bits()) + " output bits, block needs " +
                              std::to_string(m));
        return ex_->extract(raw, m);
    }

private:
    void build(std::size_t n) {
        if (!config_.seed_path.empty()) {
            auto s = read_seed_file(config_.seed_path);
            if (s.n != n)
                throw ConfigError("seed file is for " + std::to_string(s.n) + "-bit blocks, blocks have " +
                                  std::to_string(n) + " bits");
            ex_.emplace(std::move(s.seed), n, s.m);
        } else {
            warnings_.push_back("no seed file given: using a pseudorandom test seed");
            ex_.emplace(generate_test_seed(2 * n - 1, block_seed(config_.seed, 0x5EEDULL)), n, n);
        }
    }

    const PipelineConfig& config_;
    std::vector<std::string>& warnings_;
    std::optional<ToeplitzExtractor> ex_;
};

double certificate_delta(const PipelineConfig& c) {
    if (c.delta_override) return *c.delta_override;
    return overlap(c.device.encoding, c.device.mean_photon_number * c.device.alpha_max_ratio);
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config, EventSource& source, std::ostream* bits) {
    config.validate();
    const auto wall0 = Clock::now();
    PipelineResult result;
    const bool extract = config.mode == Mode::Run;
    const OverlapBound bound(certificate_delta(config));
    const InputDistribution px(config.device.p_x1);
    CertifyOptions certify_options;
    certify_options.refresh = config.refresh;

    std::vector<DualCertificate> bank;
    bool bank_loaded = config.bank_path.empty();
    ExtractorHolder extractor(config, result.warnings);
    BitSink sink(bits);

    using Batch = std::pair<bool, std::vector<std::uint8_t>>;
    auto read = [&source, &config] {
        Batch b;
        b.first = source.next(b.second, config.block_size);
        return b;
    };
    std::future<Batch> ahead;
    if (config.pipelined) ahead = std::async(std::launch::async, read);

    for (std::uint64_t index = 0;; ++index) {
        const auto t0 = Clock::now();
        Batch batch = config.pipelined ? ahead.get() : read();
        if (!batch.first) break;
        if (config.pipelined) ahead = std::async(std::launch::async, read);
        const auto& bytes = batch.second;

        BlockReport r;
        r.index = index;
        r.n_events = bytes.size();
        r.full = bytes.size() == config.block_size;
        r.delta = bound.value();
        r.counts = accumulate_encoded(bytes);
        BitVector raw;
        if (extract && r.full) raw = conclusive_bits(bytes);
        const auto t1 = Clock::now();

        try {
            if (!bank_loaded) {
                bank = load_certificate_bank(config.bank_path);
                bank_loaded = true;
            }
            const auto cr = certify_block(r.counts, bound, px, config.epsilon, bank, certify_options);
            r.p_g_star = cr.p_g_star;
            r.p_g_n = cr.p_g_n;
            r.h_min = cr.h_min;
            r.certificate_index = cr.certificate_index;
            r.certificate = cr.certificate;
            r.certified = true;
            r.status = "ok";
        } catch (const IoError&) {
            throw;
        } catch (const FormatError&) {
            throw;
        } catch (const std::exception& e) {
            r.status = std::string("certification failed: ") + e.what();
            if (config.strict && r.full)
                throw CertificationFailure("block " + std::to_string(index) + ": " + e.what());
        }
        const auto t2 = Clock::now();

        if (!r.full) {
            r.status = r.certified ? "partial block, not extracted" : "partial block, not extracted; " + r.status;
        } else if (r.certified && r.h_min <= 0.0) {
            r.status = "no certified entropy";
        } else if (extract && r.certified) {
            const std::uint64_t m = output_length(r.n_events, r.h_min, config.epsilon_ext);
            if (m > 0) {
                const BitVector out = extractor.extract(raw, m);
                if (out.size() != m) throw std::logic_error("extractor returned the wrong length");
                sink.append(out);
            }
            r.bits_out = m;
        }
        const auto t3 = Clock::now();

        r.ms_ingest = ms_between(t0, t1);
        r.ms_certify = ms_between(t1, t2);
        r.ms_extract = ms_between(t2, t3);
        if (r.status != "ok") result.warnings.push_back("block " + std::to_string(index) + ": " + r.status);
        result.total_bits += r.bits_out;
        result.reports.push_back(std::move(r));
    }
    sink.finish();
    result.wall_ms = ms_between(wall0, Clock::now());
    return result;
}

PipelineResult run_extraction(const PipelineConfig& config, std::istream& raw_in, std::ostream* bits) {
    config.validate();
    const auto wall0 = Clock::now();
    PipelineResult result;
    ExtractorHolder extractor(config, result.warnings);
    BitSink sink(bits);
    const std::uint64_t n = config.block_size;
    const std::size_t block_bytes = static_cast<std::size_t>((n + 7) / 8);

    // Blocks are read as whole bytes; a block size that is not a multiple of 8 would split
    // bytes between blocks, which the raw bit format does not allow.
    if (n % 8 != 0) throw ConfigError("extract mode needs a block size that is a multiple of 8");

    for (std::uint64_t index = 0;; ++index) {
        const auto t0 = Clock::now();
        std::vector<std::uint8_t> bytes(block_bytes);
        raw_in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(block_bytes));
        const auto got = static_cast<std::size_t>(raw_in.gcount());
        if (raw_in.bad()) throw IoError("failed to read raw bits");
        if (got == 0) break;
        bytes.resize(got);
        BlockReport r;
        r.index = index;
        r.n_events = 8 * static_cast<std::uint64_t>(got);
        r.full = got == block_bytes;
        r.delta = r.p_g_star = r.p_g_n = std::numeric_limits<double>::quiet_NaN();
        r.h_min = *config.h_min;
        const BitVector raw = BitVector::from_bytes(bytes, r.n_events);
        const auto t1 = Clock::now();
        if (!r.full) {
            r.status = "partial block, not extracted";
        } else {
            r.status = "ok";
            const std::uint64_t m = output_length(n, r.h_min, config.epsilon_ext);
            if (m > 0) sink.append(extractor.extract(raw, m));
            else r.status = "no certified entropy";
            r.bits_out = m;
        }
        const auto t2 = Clock::now();
        r.ms_ingest = ms_between(t0, t1);
        r.ms_extract = ms_between(t1, t2);
        if (r.status != "ok") result.warnings.push_back("block " + std::to_string(index) + ": " + r.status);
        result.total_bits += r.bits_out;
        const bool last = !r.full;
        result.reports.push_back(std::move(r));
        if (last) break;
    }
    sink.finish();
    result.wall_ms = ms_between(wall0, Clock::now());
    return result;
}

std::uint64_t write_simulated_events(const PipelineConfig& config, std::ostream& out) {
    config.validate();
    SimulationOptions opt;
    opt.dead_time = config.simulate_dead_time;
    SimulatorSource source(config.device, config.blocks, config.seed, opt);
    std::vector<std::uint8_t> bytes;
    std::uint64_t total = 0;
    while (source.next(bytes, config.block_size)) {
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("failed to write events");
        total += bytes.size();
    }
    return total;
}

// ---------------------------------------------------------------------------------------------

namespace {

void put_real(std::ostream& out, double v) {
    if (std::isfinite(v)) out << v;
}

void put_ms(std::ostream& out, double v, bool timings) {
    if (timings) out << std::fixed << std::setprecision(3) << v << std::defaultfloat << std::setprecision(15);
}

}  // namespace

void write_report_csv(std::ostream& out, std::span<const BlockReport> reports, bool timings) {
    const auto flags = out.flags();
    const auto prec = out.precision();
    out << std::setprecision(15);
    out << "block_index,n_events,n00,n10,nI0,n01,n11,nI1,delta,p_g_star,p_g_N,h_min,bits_out,ms_ingest,ms_certify,"
           "ms_extract\n";
    for (const auto& r : reports) {
        out << r.index << ',' << r.n_events;
        for (int x = 0; x < 2; ++x)
            for (const auto b : kOutcomes) out << ',' << r.counts.at(b, x);
        out << ',';
        put_real(out, r.delta);
        out << ',';
        if (r.certified) put_real(out, r.p_g_star);
        out << ',';
        if (r.certified) put_real(out, r.p_g_n);
        out << ',';
        put_real(out, r.h_min);
        out << ',' << r.bits_out << ',';
        put_ms(out, r.ms_ingest, timings);
        out << ',';
        put_ms(out, r.ms_certify, timings);
        out << ',';
        put_ms(out, r.ms_extract, timings);
        out << '\n';
    }
    out.flags(flags);
    out.precision(prec);
}

void write_summary(std::ostream& out, const PipelineResult& result, bool timings) {
    const auto flags = out.flags();
    const auto prec = out.precision();
    std::uint64_t full = 0, certified = 0, events = 0;
    double h_sum = 0.0;
    double ingest = 0.0, certify = 0.0, extract = 0.0;
    for (const auto& r : result.reports) {
        full += r.full;
        events += r.n_events;
        if (r.full && r.certified) {
            ++certified;
            h_sum += r.h_min;
        }
        ingest += r.ms_ingest;
        certify += r.ms_certify;
        extract += r.ms_extract;
    }
    out << std::setprecision(6);
    out << "blocks: " << result.reports.size() << " (" << full << " full)\n";
    out << "events: " << events << '\n';
    out << "certified full blocks: " << certified << '\n';
    if (certified > 0) out << "mean h_min: " << h_sum / static_cast<double>(certified) << '\n';
    out << "extracted bits: " << result.total_bits << '\n';
    if (timings) {
        out << std::fixed << std::setprecision(1);
        out << "time ms: ingest " << ingest << ", certify " << certify << ", extract " << extract << ", wall "
            << result.wall_ms << '\n';
        if (result.wall_ms > 0.0)
            out << "output rate: " << std::setprecision(2)
                << static_cast<double>(result.total_bits) / (result.wall_ms * 1e3) << " Mbit/s\n";
    }
    for (const auto& w : result.warnings) out << "warning: " << w << '\n';
    out.flags(flags);
    out.precision(prec);
}

void emit_report(const PipelineResult& result, std::ostream& csv, std::ostream& summary, bool timings) {
    write_report_csv(csv, result.reports, timings);
    write_summary(summary, result, timings);
}

}  // namespace usdqrng
