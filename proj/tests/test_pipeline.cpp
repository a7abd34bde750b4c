#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "usdqrng/errors.hpp"
#include "usdqrng/pipeline.hpp"

using namespace usdqrng;

namespace {

class VectorSource : public EventSource {
public:
    explicit VectorSource(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}
    bool next(std::vector<std::uint8_t>& out, std::uint64_t max_events) override {
        if (pos_ >= bytes_.size()) return false;
        const auto take = std::min<std::size_t>(max_events, bytes_.size() - pos_);
        out.assign(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                   bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + take));
        pos_ += take;
        return true;
    }

private:
    std::vector<std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

// Ideal discrimination at delta 1/2: inputs alternate and exactly half of the rounds for each
// input are conclusive and correct.
std::vector<std::uint8_t> ideal_events(std::size_t n) {
    std::vector<EventRecord> ev(n);
    for (std::size_t i = 0; i < n; ++i) {
        ev[i].x = static_cast<std::uint8_t>(i % 2);
        ev[i].b = (i / 2) % 2 == 0 ? static_cast<Outcome>(ev[i].x) : Outcome::Inconclusive;
    }
    return encode_events(ev);
}

PipelineConfig small_config(std::uint64_t block = 100'000, std::uint64_t blocks = 2) {
    PipelineConfig c;
    c.block_size = block;
    c.blocks = blocks;
    c.report_timings = false;
    return c;
}

std::string csv_of(const PipelineResult& r, bool timings = false) {
    std::ostringstream s;
    write_report_csv(s, r.reports, timings);
    return s.str();
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("usdqrng_pipe_" + name)).string();
}

const char* kHeader =
    "block_index,n_events,n00,n10,nI0,n01,n11,nI1,delta,p_g_star,p_g_N,h_min,bits_out,ms_ingest,ms_certify,ms_extract\n";

}  // namespace

TEST_SUITE("configuration") {
    TEST_CASE("key=value lines with comments override defaults") {
        std::istringstream in(
            "# device\n"
            "encoding = single-pulse\n"
            "mean_photon_number = 0.6   # |alpha|^2\n"
            "p_x1 = 0.875\n"
            "\n"
            "block_size = 20000\n"
            "pipelined = true\n"
            "grid = 0.1, 0.2,0.3\n");
        const auto c = parse_config(in);
        CHECK(c.device.encoding == Encoding::SinglePulse);
        CHECK(c.device.mean_photon_number == doctest::Approx(0.6));
        CHECK(c.device.p_x1 == doctest::Approx(0.875));
        CHECK(c.block_size == 20000);
        CHECK(c.pipelined);
        REQUIRE(c.grid.size() == 3);
        CHECK(c.grid[2] == doctest::Approx(0.3));
        CHECK_NOTHROW(c.validate());
    }

    TEST_CASE("unknown keys and malformed values are configuration errors") {
        std::istringstream unknown("colour = blue\n");
        CHECK_THROWS_AS(parse_config(unknown), ConfigError);
        std::istringstream bad_number("epsilon = lots\n");
        CHECK_THROWS_AS(parse_config(bad_number), ConfigError);
        std::istringstream no_equals("block_size 10\n");
        CHECK_THROWS_AS(parse_config(no_equals), ConfigError);
        std::istringstream bad_flag("strict = maybe\n");
        CHECK_THROWS_AS(parse_config(bad_flag), ConfigError);
    }

    TEST_CASE("validation rejects inconsistent settings") {
        auto c = small_config();
        c.block_size = 10;
        CHECK_THROWS_AS(c.validate(), ConfigError);

        c = small_config();
        c.epsilon = 2.0;
        CHECK_THROWS_AS(c.validate(), ConfigError);

        c = small_config();
        c.device.efficiency = 1.5;
        CHECK_THROWS_AS(c.validate(), ConfigError);

        c = small_config();
        c.mode = Mode::Extract;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c.h_min = 0.3;
        CHECK_NOTHROW(c.validate());
    }

    TEST_CASE("a missing configuration file is an I/O error") {
        CHECK_THROWS_AS(load_config("/nonexistent/usdqrng.conf"), IoError);
    }

    TEST_CASE("mode names round-trip") {
        for (Mode m : {Mode::Simulate, Mode::Certify, Mode::Extract, Mode::Run, Mode::Curve, Mode::Fluctuation})
            CHECK(parse_mode(to_string(m)) == m);
        CHECK_THROWS_AS(parse_mode("fly"), ConfigError);
    }
}

TEST_SUITE("pipeline") {
    TEST_CASE("ideal discrimination at delta 1/2 certifies one bit less the finite-size penalty") {
        auto c = small_config(100'000, 3);
        c.delta_override = 0.5;
        VectorSource src(ideal_events(300'000));
        std::ostringstream bits;
        const auto r = run_pipeline(c, src, &bits);
        REQUIRE(r.reports.size() == 3);
        for (const auto& rep : r.reports) {
            CHECK(rep.certified);
            // The asymptotic bound on these statistics is exactly one bit.
            const auto xi = empirical_distribution(rep.counts);
            const auto asymptotic = solve_dual(OverlapBound(0.5), xi, InputDistribution(0.5));
            CHECK(evaluate_bound(asymptotic, xi) == doctest::Approx(0.5).epsilon(1e-6));
            // The block value pays a positive penalty for 5e4 rounds per input.
            CHECK(rep.p_g_star >= 0.5 - 1e-6);
            CHECK(rep.p_g_n > rep.p_g_star);
            CHECK(rep.h_min == doctest::Approx(-std::log2(rep.p_g_n)).epsilon(1e-12));
            CHECK(rep.h_min > 0.0);
            CHECK(rep.h_min < 1.0);
            const auto direct = certify_block(rep.counts, OverlapBound(0.5), InputDistribution(0.5), c.epsilon, {});
            CHECK(rep.p_g_n == doctest::Approx(direct.p_g_n).epsilon(1e-9));
            CHECK(rep.bits_out == output_length(100'000, rep.h_min, c.epsilon_ext));
        }
        CHECK(r.total_bits == 3 * r.reports[0].bits_out);
        CHECK(bits.str().size() == (r.total_bits + 7) / 8);
    }

    TEST_CASE("all-inconclusive data yields no entropy and no bits") {
        auto c = small_config(20'000, 1);
        c.delta_override = 0.5;
        std::vector<EventRecord> ev(20'000);
        for (std::size_t i = 0; i < ev.size(); ++i) ev[i].x = static_cast<std::uint8_t>(i % 2);
        VectorSource src(encode_events(ev));
        std::ostringstream bits;
        const auto r = run_pipeline(c, src, &bits);
        REQUIRE(r.reports.size() == 1);
        CHECK(r.reports[0].h_min == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(r.reports[0].bits_out == 0);
        CHECK(r.total_bits == 0);
        CHECK(bits.str().empty());
        CHECK_FALSE(r.warnings.empty());
    }

    TEST_CASE("a trailing partial block is certified but not extracted") {
        auto c = small_config(100'000, 1);
        c.delta_override = 0.5;
        VectorSource src(ideal_events(240'000));
        const auto r = run_pipeline(c, src, nullptr);
        REQUIRE(r.reports.size() == 3);
        CHECK(r.reports[0].full);
        CHECK(r.reports[1].full);
        CHECK_FALSE(r.reports[2].full);
        CHECK(r.reports[2].n_events == 40'000);
        CHECK(r.reports[2].certified);
        CHECK(r.reports[2].bits_out == 0);
        CHECK(r.reports[0].bits_out > 0);
        CHECK_FALSE(r.warnings.empty());
    }

    TEST_CASE("counts are conserved and block indices increase") {
        auto c = small_config(40'000, 3);
        SimulatorSource src(c.device, 3, c.seed);
        const auto r = run_pipeline(c, src, nullptr);
        REQUIRE(r.reports.size() == 3);
        for (std::size_t k = 0; k < r.reports.size(); ++k) {
            const auto& rep = r.reports[k];
            CHECK(rep.index == k);
            CHECK(rep.counts.total() == rep.n_events);
            std::uint64_t sum = 0;
            for (const auto& row : rep.counts.n) sum += row[0] + row[1];
            CHECK(sum == rep.n_events);
        }
    }

    TEST_CASE("runs with timings off are byte-identical") {
        auto c = small_config(50'000, 2);
        std::ostringstream b1, b2;
        SimulatorSource s1(c.device, 2, 7), s2(c.device, 2, 7);
        const auto r1 = run_pipeline(c, s1, &b1);
        const auto r2 = run_pipeline(c, s2, &b2);
        CHECK(csv_of(r1) == csv_of(r2));
        CHECK(b1.str() == b2.str());
        CHECK(r1.total_bits > 0);
    }

    TEST_CASE("stage timings account for the wall time") {
        auto c = small_config(200'000, 3);
        c.report_timings = true;
        SimulatorSource src(c.device, 3, 3);
        const auto r = run_pipeline(c, src, nullptr);
        double sum = 0.0;
        for (const auto& rep : r.reports) sum += rep.ms_ingest + rep.ms_certify + rep.ms_extract;
        CHECK(sum <= r.wall_ms);
        CHECK(sum >= 0.95 * r.wall_ms);
    }

    TEST_CASE("an empty source gives a header-only report") {
        auto c = small_config();
        VectorSource src({});
        const auto r = run_pipeline(c, src, nullptr);
        CHECK(r.reports.empty());
        CHECK(csv_of(r) == kHeader);
        CHECK(r.total_bits == 0);
    }

    TEST_CASE("pipelined reading gives the same result as sequential") {
        auto c = small_config(50'000, 3);
        std::ostringstream b1, b2;
        SimulatorSource s1(c.device, 3, 11), s2(c.device, 3, 11);
        const auto r1 = run_pipeline(c, s1, &b1);
        c.pipelined = true;
        const auto r2 = run_pipeline(c, s2, &b2);
        CHECK(csv_of(r1) == csv_of(r2));
        CHECK(b1.str() == b2.str());
    }

    TEST_CASE("simulated events written to a file replay identically") {
        auto c = small_config(30'000, 2);
        c.seed = 5;
        std::stringstream file;
        CHECK(write_simulated_events(c, file) == 60'000);
        StreamSource from_file(file);
        SimulatorSource direct(c.device, c.blocks, c.seed);
        std::ostringstream b1, b2;
        const auto r1 = run_pipeline(c, from_file, &b1);
        const auto r2 = run_pipeline(c, direct, &b2);
        CHECK(csv_of(r1) == csv_of(r2));
        CHECK(b1.str() == b2.str());
    }

    TEST_CASE("certify mode produces no bits") {
        auto c = small_config(30'000, 1);
        c.mode = Mode::Certify;
        SimulatorSource src(c.device, 1, 1);
        std::ostringstream bits;
        const auto r = run_pipeline(c, src, &bits);
        REQUIRE(r.reports.size() == 1);
        CHECK(r.reports[0].certified);
        CHECK(r.reports[0].bits_out == 0);
        CHECK(bits.str().empty());
    }

    TEST_CASE("strict mode stops on an uncertifiable full block") {
        auto c = small_config(20'000, 1);
        c.strict = true;
        // Only input 0 present: the empirical distribution is undefined for x = 1.
        std::vector<EventRecord> ev(20'000);
        for (auto& e : ev) e = {0, Outcome::Zero};
        VectorSource src(encode_events(ev));
        CHECK_THROWS_AS(run_pipeline(c, src, nullptr), CertificationFailure);

        c.strict = false;
        VectorSource again(encode_events(ev));
        const auto r = run_pipeline(c, again, nullptr);
        REQUIRE(r.reports.size() == 1);
        CHECK_FALSE(r.reports[0].certified);
        CHECK(r.reports[0].bits_out == 0);
    }

    TEST_CASE("a bank certificate is reused when fresh solving is off") {
        auto c = small_config(50'000, 1);
        SimulatorSource s1(c.device, 1, 2);
        const auto fresh = run_pipeline(c, s1, nullptr);
        REQUIRE(fresh.reports[0].certified);
        const auto bank = temp_path("bank.txt");
        save_certificate_bank(bank, std::vector<DualCertificate>{fresh.reports[0].certificate});
        c.bank_path = bank;
        c.refresh = false;
        SimulatorSource s2(c.device, 1, 2);
        const auto reused = run_pipeline(c, s2, nullptr);
        CHECK(reused.reports[0].certificate_index == 0);
        CHECK(reused.reports[0].p_g_n == doctest::Approx(fresh.reports[0].p_g_n).epsilon(1e-9));
        std::filesystem::remove(bank);
    }

    TEST_CASE("a seed file for the wrong block size is rejected") {
        auto c = small_config(100'000, 1);
        c.delta_override = 0.5;
        const auto path = temp_path("seed.bin");
        write_seed_file(path, SeedFile{1000, 10, generate_test_seed(1009, 1)});
        c.seed_path = path;
        VectorSource src(ideal_events(100'000));
        CHECK_THROWS_AS(run_pipeline(c, src, nullptr), ConfigError);
        std::filesystem::remove(path);
    }
}

TEST_SUITE("extract mode") {
    TEST_CASE("raw blocks are hashed with the test seed") {
        PipelineConfig c;
        c.mode = Mode::Extract;
        c.block_size = 16'000;
        c.h_min = 0.5;
        c.report_timings = false;
        std::vector<std::uint8_t> raw(2 * 2000 + 300);
        std::mt19937_64 rng(9);
        for (auto& b : raw) b = static_cast<std::uint8_t>(rng());
        std::istringstream in(std::string(raw.begin(), raw.end()));
        std::ostringstream bits;
        const auto r = run_extraction(c, in, &bits);
        REQUIRE(r.reports.size() == 3);
        const auto m = output_length(16'000, 0.5, c.epsilon_ext);
        CHECK(r.reports[0].bits_out == m);
        CHECK(r.reports[2].bits_out == 0);
        CHECK_FALSE(r.reports[2].full);
        CHECK(r.total_bits == 2 * m);

        const ToeplitzExtractor ex(generate_test_seed(2 * 16'000 - 1, block_seed(c.seed, 0x5EEDULL)), 16'000, 16'000);
        BitVector expected(2 * m);
        for (std::size_t k = 0; k < 2; ++k) {
            const auto block = BitVector::from_bytes(std::span(raw).subspan(k * 2000, 2000), 16'000);
            const auto out = ex.extract(block, m);
            for (std::size_t i = 0; i < m; ++i) expected.set(k * m + i, out.get(i));
        }
        const auto produced = BitVector::from_bytes(
            std::span(reinterpret_cast<const std::uint8_t*>(bits.str().data()), bits.str().size()), 2 * m);
        CHECK(produced == expected);
    }

    TEST_CASE("block sizes that split bytes are rejected") {
        PipelineConfig c;
        c.mode = Mode::Extract;
        c.block_size = 10'001;
        c.h_min = 0.5;
        std::istringstream in("abc");
        CHECK_THROWS_AS(run_extraction(c, in, nullptr), ConfigError);
    }
}

TEST_SUITE("output formats") {
    TEST_CASE("bit sink packs bits little-endian and pads the last byte") {
        std::ostringstream out;
        BitSink sink(&out);
        sink.append(BitVector::from_string("101"));
        sink.append(BitVector::from_string("000001111"));
        sink.finish();
        CHECK(sink.bits_written() == 12);
        const std::string s = out.str();
        REQUIRE(s.size() == 2);
        CHECK(static_cast<std::uint8_t>(s[0]) == 0x05);  // bits 0 and 2, then bits 3..7 clear
        CHECK(static_cast<std::uint8_t>(s[1]) == 0x0F);
    }

    TEST_CASE("conclusive_bits marks inconclusive rounds") {
        const std::vector<EventRecord> ev{{0, Outcome::Zero}, {1, Outcome::Inconclusive}, {1, Outcome::One},
                                          {0, Outcome::Inconclusive}};
        const auto bits = conclusive_bits(encode_events(ev));
        CHECK(bits.to_string() == "0101");
    }

    TEST_CASE("curve CSV header") {
        std::vector<CurvePoint> pts(1);
        pts[0].abscissa = 0.3;
        pts[0].valid = false;
        std::ostringstream out;
        write_curve_csv(out, pts, "alpha_sq");
        std::string header;
        std::istringstream in(out.str());
        std::getline(in, header);
        CHECK(header == "alpha_sq,delta,h_min_asymptotic,h_min_finite,p_conclusive,p_error");
    }
}
