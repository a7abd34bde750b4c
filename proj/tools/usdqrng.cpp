// Command-line front end: simulate, certify, extract, run, curve, fluctuation, seed.

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "usdqrng/device_models.hpp"
#include "usdqrng/errors.hpp"
#include "usdqrng/pipeline.hpp"

namespace {

using namespace usdqrng;

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kCertification = 4 };

struct Flags {
    std::string config_path;
    std::string out, input, seed_file, bank, report, summary, save_bank, grid;
    std::optional<std::uint64_t> blocks, block_size;
    std::optional<double> epsilon, h_min;
    std::vector<std::string> settings;
    bool quiet = false, strict = false, no_timings = false, dead_time = false;
    std::uint64_t seed_m = 0;
};

void add_common(CLI::App* sub, Flags& f) {
    sub->add_option("--config", f.config_path, "key=value configuration file");
    sub->add_option("--out", f.out, "output file");
    sub->add_option("--input", f.input, "input file");
    sub->add_option("--seed-file", f.seed_file, "Toeplitz seed file");
    sub->add_option("--bank", f.bank, "certificate bank");
    sub->add_option("--blocks", f.blocks, "number of simulated blocks");
    sub->add_option("--block-size", f.block_size, "events per block");
    sub->add_option("--epsilon", f.epsilon, "confidence index of the finite-size bound");
    sub->add_option("--set", f.settings, "extra configuration as key=value (repeatable)");
    sub->add_flag("--quiet", f.quiet, "no summary on stderr");
}

PipelineConfig build_config(Mode mode, const Flags& f) {
    PipelineConfig c;
    c.mode = mode;
    if (!f.config_path.empty()) c = load_config(f.config_path, c);
    c.mode = mode;
    for (const auto& s : f.settings) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        apply_setting(c, s.substr(0, eq), s.substr(eq + 1));
    }
    if (!f.out.empty()) c.output_path = f.out;
    if (!f.input.empty()) c.input_path = f.input;
    if (!f.seed_file.empty()) c.seed_path = f.seed_file;
    if (!f.bank.empty()) c.bank_path = f.bank;
    if (!f.report.empty()) c.report_path = f.report;
    if (!f.summary.empty()) c.summary_path = f.summary;
    if (f.blocks) c.blocks = *f.blocks;
    if (f.block_size) c.block_size = *f.block_size;
    if (f.epsilon) c.epsilon = *f.epsilon;
    if (f.h_min) c.h_min = *f.h_min;
    if (f.strict) c.strict = true;
    if (f.no_timings) c.report_timings = false;
    if (f.dead_time) c.curve_dead_time = true;
    if (!f.grid.empty()) apply_setting(c, "grid", f.grid);
    c.validate();
    return c;
}

std::ofstream open_out(const std::string& path, bool binary) {
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out) throw IoError("cannot open " + path + " for writing");
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return in;
}

void write_reports(const PipelineConfig& c, const PipelineResult& r, bool quiet) {
    if (!c.report_path.empty()) {
        auto out = open_out(c.report_path, false);
        write_report_csv(out, r.reports, c.report_timings);
        if (!out) throw IoError("write failed for " + c.report_path);
    } else if (!quiet) {
        write_report_csv(std::cout, r.reports, c.report_timings);
    }
    if (!c.summary_path.empty()) {
        auto out = open_out(c.summary_path, false);
        write_summary(out, r, c.report_timings);
    } else if (!quiet) {
        write_summary(std::cerr, r, c.report_timings);
    }
}

void save_fresh_certificates(const std::string& path, const PipelineResult& r) {
    std::vector<DualCertificate> bank;
    for (const auto& rep : r.reports)
        if (rep.certified && rep.certificate_index < 0) bank.push_back(rep.certificate);
    save_certificate_bank(path, bank);
}

int run_mode(Mode mode, const Flags& f) {
    const PipelineConfig c = build_config(mode, f);
    switch (mode) {
        case Mode::Simulate: {
            if (c.output_path.empty()) throw ConfigError("simulate needs --out");
            auto out = open_out(c.output_path, true);
            const auto n = write_simulated_events(c, out);
            if (!f.quiet) std::cerr << "wrote " << n << " events to " << c.output_path << '\n';
            return kOk;
        }
        case Mode::Certify:
        case Mode::Run: {
            std::optional<std::ifstream> in;
            std::unique_ptr<EventSource> source;
            if (!c.input_path.empty()) {
                in.emplace(open_in(c.input_path));
                source = std::make_unique<StreamSource>(*in);
            } else {
                SimulationOptions opt;
                opt.dead_time = c.simulate_dead_time;
                source = std::make_unique<SimulatorSource>(c.device, c.blocks, c.seed, opt);
            }
            std::optional<std::ofstream> bits;
            if (mode == Mode::Run && !c.output_path.empty()) bits.emplace(open_out(c.output_path, true));
            const auto result = run_pipeline(c, *source, bits ? &*bits : nullptr);
            if (bits && !*bits) throw IoError("write failed for " + c.output_path);
            write_reports(c, result, f.quiet);
            if (!f.save_bank.empty()) save_fresh_certificates(f.save_bank, result);
            return kOk;
        }
        case Mode::Extract: {
            if (c.input_path.empty()) throw ConfigError("extract needs --input");
            auto in = open_in(c.input_path);
            std::optional<std::ofstream> bits;
            if (!c.output_path.empty()) bits.emplace(open_out(c.output_path, true));
            const auto result = run_extraction(c, in, bits ? &*bits : nullptr);
            write_reports(c, result, f.quiet);
            return kOk;
        }
        case Mode::Curve:
        case Mode::Fluctuation: {
            std::vector<double> grid = c.grid;
            if (grid.empty()) {
                if (mode == Mode::Curve)
                    for (int i = 1; i <= 60; ++i) grid.push_back(0.025 * i);
                else
                    for (int i = 0; i <= 16; ++i) grid.push_back(1.0 + 0.25 * i);
            }
            CurveOptions opt;
            opt.n_per_block = c.block_size;
            opt.epsilon = c.epsilon;
            opt.include_dead_time = c.curve_dead_time;
            const auto curve = mode == Mode::Curve ? entropy_curve(c.device, grid, opt)
                                                   : fluctuation_curve(c.device, grid, opt);
            const std::string name = mode == Mode::Curve ? "alpha_sq" : "ratio";
            if (c.output_path.empty()) {
                write_curve_csv(std::cout, curve, name);
            } else {
                auto out = open_out(c.output_path, false);
                write_curve_csv(out, curve, name);
                if (!out) throw IoError("write failed for " + c.output_path);
            }
            if (!f.quiet)
                for (const auto& pt : curve)
                    if (!pt.valid) std::cerr << "warning: point " << pt.abscissa << " invalid: " << pt.note << '\n';
            return kOk;
        }
    }
    return kFailure;
}

int make_seed(const Flags& f) {
    if (f.out.empty()) throw ConfigError("seed needs --out");
    if (!f.block_size) throw ConfigError("seed needs --block-size");
    const std::uint64_t n = *f.block_size;
    const std::uint64_t m = f.seed_m ? f.seed_m : n;
    if (n == 0 || m > n) throw ConfigError("seed needs 0 < m <= block size");
    PipelineConfig c;
    if (!f.config_path.empty()) c = load_config(f.config_path, c);
    write_seed_file(f.out, SeedFile{n, m, generate_test_seed(n + m - 1, block_seed(c.seed, 0x5EEDULL))});
    if (!f.quiet) std::cerr << "wrote a pseudorandom test seed for n=" << n << ", m=" << m << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semi-device-independent QRNG: simulate, certify and extract"};
    app.require_subcommand(1);
    Flags f;

    struct Sub {
        const char* name;
        Mode mode;
        const char* help;
    };
    const Sub subs[] = {
        {"simulate", Mode::Simulate, "write simulated detection events"},
        {"certify", Mode::Certify, "certify blocks of events and report"},
        {"extract", Mode::Extract, "extract bits from a raw bit file at a given h_min"},
        {"run", Mode::Run, "certify and extract blocks"},
        {"curve", Mode::Curve, "certified entropy against mean photon number"},
        {"fluctuation", Mode::Fluctuation, "certified entropy against pulse-energy fluctuation ratio"},
    };
    std::vector<std::pair<CLI::App*, Mode>> mode_apps;
    for (const auto& s : subs) {
        auto* sub = app.add_subcommand(s.name, s.help);
        add_common(sub, f);
        sub->add_option("--report", f.report, "block report CSV");
        sub->add_option("--summary", f.summary, "summary text file");
        sub->add_flag("--strict", f.strict, "fail on the first uncertifiable block");
        sub->add_flag("--no-timings", f.no_timings, "leave timing fields empty");
        sub->add_option("--save-bank", f.save_bank, "save certificates solved during the run");
        sub->add_option("--h-min", f.h_min, "certified min-entropy per raw bit (extract)");
        sub->add_option("--grid", f.grid, "comma-separated grid (curve, fluctuation)");
        sub->add_flag("--dead-time", f.dead_time, "include the dead-time correction in curves");
        mode_apps.emplace_back(sub, s.mode);
    }
    auto* seed = app.add_subcommand("seed", "write a pseudorandom test seed file");
    seed->add_option("--config", f.config_path, "configuration file (for the seed value)");
    seed->add_option("--out", f.out, "seed file");
    seed->add_option("--block-size", f.block_size, "input bits n");
    seed->add_option("--m", f.seed_m, "largest output length (default n)");
    seed->add_flag("--quiet", f.quiet, "no messages");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (seed->parsed()) return make_seed(f);
        for (const auto& [sub, mode] : mode_apps)
            if (sub->parsed()) return run_mode(mode, f);
    } catch (const CertificationFailure& e) {
        std::cerr << "certification failure: " << e.what() << '\n';
        return kCertification;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kConfig;
    } catch (const DomainError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kConfig;
    } catch (const LengthMismatchError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kConfig;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kIo;
    } catch (const FormatError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kFailure;
}
