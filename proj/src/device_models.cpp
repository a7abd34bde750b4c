#include "usdqrng/device_models.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>

#include "usdqrng/errors.hpp"

namespace usdqrng {

std::string to_string(Encoding e) { return e == Encoding::TwoPulse ? "two-pulse" : "single-pulse"; }

Encoding parse_encoding(const std::string& s) {
    if (s == "two-pulse") return Encoding::TwoPulse;
    if (s == "single-pulse") return Encoding::SinglePulse;
    throw ConfigError("unknown encoding '" + s + "' (expected two-pulse or single-pulse)");
}

void DeviceConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw DomainError(std::string("device config: ") + what);
    };
    require(mean_photon_number >= 0.0 && std::isfinite(mean_photon_number), "mean photon number must be >= 0");
    require(efficiency >= 0.0 && efficiency <= 1.0, "efficiency must lie in [0,1]");
    require(dark_count_rate >= 0.0 && std::isfinite(dark_count_rate), "dark count rate must be >= 0");
    require(repetition_rate >= 0.0 && std::isfinite(repetition_rate), "repetition rate must be >= 0");
    require(bin_separation >= 0.0 && std::isfinite(bin_separation), "bin separation must be >= 0");
    require(dead_time_effective >= 0.0 && std::isfinite(dead_time_effective), "dead time must be >= 0");
    require(p_x1 > 0.0 && p_x1 < 1.0, "p_x1 must lie in (0,1)");
    require(alpha_max_ratio >= 1.0 && std::isfinite(alpha_max_ratio), "alpha_max_ratio must be >= 1");
    require(error_injection >= 0.0 && error_injection <= 1.0, "error injection must lie in [0,1]");
    require(dark_probability() <= 1.0, "dark count probability per bin exceeds 1");
}

double overlap_two_pulse(double mean_photon_number) {
    if (!(mean_photon_number >= 0.0)) throw DomainError("overlap: mean photon number must be >= 0");
    return std::exp(-mean_photon_number);
}

double overlap_single_pulse(double mean_photon_number) {
    if (!(mean_photon_number >= 0.0)) throw DomainError("overlap: mean photon number must be >= 0");
    return std::exp(-mean_photon_number / 2.0);
}

double overlap(Encoding e, double mean_photon_number) {
    return e == Encoding::TwoPulse ? overlap_two_pulse(mean_photon_number) : overlap_single_pulse(mean_photon_number);
}

double dead_time_factor(double detection_rate, double t_d_effective) {
    if (!(detection_rate >= 0.0) || !(t_d_effective >= 0.0)) throw DomainError("dead_time_factor: negative input");
    return 1.0 / (1.0 + t_d_effective * detection_rate);
}

namespace {

// Click probability of a bin holding the pulse, and of an empty bin.
struct BinProbabilities {
    double occupied;
    double empty;
};

BinProbabilities bin_probabilities(const DeviceConfig& c) {
    const double pd = c.dark_probability();
    return {1.0 - (1.0 - pd) * std::exp(-c.efficiency * c.mean_photon_number), pd};
}

ConditionalDistribution raw_distribution(const DeviceConfig& c) {
    const auto [q, pd] = bin_probabilities(c);
    ConditionalDistribution d;
    if (c.encoding == Encoding::TwoPulse) {
        // The early bin is read first; a click there decides the round.
        d.at(Outcome::Zero, 0) = q;
        d.at(Outcome::One, 0) = (1.0 - q) * pd;
        d.at(Outcome::Inconclusive, 0) = (1.0 - q) * (1.0 - pd);
        d.at(Outcome::Zero, 1) = pd;
        d.at(Outcome::One, 1) = (1.0 - pd) * q;
        d.at(Outcome::Inconclusive, 1) = (1.0 - pd) * (1.0 - q);
    } else {
        d.at(Outcome::One, 0) = pd;
        d.at(Outcome::Inconclusive, 0) = 1.0 - pd;
        d.at(Outcome::One, 1) = q;
        d.at(Outcome::Inconclusive, 1) = 1.0 - q;
    }
    if (c.error_injection > 0.0) {
        const double e = c.error_injection;
        for (int x = 0; x < 2; ++x) {
            const double p0 = d.at(Outcome::Zero, x), p1 = d.at(Outcome::One, x);
            d.at(Outcome::Zero, x) = (1.0 - e) * p0 + e * p1;
            d.at(Outcome::One, x) = (1.0 - e) * p1 + e * p0;
        }
    }
    return d;
}

}  // namespace

TheoryDistribution theoretical_distribution(const DeviceConfig& config, bool include_dead_time) {
    config.validate();
    TheoryDistribution out;
    out.p = raw_distribution(config);
    if (!include_dead_time) return out;

    double click = 0.0;
    for (int x = 0; x < 2; ++x) {
        const double px = x == 1 ? config.p_x1 : 1.0 - config.p_x1;
        click += px * (1.0 - out.p.at(Outcome::Inconclusive, x));
    }
    // f = 1 / (1 + c f) with c = t_d * rep * P(click); the positive root in a cancellation-free form.
    const double c = config.dead_time_effective * config.repetition_rate * click;
    double f = 2.0 / (1.0 + std::sqrt(1.0 + 4.0 * c));
    // One Newton step on f (1 + c f) - 1 takes the residual to rounding level.
    f -= (f * (1.0 + c * f) - 1.0) / (1.0 + 2.0 * c * f);
    out.dead_time_factor = f;
    out.residual = std::abs(f - dead_time_factor(config.repetition_rate * f * click, config.dead_time_effective));

    for (int x = 0; x < 2; ++x) {
        out.p.at(Outcome::Zero, x) *= f;
        out.p.at(Outcome::One, x) *= f;
        out.p.at(Outcome::Inconclusive, x) = 1.0 - out.p.at(Outcome::Zero, x) - out.p.at(Outcome::One, x);
    }
    return out;
}

std::vector<EventRecord> simulate_block(const DeviceConfig& config, std::uint64_t n_rounds, std::uint64_t seed,
                                        const SimulationOptions& options) {
    config.validate();
    std::seed_seq input_seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x1u};
    std::seed_seq device_seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x2u};
    std::mt19937_64 input_rng(input_seq);
    std::mt19937_64 device_rng(device_seq);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    std::vector<EventRecord> events;
    events.reserve(n_rounds);

    if (!options.dead_time) {
        const auto d = raw_distribution(config);
        for (std::uint64_t k = 0; k < n_rounds; ++k) {
            EventRecord e;
            e.x = uniform(input_rng) < config.p_x1 ? 1 : 0;
            const double u = uniform(device_rng);
            const double p0 = d.at(Outcome::Zero, e.x);
            e.b = u < p0 ? Outcome::Zero : u < p0 + d.at(Outcome::One, e.x) ? Outcome::One : Outcome::Inconclusive;
            events.push_back(e);
        }
        return events;
    }

    const auto [q, pd] = bin_probabilities(config);
    const bool two = config.encoding == Encoding::TwoPulse;
    const double period = config.repetition_rate > 0.0 ? 1.0 / config.repetition_rate : 0.0;
    double blind_until = -1.0;
    for (std::uint64_t k = 0; k < n_rounds; ++k) {
        EventRecord e;
        e.x = uniform(input_rng) < config.p_x1 ? 1 : 0;
        const double start = static_cast<double>(k) * period;
        const int bins = two ? 2 : 1;
        for (int bin = 0; bin < bins; ++bin) {
            const double t = start + bin * config.bin_separation;
            const bool occupied = two ? bin == e.x : e.x == 1;
            const double u = uniform(device_rng);  // drawn even while blind, so streams stay aligned
            if (t < blind_until) continue;
            if (u < (occupied ? q : pd)) {
                e.b = two ? static_cast<Outcome>(bin) : Outcome::One;
                blind_until = t + config.dead_time_effective;
                break;
            }
        }
        if (e.b != Outcome::Inconclusive && config.error_injection > 0.0 &&
            uniform(device_rng) < config.error_injection)
            e.b = e.b == Outcome::Zero ? Outcome::One : Outcome::Zero;
        events.push_back(e);
    }
    return events;
}

CountsTable expected_counts(const ConditionalDistribution& p, double p_x1, std::uint64_t n_rounds) {
    if (!(p_x1 > 0.0 && p_x1 < 1.0)) throw DomainError("expected_counts: p_x1 must lie in (0,1)");
    CountsTable c;
    const double n = static_cast<double>(n_rounds);
    const auto n1 = static_cast<std::uint64_t>(std::llround(n * p_x1));
    const std::array<std::uint64_t, 2> totals{n_rounds - n1, n1};
    for (int x = 0; x < 2; ++x) {
        const double nx = static_cast<double>(totals[static_cast<std::size_t>(x)]);
        const auto n0 = static_cast<std::uint64_t>(std::llround(nx * p.at(Outcome::Zero, x)));
        const auto nb1 = static_cast<std::uint64_t>(std::llround(nx * p.at(Outcome::One, x)));
        if (n0 + nb1 > totals[static_cast<std::size_t>(x)]) throw DomainError("expected_counts: distribution is not normalized");
        c.at(Outcome::Zero, x) = n0;
        c.at(Outcome::One, x) = nb1;
        c.at(Outcome::Inconclusive, x) = totals[static_cast<std::size_t>(x)] - n0 - nb1;
    }
    return c;
}

namespace {

CurvePoint evaluate_point(const DeviceConfig& cfg, double abscissa, double delta, const CurveOptions& opt) {
    CurvePoint pt;
    pt.abscissa = abscissa;
    pt.delta = delta;
    try {
        const auto theory = theoretical_distribution(cfg, opt.include_dead_time);
        const auto& p = theory.p;
        for (int x = 0; x < 2; ++x) {
            const double px = x == 1 ? cfg.p_x1 : 1.0 - cfg.p_x1;
            pt.p_conclusive += px * (p.at(Outcome::Zero, x) + p.at(Outcome::One, x));
            pt.p_error += px * p.at(x == 0 ? Outcome::One : Outcome::Zero, x);
        }
        const OverlapBound bound(delta);
        const InputDistribution px(cfg.p_x1);

        const auto cert = solve_dual(bound, p, px, opt.solver);
        const double star = evaluate_bound(cert, p) + rigorization_margin(verify_certificate(cert).max_eigenvalue);
        pt.h_min_asymptotic = min_entropy(std::isnan(star) ? 1.0 : std::min(1.0, star));

        const auto counts = expected_counts(p, cfg.p_x1, opt.n_per_block);
        CertifyOptions co;
        co.solver = opt.solver;
        pt.h_min_finite = certify_block(counts, bound, px, opt.epsilon, {}, co).h_min;
    } catch (const std::exception& e) {
        pt.valid = false;
        pt.note = e.what();
    }
    return pt;
}

}  // namespace

std::vector<CurvePoint> entropy_curve(const DeviceConfig& config_template, std::span<const double> alpha_sq_grid,
                                      const CurveOptions& options) {
    if (alpha_sq_grid.empty()) throw DomainError("entropy_curve: empty grid");
    std::vector<CurvePoint> curve;
    curve.reserve(alpha_sq_grid.size());
    for (const double a : alpha_sq_grid) {
        DeviceConfig cfg = config_template;
        cfg.mean_photon_number = a;
        double delta = 0.0;
        try {
            cfg.validate();
            delta = overlap(cfg.encoding, a);
        } catch (const std::exception& e) {
            CurvePoint bad;
            bad.abscissa = a;
            bad.valid = false;
            bad.note = e.what();
            curve.push_back(bad);
            continue;
        }
        curve.push_back(evaluate_point(cfg, a, delta, options));
    }
    return curve;
}

std::vector<CurvePoint> fluctuation_curve(const DeviceConfig& config, std::span<const double> ratio_grid,
                                          const CurveOptions& options) {
    if (ratio_grid.empty()) throw DomainError("fluctuation_curve: empty grid");
    config.validate();
    std::vector<CurvePoint> curve;
    curve.reserve(ratio_grid.size());
    for (const double r : ratio_grid) {
        if (!(r >= 1.0) || !std::isfinite(r)) {
            CurvePoint bad;
            bad.abscissa = r;
            bad.valid = false;
            bad.note = "ratio must be >= 1";
            curve.push_back(bad);
            continue;
        }
        curve.push_back(evaluate_point(config, r, overlap(config.encoding, r * config.mean_photon_number), options));
    }
    return curve;
}

void write_curve_csv(std::ostream& out, std::span<const CurvePoint> curve, const std::string& abscissa_name) {
    const auto flags = out.flags();
    const auto prec = out.precision();
    out << std::setprecision(15);
    out << abscissa_name << ",delta,h_min_asymptotic,h_min_finite,p_conclusive,p_error\n";
    for (const auto& pt : curve) {
        out << pt.abscissa << ',' << pt.delta << ',';
        if (pt.valid)
            out << pt.h_min_asymptotic << ',' << pt.h_min_finite;
        else
            out << ',';
        out << ',' << pt.p_conclusive << ',' << pt.p_error << '\n';
    }
    out.flags(flags);
    out.precision(prec);
}

}  // namespace usdqrng
