#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "usdqrng/certifier.hpp"
#include "usdqrng/statistics.hpp"

namespace usdqrng {

enum class Encoding {
    TwoPulse,     ///< time bins: the pulse sits in the early bin for x=0, the late bin for x=1
    SinglePulse,  ///< photon number: vacuum for x=0, a pulse for x=1
};

std::string to_string(Encoding e);
Encoding parse_encoding(const std::string& s);  ///< "two-pulse" or "single-pulse"; ConfigError otherwise

struct DeviceConfig {
    Encoding encoding = Encoding::TwoPulse;
    double mean_photon_number = 0.3;      ///< |alpha|^2
    double efficiency = 0.77;             ///< eta
    double dark_count_rate = 300.0;       ///< Hz
    double repetition_rate = 5.0e7;       ///< Hz
    double bin_separation = 1.0e-8;       ///< s; also the dark-count window of one bin
    double dead_time_effective = 3.4e-8;  ///< s
    double p_x1 = 0.5;                    ///< p(x=1)
    double alpha_max_ratio = 1.0;         ///< |alpha_max|^2 / |alpha|^2
    /// Probability that a conclusive outcome is reported as the other symbol. Models error
    /// sources beyond dark counts (jitter tails, afterpulsing) when replaying measured data.
    double error_injection = 0.0;

    /// Throws DomainError when a field is outside its range.
    void validate() const;

    /// Dark-count probability of one bin.
    double dark_probability() const noexcept { return dark_count_rate * bin_separation; }
};

/// exp(-|alpha|^2); DomainError for negative input.
double overlap_two_pulse(double mean_photon_number);
/// exp(-|alpha|^2 / 2); DomainError for negative input.
double overlap_single_pulse(double mean_photon_number);
/// Overlap of the configured encoding at the given |alpha|^2.
double overlap(Encoding e, double mean_photon_number);

/// 1 / (1 + t_d * R). DomainError for negative arguments.
double dead_time_factor(double detection_rate, double t_d_effective);

struct TheoryDistribution {
    ConditionalDistribution p;
    double dead_time_factor = 1.0;  ///< 1 unless dead time was included
    double residual = 0.0;          ///< |f (1 + t_d R f) - 1| at the returned factor
};

/// Analytic p(b|x) for a threshold detector with Poissonian photon statistics. Two-pulse
/// outcomes follow the first click. With `include_dead_time`, click probabilities are scaled
/// by the factor f solving f = dead_time_factor(rep * f * P(click), t_d).
TheoryDistribution theoretical_distribution(const DeviceConfig& config, bool include_dead_time);

struct SimulationOptions {
    /// Sequential dead time: after a click the detector ignores every bin that starts less
    /// than dead_time_effective later.
    bool dead_time = false;
};

/// n_rounds Monte-Carlo events. Inputs and detector randomness come from two generators
/// seeded independently from `seed`, so the same (config, n_rounds, seed) always yields the
/// same events.
std::vector<EventRecord> simulate_block(const DeviceConfig& config, std::uint64_t n_rounds,
                                        std::uint64_t seed, const SimulationOptions& options = {});

/// Expected counts for N rounds: N_x = round(N p(x)), n_b = round(N_x p(b|x)) for b = 0, 1,
/// and the inconclusive count takes the remainder.
CountsTable expected_counts(const ConditionalDistribution& p, double p_x1, std::uint64_t n_rounds);

struct CurvePoint {
    double abscissa = 0.0;  ///< |alpha|^2 or the fluctuation ratio
    double delta = 0.0;     ///< overlap used for the certificate
    double h_min_asymptotic = 0.0;
    double h_min_finite = 0.0;
    double p_conclusive = 0.0;
    double p_error = 0.0;
    bool valid = true;
    std::string note;  ///< reason when the point is invalid
};

struct CurveOptions {
    std::uint64_t n_per_block = 50'000'000;
    double epsilon = 1e-9;
    bool include_dead_time = false;
    SolverSettings solver{};
};

/// Certified entropy against |alpha|^2, using theory data turned into expected counts.
std::vector<CurvePoint> entropy_curve(const DeviceConfig& config_template, std::span<const double> alpha_sq_grid,
                                      const CurveOptions& options = {});

/// Certified entropy when the certificate must cover pulses up to ratio * |alpha|^2 while the
/// data is produced at |alpha|^2.
std::vector<CurvePoint> fluctuation_curve(const DeviceConfig& config, std::span<const double> ratio_grid,
                                          const CurveOptions& options = {});

/// CSV with header "<abscissa_name>,delta,h_min_asymptotic,h_min_finite,p_conclusive,p_error".
/// Invalid points are written with empty entropy fields.
void write_curve_csv(std::ostream& out, std::span<const CurvePoint> curve, const std::string& abscissa_name);

}  // namespace usdqrng
