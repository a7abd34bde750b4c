// Acceptance checks. Each criterion prints one PASS/FAIL line; the exit status is nonzero when
// any selected criterion fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "support.hpp"
#include "usdqrng/certifier.hpp"
#include "usdqrng/device_models.hpp"
#include "usdqrng/extractor.hpp"
#include "usdqrng/pipeline.hpp"

using namespace usdqrng;

namespace {

struct Outcome_ {
    bool pass = true;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const InputDistribution kUniform = InputDistribution::uniform();

// Two-pulse and single-pulse configurations at the published detector settings.
DeviceConfig two_pulse() {
    DeviceConfig d;
    d.encoding = Encoding::TwoPulse;
    return d;
}

DeviceConfig single_pulse() {
    DeviceConfig d;
    d.encoding = Encoding::SinglePulse;
    d.p_x1 = 7.0 / 8.0;
    return d;
}

std::vector<double> uniform_grid(double first, double step, int count) {
    std::vector<double> g;
    for (int i = 0; i < count; ++i) g.push_back(first + step * i);
    return g;
}

const CurvePoint* peak(const std::vector<CurvePoint>& curve) {
    const CurvePoint* best = nullptr;
    for (const auto& p : curve)
        if (p.valid && (!best || p.h_min_finite > best->h_min_finite)) best = &p;
    return best;
}

// --- 1, 2: ideal discrimination -----------------------------------------------------------

Outcome_ ideal_usd_calibration(const std::vector<double>& deltas, bool above_half) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome_ r;
    double worst = 0.0;
    for (const double d : deltas) {
        const auto data = testing_support::ideal_usd(d);
        const auto cert = solve_dual(OverlapBound(d), data, kUniform);
        const double bound = evaluate_bound(cert, data) + rigorization_margin(verify_certificate(cert).max_eigenvalue);
        const double expected = above_half ? d : 1.0 - d;
        worst = std::max(worst, std::abs(bound - expected));
    }
    r.pass = worst <= 1e-6;
    r.detail = fmt("max |p_g* - expected| = %.2e", worst);

    if (above_half) {
        // One bit less the finite-size penalty for 5e7 ideal rounds per input.
        CountsTable counts;
        const std::uint64_t half = 25'000'000;
        counts.n[0][0] = counts.n[2][0] = counts.n[1][1] = counts.n[2][1] = half;
        const double eps = 1e-9;
        const auto cr = certify_block(counts, OverlapBound(0.5), kUniform, eps, {});
        const auto params = FiniteSizeParams::from_counts(eps, counts);
        const auto& cert = cr.certificate;
        double penalty = rigorization_margin(verify_certificate(cert).max_eigenvalue, params.radius);
        for (int x = 0; x < 2; ++x) penalty += cert.nu_abs_sum(x) * params.radius[static_cast<std::size_t>(x)];
        const double p_star = evaluate_bound(cert, cr.xi);
        const double h_expected = -std::log2(p_star + penalty);
        const bool ok = std::abs(cr.h_min - h_expected) <= 1e-9 && cr.h_min < 1.0 && penalty > 0.0 &&
                        std::abs(params.radius[0] - 4.55e-4) < 5e-6;
        r.pass = r.pass && ok;
        r.detail += fmt("; delta=1/2, N_x=5e7: H_min = %.6f = -log2(%.6f + penalty %.6f)", cr.h_min, p_star,
                        penalty);
    }
    const double secs = seconds_since(t0);
    r.pass = r.pass && secs < 1.0;
    r.detail += fmt("; %.3f s", secs);
    return r;
}

// --- 3, 4: curve maxima ---------------------------------------------------------------------

Outcome_ curve_peak(const DeviceConfig& device, const std::vector<double>& grid, double target_h, double h_tol,
                    double target_a, double a_tol) {
    const auto t0 = std::chrono::steady_clock::now();
    CurveOptions opt;
    opt.n_per_block = 50'000'000;
    opt.epsilon = 1e-9;
    const auto plain = entropy_curve(device, grid, opt);
    const double secs = seconds_since(t0);
    opt.include_dead_time = true;
    const auto dead = entropy_curve(device, grid, opt);

    Outcome_ r;
    const auto* p = peak(plain);
    const auto* q = peak(dead);
    if (!p) return {false, "no valid curve point"};
    r.pass = std::abs(p->h_min_finite - target_h) <= h_tol && std::abs(p->abscissa - target_a) <= a_tol + 1e-12 &&
             secs < 300.0;
    r.detail = fmt("no dead time: max H_min = %.4f at |alpha|^2 = %.3f (target %.2f +- %.2f at %.2f +- %.2f)",
                   p->h_min_finite, p->abscissa, target_h, h_tol, target_a, a_tol);
    if (q)
        r.detail += fmt("; with dead-time correction: %.4f at %.3f", q->h_min_finite, q->abscissa);
    r.detail += fmt("; %zu points, %.2f s", grid.size(), secs);
    return r;
}

// --- 5: rate accounting -----------------------------------------------------------------------

// Bit i of the Toeplitz product, computed from whole words: sum_j seed[n-1+i-j] raw[j].
bool toeplitz_row(const BitVector& seed, const BitVector& raw, std::size_t i) {
    const std::size_t n = raw.size();
    bool acc = false;
    // Reversed seed window: w[j] = seed[n-1+i-j]; walk j in 64-bit strides.
    for (std::size_t j0 = 0; j0 < n; j0 += 64) {
        const std::size_t len = std::min<std::size_t>(64, n - j0);
        std::uint64_t w = 0;
        for (std::size_t k = 0; k < len; ++k) w |= static_cast<std::uint64_t>(seed.get(n - 1 + i - j0 - k)) << k;
        const std::uint64_t rw = raw.words()[j0 / 64];
        acc ^= (std::popcount(w & rw) & 1) != 0;
    }
    return acc;
}

Outcome_ rate_accounting() {
    Outcome_ r;
    const double eps = kDefaultExtractorEpsilon;
    const double raw_rate = 5e7;
    const double rate33 = static_cast<double>(output_length(50'000'000, 0.33, eps)) * raw_rate / 5e7;
    const double rate22 = static_cast<double>(output_length(50'000'000, 0.22, eps)) * raw_rate / 5e7;
    const bool arith = std::abs(rate33 / 16.5e6 - 1.0) <= 0.01 && std::abs(rate22 / 11e6 - 1.0) <= 0.01;

    // One real block of one second of raw bits at H_min = 0.33.
    const std::size_t n = 50'000'000;
    const std::size_t m = output_length(n, 0.33, eps);
    std::mt19937_64 rng(33);
    BitVector raw(n);
    for (auto& w : raw.words()) w = rng();
    if (n % 64) raw.words().back() &= (std::uint64_t{1} << (n % 64)) - 1;
    const auto seed = generate_test_seed(n + m - 1, 2024);
    const ToeplitzExtractor ex(seed, n, m);
    const auto out = ex.extract(raw, m);
    bool rows_ok = out.size() == m;
    std::size_t checked = 0;
    for (std::size_t i : {std::size_t{0}, std::size_t{1}, m / 2, m - 2, m - 1}) {
        rows_ok = rows_ok && out.get(i) == toeplitz_row(seed, raw, i);
        ++checked;
    }
    for (int k = 0; k < 3; ++k) {
        const std::size_t i = rng() % m;
        rows_ok = rows_ok && out.get(i) == toeplitz_row(seed, raw, i);
        ++checked;
    }
    r.pass = arith && rows_ok;
    r.detail = fmt("H=0.33: %.4f Mbit/s, H=0.22: %.4f Mbit/s; extracted block of %zu bits, %zu rows match the "
                   "word-level oracle: %s",
                   rate33 / 1e6, rate22 / 1e6, out.size(), checked, rows_ok ? "yes" : "no");
    return r;
}

// --- 6: duality gap --------------------------------------------------------------------------

Outcome_ duality_gap() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(606);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    double max_gap = 0.0, min_diff = 1.0, max_slack = 0.0;
    int failures = 0;
    for (int k = 0; k < 50; ++k) {
        const double delta = u(rng);
        const InputDistribution px(std::uniform_real_distribution<double>(0.2, 0.8)(rng));
        const auto data = testing_support::random_povm_data(delta, rng);
        try {
            const auto primal = solve_primal(OverlapBound(delta), data, px);
            const auto cert = solve_dual(OverlapBound(delta), data, px);
            const double dual = evaluate_bound(cert, data) + rigorization_margin(verify_certificate(cert).max_eigenvalue);
            // The primal measurement reproduces the data only up to its residual; on the data it
            // does reproduce, weak duality is exact. Moving back to the target data can change the
            // dual value by at most sum|nu| * residual.
            const double slack = (cert.nu_abs_sum(0) + cert.nu_abs_sum(1)) * primal.residual;
            max_gap = std::max(max_gap, dual - primal.value);
            min_diff = std::min(min_diff, dual - primal.value + slack);
            max_slack = std::max(max_slack, slack);
        } catch (const std::exception&) {
            ++failures;
        }
    }
    const double secs = seconds_since(t0);
    Outcome_ r;
    r.pass = failures == 0 && max_gap <= 1e-6 && min_diff >= 0.0 && secs < 30.0;
    r.detail = fmt("50 instances: max(dual - primal) = %.2e, min(dual - primal + residual slack) = %.2e (slack <= "
                   "%.1e), solver failures %d; %.2f s",
                   max_gap, min_diff, max_slack, failures, secs);
    return r;
}

// --- 7: overlap monotonicity -----------------------------------------------------------------

Outcome_ overlap_monotonicity() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(707);
    const double ds[] = {0.1, 0.3, 0.5, 0.7, 0.9};
    const double steps[] = {0.0, 0.02, 0.05, 0.1, 0.2};
    int cases = 0, violations = 0, failures = 0;
    double worst = 1.0;
    for (const double d : ds) {
        for (const double s : steps) {
            const double big = std::min(0.99, d + s);
            for (int k = 0; k < 10; ++k) {
                const auto data = testing_support::random_povm_data(big, rng);
                ++cases;
                try {
                    const auto cert = solve_dual(OverlapBound(d), data, kUniform);
                    const double value = evaluate_bound(cert, data);
                    const double primal = solve_primal(OverlapBound(big), data, kUniform).value;
                    worst = std::min(worst, value - primal);
                    if (value < primal - 1e-6) ++violations;
                } catch (const std::exception&) {
                    ++failures;
                }
            }
        }
    }
    const double secs = seconds_since(t0);
    Outcome_ r;
    r.pass = cases == 250 && violations == 0 && failures == 0 && secs < 120.0;
    r.detail = fmt("%d cases, %d violations, %d solver failures, min(bound - primal) = %.2e; %.2f s", cases,
                   violations, failures, worst, secs);
    return r;
}

// --- 8: finite-size coverage -----------------------------------------------------------------

CountsTable sample_counts(const ConditionalDistribution& p, double p_x1, std::uint64_t n, std::mt19937_64& rng) {
    CountsTable c;
    const std::uint64_t n1 = std::binomial_distribution<std::uint64_t>(n, p_x1)(rng);
    const std::uint64_t nx[2] = {n - n1, n1};
    for (std::size_t x = 0; x < 2; ++x) {
        const std::uint64_t a = std::binomial_distribution<std::uint64_t>(nx[x], p.p[0][x])(rng);
        const double rest = 1.0 - p.p[0][x];
        const std::uint64_t b =
            rest > 0 ? std::binomial_distribution<std::uint64_t>(nx[x] - a, std::min(1.0, p.p[1][x] / rest))(rng) : 0;
        c.n[0][x] = a;
        c.n[1][x] = b;
        c.n[2][x] = nx[x] - a - b;
    }
    return c;
}

Outcome_ coverage() {
    const auto t0 = std::chrono::steady_clock::now();
    // A lossy, slightly noisy discrimination at delta = 0.7 with an informative bound at N = 1e4.
    const double delta = 0.7;
    ConditionalDistribution truth;
    for (std::size_t x = 0; x < 2; ++x) {
        truth.p[x][x] = 0.25;
        truth.p[1 - x][x] = 0.01;
        truth.p[2][x] = 0.74;
    }
    const auto true_cert = solve_dual(OverlapBound(delta), truth, kUniform);
    const double true_bound = evaluate_bound(true_cert, truth);
    std::mt19937_64 rng(808);
    int below = 0, informative = 0;
    const int trials = 10'000;
    for (int k = 0; k < trials; ++k) {
        const auto counts = sample_counts(truth, 0.5, 10'000, rng);
        const auto cr = certify_block(counts, OverlapBound(delta), kUniform, 0.05, {});
        if (cr.p_g_n < true_bound) ++below;
        if (cr.p_g_n < 1.0) ++informative;
    }
    const double rate = static_cast<double>(below) / trials;
    Outcome_ r;
    r.pass = rate <= 0.08;
    r.detail = fmt("bound below the true value in %.2f%% of %d trials (true p_g = %.4f, %d informative bounds); "
                   "%.1f s",
                   100.0 * rate, trials, true_bound, informative, seconds_since(t0));
    return r;
}

// --- 9: dead-time ordering ---------------------------------------------------------------------

Outcome_ dead_time_ordering(const std::vector<double>& grid) {
    Outcome_ r;
    std::string detail;
    for (const auto& device : {two_pulse(), single_pulse()}) {
        CurveOptions opt;
        const auto plain = entropy_curve(device, grid, opt);
        opt.include_dead_time = true;
        const auto dead = entropy_curve(device, grid, opt);
        int bad = 0, compared = 0;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (!(grid[i] > 0.0) || !plain[i].valid || !dead[i].valid) continue;
            ++compared;
            if (!(dead[i].h_min_finite < plain[i].h_min_finite)) ++bad;
        }
        const auto* p = peak(plain);
        const auto* q = peak(dead);
        const bool shift = p && q && q->abscissa <= p->abscissa;
        r.pass = r.pass && bad == 0 && compared > 0 && shift;
        detail += fmt("%s%s: %d/%d points strictly lower, peak %.3f -> %.3f", detail.empty() ? "" : "; ",
                      to_string(device.encoding).c_str(), compared - bad, compared, p ? p->abscissa : NAN,
                      q ? q->abscissa : NAN);
    }
    r.detail = detail;
    return r;
}

// --- 10: fluctuation robustness --------------------------------------------------------------

Outcome_ fluctuation() {
    Outcome_ r;
    const auto ratios = uniform_grid(1.0, 0.25, 17);
    std::string detail;
    for (auto device : {two_pulse(), single_pulse()}) {
        device.mean_photon_number = device.encoding == Encoding::TwoPulse ? 0.3 : 0.6;
        for (const bool dt : {false, true}) {
            CurveOptions opt;
            opt.include_dead_time = dt;
            const auto curve = fluctuation_curve(device, ratios, opt);
            const double nominal_grid[] = {device.mean_photon_number};
            const auto nominal = entropy_curve(device, nominal_grid, opt);
            bool monotone = true, valid = true;
            for (std::size_t i = 0; i < curve.size(); ++i) {
                valid = valid && curve[i].valid;
                if (i > 0 && curve[i].h_min_finite > curve[i - 1].h_min_finite) monotone = false;
            }
            const bool same = std::abs(curve.front().h_min_finite - nominal[0].h_min_finite) <= 1e-12;
            const bool positive = curve.back().h_min_finite > 0.0;
            r.pass = r.pass && valid && monotone && same && positive;
            detail += fmt("%s%s%s: H(1) = %.4f, H(5) = %.4f%s", detail.empty() ? "" : "; ",
                          to_string(device.encoding).c_str(), dt ? " (dead time)" : "",
                          curve.front().h_min_finite, curve.back().h_min_finite,
                          monotone && same ? "" : " [not monotone or not nominal]");
        }
    }
    r.detail = detail;
    return r;
}

// --- 11: extractor ---------------------------------------------------------------------------

Outcome_ extractor() {
    using testing_support::dense_toeplitz;
    using testing_support::pack;
    using testing_support::random_bits;
    using testing_support::unpack;
    std::mt19937_64 rng(1111);
    int cases = 0, mismatches = 0;
    ExtractorOptions direct, fft;
    direct.method = ToeplitzMethod::Direct;
    fft.method = ToeplitzMethod::Fft;
    auto check = [&](std::size_t n, std::size_t m) {
        const auto seed = random_bits(n + m - 1, rng);
        const auto raw = random_bits(n, rng);
        const auto expected = dense_toeplitz(seed, raw, m);
        for (const auto& opt : {direct, fft}) {
            const ToeplitzExtractor ex(pack(seed), n, m, opt);
            ++cases;
            if (unpack(ex.extract(pack(raw), m)) != expected) ++mismatches;
        }
    };
    for (std::size_t n = 1; n <= 64; ++n)
        for (std::size_t m = 1; m <= n; ++m) check(n, m);
    for (int k = 0; k < 1000; ++k) {
        const std::size_t n = 1 + rng() % 4096;
        check(n, 1 + rng() % n);
    }

    // Throughput on one second of raw bits at H_min = 0.33; the first call plans the transforms.
    const std::size_t n = 50'000'000;
    const std::size_t m = output_length(n, 0.33, kDefaultExtractorEpsilon);
    BitVector raw(n);
    for (auto& w : raw.words()) w = rng();
    if (n % 64) raw.words().back() &= (std::uint64_t{1} << (n % 64)) - 1;
    const ToeplitzExtractor ex(generate_test_seed(n + m - 1, 99), n, m);
    auto t0 = std::chrono::steady_clock::now();
    (void)ex.extract(raw, m);
    const double warmup = seconds_since(t0);
    const int reps = 3;
    t0 = std::chrono::steady_clock::now();
    for (int k = 0; k < reps; ++k) {
        raw.words()[static_cast<std::size_t>(k)] ^= 1;
        (void)ex.extract(raw, m);
    }
    const double per_block = seconds_since(t0) / reps;
    const double mbps = static_cast<double>(n) / per_block / 1e6;

    Outcome_ r;
    r.pass = mismatches == 0 && mbps >= 20.0;
    r.detail = fmt("%d oracle comparisons, %d mismatches; sustained %.1f Mbit/s raw input (%.1f Mbit/s output), "
                   "first call %.2f s",
                   cases, mismatches, mbps, static_cast<double>(m) / per_block / 1e6, warmup);
    return r;
}

// --- 12: determinism -------------------------------------------------------------------------

Outcome_ determinism() {
    PipelineConfig c;
    c.block_size = 1'000'000;
    c.blocks = 3;
    c.seed = 1212;
    c.report_timings = false;
    auto once = [&c](std::string& bits, std::string& csv, std::string& summary) {
        SimulatorSource src(c.device, c.blocks, c.seed);
        std::ostringstream b, r, s;
        const auto result = run_pipeline(c, src, &b);
        write_report_csv(r, result.reports, false);
        write_summary(s, result, false);
        bits = b.str();
        csv = r.str();
        summary = s.str();
        return result.total_bits;
    };
    std::string b1, r1, s1, b2, r2, s2;
    const auto n1 = once(b1, r1, s1);
    once(b2, r2, s2);
    Outcome_ r;
    r.pass = n1 > 0 && b1 == b2 && r1 == r2 && s1 == s2;
    r.detail = fmt("3 blocks of 1e6 events, %zu output bits: streams %s, reports %s", static_cast<std::size_t>(n1),
                   b1 == b2 ? "identical" : "differ", r1 == r2 && s1 == s2 ? "identical" : "differ");
    return r;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    std::vector<int> only;
    app.add_option("--criterion,-c", only, "run only these criteria (1-12)")->check(CLI::Range(1, 12));
    CLI11_PARSE(app, argc, argv);

    const auto curve_grid = uniform_grid(0.02, 0.02, 50);
    const std::vector<std::pair<std::string, std::function<Outcome_()>>> criteria = {
        {"ideal USD calibration, delta >= 1/2",
         [] { return ideal_usd_calibration({0.5, 0.6, 0.7, 0.8, 0.9}, true); }},
        {"ideal USD calibration, delta < 1/2", [] { return ideal_usd_calibration({0.1, 0.2, 0.3, 0.4}, false); }},
        {"two-pulse entropy curve maximum",
         [&] { return curve_peak(two_pulse(), curve_grid, 0.22, 0.02, 0.30, 0.05); }},
        {"single-pulse entropy at |alpha|^2 = 0.60",
         [] {
             // The operating point is checked as a one-point curve with the same detector.
             const std::vector<double> g{0.60};
             return curve_peak(single_pulse(), g, 0.33, 0.03, 0.60, 0.0);
         }},
        {"rate accounting", rate_accounting},
        {"duality gap", duality_gap},
        {"overlap monotonicity", overlap_monotonicity},
        {"finite-size coverage", coverage},
        {"dead-time ordering", [&] { return dead_time_ordering(curve_grid); }},
        {"fluctuation robustness", fluctuation},
        {"extractor correctness and throughput", extractor},
        {"end-to-end determinism", determinism},
    };

    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Outcome_ r;
        try {
            r = criteria[i].second();
        } catch (const std::exception& e) {
            r = {false, std::string("exception: ") + e.what()};
        }
        all = all && r.pass;
        std::cout << (r.pass ? "PASS" : "FAIL") << "  [" << (id < 10 ? "0" : "") << id << "] " << criteria[i].first
                  << ": " << r.detail << std::endl;
    }
    return all ? 0 : 1;
}
