#pragma once

// Guessing-probability bounds for the conclusiveness bit of a two-state prepare-and-measure
// device, given a lower bound on the overlap of the prepared pure states.
//
// A strategy label (l0, l1) records which guess is optimal for each input: l_x = 0 means the
// adversary guesses "inconclusive" when x was sent, l_x = 1 means "conclusive". The primal
// program maximizes over twelve subnormalized POVM elements M[l0][l1][b]; the dual program
// returns coefficients nu[b][x] and four Hermitian H[l0][l1] such that
//
//     sum_x rho_x (p(x) g(l, b, x) - nu[b][x]) + H[l] - Tr(H[l])/2 * 1  <=  0
//
// for all (l0, l1, b), where g = 1 when b matches the guess selected by l_x. Any such
// certificate bounds the guessing probability by the linear functional sum nu[b][x] p(b|x).

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "usdqrng/sdp.hpp"
#include "usdqrng/statistics.hpp"

namespace usdqrng {

using Matrix2c = Eigen::Matrix2cd;
using Vector2c = Eigen::Vector2cd;

/// Certified lower bound on |<psi0|psi1>|.
class OverlapBound {
public:
    explicit OverlapBound(double delta);
    double value() const noexcept { return delta_; }

private:
    double delta_;
};

/// Input distribution, parameterized by p(x=1).
class InputDistribution {
public:
    explicit InputDistribution(double p_x1);
    static InputDistribution uniform() { return InputDistribution(0.5); }

    double p_x1() const noexcept { return p_x1_; }
    double p(int x) const noexcept { return x == 1 ? p_x1_ : 1.0 - p_x1_; }

private:
    double p_x1_;
};

/// Pure qubit states psi_0, psi_1.
struct StatePair {
    std::array<Vector2c, 2> psi;

    Matrix2c rho(int x) const;
    double overlap() const;
};

/// psi_0 = |0>, psi_1 = delta|0> + sqrt(1 - delta^2)|1>.
StatePair canonical_states(OverlapBound delta);

using StrategyArray = std::array<std::array<Matrix2c, 2>, 2>;

struct PrimalSolution {
    /// m[l0][l1][b]
    std::array<std::array<std::array<Matrix2c, 3>, 2>, 2> m;
    double value = 0.0;
    double residual = 0.0;  ///< largest deviation from the target data
    int iterations = 0;
};

struct DualCertificate {
    double delta = 0.0;
    double p_x1 = 0.5;
    std::array<std::array<double, 2>, 3> nu{};  ///< nu[b][x]
    StrategyArray h{};                          ///< h[l0][l1]
    std::string solver = "manual";
    double residual = 0.0;  ///< largest constraint eigenvalue recorded at creation

    double nu_at(Outcome b, int x) const { return nu[row(b)][static_cast<std::size_t>(x)]; }
    double nu_abs_sum(int x) const;
};

struct VerificationReport {
    bool accepted = false;
    double max_eigenvalue = 0.0;
    double hermiticity_error = 0.0;
    /// constraint_max[l0][l1][b]
    std::array<std::array<std::array<double, 3>, 2>, 2> constraint_max{};
};

struct SolverSettings {
    sdp::Options options{};
    bool barrier_fallback = true;
};

inline constexpr double kVerificationTolerance = 1e-9;

/// Maximal guessing probability compatible with `data` at overlap exactly `delta`.
PrimalSolution solve_primal(OverlapBound delta, const ConditionalDistribution& data,
                            InputDistribution px, const SolverSettings& settings = {});
PrimalSolution solve_primal(const StatePair& states, const ConditionalDistribution& data,
                            InputDistribution px, const SolverSettings& settings = {});

/// Optimal dual certificate for `data`; its linear bound evaluated on `data` matches the primal
/// optimum up to solver tolerance when the dual optimum is attained.
DualCertificate solve_dual(OverlapBound delta, const ConditionalDistribution& data,
                           InputDistribution px, const SolverSettings& settings = {});

/// Certificate minimizing the finite-size bound
///   sum nu[b][x] xi(b|x) + sum |nu[b][x]| radius[x]
/// over all dual-feasible (nu, H).
DualCertificate solve_dual_finite_size(OverlapBound delta, const ConditionalDistribution& xi,
                                       InputDistribution px, std::array<double, 2> radius,
                                       const SolverSettings& settings = {});

/// Optimal dual value for an arbitrary state pair (no certificate is produced because
/// certificates are tied to the canonical pair).
double dual_bound(const StatePair& states, const ConditionalDistribution& data,
                  InputDistribution px, const SolverSettings& settings = {});

/// Rebuilds all twelve constraint matrices from (nu, H, delta, p_x) and checks them with the
/// closed-form 2x2 eigenvalue formula.
VerificationReport verify_certificate(const DualCertificate& cert);

/// sum nu[b][x] p(b|x)
double evaluate_bound(const DualCertificate& cert, const ConditionalDistribution& data);

/// sum nu xi + sum |nu| t(epsilon, N_x), clamped to at most 1.
double finite_size_bound(const DualCertificate& cert, const CountsTable& counts, double epsilon);
double finite_size_bound(const DualCertificate& cert, const ConditionalDistribution& xi,
                         std::array<double, 2> radius);

/// Amount to add to a bound so that it stays valid when the certificate's constraint
/// matrices have positive eigenvalues up to `max_eigenvalue`: shifting every nu by r and H by
/// r*(rho0 + rho1 - 1) makes the certificate exactly feasible.
double rigorization_margin(double max_eigenvalue, std::array<double, 2> radius = {0.0, 0.0});

/// -log2 of p_g clamped to [1/2, 1].
double min_entropy(double p_g);

struct CertificationResult {
    double p_g_star = 1.0;  ///< asymptotic bound on the empirical distribution
    double p_g_n = 1.0;     ///< finite-size bound
    double h_min = 0.0;
    DualCertificate certificate;
    int certificate_index = -1;  ///< bank index, or -1 for a certificate solved for this block
    ConditionalDistribution xi;
    std::array<double, 2> radius{};
    double epsilon = 0.0;
    std::string note;
};

struct CertifyOptions {
    bool refresh = true;  ///< also solve for the tightest certificate on this block
    SolverSettings solver{};
};

/// Evaluates the finite-size bound under each compatible bank certificate (and optionally a
/// fresh one) and keeps the tightest. Certificates are compatible when they were built for the
/// same input distribution and an overlap no larger than `delta`.
CertificationResult certify_block(const CountsTable& counts, OverlapBound delta,
                                  InputDistribution px, double epsilon,
                                  std::span<const DualCertificate> bank,
                                  const CertifyOptions& options = {});

// Certificate bank files: plain-text records, one key per line, numbers at 17 significant
// digits. Readers re-verify every record.
inline constexpr const char* kSolverVersion = "usdqrng-ipm/1";

void write_certificate_bank(std::ostream& out, std::span<const DualCertificate> bank);
std::vector<DualCertificate> read_certificate_bank(std::istream& in);
void save_certificate_bank(const std::string& path, std::span<const DualCertificate> bank);
std::vector<DualCertificate> load_certificate_bank(const std::string& path);

}  // namespace usdqrng
