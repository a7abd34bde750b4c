#include "usdqrng/certifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <string>

#include "usdqrng/errors.hpp"

namespace usdqrng {

namespace {

using sdp::Block;

constexpr std::complex<double> kI{0.0, 1.0};

const std::array<Matrix2c, 3>& pauli() {
    static const std::array<Matrix2c, 3> sigma = [] {
        std::array<Matrix2c, 3> s;
        s[0] << 0.0, 1.0, 1.0, 0.0;
        s[1] << 0.0, -kI, kI, 0.0;
        s[2] << 1.0, 0.0, 0.0, -1.0;
        return s;
    }();
    return sigma;
}

/// 1 when outcome b realizes the guess selected by strategy bit `lx`.
double gain(int lx, std::size_t b) {
    const bool inconclusive = b == row(Outcome::Inconclusive);
    return (lx == 0 && inconclusive) || (lx == 1 && !inconclusive) ? 1.0 : 0.0;
}

int strategy_bit(int l0, int l1, int x) { return x == 0 ? l0 : l1; }

// Variable numbering of the guessing-probability program: nu[b][x] first, then the three
// Pauli coefficients of each H[l], then (certificate modes only) bounds u[b][x] >= |nu[b][x]|.
int nu_index(std::size_t b, int x) { return static_cast<int>(b) * 2 + x; }
int w_index(int l, int k) { return 6 + 3 * l + k; }
int u_index(std::size_t b, int x) { return 18 + nu_index(b, x); }

// Asymptotic certificates are computed with every |nu| <= kCoefficientBox. On boundary data
// the unconstrained dual optimum can sit at infinity; the box keeps it finite at the cost of
// about 1e-7 in the bound in the worst case seen (ideal data at overlap 1/2).
constexpr double kCoefficientBox = 1e6;

enum class Mode {
    Value,        ///< optimal value only: reduce by everything the data implies
    Certificate,  ///< asymptotic certificate
    FiniteSize,   ///< certificate minimizing the finite-size bound
};

using Basis = Eigen::Matrix<std::complex<double>, 2, Eigen::Dynamic, 0, 2, 2>;

Vector2c orthogonal(const Vector2c& v) { return Vector2c(-std::conj(v(1)), std::conj(v(0))) / v.norm(); }

struct Program {
    sdp::Problem problem;
    Mode mode = Mode::Value;
    /// Cells with p(b|x) = 0 outside finite-size mode. M[l][b] must then vanish on psi_x, so
    /// those blocks are restricted to the orthogonal complement and nu[b][x] drops out.
    std::array<std::array<bool, 2>, 3> zero_cell{};
    std::array<std::array<int, 3>, 4> povm_block{};  ///< -1 when the block is restricted to {0}
    std::array<Basis, 3> basis;                      ///< per outcome b
    /// Shifting nu[b][0] up and nu[b][1] down by the same amount (and H accordingly) leaves
    /// the certificate and its value on normalized data unchanged. Certificate mode removes
    /// that freedom by eliminating one coefficient: nu[pivot] = sum gauge[c] nu[c].
    int gauge_pivot = -1;
    std::array<double, 6> gauge{};
};

Matrix2c objective_matrix(const StatePair& states, InputDistribution px, int l0, int l1,
                          std::size_t b) {
    Matrix2c c = Matrix2c::Zero();
    for (int x = 0; x < 2; ++x) c += px.p(x) * gain(strategy_bit(l0, l1, x), b) * states.rho(x);
    return c;
}

Basis restricted_basis(const StatePair& states, const std::array<bool, 2>& zero) {
    if (!zero[0] && !zero[1]) return Basis::Identity(2, 2);
    if (zero[0] && zero[1]) {
        // Only parallel states share an orthogonal complement.
        if (states.overlap() < 1.0 - 1e-12) return Basis(2, 0);
        Basis v(2, 1);
        v.col(0) = orthogonal(states.psi[0]);
        return v;
    }
    Basis v(2, 1);
    v.col(0) = orthogonal(states.psi[zero[0] ? 0 : 1]);
    return v;
}

// When two outcomes are confined to known rays, the data fixes sum_l M[l][b] for both of them
// and hence for the third: E = 1 - E_b - E_b'. A singular E confines the third outcome too.
// This reduction is not expressible as a certificate, so it is used for optimal values only.
void reduce_implied_outcome(const StatePair& states, const ConditionalDistribution& data,
                            std::array<Basis, 3>& basis) {
    int open = -1;
    Matrix2c rest = Matrix2c::Identity();
    for (std::size_t b = 0; b < 3; ++b) {
        if (basis[b].cols() == 2) {
            if (open >= 0) return;
            open = static_cast<int>(b);
            continue;
        }
        if (basis[b].cols() == 0) continue;
        const Vector2c v = basis[b].col(0);
        int x = std::abs(states.psi[0].dot(v)) >= std::abs(states.psi[1].dot(v)) ? 0 : 1;
        const double weight = std::norm(states.psi[static_cast<std::size_t>(x)].dot(v));
        if (weight < 1e-12) return;
        rest -= data.p[b][static_cast<std::size_t>(x)] / weight * (v * v.adjoint());
    }
    if (open < 0) return;
    Eigen::SelfAdjointEigenSolver<Matrix2c> es(rest);
    const auto lam = es.eigenvalues();
    if (lam(0) < -1e-9)
        throw InfeasibleDataError("data cannot be reproduced at overlap " + std::to_string(states.overlap()));
    if (lam(0) > 1e-10) return;
    auto& v = basis[static_cast<std::size_t>(open)];
    if (lam(1) <= 1e-10) {
        v = Basis(2, 0);
        return;
    }
    v = Basis(2, 1);
    v.col(0) = es.eigenvectors().col(1);
}

Block project(const Basis& v, const Matrix2c& a) {
    Block out(v.cols(), v.cols());
    out = v.adjoint() * a * v;
    return out;
}

Block scalar_block(double v) {
    Block out(1, 1);
    out(0, 0) = v;
    return out;
}

Program build_problem(const StatePair& states, const ConditionalDistribution& data,
                      InputDistribution px, Mode mode, std::array<double, 2> radius = {}) {
    Program prog;
    prog.mode = mode;
    auto& p = prog.problem;
    p.a.resize(mode == Mode::FiniteSize ? 24 : 18);
    p.b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.a.size()));

    auto add_block = [&](Block c) {
        p.block_sizes.push_back(static_cast<int>(c.rows()));
        p.c.push_back(std::move(c));
        return p.num_blocks() - 1;
    };

    for (std::size_t b = 0; b < 3; ++b) {
        for (int x = 0; x < 2; ++x)
            prog.zero_cell[b][static_cast<std::size_t>(x)] =
                mode != Mode::FiniteSize && data.p[b][static_cast<std::size_t>(x)] == 0.0;
        prog.basis[b] = restricted_basis(states, prog.zero_cell[b]);
    }
    if (mode == Mode::Value) reduce_implied_outcome(states, data, prog.basis);

    for (int l = 0; l < 4; ++l) {
        for (std::size_t b = 0; b < 3; ++b) {
            const Basis& v = prog.basis[b];
            if (v.cols() == 0) {
                prog.povm_block[static_cast<std::size_t>(l)][b] = -1;
                continue;
            }
            const int blk = add_block(project(v, objective_matrix(states, px, l / 2, l % 2, b)));
            prog.povm_block[static_cast<std::size_t>(l)][b] = blk;
            for (int x = 0; x < 2; ++x)
                if (!prog.zero_cell[b][static_cast<std::size_t>(x)])
                    p.a[static_cast<std::size_t>(nu_index(b, x))].push_back({blk, project(v, states.rho(x))});
            for (int k = 0; k < 3; ++k)
                p.a[static_cast<std::size_t>(w_index(l, k))].push_back(
                    {blk, project(v, pauli()[static_cast<std::size_t>(k)])});
        }
    }

    for (std::size_t b = 0; b < 3; ++b) {
        for (int x = 0; x < 2; ++x) {
            const auto cell = static_cast<std::size_t>(nu_index(b, x));
            p.b(static_cast<Eigen::Index>(cell)) = data.p[b][static_cast<std::size_t>(x)];
            if (mode == Mode::Value || prog.zero_cell[b][static_cast<std::size_t>(x)]) continue;
            if (mode == Mode::Certificate) {
                // kCoefficientBox - nu >= 0 and kCoefficientBox + nu >= 0
                p.a[cell].push_back({add_block(scalar_block(-kCoefficientBox)), scalar_block(-1.0)});
                p.a[cell].push_back({add_block(scalar_block(-kCoefficientBox)), scalar_block(1.0)});
                continue;
            }
            // u - nu >= 0 and u + nu >= 0
            const int lower = add_block(scalar_block(0.0));
            const int upper = add_block(scalar_block(0.0));
            p.a[cell].push_back({lower, scalar_block(-1.0)});
            p.a[cell].push_back({upper, scalar_block(1.0)});
            auto& uterms = p.a[static_cast<std::size_t>(u_index(b, x))];
            uterms.push_back({lower, scalar_block(1.0)});
            uterms.push_back({upper, scalar_block(1.0)});
            p.b(u_index(b, x)) = radius[static_cast<std::size_t>(x)];
        }
    }

    if (mode == Mode::Certificate) {
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t x = 0; x < 2; ++x)
                if (!prog.zero_cell[b][x]) {
                    prog.gauge[static_cast<std::size_t>(nu_index(b, static_cast<int>(x)))] = x == 0 ? 1.0 : -1.0;
                    if (x == 1) prog.gauge_pivot = nu_index(b, 1);
                }
        const auto piv = static_cast<std::size_t>(prog.gauge_pivot);
        prog.gauge[piv] = 0.0;
        for (std::size_t c = 0; c < 6; ++c) {
            if (prog.gauge[c] == 0.0) continue;
            for (const auto& t : p.a[piv]) p.a[c].push_back({t.block, prog.gauge[c] * t.a});
            p.b(static_cast<Eigen::Index>(c)) += prog.gauge[c] * p.b(static_cast<Eigen::Index>(piv));
        }
        p.a[piv].clear();
        p.b(static_cast<Eigen::Index>(piv)) = 0.0;
    }
    return prog;
}

/// Strictly dual-feasible point: nu = K everywhere and H cancelling the traceless part of
/// K (rho0 + rho1), leaving every slack equal to K*1 - C. In certificate mode the point is then
/// moved along the gauge direction onto the plane the pivot elimination assumes.
Eigen::VectorXd interior_dual_point(const StatePair& states, const Program& prog) {
    constexpr double k = 2.0;
    Eigen::VectorXd y = Eigen::VectorXd::Zero(prog.problem.num_constraints());
    const Matrix2c s = states.rho(0) + states.rho(1);
    for (std::size_t b = 0; b < 3; ++b)
        for (int x = 0; x < 2; ++x) {
            y(nu_index(b, x)) = k;
            if (prog.mode == Mode::FiniteSize) y(u_index(b, x)) = k + 1.0;
        }
    for (int l = 0; l < 4; ++l)
        for (int j = 0; j < 3; ++j)
            y(w_index(l, j)) = -k * 0.5 * (s * pauli()[static_cast<std::size_t>(j)]).trace().real();

    if (prog.gauge_pivot >= 0) {
        double n0 = 0.0, n1 = 0.0;
        for (std::size_t b = 0; b < 3; ++b) {
            n0 += prog.zero_cell[b][0] ? 0.0 : 1.0;
            n1 += prog.zero_cell[b][1] ? 0.0 : 1.0;
        }
        const double t = k * (n1 - n0) / (n0 + n1);
        const Matrix2c diff = states.rho(0) - states.rho(1);
        for (std::size_t b = 0; b < 3; ++b) {
            y(nu_index(b, 0)) += t;
            y(nu_index(b, 1)) -= t;
        }
        for (int l = 0; l < 4; ++l)
            for (int j = 0; j < 3; ++j)
                y(w_index(l, j)) -= t * 0.5 * (diff * pauli()[static_cast<std::size_t>(j)]).trace().real();
    }
    return y;
}

DualCertificate certificate_from(const Program& prog, const Eigen::VectorXd& y, double delta,
                                 InputDistribution px) {
    DualCertificate cert;
    cert.delta = delta;
    cert.p_x1 = px.p_x1();
    cert.solver = kSolverVersion;
    for (std::size_t b = 0; b < 3; ++b)
        for (int x = 0; x < 2; ++x)
            cert.nu[b][static_cast<std::size_t>(x)] = prog.zero_cell[b][static_cast<std::size_t>(x)]
                                                          ? std::numeric_limits<double>::infinity()
                                                          : y(nu_index(b, x));
    if (prog.gauge_pivot >= 0) {
        double v = 0.0;
        for (std::size_t c = 0; c < 6; ++c)
            if (prog.gauge[c] != 0.0) v += prog.gauge[c] * y(static_cast<Eigen::Index>(c));
        cert.nu[static_cast<std::size_t>(prog.gauge_pivot / 2)][static_cast<std::size_t>(prog.gauge_pivot % 2)] = v;
    }
    for (int l = 0; l < 4; ++l) {
        Matrix2c h = Matrix2c::Zero();
        for (int k = 0; k < 3; ++k) h -= y(w_index(l, k)) * pauli()[static_cast<std::size_t>(k)];
        cert.h[static_cast<std::size_t>(l / 2)][static_cast<std::size_t>(l % 2)] = h;
    }
    return cert;
}

/// Shifts a nearly feasible certificate onto the feasible side (see rigorization_margin).
void make_feasible(DualCertificate& cert) {
    double scale = 1.0;
    for (const auto& r : cert.nu)
        for (const double v : r)
            if (std::isfinite(v)) scale = std::max(scale, std::abs(v));
    auto report = verify_certificate(cert);
    const double floor = -1e-14 * scale;
    if (report.max_eigenvalue > floor) {
        const double c = report.max_eigenvalue - floor;
        const StatePair states = canonical_states(OverlapBound(cert.delta));
        const Matrix2c shift = c * (states.rho(0) + states.rho(1) - Matrix2c::Identity());
        for (auto& r : cert.nu)
            for (double& v : r) v += c;
        for (auto& hl : cert.h)
            for (auto& h : hl) h += shift;
        report = verify_certificate(cert);
    }
    cert.residual = report.max_eigenvalue;
}

void check_data(const ConditionalDistribution& data) {
    if (!data.is_normalized(1e-9))
        throw DomainError("conditional distribution must have entries in [0,1] and unit columns");
}

bool usable(const sdp::Solution& s, double feasibility) {
    if (s.status == sdp::Status::Optimal) return true;
    if (s.status != sdp::Status::IterationLimit && s.status != sdp::Status::NumericalFailure)
        return false;
    return s.primal_residual < feasibility && s.dual_residual < feasibility &&
           std::abs(s.primal_objective - s.dual_objective) < 1e-7;
}

[[noreturn]] void throw_convergence(const char* what, const sdp::Solution& s) {
    throw ConvergenceError(std::string(what) + ": " + sdp::to_string(s.status) + " after " +
                               std::to_string(s.iterations) + " iterations",
                           s.iterations, s.dual_objective - s.primal_objective,
                           s.primal_residual, s.dual_residual);
}

// The primal optimum is at least 1/2 whenever the data is reproducible, so a verified dual
// value below 1/2 proves the data lies outside the feasible set.
constexpr double kInfeasibleBelow = 0.5 - 1e-7;

DualCertificate dual_certificate(const StatePair& states, double delta,
                                 const ConditionalDistribution& data, InputDistribution px,
                                 const std::optional<std::array<double, 2>>& radius,
                                 const SolverSettings& settings) {
    check_data(data);
    const Program prog = radius ? build_problem(states, data, px, Mode::FiniteSize, *radius)
                                : build_problem(states, data, px, Mode::Certificate);
    const sdp::Solution sol = sdp::solve(prog.problem, settings.options);
    if (sol.status == sdp::Status::PrimalInfeasible)
        throw InfeasibleDataError("data cannot be reproduced at overlap " + std::to_string(delta));

    DualCertificate cert;
    if (usable(sol, 1e-7)) {
        cert = certificate_from(prog, sol.y, delta, px);
        cert.solver = std::string(kSolverVersion) + " pd-ipm";
    } else if (settings.barrier_fallback) {
        const sdp::Solution fb = sdp::solve_dual_barrier(
            prog.problem, interior_dual_point(states, prog), settings.options);
        cert = certificate_from(prog, fb.y, delta, px);
        cert.solver = std::string(kSolverVersion) + " barrier";
    } else {
        throw_convergence("solve_dual", sol);
    }
    make_feasible(cert);
    const double value = radius ? finite_size_bound(cert, data, *radius) : evaluate_bound(cert, data);
    if (value < kInfeasibleBelow)
        throw InfeasibleDataError("data cannot be reproduced at overlap " + std::to_string(delta));
    return cert;
}

double max_eigenvalue_2x2(const Matrix2c& m) {
    const double a = m(0, 0).real();
    const double d = m(1, 1).real();
    const double half = 0.5 * (a - d);
    return 0.5 * (a + d) + std::sqrt(half * half + std::norm(m(0, 1)));
}

}  // namespace

OverlapBound::OverlapBound(double delta) : delta_(delta) {
    if (!(delta >= 0.0 && delta <= 1.0)) throw DomainError("overlap bound must lie in [0,1]");
}

InputDistribution::InputDistribution(double p_x1) : p_x1_(p_x1) {
    if (!(p_x1 > 0.0 && p_x1 < 1.0)) throw DomainError("p(x=1) must lie in (0,1)");
}

Matrix2c StatePair::rho(int x) const {
    const auto& v = psi[static_cast<std::size_t>(x)];
    return v * v.adjoint();
}

double StatePair::overlap() const { return std::abs(psi[0].dot(psi[1])); }

StatePair canonical_states(OverlapBound delta) {
    const double d = delta.value();
    StatePair s;
    s.psi[0] = Vector2c(1.0, 0.0);
    s.psi[1] = Vector2c(d, std::sqrt(std::max(0.0, 1.0 - d * d)));
    return s;
}

double DualCertificate::nu_abs_sum(int x) const {
    double acc = 0.0;
    for (const auto& r : nu) acc += std::abs(r[static_cast<std::size_t>(x)]);
    return acc;
}

PrimalSolution solve_primal(OverlapBound delta, const ConditionalDistribution& data,
                            InputDistribution px, const SolverSettings& settings) {
    return solve_primal(canonical_states(delta), data, px, settings);
}

PrimalSolution solve_primal(const StatePair& states, const ConditionalDistribution& data,
                            InputDistribution px, const SolverSettings& settings) {
    check_data(data);
    const Program prog = build_problem(states, data, px, Mode::Value);
    const sdp::Solution sol = sdp::solve(prog.problem, settings.options);
    if (sol.status == sdp::Status::PrimalInfeasible ||
        (sol.dual_residual < 1e-7 && sol.dual_objective < kInfeasibleBelow))
        throw InfeasibleDataError("data cannot be reproduced at overlap " +
                                  std::to_string(states.overlap()));
    if (!usable(sol, 1e-7)) throw_convergence("solve_primal", sol);

    PrimalSolution out;
    double value = 0.0;
    for (int l = 0; l < 4; ++l)
        for (std::size_t b = 0; b < 3; ++b) {
            Matrix2c& m = out.m[static_cast<std::size_t>(l / 2)][static_cast<std::size_t>(l % 2)][b];
            const int blk = prog.povm_block[static_cast<std::size_t>(l)][b];
            if (blk < 0) {
                m.setZero();
                continue;
            }
            const Basis& v = prog.basis[b];
            m = v * sol.x[static_cast<std::size_t>(blk)] * v.adjoint();
            m = 0.5 * (m + m.adjoint()).eval();
            value += (objective_matrix(states, px, l / 2, l % 2, b) * m).trace().real();
        }
    // A positive box slack means the data could only be matched approximately.
    double violation = 0.0;
    for (std::size_t b = 0; b < 3; ++b)
        for (int x = 0; x < 2; ++x) {
            double reproduced = 0.0;
            for (const auto& l0 : out.m)
                for (const auto& ml : l0) reproduced += (states.rho(x) * ml[b]).trace().real();
            violation = std::max(violation, std::abs(reproduced - data.p[b][static_cast<std::size_t>(x)]));
        }
    if (violation > 1e-6)
        throw InfeasibleDataError("data cannot be reproduced at overlap " +
                                  std::to_string(states.overlap()) + " (residual " +
                                  std::to_string(violation) + ")");
    out.value = value;
    out.residual = violation;
    out.iterations = sol.iterations;
    return out;
}

DualCertificate solve_dual(OverlapBound delta, const ConditionalDistribution& data,
                           InputDistribution px, const SolverSettings& settings) {
    return dual_certificate(canonical_states(delta), delta.value(), data, px, std::nullopt, settings);
}

DualCertificate solve_dual_finite_size(OverlapBound delta, const ConditionalDistribution& xi,
                                       InputDistribution px, std::array<double, 2> radius,
                                       const SolverSettings& settings) {
    if (!(radius[0] >= 0.0 && radius[1] >= 0.0)) throw DomainError("radii must be nonnegative");
    return dual_certificate(canonical_states(delta), delta.value(), xi, px, radius, settings);
}

double dual_bound(const StatePair& states, const ConditionalDistribution& data,
                  InputDistribution px, const SolverSettings& settings) {
    check_data(data);
    const Program prog = build_problem(states, data, px, Mode::Value);
    const sdp::Solution sol = sdp::solve(prog.problem, settings.options);
    if (sol.status == sdp::Status::PrimalInfeasible || sol.dual_objective < kInfeasibleBelow)
        throw InfeasibleDataError("data cannot be reproduced by the given states");
    if (!usable(sol, 1e-7)) throw_convergence("dual_bound", sol);
    return sol.dual_objective;
}

VerificationReport verify_certificate(const DualCertificate& cert) {
    VerificationReport report;
    constexpr double kInf = std::numeric_limits<double>::infinity();
    report.max_eigenvalue = kInf;
    if (!(cert.delta >= 0.0 && cert.delta <= 1.0) || !(cert.p_x1 > 0.0 && cert.p_x1 < 1.0))
        return report;
    for (const auto& r : cert.nu)
        for (const double v : r)
            if (std::isnan(v) || v == -kInf) return report;
    const StatePair states = canonical_states(OverlapBound(cert.delta));
    const InputDistribution px(cert.p_x1);
    const std::array<Matrix2c, 2> rho{states.rho(0), states.rho(1)};

    double worst = -kInf;
    double herm = 0.0;
    for (int l0 = 0; l0 < 2; ++l0) {
        for (int l1 = 0; l1 < 2; ++l1) {
            const Matrix2c& h = cert.h[static_cast<std::size_t>(l0)][static_cast<std::size_t>(l1)];
            herm = std::max(herm, (h - h.adjoint()).cwiseAbs().maxCoeff());
            const Matrix2c h_hermitian = 0.5 * (h + h.adjoint());
            const Matrix2c traceless =
                h_hermitian - 0.5 * h_hermitian.trace().real() * Matrix2c::Identity();
            for (std::size_t b = 0; b < 3; ++b) {
                Matrix2c k = traceless;
                std::array<bool, 2> unbounded{};
                for (int x = 0; x < 2; ++x) {
                    const double nu = cert.nu[b][static_cast<std::size_t>(x)];
                    const double g = px.p(x) * gain(strategy_bit(l0, l1, x), b);
                    unbounded[static_cast<std::size_t>(x)] = std::isinf(nu);
                    k += (unbounded[static_cast<std::size_t>(x)] ? g : g - nu) * rho[static_cast<std::size_t>(x)];
                }
                // An infinite nu[b][x] leaves only the part of the matrix orthogonal to psi_x to
                // be checked; it stands for the limit of ever larger finite coefficients.
                const Basis v = restricted_basis(states, unbounded);
                double lam = -kInf;
                if (v.cols() == 2) {
                    lam = max_eigenvalue_2x2(k);
                } else if (v.cols() == 1) {
                    lam = (v.col(0).adjoint() * k * v.col(0))(0, 0).real();
                }
                report.constraint_max[static_cast<std::size_t>(l0)][static_cast<std::size_t>(l1)][b] = lam;
                worst = std::max(worst, lam);
            }
        }
    }
    report.max_eigenvalue = std::isnan(worst) ? kInf : worst;
    report.hermiticity_error = herm;
    report.accepted = report.max_eigenvalue <= kVerificationTolerance && herm <= 1e-12;
    return report;
}

double evaluate_bound(const DualCertificate& cert, const ConditionalDistribution& data) {
    double acc = 0.0;
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t x = 0; x < 2; ++x)
            if (data.p[b][x] != 0.0) acc += cert.nu[b][x] * data.p[b][x];
    return acc;
}

double finite_size_bound(const DualCertificate& cert, const ConditionalDistribution& xi,
                         std::array<double, 2> radius) {
    double acc = evaluate_bound(cert, xi);
    for (int x = 0; x < 2; ++x) acc += cert.nu_abs_sum(x) * radius[static_cast<std::size_t>(x)];
    return std::min(acc, 1.0);
}

double finite_size_bound(const DualCertificate& cert, const CountsTable& counts, double epsilon) {
    const auto params = FiniteSizeParams::from_counts(epsilon, counts);
    return finite_size_bound(cert, empirical_distribution(counts), params.radius);
}

double rigorization_margin(double max_eigenvalue, std::array<double, 2> radius) {
    const double r = std::max(0.0, max_eigenvalue);
    return r * (2.0 + 3.0 * (radius[0] + radius[1]));
}

double min_entropy(double p_g) {
    if (std::isnan(p_g)) return 0.0;
    return -std::log2(std::clamp(p_g, 0.5, 1.0));
}

CertificationResult certify_block(const CountsTable& counts, OverlapBound delta,
                                  InputDistribution px, double epsilon,
                                  std::span<const DualCertificate> bank,
                                  const CertifyOptions& options) {
    CertificationResult result;
    result.xi = empirical_distribution(counts);
    const auto params = FiniteSizeParams::from_counts(epsilon, counts);
    result.radius = params.radius;
    result.epsilon = epsilon;

    // Bounds of 1 or more (including certificates with unbounded coefficients on observed
    // cells) are trivially valid and simply certify nothing.
    double best = 2.0;
    bool found = false;
    auto consider = [&](const DualCertificate& cert, int index) {
        const auto report = verify_certificate(cert);
        const double margin = rigorization_margin(report.max_eigenvalue, params.radius);
        double fs = evaluate_bound(cert, result.xi) + margin;
        for (int x = 0; x < 2; ++x) fs += cert.nu_abs_sum(x) * params.radius[static_cast<std::size_t>(x)];
        if (std::isnan(fs) || fs > 1.0) fs = 1.0;
        if (fs < best) {
            best = fs;
            found = true;
            result.certificate = cert;
            result.certificate_index = index;
            const double star = evaluate_bound(cert, result.xi) + rigorization_margin(report.max_eigenvalue);
            result.p_g_star = std::isnan(star) ? 1.0 : std::min(1.0, star);
        }
    };

    for (std::size_t i = 0; i < bank.size(); ++i) {
        const auto& cert = bank[i];
        if (std::abs(cert.p_x1 - px.p_x1()) > 1e-15 || cert.delta > delta.value() + 1e-15) continue;
        consider(cert, static_cast<int>(i));
    }
    if (options.refresh) {
        try {
            consider(solve_dual_finite_size(delta, result.xi, px, params.radius, options.solver), -1);
        } catch (const std::exception& e) {
            result.note = std::string("refresh failed: ") + e.what();
            if (!found) throw;
        }
    }
    if (!found) throw std::invalid_argument("certify_block: no compatible certificate in the bank");

    result.p_g_n = std::min(1.0, best);
    result.h_min = min_entropy(result.p_g_n);
    return result;
}

}  // namespace usdqrng
