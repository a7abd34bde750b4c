#include "usdqrng/sdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace usdqrng::sdp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Block hermitian_part(const Block& a) { return (a + a.adjoint()) * 0.5; }

Block inverse_pd(const Block& a, bool& ok) {
    Eigen::LLT<Block> llt(a);
    if (llt.info() != Eigen::Success) {
        ok = false;
        return a;
    }
    Block id = Block::Identity(a.rows(), a.cols());
    return hermitian_part(llt.solve(id));
}

/// Largest alpha with x + alpha*dx >= 0, for x positive definite.
double max_step(const Block& x, const Block& dx) {
    Eigen::LLT<Block> llt(x);
    if (llt.info() != Eigen::Success) return 0.0;
    const Block l = llt.matrixL();
    const Block linv = l.triangularView<Eigen::Lower>().solve(Block::Identity(x.rows(), x.cols()));
    const Block w = hermitian_part(linv * dx * linv.adjoint());
    Eigen::SelfAdjointEigenSolver<Block> es(w, Eigen::EigenvaluesOnly);
    const double lam = es.eigenvalues().minCoeff();
    return lam >= 0.0 ? kInf : -1.0 / lam;
}

double max_step(const BlockDiag& x, const BlockDiag& dx) {
    double alpha = kInf;
    for (std::size_t k = 0; k < x.size(); ++k) alpha = std::min(alpha, max_step(x[k], dx[k]));
    return alpha;
}

BlockDiag axpy(const BlockDiag& x, double alpha, const BlockDiag& dx) {
    BlockDiag out = x;
    for (std::size_t k = 0; k < x.size(); ++k) out[k] += alpha * dx[k];
    return out;
}

// Constraint indices touching each block, for assembling the sparse Schur complement.
struct Incidence {
    std::vector<std::vector<std::pair<int, const Block*>>> by_block;

    explicit Incidence(const Problem& p) : by_block(static_cast<std::size_t>(p.num_blocks())) {
        for (int i = 0; i < p.num_constraints(); ++i)
            for (const auto& t : p.a[static_cast<std::size_t>(i)])
                by_block[static_cast<std::size_t>(t.block)].emplace_back(i, &t.a);
    }
};

struct Reduction {
    Problem problem;
    std::vector<int> kept;
    // dropped constraint j satisfies A_j = sum_k coeff(k) A_{kept[k]}
    std::vector<std::pair<int, Eigen::VectorXd>> dropped;
    bool consistent = true;
};

Eigen::VectorXd vectorize(const Problem& p, int i, const std::vector<int>& offsets, int dim) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
    for (const auto& t : p.a[static_cast<std::size_t>(i)]) {
        const int n = p.block_sizes[static_cast<std::size_t>(t.block)];
        int pos = offsets[static_cast<std::size_t>(t.block)];
        for (int r = 0; r < n; ++r) {
            v(pos++) += t.a(r, r).real();
            for (int c = r + 1; c < n; ++c) {
                v(pos++) += t.a(r, c).real();
                v(pos++) += t.a(r, c).imag();
            }
        }
    }
    return v;
}

Reduction reduce(const Problem& p, double tol) {
    Reduction red;
    const int m = p.num_constraints();
    std::vector<int> offsets(static_cast<std::size_t>(p.num_blocks()));
    int dim = 0;
    for (int k = 0; k < p.num_blocks(); ++k) {
        offsets[static_cast<std::size_t>(k)] = dim;
        const int n = p.block_sizes[static_cast<std::size_t>(k)];
        dim += n * n;
    }
    Eigen::MatrixXd v(dim, m);
    for (int i = 0; i < m; ++i) v.col(i) = vectorize(p, i, offsets, dim);

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(v);
    qr.setThreshold(tol);
    const int rank = static_cast<int>(qr.rank());
    const auto& perm = qr.colsPermutation().indices();
    for (int k = 0; k < rank; ++k) red.kept.push_back(perm(k));
    std::sort(red.kept.begin(), red.kept.end());

    if (rank == m) {
        red.problem = p;
        return red;
    }

    Eigen::MatrixXd vk(dim, rank);
    Eigen::VectorXd bk(rank);
    for (int k = 0; k < rank; ++k) {
        vk.col(k) = v.col(red.kept[static_cast<std::size_t>(k)]);
        bk(k) = p.b(red.kept[static_cast<std::size_t>(k)]);
    }
    const auto vk_qr = vk.colPivHouseholderQr();
    std::vector<bool> is_kept(static_cast<std::size_t>(m), false);
    for (const int k : red.kept) is_kept[static_cast<std::size_t>(k)] = true;
    const double bscale = 1.0 + p.b.cwiseAbs().maxCoeff();
    for (int j = 0; j < m; ++j) {
        if (is_kept[static_cast<std::size_t>(j)]) continue;
        Eigen::VectorXd coeff = vk_qr.solve(v.col(j));
        if (std::abs(coeff.dot(bk) - p.b(j)) > 1e-9 * bscale) red.consistent = false;
        red.dropped.emplace_back(j, std::move(coeff));
    }

    red.problem.block_sizes = p.block_sizes;
    red.problem.c = p.c;
    red.problem.b = bk;
    for (const int k : red.kept) red.problem.a.push_back(p.a[static_cast<std::size_t>(k)]);
    return red;
}

Eigen::VectorXd expand(const Reduction& red, const Eigen::VectorXd& y_reduced, int m) {
    Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
    for (std::size_t k = 0; k < red.kept.size(); ++k)
        y(red.kept[k]) = y_reduced(static_cast<Eigen::Index>(k));
    return y;
}

Eigen::VectorXd fold(const Reduction& red, const Eigen::VectorXd& y_full) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(red.kept.size()));
    for (std::size_t k = 0; k < red.kept.size(); ++k) y(static_cast<Eigen::Index>(k)) = y_full(red.kept[k]);
    for (const auto& [j, coeff] : red.dropped) y += y_full(j) * coeff;
    return y;
}

// Symmetric positive definite solve with Jacobi scaling. The Schur complement gets badly
// conditioned near the optimum, so Cholesky falls back to a rank-revealing QR.
class SchurSolver {
public:
    explicit SchurSolver(const Eigen::MatrixXd& m) {
        scale_ = m.diagonal().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
        const Eigen::MatrixXd scaled = scale_.asDiagonal() * m * scale_.asDiagonal();
        llt_.compute(scaled);
        if (llt_.info() == Eigen::Success) return;
        use_qr_ = true;
        qr_.compute(scaled);
    }

    bool ok() const { return use_qr_ ? qr_.rank() > 0 : true; }

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
        const Eigen::VectorXd r = scale_.asDiagonal() * rhs;
        const Eigen::VectorXd v = use_qr_ ? Eigen::VectorXd(qr_.solve(r)) : Eigen::VectorXd(llt_.solve(r));
        return scale_.asDiagonal() * v;
    }

private:
    Eigen::VectorXd scale_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
    bool use_qr_ = false;
};

double total_size(const Problem& p) {
    return std::accumulate(p.block_sizes.begin(), p.block_sizes.end(), 0.0);
}

Solution solve_reduced(const Problem& p, const Options& opt) {
    const int m = p.num_constraints();
    const double n = total_size(p);
    const Incidence inc(p);
    const double bnorm = p.b.norm();
    const double cnorm = frobenius_norm(p.c);

    // Starting point scaled to the data, as in common infeasible-start codes.
    double xi = std::max(opt.initial_scale, std::sqrt(n));
    double eta = std::max(xi, cnorm);
    for (int i = 0; i < m; ++i) {
        double ai = 0.0;
        for (const auto& t : p.a[static_cast<std::size_t>(i)]) ai += t.a.squaredNorm();
        ai = std::sqrt(ai);
        xi = std::max(xi, (1.0 + std::abs(p.b(i))) / (1.0 + ai));
        eta = std::max(eta, ai);
    }
    Solution s;
    s.x = p.identity(xi);
    s.z = p.identity(eta);
    s.y = Eigen::VectorXd::Zero(m);

    const auto nb = static_cast<std::size_t>(p.num_blocks());
    BlockDiag zinv(nb), d(nb);

    for (int iter = 0; iter <= opt.max_iterations; ++iter) {
        s.iterations = iter;
        const BlockDiag aty = p.adjoint(s.y);
        for (std::size_t k = 0; k < nb; ++k) d[k] = aty[k] - p.c[k] - s.z[k];
        const Eigen::VectorXd rp = p.b - p.apply(s.x);
        s.primal_objective = inner(p.c, s.x);
        s.dual_objective = p.b.dot(s.y);
        s.primal_residual = rp.norm() / (1.0 + bnorm);
        s.dual_residual = frobenius_norm(d) / (1.0 + cnorm);
        const double mu = inner(s.x, s.z) / n;
        const double gap = std::abs(s.primal_objective - s.dual_objective) /
                           (1.0 + std::abs(s.primal_objective) + std::abs(s.dual_objective));

        if (s.primal_residual < opt.feasibility_tolerance &&
            s.dual_residual < opt.feasibility_tolerance && gap < opt.gap_tolerance &&
            mu < opt.gap_tolerance) {
            s.status = Status::Optimal;
            return s;
        }
        const double ynorm = s.y.norm();
        if (ynorm > 1e8) {
            const Eigen::VectorXd yhat = s.y / ynorm;
            if (p.b.dot(yhat) < -1e-8 && min_eigenvalue(p.adjoint(yhat)) > -1e-7) {
                s.status = Status::PrimalInfeasible;
                return s;
            }
        }
        const double xnorm = frobenius_norm(s.x);
        if (xnorm > 1e8) {
            BlockDiag xhat = s.x;
            for (auto& blk : xhat) blk /= xnorm;
            if (inner(p.c, xhat) > 1e-8 && p.apply(xhat).norm() < 1e-7) {
                s.status = Status::DualInfeasible;
                return s;
            }
        }
        if (iter == opt.max_iterations) break;

        bool ok = true;
        for (std::size_t k = 0; k < nb; ++k) zinv[k] = inverse_pd(s.z[k], ok);
        if (!ok) {
            s.status = Status::NumericalFailure;
            return s;
        }

        // Schur complement M_ij = <A_i, X A_j Z^{-1}>
        Eigen::MatrixXd schur = Eigen::MatrixXd::Zero(m, m);
        for (std::size_t k = 0; k < nb; ++k) {
            const auto& terms = inc.by_block[k];
            for (const auto& [j, aj] : terms) {
                const Block g = s.x[k] * (*aj) * zinv[k];
                for (const auto& [i, ai] : terms) schur(i, j) += inner(*ai, g);
            }
        }
        schur = 0.5 * (schur + schur.transpose());
        const SchurSolver schur_solver(schur);
        if (!schur_solver.ok()) {
            s.status = Status::NumericalFailure;
            return s;
        }

        BlockDiag xdz(nb);
        for (std::size_t k = 0; k < nb; ++k) xdz[k] = s.x[k] * d[k] * zinv[k];
        const Eigen::VectorXd a_xdz = p.apply(xdz);

        // Solves for the search direction with complementarity target T (XZ + dX Z + X dZ = T + XZ).
        auto direction = [&](const BlockDiag& t, BlockDiag& dx, Eigen::VectorXd& dy, BlockDiag& dz) {
            BlockDiag tz(nb);
            for (std::size_t k = 0; k < nb; ++k) tz[k] = t[k] * zinv[k];
            const Eigen::VectorXd rhs = p.apply(tz) - a_xdz - rp;
            dy = schur_solver.solve(rhs);
            dz = p.adjoint(dy);
            dx.resize(nb);
            for (std::size_t k = 0; k < nb; ++k) {
                dz[k] += d[k];
                dx[k] = hermitian_part(tz[k] - s.x[k] * dz[k] * zinv[k]);
            }
        };

        BlockDiag t(nb), dx_aff, dz_aff, dx, dz;
        Eigen::VectorXd dy_aff, dy;
        for (std::size_t k = 0; k < nb; ++k) t[k] = -s.x[k] * s.z[k];
        direction(t, dx_aff, dy_aff, dz_aff);
        const double ap_aff = std::min(1.0, max_step(s.x, dx_aff));
        const double ad_aff = std::min(1.0, max_step(s.z, dz_aff));
        const double mu_aff = inner(axpy(s.x, ap_aff, dx_aff), axpy(s.z, ad_aff, dz_aff)) / n;
        const double sigma = std::clamp(std::pow(mu_aff / mu, 3.0), 0.0, 1.0);

        for (std::size_t k = 0; k < nb; ++k) {
            const auto sz = s.x[k].rows();
            t[k] = sigma * mu * Block::Identity(sz, sz) - s.x[k] * s.z[k] - dx_aff[k] * dz_aff[k];
        }
        direction(t, dx, dy, dz);

        const double ap = std::min(1.0, opt.step_fraction * max_step(s.x, dx));
        const double ad = std::min(1.0, opt.step_fraction * max_step(s.z, dz));
        if (!(ap > 0.0) || !(ad > 0.0)) {
            s.status = Status::NumericalFailure;
            return s;
        }
        for (std::size_t k = 0; k < nb; ++k) {
            s.x[k] = hermitian_part(s.x[k] + ap * dx[k]);
            s.z[k] = hermitian_part(s.z[k] + ad * dz[k]);
        }
        s.y += ad * dy;
    }
    s.status = Status::IterationLimit;
    return s;
}

Solution barrier_reduced(const Problem& p, Eigen::VectorXd y, const Options& opt) {
    const int m = p.num_constraints();
    const double n = total_size(p);
    const Incidence inc(p);
    const auto nb = static_cast<std::size_t>(p.num_blocks());

    auto slack = [&](const Eigen::VectorXd& v) {
        BlockDiag z = p.adjoint(v);
        for (std::size_t k = 0; k < nb; ++k) z[k] = hermitian_part(z[k] - p.c[k]);
        return z;
    };
    auto logdet = [&](const BlockDiag& z, bool& pd) {
        double acc = 0.0;
        for (const auto& blk : z) {
            Eigen::LLT<Block> llt(blk);
            if (llt.info() != Eigen::Success) {
                pd = false;
                return 0.0;
            }
            const Block l = llt.matrixL();
            for (Eigen::Index r = 0; r < l.rows(); ++r) {
                const double dr = l(r, r).real();
                if (!(dr > 0.0)) {
                    pd = false;
                    return 0.0;
                }
                acc += 2.0 * std::log(dr);
            }
        }
        pd = true;
        return acc;
    };

    Solution s;
    BlockDiag z = slack(y);
    bool pd = false;
    logdet(z, pd);
    if (!pd) throw std::invalid_argument("solve_dual_barrier: starting point is not strictly feasible");

    double mu = std::max(1e-3, std::abs(p.b.dot(y)) / n);
    int total_iterations = 0;
    s.status = Status::IterationLimit;
    BlockDiag zinv(nb);
    while (total_iterations < 50 * opt.max_iterations) {
        for (int inner_iter = 0; inner_iter < 100; ++inner_iter, ++total_iterations) {
            bool ok = true;
            for (std::size_t k = 0; k < nb; ++k) zinv[k] = inverse_pd(z[k], ok);
            if (!ok) break;
            const Eigen::VectorXd grad = p.b - mu * p.apply(zinv);
            Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(m, m);
            for (std::size_t k = 0; k < nb; ++k) {
                const auto& terms = inc.by_block[k];
                for (const auto& [j, aj] : terms) {
                    const Block g = zinv[k] * (*aj) * zinv[k];
                    for (const auto& [i, ai] : terms) hess(i, j) += mu * inner(*ai, g);
                }
            }
            hess = 0.5 * (hess + hess.transpose());
            const Eigen::VectorXd dy = -hess.ldlt().solve(grad);
            const double decrement = -grad.dot(dy);
            if (!(decrement > 1e-14)) break;

            const double f0 = p.b.dot(y) - mu * logdet(z, pd);
            double alpha = 1.0;
            Eigen::VectorXd y_new;
            BlockDiag z_new;
            for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
                y_new = y + alpha * dy;
                z_new = slack(y_new);
                const double ld = logdet(z_new, pd);
                if (pd && p.b.dot(y_new) - mu * ld <= f0 - 0.25 * alpha * decrement) break;
                pd = false;
            }
            if (!pd) break;
            y = y_new;
            z = z_new;
            if (decrement < 1e-10) break;
        }
        if (mu * n < opt.gap_tolerance) {
            s.status = Status::Optimal;
            break;
        }
        mu *= 0.2;
    }

    s.y = y;
    s.z = z;
    s.dual_objective = p.b.dot(y);
    bool ok = true;
    s.x.resize(nb);
    for (std::size_t k = 0; k < nb; ++k) s.x[k] = mu * inverse_pd(z[k], ok);
    s.primal_objective = inner(p.c, s.x);
    s.primal_residual = (p.b - p.apply(s.x)).norm() / (1.0 + p.b.norm());
    s.dual_residual = 0.0;
    s.iterations = total_iterations;
    return s;
}

}  // namespace

std::string to_string(Status s) {
    switch (s) {
        case Status::Optimal: return "optimal";
        case Status::PrimalInfeasible: return "primal infeasible";
        case Status::DualInfeasible: return "dual infeasible";
        case Status::IterationLimit: return "iteration limit";
        case Status::NumericalFailure: return "numerical failure";
    }
    return "unknown";
}

BlockDiag Problem::adjoint(const Eigen::VectorXd& y) const {
    BlockDiag out = zeros();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double yi = y(static_cast<Eigen::Index>(i));
        if (yi == 0.0) continue;
        for (const auto& t : a[i]) out[static_cast<std::size_t>(t.block)] += yi * t.a;
    }
    return out;
}

Eigen::VectorXd Problem::apply(const BlockDiag& x) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        double acc = 0.0;
        for (const auto& t : a[i]) acc += inner(t.a, x[static_cast<std::size_t>(t.block)]);
        out(static_cast<Eigen::Index>(i)) = acc;
    }
    return out;
}

BlockDiag Problem::zeros() const {
    BlockDiag out;
    out.reserve(block_sizes.size());
    for (const int n : block_sizes) out.push_back(Block::Zero(n, n));
    return out;
}

BlockDiag Problem::identity(double scale) const {
    BlockDiag out;
    out.reserve(block_sizes.size());
    for (const int n : block_sizes) out.push_back(scale * Block::Identity(n, n));
    return out;
}

double inner(const Block& a, const Block& x) {
    return (a.conjugate().cwiseProduct(x)).sum().real();
}

double inner(const BlockDiag& a, const BlockDiag& x) {
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += inner(a[k], x[k]);
    return acc;
}

double frobenius_norm(const BlockDiag& a) {
    double acc = 0.0;
    for (const auto& blk : a) acc += blk.squaredNorm();
    return std::sqrt(acc);
}

double min_eigenvalue(const BlockDiag& a) {
    double lam = kInf;
    for (const auto& blk : a) {
        Eigen::SelfAdjointEigenSolver<Block> es(hermitian_part(blk), Eigen::EigenvaluesOnly);
        lam = std::min(lam, es.eigenvalues().minCoeff());
    }
    return lam;
}

Solution solve(const Problem& problem, const Options& options) {
    const Reduction red = reduce(problem, options.rank_tolerance);
    const int m = problem.num_constraints();
    if (!red.consistent) {
        Solution s;
        s.status = Status::PrimalInfeasible;
        s.x = problem.zeros();
        s.z = problem.zeros();
        s.y = Eigen::VectorXd::Zero(m);
        return s;
    }
    Solution s = solve_reduced(red.problem, options);
    s.y = expand(red, s.y, m);
    return s;
}

Solution solve_dual_barrier(const Problem& problem, const Eigen::VectorXd& y0,
                            const Options& options) {
    const Reduction red = reduce(problem, options.rank_tolerance);
    Solution s = barrier_reduced(red.problem, fold(red, y0), options);
    s.y = expand(red, s.y, problem.num_constraints());
    if (!red.consistent) s.status = Status::PrimalInfeasible;
    return s;
}

}  // namespace usdqrng::sdp
