#pragma once

// Small dense semidefinite programs over block-diagonal Hermitian matrices.
//
//   primal:  maximize <C, X>   s.t.  <A_i, X> = b_i,  X >= 0
//   dual:    minimize b^T y    s.t.  Z = sum_i y_i A_i - C >= 0
//
// <A, X> = Re Tr(A X). Blocks are tiny (the guessing-probability programs use 2x2 and 1x1
// blocks), so everything is stored densely and per block.

#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace usdqrng::sdp {

inline constexpr int kMaxBlockSize = 4;

using Scalar = std::complex<double>;
using Block = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxBlockSize, kMaxBlockSize>;
using BlockDiag = std::vector<Block>;

struct Term {
    int block = 0;
    Block a;
};

struct Problem {
    std::vector<int> block_sizes;
    BlockDiag c;                           ///< objective, one Hermitian matrix per block
    std::vector<std::vector<Term>> a;      ///< constraint i as a sparse list of block terms
    Eigen::VectorXd b;

    int num_constraints() const { return static_cast<int>(a.size()); }
    int num_blocks() const { return static_cast<int>(block_sizes.size()); }

    /// A^T(y) = sum_i y_i A_i
    BlockDiag adjoint(const Eigen::VectorXd& y) const;
    /// A(X)_i = <A_i, X>
    Eigen::VectorXd apply(const BlockDiag& x) const;
    BlockDiag zeros() const;
    BlockDiag identity(double scale = 1.0) const;
};

enum class Status { Optimal, PrimalInfeasible, DualInfeasible, IterationLimit, NumericalFailure };

std::string to_string(Status s);

struct Options {
    int max_iterations = 120;
    double gap_tolerance = 1e-10;          ///< relative duality gap
    double feasibility_tolerance = 1e-10;  ///< relative primal/dual residual
    double step_fraction = 0.98;
    double initial_scale = 10.0;
    double rank_tolerance = 1e-10;         ///< for removing linearly dependent constraints
};

struct Solution {
    Status status = Status::NumericalFailure;
    BlockDiag x;
    Eigen::VectorXd y;
    BlockDiag z;
    double primal_objective = 0.0;
    double dual_objective = 0.0;
    double primal_residual = 0.0;  ///< ||b - A(X)|| / (1 + ||b||)
    double dual_residual = 0.0;    ///< ||A^T y - C - Z|| / (1 + ||C||)
    int iterations = 0;
};

/// Infeasible-start primal-dual path-following method (HKM direction with Mehrotra
/// predictor-corrector). Linearly dependent constraints are detected up front; their dual
/// variables are pinned to zero and an inconsistent right-hand side is reported as
/// PrimalInfeasible.
Solution solve(const Problem& problem, const Options& options = {});

/// Log-barrier Newton method on the dual alone, started from a strictly dual-feasible y0.
/// Every iterate stays strictly feasible, so the returned y is always a valid dual point
/// even when the method stops early.
Solution solve_dual_barrier(const Problem& problem, const Eigen::VectorXd& y0,
                            const Options& options = {});

double inner(const Block& a, const Block& x);
double inner(const BlockDiag& a, const BlockDiag& x);
double frobenius_norm(const BlockDiag& a);

/// Smallest eigenvalue over all blocks.
double min_eigenvalue(const BlockDiag& a);

}  // namespace usdqrng::sdp
