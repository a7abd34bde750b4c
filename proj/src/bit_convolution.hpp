#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <vector>

#include "usdqrng/extractor.hpp"

namespace usdqrng::detail {

using cplx = std::complex<double>;

unsigned ceil_log2(std::size_t v) noexcept;

/// Page-aligned complex array; large ones ask the kernel for transparent huge pages.
class ComplexArray {
public:
    explicit ComplexArray(std::size_t n);
    ~ComplexArray();
    ComplexArray(const ComplexArray&) = delete;
    ComplexArray& operator=(const ComplexArray&) = delete;

    cplx* data() noexcept { return data_; }
    const cplx* data() const noexcept { return data_; }
    std::size_t size() const noexcept { return size_; }

private:
    cplx* data_ = nullptr;
    std::size_t size_ = 0;
};

/// Cyclic convolution of a fixed 0/1 kernel with 0/1 inputs over the reals, length N = 2^k.
///
/// Real sequences are packed in pairs into a complex sequence of length M = N/2, which is
/// transformed as an N1 x N2 matrix (column transforms, twiddles, row transforms). Between the
/// column and row stages the matrix is held in column blocks of width B, so every pass over
/// the full array is sequential. The row stage handles each row together with the row holding
/// its mirror frequencies, which lets the real-spectrum unpacking, the kernel product and the
/// inverse row transform run on data that is already in cache.
class BitConvolution {
public:
    /// The kernel is the first kernel_bits bits of `kernel`; kernel_bits <= N.
    BitConvolution(const BitVector& kernel, std::size_t kernel_bits, unsigned log2_length);
    ~BitConvolution();
    BitConvolution(const BitConvolution&) = delete;
    BitConvolution& operator=(const BitConvolution&) = delete;

    std::size_t length() const noexcept { return 2 * m_; }

    /// Writes out[i] = (kernel (*) x)[first + i] mod 2 for i < out.size(), where x is the first
    /// x_bits bits of `x`. Returns the largest distance of a convolution value from the
    /// nearest integer, which measures floating-point error.
    double parity_slice(const BitVector& x, std::size_t x_bits, std::size_t first, BitVector& out) const;

private:
    struct Plans;
    struct Workspace;
    enum class RowMode { Kernel, Convolve };

    void column_forward(const BitVector& x, std::size_t x_bits, Workspace& w) const;
    void row_stage(Workspace& w, RowMode mode, cplx* top) const;
    void row_batch(Workspace& w, std::size_t lo, std::size_t lo_count, std::size_t hi, std::size_t hi_count,
                   RowMode mode, cplx* top) const;
    void row_twiddle(cplx* row, std::size_t k1, bool inverse) const;

    std::unique_ptr<Workspace> acquire() const;
    void release(std::unique_ptr<Workspace> w) const;

    std::size_t m_;       // complex length
    std::size_t n1_, n2_;  // M = n1 * n2; n1 = 1 for short transforms
    std::size_t block_;   // column block width
    std::size_t batch_;   // rows per half batch in the row stage
    unsigned log2_m_, split_;

    std::unique_ptr<Plans> plans_;
    std::vector<cplx> coarse_, fine_;  // omega_M^e = coarse_[e >> split_] * fine_[e & mask]
    std::vector<cplx> lo_, hi_;        // omega_N^(k1 + n1 k2) = lo_[k1] * hi_[k2]

    std::unique_ptr<ComplexArray> spectrum_;  // kernel spectrum X[k1 + n1 k2] at k1 * n2 + k2
    cplx spectrum_top_{};                     // X[M]

    mutable std::mutex pool_mutex_;
    mutable std::vector<std::unique_ptr<Workspace>> pool_;
};

}  // namespace usdqrng::detail
