#include "bit_convolution.hpp"

#include <sys/mman.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <new>
#include <numbers>
#include <span>
#include <stdexcept>

#include <fftw3.h>

namespace usdqrng::detail {

namespace {

constexpr std::size_t kHugePage = std::size_t{1} << 21;
constexpr std::size_t kBlock = 32;  // column block width
constexpr std::size_t kBatch = 4;   // rows per half batch
constexpr unsigned kSingleLevel = 12;  // transforms up to 2^12 points are done as one row

// FFTW's planner is not reentrant.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

inline cplx mul(cplx a, cplx b) noexcept {
    return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}
inline cplx times_i(cplx a) noexcept { return {-a.imag(), a.real()}; }

inline fftw_complex* fc(cplx* p) noexcept { return reinterpret_cast<fftw_complex*>(p); }

// 64 bits of v starting at bit `pos`, with bits at or beyond `limit` cleared.
inline std::uint64_t bits_at(std::span<const std::uint64_t> w, std::size_t limit, std::size_t pos) noexcept {
    if (pos >= limit) return 0;
    const std::size_t q = pos >> 6;
    const unsigned r = static_cast<unsigned>(pos & 63);
    std::uint64_t v = w[q] >> r;
    if (r && q + 1 < w.size()) v |= w[q + 1] << (64 - r);
    if (limit - pos < 64) v &= (std::uint64_t{1} << (limit - pos)) - 1;
    return v;
}

// dst[i] = x[2(q0+i)] + i x[2(q0+i)+1] for i < len, where x holds the first `limit` bits.
void load_pairs(std::span<const std::uint64_t> w, std::size_t limit, std::size_t q0, std::size_t len, cplx* dst) {
    double* d = reinterpret_cast<double*>(dst);
    std::size_t pos = 2 * q0;
    const std::size_t end = pos + 2 * len;
    if (pos >= limit) {
        std::memset(static_cast<void*>(d), 0, 2 * len * sizeof(double));
        return;
    }
    while (pos < end) {
        const std::size_t take = std::min<std::size_t>(64, end - pos);
        const std::uint64_t v = bits_at(w, limit, pos);
        for (std::size_t k = 0; k < take; ++k) d[k] = static_cast<double>((v >> k) & 1U);
        d += take;
        pos += take;
    }
}

}  // namespace

unsigned ceil_log2(std::size_t v) noexcept {
    unsigned e = 0;
    while ((std::size_t{1} << e) < v) ++e;
    return e;
}

ComplexArray::ComplexArray(std::size_t n) : size_(n) {
    const std::size_t bytes = std::max<std::size_t>(1, n * sizeof(cplx));
    if (bytes >= kHugePage) {
        const std::size_t rounded = (bytes + kHugePage - 1) / kHugePage * kHugePage;
        data_ = static_cast<cplx*>(std::aligned_alloc(kHugePage, rounded));
        if (data_) madvise(data_, rounded, MADV_HUGEPAGE);
    } else {
        data_ = static_cast<cplx*>(std::aligned_alloc(64, (bytes + 63) / 64 * 64));
    }
    if (!data_) throw std::bad_alloc();
}

ComplexArray::~ComplexArray() { std::free(data_); }

struct BitConvolution::Plans {
    fftw_plan col_fwd = nullptr, col_inv = nullptr;  // in place, one column block
    fftw_plan row_fwd = nullptr, row_inv = nullptr;  // in place, one row
    ~Plans() {
        std::lock_guard lock(planner_mutex());
        for (fftw_plan p : {col_fwd, col_inv, row_fwd, row_inv})
            if (p) fftw_destroy_plan(p);
    }
};

struct BitConvolution::Workspace {
    ComplexArray blocks;  // the whole matrix, column block after column block, each row-major
    ComplexArray rows;    // two half batches of full rows
    Workspace(std::size_t m, std::size_t row_size) : blocks(m), rows(row_size) {}
};

BitConvolution::BitConvolution(const BitVector& kernel, std::size_t kernel_bits, unsigned log2_length)
    : plans_(std::make_unique<Plans>()) {
    if (log2_length < 2 || log2_length > 40) throw std::length_error("convolution length out of range");
    log2_m_ = log2_length - 1;
    m_ = std::size_t{1} << log2_m_;
    if (kernel_bits > 2 * m_ || kernel_bits > kernel.size()) throw std::length_error("kernel longer than transform");
    if (log2_m_ <= kSingleLevel) {
        n1_ = 1;
        n2_ = m_;
        block_ = m_;
        batch_ = 1;
    } else {
        n1_ = std::size_t{1} << (log2_m_ / 2);
        n2_ = m_ / n1_;
        block_ = std::min(kBlock, n2_);
        batch_ = std::min(kBatch, n1_ / 2);
    }

    split_ = (log2_m_ + 1) / 2;
    const double base_m = -2.0 * std::numbers::pi / static_cast<double>(m_);
    fine_.resize(std::size_t{1} << split_);
    coarse_.resize(m_ >> split_);
    for (std::size_t e = 0; e < fine_.size(); ++e) fine_[e] = std::polar(1.0, base_m * static_cast<double>(e));
    for (std::size_t e = 0; e < coarse_.size(); ++e)
        coarse_[e] = std::polar(1.0, base_m * static_cast<double>(e << split_));

    const double base_n = base_m / 2.0;
    lo_.resize(n1_);
    hi_.resize(n2_);
    for (std::size_t k = 0; k < n1_; ++k) lo_[k] = std::polar(1.0, base_n * static_cast<double>(k));
    for (std::size_t k = 0; k < n2_; ++k) hi_[k] = std::polar(1.0, base_n * static_cast<double>(k * n1_));

    {
        // Measured plans pay off for long transforms; planning overwrites the scratch arrays.
        const unsigned flags = log2_m_ >= 16 ? FFTW_MEASURE : FFTW_ESTIMATE;
        ComplexArray a(n1_ * block_), r(n2_);
        std::lock_guard lock(planner_mutex());
        if (n1_ > 1) {
            const int n[] = {static_cast<int>(n1_)};
            const int howmany = static_cast<int>(block_);
            // In place: FFTW's out-of-place variant of this strided batch is several times slower.
            plans_->col_fwd = fftw_plan_many_dft(1, n, howmany, fc(a.data()), nullptr, howmany, 1, fc(a.data()),
                                                 nullptr, howmany, 1, FFTW_FORWARD, flags);
            plans_->col_inv = fftw_plan_many_dft(1, n, howmany, fc(a.data()), nullptr, howmany, 1, fc(a.data()),
                                                 nullptr, howmany, 1, FFTW_BACKWARD, flags);
        }
        plans_->row_fwd =
            fftw_plan_dft_1d(static_cast<int>(n2_), fc(r.data()), fc(r.data()), FFTW_FORWARD, flags);
        plans_->row_inv =
            fftw_plan_dft_1d(static_cast<int>(n2_), fc(r.data()), fc(r.data()), FFTW_BACKWARD, flags);
        if (!plans_->row_fwd || !plans_->row_inv || (n1_ > 1 && (!plans_->col_fwd || !plans_->col_inv)))
            throw std::runtime_error("FFT planning failed");
    }

    spectrum_ = std::make_unique<ComplexArray>(m_);
    auto w = acquire();
    column_forward(kernel, kernel_bits, *w);
    row_stage(*w, RowMode::Kernel, &spectrum_top_);
    release(std::move(w));
}

BitConvolution::~BitConvolution() = default;

std::unique_ptr<BitConvolution::Workspace> BitConvolution::acquire() const {
    {
        std::lock_guard lock(pool_mutex_);
        if (!pool_.empty()) {
            auto w = std::move(pool_.back());
            pool_.pop_back();
            return w;
        }
    }
    return std::make_unique<Workspace>(m_, 2 * batch_ * n2_);
}

// Buffers this size are kept: first-touch page faults cost about as much as a transform.
void BitConvolution::release(std::unique_ptr<Workspace> w) const {
    std::lock_guard lock(pool_mutex_);
    pool_.push_back(std::move(w));
}

void BitConvolution::column_forward(const BitVector& x, std::size_t x_bits, Workspace& w) const {
    const auto words = x.words();
    if (n1_ == 1) {
        load_pairs(words, x_bits, 0, m_, w.blocks.data());
        return;
    }
    const std::size_t tile = n1_ * block_;
    for (std::size_t t = 0; t < n2_ / block_; ++t) {
        cplx* tp = w.blocks.data() + t * tile;
        for (std::size_t r = 0; r < n1_; ++r) load_pairs(words, x_bits, r * n2_ + t * block_, block_, tp + r * block_);
        fftw_execute_dft(plans_->col_fwd, fc(tp), fc(tp));
    }
}

// Multiplies row k1 elementwise by omega_M^(k1 n2), or by its conjugate.
void BitConvolution::row_twiddle(cplx* row, std::size_t k1, bool inverse) const {
    if (k1 == 0) return;
    const std::size_t mask = (std::size_t{1} << split_) - 1;
    std::size_t e = 0;
    for (std::size_t j = 0; j < n2_; ++j, e = (e + k1) & (m_ - 1)) {
        cplx tw = mul(coarse_[e >> split_], fine_[e & mask]);
        if (inverse) tw = std::conj(tw);
        row[j] = mul(row[j], tw);
    }
}

void BitConvolution::row_stage(Workspace& w, RowMode mode, cplx* top) const {
    if (n1_ == 1) {
        row_batch(w, 0, 1, 0, 0, mode, top);
        return;
    }
    const std::size_t half = n1_ / 2;
    for (std::size_t a = 0; a < half; a += batch_) {
        // Row 0 is its own mirror, so the first batch has one mirror row fewer.
        const std::size_t hc = a == 0 ? batch_ - 1 : batch_;
        row_batch(w, a, batch_, n1_ - a - batch_ + 1, hc, mode, top);
    }
    row_batch(w, half, 1, 0, 0, mode, top);
}

// Rows [lo, lo+lc) and their mirror rows [hi, hi+hc) pass through the row stage together.
// Frequency k = k1 + n1 k2 sits at (k1, k2); M - k sits at (0, (n2-k2) mod n2) when k1 = 0 and
// at (n1-k1, n2-1-k2) otherwise.
void BitConvolution::row_batch(Workspace& w, std::size_t lo, std::size_t lc, std::size_t hi, std::size_t hc,
                               RowMode mode, cplx* top) const {
    const std::size_t tile = n1_ * block_;
    const std::size_t blocks = n2_ / block_;
    const std::size_t bytes = block_ * sizeof(cplx);
    cplx* buf = w.rows.data();
    cplx* const cb = w.blocks.data();

    auto move_rows = [&](bool gather) {
        for (std::size_t t = 0; t < blocks; ++t) {
            cplx* base = cb + t * tile;
            for (std::size_t r = 0; r < lc; ++r) {
                cplx* a = buf + r * n2_ + t * block_;
                cplx* b = base + (lo + r) * block_;
                gather ? std::memcpy(a, b, bytes) : std::memcpy(b, a, bytes);
            }
            for (std::size_t r = 0; r < hc; ++r) {
                cplx* a = buf + (lc + r) * n2_ + t * block_;
                cplx* b = base + (hi + r) * block_;
                gather ? std::memcpy(a, b, bytes) : std::memcpy(b, a, bytes);
            }
        }
    };
    auto row_of = [&](std::size_t r) { return r < lc ? lo + r : hi + (r - lc); };

    move_rows(true);
    for (std::size_t r = 0; r < lc + hc; ++r) {
        cplx* row = buf + r * n2_;
        row_twiddle(row, row_of(r), false);
        fftw_execute_dft(plans_->row_fwd, fc(row), fc(row));
    }

    const cplx* s = spectrum_->data();
    cplx* out = spectrum_->data();
    for (std::size_t r = 0; r < lc; ++r) {
        const std::size_t k1 = lo + r;
        const bool self = k1 == 0 || k1 == n1_ / 2;
        const std::size_t k1m = k1 == 0 ? 0 : n1_ - k1;
        cplx* row = buf + r * n2_;
        cplx* mrow = self ? row : buf + (lc + (k1m - hi)) * n2_;
        const cplx* srow = s + k1 * n2_;
        const cplx* smrow = s + k1m * n2_;
        for (std::size_t k2 = 0; k2 < n2_; ++k2) {
            const std::size_t k2m = k1 == 0 ? (n2_ - k2) & (n2_ - 1) : n2_ - 1 - k2;
            if (self && k2m < k2) continue;
            const bool origin = k1 == 0 && k2 == 0;  // partner is X[M], not stored in the matrix
            const cplx tw = mul(lo_[k1], hi_[k2]);
            const cplx zk = row[k2], zmk = std::conj(mrow[k2m]);
            const cplx e = 0.5 * (zk + zmk);
            const cplx wo = mul(tw, times_i(0.5 * (zmk - zk)));
            const cplx xk = e + wo;
            const cplx xmk = std::conj(e - wo);
            if (mode == RowMode::Kernel) {
                out[k1 * n2_ + k2] = xk;
                if (origin)
                    *top = xmk;
                else if (!(self && k2m == k2))
                    out[k1m * n2_ + k2m] = xmk;
                continue;
            }
            const cplx yk = mul(xk, srow[k2]);
            const cplx ymk = mul(xmk, origin ? spectrum_top_ : smrow[k2m]);
            const cplx ye = 0.5 * (yk + std::conj(ymk));
            const cplx yo = mul(0.5 * (yk - std::conj(ymk)), std::conj(tw));
            row[k2] = ye + times_i(yo);
            if (!(self && k2m == k2)) mrow[k2m] = std::conj(ye) + times_i(std::conj(yo));
        }
    }
    if (mode == RowMode::Kernel) return;

    for (std::size_t r = 0; r < lc + hc; ++r) {
        cplx* row = buf + r * n2_;
        fftw_execute_dft(plans_->row_inv, fc(row), fc(row));
        row_twiddle(row, row_of(r), true);
    }
    move_rows(false);
}

double BitConvolution::parity_slice(const BitVector& x, std::size_t x_bits, std::size_t first, BitVector& out) const {
    const std::size_t count = out.size();
    if (count == 0) return 0.0;
    if (first + count > 2 * m_ || x_bits > 2 * m_ || x_bits > x.size())
        throw std::length_error("convolution slice out of range");

    auto w = acquire();
    column_forward(x, x_bits, *w);
    row_stage(*w, RowMode::Convolve, nullptr);

    const std::size_t tile = n1_ * block_;
    const std::size_t q_lo = first / 2, q_hi = (first + count - 1) / 2;
    const std::size_t r_lo = q_lo / n2_, r_hi = q_hi / n2_;
    const double scale = 1.0 / static_cast<double>(m_);
    double worst = 0.0;
    for (std::size_t t = 0; t < n2_ / block_; ++t) {
        cplx* src = w->blocks.data() + t * tile;
        if (n1_ > 1) fftw_execute_dft(plans_->col_inv, fc(src), fc(src));
        for (std::size_t r = r_lo; r <= r_hi; ++r) {
            const double* y = reinterpret_cast<const double*>(src + r * block_);
            const std::size_t base = 2 * (r * n2_ + t * block_);  // real index of y[0]
            const std::size_t j0 = std::max(base, first) - base;
            const std::size_t j1 = std::min(base + 2 * block_, first + count);
            for (std::size_t j = j0; base + j < j1; ++j) {
                const double v = y[j] * scale;
                const double rv = std::nearbyint(v);
                worst = std::max(worst, std::abs(v - rv));
                out.set(base + j - first, static_cast<std::int64_t>(rv) & 1);
            }
        }
    }
    release(std::move(w));
    return worst;
}

}  // namespace usdqrng::detail
