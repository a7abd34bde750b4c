#include "usdqrng/extractor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <stdexcept>

#include "bit_convolution.hpp"

#include "usdqrng/errors.hpp"

namespace usdqrng {

// ---------------------------------------------------------------------------------------------
// BitVector

BitVector BitVector::from_bytes(std::span<const std::uint8_t> bytes, std::size_t n_bits) {
    if (bytes.size() * 8 < n_bits)
        throw LengthMismatchError("need " + std::to_string((n_bits + 7) / 8) + " bytes for " +
                                  std::to_string(n_bits) + " bits, got " +
                                  std::to_string(bytes.size()));
    BitVector v(n_bits);
    const std::size_t full = n_bits / 8;
    for (std::size_t j = 0; j < full; ++j)
        v.words_[j >> 3] |= std::uint64_t{bytes[j]} << (8 * (j & 7));
    for (std::size_t i = full * 8; i < n_bits; ++i) v.set(i, (bytes[i >> 3] >> (i & 7)) & 1U);
    return v;
}

BitVector BitVector::from_string(const std::string& bits) {
    BitVector v(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] != '0' && bits[i] != '1') throw FormatError("bit string must contain only 0 and 1");
        v.set(i, bits[i] == '1');
    }
    return v;
}

std::vector<std::uint8_t> BitVector::to_bytes() const {
    std::vector<std::uint8_t> out((size_ + 7) / 8, 0);
    for (std::size_t j = 0; j < out.size(); ++j)
        out[j] = static_cast<std::uint8_t>(words_[j >> 3] >> (8 * (j & 7)));
    return out;
}

std::string BitVector::to_string() const {
    std::string s(size_, '0');
    for (std::size_t i = 0; i < size_; ++i)
        if (get(i)) s[i] = '1';
    return s;
}

std::size_t BitVector::popcount() const noexcept {
    std::size_t c = 0;
    for (const auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
    return c;
}

BitVector& BitVector::operator^=(const BitVector& other) {
    if (other.size_ != size_) throw LengthMismatchError("xor of bit vectors with different lengths");
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] ^= other.words_[i];
    return *this;
}

std::uint64_t output_length(std::uint64_t n, double h_min, double epsilon_ext) {
    if (n < 1) throw DomainError("output_length: n must be positive");
    if (!(h_min >= 0.0 && h_min <= 1.0)) throw DomainError("output_length: h_min must be in [0,1]");
    if (!(epsilon_ext > 0.0 && epsilon_ext < 1.0))
        throw DomainError("output_length: epsilon_ext must be in (0,1)");
    const double m = std::floor(static_cast<double>(n) * h_min - 2.0 * std::log2(1.0 / epsilon_ext));
    return m > 0.0 ? static_cast<std::uint64_t>(m) : 0;
}

// The product is a slice of the linear convolution seed * raw: out[i] = (seed * raw)[n-1+i].
// A cyclic convolution of length N >= n+m-1 reproduces those entries exactly as long as the
// seed part fed to it is no longer than N.
struct ToeplitzExtractor::FftState {
    detail::BitConvolution conv;
    FftState(const BitVector& seed, std::size_t seed_bits, unsigned log2_length)
        : conv(seed, seed_bits, log2_length) {}
};

// ---------------------------------------------------------------------------------------------
// ToeplitzExtractor

ToeplitzExtractor::ToeplitzExtractor(BitVector seed, std::size_t n, std::size_t m_max,
                                     ExtractorOptions options)
    : seed_(std::move(seed)), n_(n), m_max_(m_max), options_(options) {
    if (n_ == 0) throw LengthMismatchError("extractor input length must be positive");
    if (m_max_ > n_) throw LengthMismatchError("extractor output length exceeds input length");
    if (seed_.size() != n_ + std::max<std::size_t>(m_max_, 1) - 1)
        throw LengthMismatchError("seed has " + std::to_string(seed_.size()) + " bits, expected n+m-1 = " +
                                  std::to_string(n_ + std::max<std::size_t>(m_max_, 1) - 1));
    reversed_ = BitVector(seed_.size());
    const std::size_t last = seed_.size() - 1;
    for (std::size_t t = 0; t < seed_.size(); ++t) reversed_.set(t, seed_.get(last - t));
}

ToeplitzExtractor::~ToeplitzExtractor() = default;
ToeplitzExtractor::ToeplitzExtractor(ToeplitzExtractor&&) noexcept = default;
ToeplitzExtractor& ToeplitzExtractor::operator=(ToeplitzExtractor&&) noexcept = default;

ToeplitzMethod ToeplitzExtractor::method_for(std::size_t m) const noexcept {
    if (options_.method != ToeplitzMethod::Automatic) return options_.method;
    return static_cast<double>(n_) * static_cast<double>(m) <= options_.direct_limit
               ? ToeplitzMethod::Direct
               : ToeplitzMethod::Fft;
}

BitVector ToeplitzExtractor::extract(const BitVector& raw, std::size_t m) const {
    if (raw.size() != n_)
        throw LengthMismatchError("raw block has " + std::to_string(raw.size()) + " bits, extractor expects " +
                                  std::to_string(n_));
    if (m > m_max_)
        throw LengthMismatchError("requested " + std::to_string(m) + " output bits, seed supports " +
                                  std::to_string(m_max_));
    if (m == 0) return BitVector(0);
    return method_for(m) == ToeplitzMethod::Fft ? extract_fft(raw, m) : extract_direct(raw, m);
}

// Row i of T is the n-bit window of reversed_ starting at m_max-1-i.
BitVector ToeplitzExtractor::extract_direct(const BitVector& raw, std::size_t m) const {
    BitVector out(m);
    const auto rw = raw.words();
    const auto sw = reversed_.words();
    const std::size_t nwords = rw.size();
    const std::size_t tail = n_ & 63;
    const std::uint64_t last_mask = tail ? (std::uint64_t{1} << tail) - 1 : ~std::uint64_t{0};
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t start = m_max_ - 1 - i;
        const std::size_t q = start >> 6;
        const unsigned r = static_cast<unsigned>(start & 63);
        std::uint64_t acc = 0;
        for (std::size_t w = 0; w < nwords; ++w) {
            std::uint64_t win = sw[q + w] >> r;
            if (r && q + w + 1 < sw.size()) win |= sw[q + w + 1] << (64 - r);
            if (w + 1 == nwords) win &= last_mask;
            acc ^= win & rw[w];
        }
        out.set(i, std::popcount(acc) & 1);
    }
    return out;
}

const ToeplitzExtractor::FftState& ToeplitzExtractor::fft_state(std::size_t m) const {
    // The transform built for length N also serves every shorter output that maps to N.
    const unsigned log2_n = std::max(2U, detail::ceil_log2(n_ + m - 1));
    std::lock_guard lock(*fft_mutex_);
    auto& slot = fft_[log2_n];
    if (!slot) {
        const std::size_t length = std::size_t{1} << log2_n;
        const std::size_t m_cap = std::min(m_max_, length - n_ + 1);
        slot = std::make_unique<FftState>(seed_, n_ + m_cap - 1, log2_n);
    }
    return *slot;
}

BitVector ToeplitzExtractor::extract_fft(const BitVector& raw, std::size_t m) const {
    BitVector out(m);
    const double worst = fft_state(m).conv.parity_slice(raw, n_, n_ - 1, out);
    if (worst > 0.25)
        throw std::runtime_error("Toeplitz FFT rounding error " + std::to_string(worst) + " exceeds the safe bound");
    return out;
}

BitVector toeplitz_extract(const BitVector& raw, const ExtractorParams& params,
                           const ExtractorOptions& options) {
    if (params.m == 0) {
        if (raw.size() != params.n) throw LengthMismatchError("raw length differs from n");
        return BitVector(0);
    }
    ToeplitzExtractor ex(params.seed, params.n, params.m, options);
    return ex.extract(raw, params.m);
}

// ---------------------------------------------------------------------------------------------
// Seed files

namespace {

void put_u64(std::ofstream& out, std::uint64_t v) {
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(const std::uint8_t* b) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
    return v;
}

}  // namespace

void write_seed_file(const std::string& path, const SeedFile& seed) {
    if (seed.n == 0 || seed.seed.size() != seed.n + std::max<std::uint64_t>(seed.m, 1) - 1)
        throw LengthMismatchError("seed length must be n+m-1");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    put_u64(out, seed.n);
    put_u64(out, seed.m);
    const auto bytes = seed.seed.to_bytes();
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path);
}

SeedFile read_seed_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::uint8_t header[16];
    if (!in.read(reinterpret_cast<char*>(header), 16)) throw FormatError(path + ": truncated seed header");
    SeedFile s;
    s.n = get_u64(header);
    s.m = get_u64(header + 8);
    if (s.n == 0 || s.m > s.n) throw FormatError(path + ": invalid seed dimensions");
    const std::uint64_t bits = s.n + std::max<std::uint64_t>(s.m, 1) - 1;
    std::vector<std::uint8_t> bytes((bits + 7) / 8);
    if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
        throw FormatError(path + ": seed shorter than n+m-1 bits");
    s.seed = BitVector::from_bytes(bytes, bits);
    return s;
}

BitVector generate_test_seed(std::size_t n_bits, std::uint64_t rng_seed) {
    BitVector v(n_bits);
    std::mt19937_64 gen(rng_seed);
    for (auto& w : v.words()) w = gen();
    if (n_bits & 63) v.words().back() &= (std::uint64_t{1} << (n_bits & 63)) - 1;
    return v;
}

}  // namespace usdqrng
