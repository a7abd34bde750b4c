#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

namespace usdqrng {

/// Packed bit string. Bit i lives in word i/64 at position i%64, so the byte serialization
/// (little-endian words) puts bit i of byte j at raw index 8j+i.
class BitVector {
public:
    BitVector() = default;
    explicit BitVector(std::size_t n_bits) : size_(n_bits), words_((n_bits + 63) / 64, 0) {}

    static BitVector from_bytes(std::span<const std::uint8_t> bytes, std::size_t n_bits);
    static BitVector from_string(const std::string& bits);  ///< "1011..." with index 0 first

    std::size_t size() const noexcept { return size_; }
    bool get(std::size_t i) const noexcept { return (words_[i >> 6] >> (i & 63)) & 1U; }
    void set(std::size_t i, bool v) noexcept {
        const std::uint64_t mask = std::uint64_t{1} << (i & 63);
        if (v)
            words_[i >> 6] |= mask;
        else
            words_[i >> 6] &= ~mask;
    }

    std::span<std::uint64_t> words() noexcept { return words_; }
    std::span<const std::uint64_t> words() const noexcept { return words_; }

    std::vector<std::uint8_t> to_bytes() const;
    std::string to_string() const;
    std::size_t popcount() const noexcept;

    BitVector& operator^=(const BitVector& other);
    friend BitVector operator^(BitVector a, const BitVector& b) { return a ^= b; }
    friend bool operator==(const BitVector&, const BitVector&) = default;

private:
    std::size_t size_ = 0;
    std::vector<std::uint64_t> words_;
};

/// Leftover-hash output length max(0, floor(n*h_min - 2*log2(1/epsilon_ext))).
std::uint64_t output_length(std::uint64_t n, double h_min, double epsilon_ext);

inline constexpr double kDefaultExtractorEpsilon = 5.421010862427522e-20;  // 2^-64

enum class ToeplitzMethod { Automatic, Direct, Fft };

struct ExtractorOptions {
    ToeplitzMethod method = ToeplitzMethod::Automatic;
    /// Above this many matrix entries (n*m) the automatic choice switches to FFT.
    double direct_limit = 1.0e9;
};

/// Toeplitz hash T[i][j] = seed[n-1+i-j] for 0 <= i < m, 0 <= j < n; the seed has n+m-1 bits.
/// Rows depend only on the seed prefix, so an extractor built for m_max serves every m <= m_max.
///
/// Large products run as one cyclic convolution through a real FFT of length 2^k >= n+m-1. The
/// seed spectrum is computed on first use and kept for later blocks (about 8 bytes per
/// transform point for the seed plus the same again per concurrent call). extract() is safe to
/// call from several threads.
class ToeplitzExtractor {
public:
    ToeplitzExtractor(BitVector seed, std::size_t n, std::size_t m_max, ExtractorOptions options = {});
    ~ToeplitzExtractor();
    ToeplitzExtractor(ToeplitzExtractor&&) noexcept;
    ToeplitzExtractor& operator=(ToeplitzExtractor&&) noexcept;

    std::size_t input_bits() const noexcept { return n_; }
    std::size_t max_output_bits() const noexcept { return m_max_; }
    const BitVector& seed() const noexcept { return seed_; }

    /// First m bits of T*raw over GF(2).
    BitVector extract(const BitVector& raw, std::size_t m) const;

    /// Method that extract() will use for an m-bit output.
    ToeplitzMethod method_for(std::size_t m) const noexcept;

private:
    BitVector extract_direct(const BitVector& raw, std::size_t m) const;
    BitVector extract_fft(const BitVector& raw, std::size_t m) const;
    struct FftState;
    const FftState& fft_state(std::size_t m) const;

    BitVector seed_;
    BitVector reversed_;  ///< reversed_[t] = seed[n+m_max-2-t]
    std::size_t n_;
    std::size_t m_max_;
    ExtractorOptions options_;
    mutable std::map<unsigned, std::unique_ptr<FftState>> fft_;
    std::unique_ptr<std::mutex> fft_mutex_ = std::make_unique<std::mutex>();
};

struct ExtractorParams {
    std::size_t n = 0;
    std::size_t m = 0;
    double epsilon_ext = kDefaultExtractorEpsilon;
    BitVector seed;
};

/// One-shot extraction; throws LengthMismatchError when raw or seed lengths disagree with
/// (n, m).
BitVector toeplitz_extract(const BitVector& raw, const ExtractorParams& params,
                           const ExtractorOptions& options = {});

// Seed files: n and m as 64-bit little-endian unsigned integers, then ceil((n+m-1)/8) bytes
// of packed seed bits.
struct SeedFile {
    std::uint64_t n = 0;
    std::uint64_t m = 0;
    BitVector seed;
};

void write_seed_file(const std::string& path, const SeedFile& seed);
SeedFile read_seed_file(const std::string& path);

/// n+m-1 pseudorandom seed bits from a seeded generator. Only suitable for testing: a real
/// deployment needs independent uniform randomness.
BitVector generate_test_seed(std::size_t n_bits, std::uint64_t rng_seed);

}  // namespace usdqrng
