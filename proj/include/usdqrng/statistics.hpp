#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace usdqrng {

/// Measurement outcome b. The numeric values double as row indices into the 3x2 tables.
enum class Outcome : std::uint8_t { Zero = 0, One = 1, Inconclusive = 2 };

inline constexpr std::array<Outcome, 3> kOutcomes{Outcome::Zero, Outcome::One,
                                                  Outcome::Inconclusive};

constexpr std::size_t row(Outcome b) noexcept { return static_cast<std::size_t>(b); }

struct EventRecord {
    std::uint8_t x = 0;  ///< input bit
    Outcome b = Outcome::Inconclusive;

    friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

/// Raw randomness bit: 1 for an inconclusive round, 0 for a conclusive one.
constexpr std::uint8_t conclusive_bit(Outcome b) noexcept {
    return b == Outcome::Inconclusive ? 1 : 0;
}

/// Event counts n[b][x]. Tables from disjoint event ranges merge with +=.
struct CountsTable {
    std::array<std::array<std::uint64_t, 2>, 3> n{};

    std::uint64_t& at(Outcome b, int x) { return n[row(b)][static_cast<std::size_t>(x)]; }
    std::uint64_t at(Outcome b, int x) const { return n[row(b)][static_cast<std::size_t>(x)]; }

    /// N_x, the column sum for input x.
    std::uint64_t total(int x) const noexcept;
    std::uint64_t total() const noexcept { return total(0) + total(1); }

    void add(const EventRecord& e) noexcept { ++n[row(e.b)][e.x]; }

    CountsTable& operator+=(const CountsTable& other) noexcept;
    friend CountsTable operator+(CountsTable a, const CountsTable& b) noexcept { return a += b; }
    friend bool operator==(const CountsTable&, const CountsTable&) = default;
};

/// p[b][x] = p(b|x). Columns are indexed by the input.
struct ConditionalDistribution {
    std::array<std::array<double, 2>, 3> p{};

    double& at(Outcome b, int x) { return p[row(b)][static_cast<std::size_t>(x)]; }
    double at(Outcome b, int x) const { return p[row(b)][static_cast<std::size_t>(x)]; }

    /// True when every entry is in [0,1] and both columns sum to 1 within `tol`.
    bool is_normalized(double tol = 1e-12) const noexcept;
};

struct FiniteSizeParams {
    double epsilon = 1e-9;
    std::array<double, 2> radius{};  ///< t(epsilon, N_x) per input

    static FiniteSizeParams from_counts(double epsilon, const CountsTable& counts);
};

CountsTable accumulate(std::span<const EventRecord> events) noexcept;

/// Counts directly from the packed one-byte-per-event encoding; throws FormatError on the
/// first invalid byte.
CountsTable accumulate_encoded(std::span<const std::uint8_t> bytes);

/// xi(b|x) = n[b][x] / N_x. Throws ZeroTotalError when either N_x is zero.
ConditionalDistribution empirical_distribution(const CountsTable& counts);

/// Hoeffding radius sqrt(ln(1/epsilon) / (2N)). Natural logarithm.
double hoeffding_radius(double epsilon, std::uint64_t n);

// Event stream format: one byte per event; bit 0 = x, bits 1-2 = outcome (00 -> 0, 01 -> 1,
// 10 -> inconclusive, 11 invalid), bits 3-7 zero.
std::uint8_t encode_event(const EventRecord& e) noexcept;
EventRecord decode_event(std::uint8_t byte);

std::vector<std::uint8_t> encode_events(std::span<const EventRecord> events);
std::vector<EventRecord> decode_events(std::span<const std::uint8_t> bytes);

/// Reads up to `max_events` encoded events; fewer are returned at end of stream. Bytes are
/// validated as they are read.
std::vector<std::uint8_t> read_event_bytes(std::istream& in, std::size_t max_events);

}  // namespace usdqrng
