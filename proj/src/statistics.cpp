#include "usdqrng/statistics.hpp"

#include <cmath>
#include <istream>
#include <string>

#include "usdqrng/errors.hpp"

namespace usdqrng {

std::uint64_t CountsTable::total(int x) const noexcept {
    const auto col = static_cast<std::size_t>(x);
    return n[0][col] + n[1][col] + n[2][col];
}

CountsTable& CountsTable::operator+=(const CountsTable& other) noexcept {
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t x = 0; x < 2; ++x) n[b][x] += other.n[b][x];
    return *this;
}

bool ConditionalDistribution::is_normalized(double tol) const noexcept {
    for (std::size_t x = 0; x < 2; ++x) {
        double sum = 0.0;
        for (std::size_t b = 0; b < 3; ++b) {
            const double v = p[b][x];
            if (!(v >= -tol && v <= 1.0 + tol)) return false;
            sum += v;
        }
        if (std::abs(sum - 1.0) > tol) return false;
    }
    return true;
}

FiniteSizeParams FiniteSizeParams::from_counts(double epsilon, const CountsTable& counts) {
    FiniteSizeParams params;
    params.epsilon = epsilon;
    for (int x = 0; x < 2; ++x) {
        const auto total = counts.total(x);
        if (total == 0)
            throw ZeroTotalError("no events recorded for input x=" + std::to_string(x));
        params.radius[static_cast<std::size_t>(x)] = hoeffding_radius(epsilon, total);
    }
    return params;
}

CountsTable accumulate(std::span<const EventRecord> events) noexcept {
    CountsTable counts;
    for (const auto& e : events) counts.add(e);
    return counts;
}

CountsTable accumulate_encoded(std::span<const std::uint8_t> bytes) {
    // Histogram over the 8 legal byte values first; the inner loop stays branch-free.
    std::array<std::uint64_t, 256> hist{};
    for (const auto byte : bytes) ++hist[byte];
    CountsTable counts;
    for (unsigned value = 0; value < 256; ++value) {
        if (hist[value] == 0) continue;
        const auto e = decode_event(static_cast<std::uint8_t>(value));
        counts.at(e.b, e.x) += hist[value];
    }
    return counts;
}

ConditionalDistribution empirical_distribution(const CountsTable& counts) {
    ConditionalDistribution dist;
    for (int x = 0; x < 2; ++x) {
        const auto total = counts.total(x);
        if (total == 0)
            throw ZeroTotalError("no events recorded for input x=" + std::to_string(x));
        const auto denom = static_cast<double>(total);
        for (const auto b : kOutcomes)
            dist.at(b, x) = static_cast<double>(counts.at(b, x)) / denom;
    }
    return dist;
}

double hoeffding_radius(double epsilon, std::uint64_t n) {
    if (!(epsilon > 0.0 && epsilon < 1.0))
        throw DomainError("hoeffding_radius: epsilon must lie in (0,1)");
    if (n == 0) throw DomainError("hoeffding_radius: sample size must be positive");
    return std::sqrt(std::log(1.0 / epsilon) / (2.0 * static_cast<double>(n)));
}

std::uint8_t encode_event(const EventRecord& e) noexcept {
    return static_cast<std::uint8_t>((e.x & 1u) | (static_cast<unsigned>(e.b) << 1));
}

EventRecord decode_event(std::uint8_t byte) {
    if ((byte & 0xF8u) != 0)
        throw FormatError("event byte " + std::to_string(byte) + " has reserved bits set");
    const unsigned code = (byte >> 1) & 3u;
    if (code == 3u) throw FormatError("event byte " + std::to_string(byte) + " has outcome code 11");
    return EventRecord{static_cast<std::uint8_t>(byte & 1u), static_cast<Outcome>(code)};
}

std::vector<std::uint8_t> encode_events(std::span<const EventRecord> events) {
    std::vector<std::uint8_t> out;
    out.reserve(events.size());
    for (const auto& e : events) out.push_back(encode_event(e));
    return out;
}

std::vector<EventRecord> decode_events(std::span<const std::uint8_t> bytes) {
    std::vector<EventRecord> out;
    out.reserve(bytes.size());
    for (const auto byte : bytes) out.push_back(decode_event(byte));
    return out;
}

std::vector<std::uint8_t> read_event_bytes(std::istream& in, std::size_t max_events) {
    std::vector<std::uint8_t> buf(max_events);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(max_events));
    buf.resize(static_cast<std::size_t>(in.gcount()));
    for (std::size_t i = 0; i < buf.size(); ++i) {
        if ((buf[i] & 0xF8u) != 0 || ((buf[i] >> 1) & 3u) == 3u)
            throw FormatError("invalid event byte " + std::to_string(buf[i]) + " at offset " +
                              std::to_string(i) + " of block");
    }
    return buf;
}

}  // namespace usdqrng
