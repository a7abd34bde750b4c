#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "usdqrng/errors.hpp"
#include "usdqrng/statistics.hpp"

using namespace usdqrng;

TEST_CASE("conclusive bit") {
    CHECK(conclusive_bit(Outcome::Zero) == 0);
    CHECK(conclusive_bit(Outcome::One) == 0);
    CHECK(conclusive_bit(Outcome::Inconclusive) == 1);
}

TEST_CASE("accumulate counts each event once") {
    const std::vector<EventRecord> events{{0, Outcome::Zero}, {0, Outcome::Inconclusive}, {1, Outcome::One},
                                          {1, Outcome::One}, {1, Outcome::Inconclusive}};
    const auto c = accumulate(events);
    CHECK(c.at(Outcome::Zero, 0) == 1);
    CHECK(c.at(Outcome::Inconclusive, 0) == 1);
    CHECK(c.at(Outcome::One, 1) == 2);
    CHECK(c.at(Outcome::Inconclusive, 1) == 1);
    CHECK(c.total(0) == 2);
    CHECK(c.total(1) == 3);
    CHECK(c.total() == events.size());
    CHECK(accumulate({}).total() == 0);
}

TEST_CASE("accumulation is additive over splits") {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> pick(0, 5);
    std::vector<EventRecord> events(5000);
    for (auto& e : events) {
        const int v = pick(rng);
        e = {static_cast<std::uint8_t>(v & 1), static_cast<Outcome>(v >> 1)};
    }
    const auto whole = accumulate(events);
    for (const std::size_t cut : {0ul, 1ul, 2500ul, 4999ul, 5000ul}) {
        const std::span<const EventRecord> all(events);
        CHECK(accumulate(all.first(cut)) + accumulate(all.subspan(cut)) == whole);
    }
    CHECK(accumulate_encoded(encode_events(events)) == whole);
}

TEST_CASE("empirical distribution") {
    CountsTable c;
    c.at(Outcome::Zero, 0) = 3;
    c.at(Outcome::Inconclusive, 0) = 1;
    c.at(Outcome::One, 1) = 1;
    c.at(Outcome::Inconclusive, 1) = 1;
    const auto d = empirical_distribution(c);
    CHECK(d.at(Outcome::Zero, 0) == 0.75);
    CHECK(d.at(Outcome::Inconclusive, 0) == 0.25);
    CHECK(d.at(Outcome::One, 1) == 0.5);
    CHECK(d.is_normalized());

    CountsTable half;
    half.at(Outcome::Zero, 0) = 4;
    CHECK_THROWS_AS(empirical_distribution(half), ZeroTotalError);
}

TEST_CASE("hoeffding radius") {
    CHECK(hoeffding_radius(1e-9, 50'000'000) == doctest::Approx(4.5523e-4).epsilon(1e-4));
    CHECK(hoeffding_radius(0.05, 10'000) == doctest::Approx(std::sqrt(std::log(20.0) / 20000.0)));
    CHECK_THROWS_AS(hoeffding_radius(0.0, 10), DomainError);
    CHECK_THROWS_AS(hoeffding_radius(1.0, 10), DomainError);
    CHECK_THROWS_AS(hoeffding_radius(0.5, 0), DomainError);
    // Quadrupling N halves the radius.
    CHECK(hoeffding_radius(1e-3, 4000) == doctest::Approx(hoeffding_radius(1e-3, 1000) / 2.0));
}

TEST_CASE("finite-size parameters") {
    CountsTable c;
    c.at(Outcome::Zero, 0) = 100;
    c.at(Outcome::One, 1) = 400;
    const auto p = FiniteSizeParams::from_counts(0.01, c);
    CHECK(p.radius[0] == doctest::Approx(hoeffding_radius(0.01, 100)));
    CHECK(p.radius[1] == doctest::Approx(hoeffding_radius(0.01, 400)));
    c.at(Outcome::One, 1) = 0;
    CHECK_THROWS_AS(FiniteSizeParams::from_counts(0.01, c), ZeroTotalError);
}

TEST_CASE("event codec") {
    for (std::uint8_t x = 0; x < 2; ++x)
        for (const auto b : kOutcomes) {
            const EventRecord e{x, b};
            CHECK(decode_event(encode_event(e)) == e);
        }
    CHECK(encode_event({1, Outcome::Inconclusive}) == 0b101);
    CHECK_THROWS_AS(decode_event(0b110), FormatError);
    CHECK_THROWS_AS(decode_event(0b1000), FormatError);
    CHECK_THROWS_AS(decode_event(0xFF), FormatError);
    for (unsigned v = 0; v < 256; ++v) {
        const bool legal = v < 8 && ((v >> 1) & 3u) != 3u;
        if (legal)
            CHECK_NOTHROW(decode_event(static_cast<std::uint8_t>(v)));
        else
            CHECK_THROWS_AS(decode_event(static_cast<std::uint8_t>(v)), FormatError);
    }
    const std::vector<std::uint8_t> bad{0, 1, 7};
    CHECK_THROWS_AS(accumulate_encoded(bad), FormatError);
}

TEST_CASE("reading event bytes from a stream") {
    std::string data{0, 1, 2, 3, 4, 5};
    std::istringstream in(data);
    const auto first = read_event_bytes(in, 4);
    CHECK(first.size() == 4);
    const auto rest = read_event_bytes(in, 4);
    CHECK(rest.size() == 2);
    CHECK(read_event_bytes(in, 4).empty());

    std::istringstream broken(std::string{0, 1, 6});
    CHECK_THROWS_AS(read_event_bytes(broken, 10), FormatError);
}
