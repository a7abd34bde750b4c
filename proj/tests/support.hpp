#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "usdqrng/certifier.hpp"
#include "usdqrng/extractor.hpp"

namespace testing_support {

using usdqrng::ConditionalDistribution;
using usdqrng::Matrix2c;

inline ConditionalDistribution ideal_usd(double delta) {
    ConditionalDistribution d;
    d.p[0][0] = 1.0 - delta;
    d.p[1][1] = 1.0 - delta;
    d.p[2][0] = delta;
    d.p[2][1] = delta;
    return d;
}

inline Matrix2c random_psd(std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Matrix2c a;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) a(i, j) = {g(rng), g(rng)};
    return a * a.adjoint();
}

/// Statistics of a random three-outcome POVM applied to the given states.
inline ConditionalDistribution random_povm_data(const usdqrng::StatePair& states,
                                                std::mt19937_64& rng) {
    std::array<Matrix2c, 3> a{random_psd(rng), random_psd(rng), random_psd(rng)};
    const Matrix2c s = a[0] + a[1] + a[2];
    Eigen::SelfAdjointEigenSolver<Matrix2c> es(s);
    const Matrix2c inv_sqrt =
        es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
        es.eigenvectors().adjoint();
    ConditionalDistribution d;
    for (std::size_t b = 0; b < 3; ++b) {
        const Matrix2c m = inv_sqrt * a[b] * inv_sqrt;
        for (int x = 0; x < 2; ++x)
            d.p[b][static_cast<std::size_t>(x)] = (states.rho(x) * m).trace().real();
    }
    // Renormalize away rounding so that columns sum to one exactly enough.
    for (std::size_t x = 0; x < 2; ++x) {
        const double sum = d.p[0][x] + d.p[1][x] + d.p[2][x];
        for (std::size_t b = 0; b < 3; ++b) d.p[b][x] /= sum;
    }
    return d;
}

inline ConditionalDistribution random_povm_data(double delta, std::mt19937_64& rng) {
    return random_povm_data(usdqrng::canonical_states(usdqrng::OverlapBound(delta)), rng);
}

/// Dense GF(2) product with T[i][j] = seed[n-1+i-j], one bit at a time.
inline std::vector<bool> dense_toeplitz(const std::vector<bool>& seed, const std::vector<bool>& raw,
                                        std::size_t m) {
    const std::size_t n = raw.size();
    std::vector<bool> out(m, false);
    for (std::size_t i = 0; i < m; ++i) {
        bool acc = false;
        for (std::size_t j = 0; j < n; ++j) acc ^= seed[n - 1 + i - j] && raw[j];
        out[i] = acc;
    }
    return out;
}

inline std::vector<bool> random_bits(std::size_t n, std::mt19937_64& rng) {
    std::vector<bool> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = (rng() >> 17) & 1U;
    return v;
}

inline usdqrng::BitVector pack(const std::vector<bool>& bits) {
    usdqrng::BitVector v(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) v.set(i, bits[i]);
    return v;
}

inline std::vector<bool> unpack(const usdqrng::BitVector& v) {
    std::vector<bool> bits(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) bits[i] = v.get(i);
    return bits;
}

}  // namespace testing_support
