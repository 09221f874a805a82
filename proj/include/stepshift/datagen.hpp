#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "stepshift/random.hpp"
#include "stepshift/series.hpp"

namespace stepshift {

/// A batch layout: R mean shifts across m observations. boundaries[r] is the
/// 1-based index of the last observation of regime r+1; means holds the R+1
/// regime means, alternating between mu0 and mu0 + delta.
struct ShiftDesign {
    std::size_t m = 200;
    std::size_t R = 0;
    double mu0 = 0.0;
    double delta = 0.0;
    double sigma = 1.0;
    std::vector<std::size_t> boundaries;
    std::vector<double> means;
};

namespace detail {

inline void validate_design_params(std::size_t m, std::size_t R, double delta,
                                   double sigma) {
    if (m < 4) {
        throw std::invalid_argument("design: batch length must be at least 4");
    }
    if (R > 0 && !(delta > 0.0)) {
        throw std::invalid_argument("design: shift size must be positive");
    }
    if (!(sigma > 0.0)) {
        throw std::invalid_argument("design: sigma must be positive");
    }
}

inline std::vector<double> alternating_means(std::size_t R, double mu0, double delta) {
    std::vector<double> means(R + 1);
    means[0] = mu0;
    double sign = 1.0;
    for (std::size_t j = 1; j <= R; ++j) {
        means[j] = means[j - 1] + delta * sign;
        sign = -sign;
    }
    return means;
}

inline void validate_boundaries(const std::vector<std::size_t>& boundaries,
                                std::size_t m) {
    std::size_t prev = 0;
    for (std::size_t r = 0; r < boundaries.size(); ++r) {
        if (boundaries[r] <= prev) {
            throw std::invalid_argument("design: regime " + std::to_string(r + 1) +
                                        " is empty; too many shifts for this length");
        }
        prev = boundaries[r];
    }
    if (prev >= m) {
        throw std::invalid_argument("design: last regime is empty");
    }
}

/// Uniform integer in [0, k], unbiased via rejection.
inline std::uint64_t uniform_upto(Xoshiro256& rng, std::uint64_t k) {
    if (k == ~std::uint64_t{0}) {
        return rng();
    }
    const std::uint64_t span = k + 1;
    const std::uint64_t reject_below = (~std::uint64_t{0} % span + 1) % span;
    for (;;) {
        const std::uint64_t x = rng();
        if (x >= reject_below) {
            return x % span;
        }
    }
}

} // namespace detail

/// Evenly spaced layout: shift r ends at round(r * m / (R + 1)), half-up.
/// One shift lands midway, two at the thirds, and so on.
inline ShiftDesign make_design(std::size_t m, std::size_t R, double mu0, double delta,
                               double sigma = 1.0) {
    detail::validate_design_params(m, R, delta, sigma);
    ShiftDesign design{m, R, mu0, delta, sigma, {}, {}};
    design.boundaries.resize(R);
    for (std::size_t r = 1; r <= R; ++r) {
        const double pos =
            static_cast<double>(r) * static_cast<double>(m) / static_cast<double>(R + 1);
        design.boundaries[r - 1] = static_cast<std::size_t>(std::floor(pos + 0.5));
    }
    detail::validate_boundaries(design.boundaries, m);
    design.means = detail::alternating_means(R, mu0, delta);
    return design;
}

/// Random layout: boundaries drawn uniformly over all placements that keep
/// every regime at least min_gap long. Deterministic given the seed.
inline ShiftDesign make_random_design(std::size_t m, std::size_t R, double mu0,
                                      double delta, double sigma, std::size_t min_gap,
                                      std::uint64_t seed) {
    detail::validate_design_params(m, R, delta, sigma);
    if (min_gap == 0) {
        throw std::invalid_argument("design: minimum gap must be positive");
    }
    if ((R + 1) * min_gap > m) {
        throw std::invalid_argument("design: gaps do not fit; too many shifts");
    }
    ShiftDesign design{m, R, mu0, delta, sigma, {}, {}};
    if (R > 0) {
        // Sorted draws over the slack turn into gap-respecting boundaries:
        // boundary r = (r-th smallest draw) + r * min_gap. The boundary draw
        // gets its own stream so it never shares state with the noise.
        const std::uint64_t slack = m - (R + 1) * min_gap;
        auto rng = stream_rng(seed, ~std::uint64_t{0});
        std::vector<std::uint64_t> draws(R);
        for (auto& d : draws) {
            d = detail::uniform_upto(rng, slack);
        }
        std::sort(draws.begin(), draws.end());
        design.boundaries.resize(R);
        for (std::size_t r = 0; r < R; ++r) {
            design.boundaries[r] = static_cast<std::size_t>(draws[r]) + (r + 1) * min_gap;
        }
    }
    detail::validate_boundaries(design.boundaries, m);
    design.means = detail::alternating_means(R, mu0, delta);
    return design;
}

/// Regime of observation t (1-based): the first regime whose boundary is at
/// or past t.
inline std::size_t regime_index(const ShiftDesign& design, std::size_t t) {
    if (t < 1 || t > design.m) {
        throw std::invalid_argument("regime_index: observation out of range");
    }
    std::size_t r = 0;
    while (r < design.boundaries.size() && design.boundaries[r] < t) {
        ++r;
    }
    return r;
}

inline double regime_mean(const ShiftDesign& design, std::size_t t) {
    return design.means[regime_index(design, t)];
}

/// Draws the batch: independent N(regime mean, sigma^2) per observation.
inline Series generate(const ShiftDesign& design, std::uint64_t seed,
                       std::uint64_t stream = 0) {
    std::vector<double> values(design.m);
    auto rng = stream_rng(seed, stream);
    std::size_t r = 0;
    for (std::size_t t = 1; t <= design.m; ++t) {
        while (r < design.boundaries.size() && design.boundaries[r] < t) {
            ++r;
        }
        values[t - 1] = design.means[r] + design.sigma * standard_normal(rng);
    }
    return Series(std::move(values));
}

} // namespace stepshift
