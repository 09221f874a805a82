#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "stepshift/series.hpp"

namespace stepshift {

class SegmentTooShort : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Split likelihood-ratio statistics for one segment. The candidate split
/// leaves m1 observations on the left, m1 in [2, n-2]; one-point sides have
/// zero MLE variance and no defined statistic. lrt[i] corresponds to
/// m1 = i + 2. nlrt stays empty until normalize() fills it and settles
/// argmax_m1 / max_nlrt.
struct SplitStatistics {
    std::size_t segment_offset = 0;
    std::size_t segment_length = 0;
    std::vector<double> lrt;
    std::vector<double> nlrt;
    std::size_t argmax_m1 = 0;
    double max_nlrt = std::numeric_limits<double>::quiet_NaN();

    static constexpr std::size_t min_m1 = 2;

    std::size_t split_count() const noexcept { return lrt.size(); }
    std::size_t max_m1() const noexcept { return segment_length - 2; }

    double lrt_at(std::size_t m1) const { return lrt.at(m1 - min_m1); }
    double nlrt_at(std::size_t m1) const { return nlrt.at(m1 - min_m1); }
};

/// Computes the split LRT statistic for every admissible m1 of the segment
/// [lo, hi) in one linear scan over the series' prefix sums.
///
/// The statistic for a split into (m1, m2) is
///     n ln(pooled variance) - m1 ln(left variance) - m2 ln(right variance),
/// evaluated here in the equivalent grouped form
///     m1 (ln vp - ln v1) + m2 (ln vp - ln v2)
/// so equal floored variances cancel exactly. Variances below the series
/// floor enter the logs floored; a genuinely zero-variance side is finite,
/// overwhelming evidence rather than ln(0). Flooring can push the value a
/// hair negative, which is clamped to zero.
inline SplitStatistics split_scan(const Series& series, std::size_t lo, std::size_t hi) {
    if (hi > series.size() || lo >= hi) {
        throw std::invalid_argument("split_scan: bad segment range");
    }
    const std::size_t n = hi - lo;
    if (n < 4) {
        throw SegmentTooShort("split_scan: segment shorter than 4 observations");
    }

    SplitStatistics out;
    out.segment_offset = lo;
    out.segment_length = n;
    out.lrt.resize(n - 3);

    const double floor = series.variance_floor();
    const auto variance = [&](std::size_t a, std::size_t b) {
        const double k = static_cast<double>(b - a);
        const double s = series.sum_centered(a, b);
        const double ssq = series.sum_centered_squares(a, b);
        return std::max(0.0, ssq / k - (s / k) * (s / k));
    };

    const double log_pooled = std::log(std::max(variance(lo, hi), floor));
    for (std::size_t m1 = 2; m1 + 2 <= n; ++m1) {
        const std::size_t m2 = n - m1;
        const double log_left = std::log(std::max(variance(lo, lo + m1), floor));
        const double log_right = std::log(std::max(variance(lo + m1, hi), floor));
        const double value = static_cast<double>(m1) * (log_pooled - log_left) +
                             static_cast<double>(m2) * (log_pooled - log_right);
        out.lrt[m1 - 2] = std::max(value, 0.0);
    }
    return out;
}

} // namespace stepshift
