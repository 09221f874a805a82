#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace stepshift {

namespace detail {

/// Neumaier compensated accumulator.
struct CompensatedSum {
    double sum = 0.0;
    double carry = 0.0;

    void add(double value) {
        const double t = sum + value;
        if (std::abs(sum) >= std::abs(value)) {
            carry += (sum - t) + value;
        } else {
            carry += (value - t) + sum;
        }
        sum = t;
    }

    double value() const { return sum + carry; }
};

} // namespace detail

/// A batch of phase-I observations. Construction validates finiteness and
/// precomputes compensated prefix sums of the mean-centered values and their
/// squares, so any segment's moments are O(1) and stable for n up to 1e5.
class Series {
public:
    explicit Series(std::vector<double> values) : values_(std::move(values)) {
        if (values_.empty()) {
            throw std::invalid_argument("Series: empty batch");
        }
        double lo = values_.front();
        double hi = values_.front();
        detail::CompensatedSum total;
        for (std::size_t i = 0; i < values_.size(); ++i) {
            const double x = values_[i];
            if (!std::isfinite(x)) {
                throw std::invalid_argument("Series: non-finite value at index " +
                                            std::to_string(i));
            }
            lo = std::min(lo, x);
            hi = std::max(hi, x);
            total.add(x);
        }
        constant_ = (lo == hi);
        center_ = total.value() / static_cast<double>(values_.size());

        const std::size_t m = values_.size();
        prefix_sum_.resize(m + 1);
        prefix_carry_.resize(m + 1);
        prefix_sq_.resize(m + 1);
        prefix_sq_carry_.resize(m + 1);
        detail::CompensatedSum cs;
        detail::CompensatedSum csq;
        prefix_sum_[0] = prefix_carry_[0] = 0.0;
        prefix_sq_[0] = prefix_sq_carry_[0] = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double c = values_[i] - center_;
            cs.add(c);
            csq.add(c * c);
            prefix_sum_[i + 1] = cs.sum;
            prefix_carry_[i + 1] = cs.carry;
            prefix_sq_[i + 1] = csq.sum;
            prefix_sq_carry_[i + 1] = csq.carry;
        }

        const double full_var =
            std::max(0.0, sum_centered_squares(0, m) / static_cast<double>(m) -
                              square(sum_centered(0, m) / static_cast<double>(m)));
        // Relative floor against ln(0); the absolute fallback keeps the
        // constant-series case finite (and its lrt cancels to exactly zero).
        variance_floor_ = constant_ ? std::numeric_limits<double>::min()
                                    : std::max(1e-12 * full_var,
                                               std::numeric_limits<double>::min());
    }

    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }
    std::span<const double> values() const noexcept { return values_; }

    /// True when every observation is identical; split statistics carry no
    /// information and detection short-circuits.
    bool constant() const noexcept { return constant_; }

    /// Full-series mean used for centering.
    double center() const noexcept { return center_; }

    /// Smallest variance admitted into a log; see segment_stats.
    double variance_floor() const noexcept { return variance_floor_; }

    /// Sum of (x - center) over [lo, hi).
    double sum_centered(std::size_t lo, std::size_t hi) const {
        return (prefix_sum_[hi] - prefix_sum_[lo]) +
               (prefix_carry_[hi] - prefix_carry_[lo]);
    }

    /// Sum of (x - center)^2 over [lo, hi).
    double sum_centered_squares(std::size_t lo, std::size_t hi) const {
        return (prefix_sq_[hi] - prefix_sq_[lo]) +
               (prefix_sq_carry_[hi] - prefix_sq_carry_[lo]);
    }

private:
    static double square(double x) { return x * x; }

    std::vector<double> values_;
    std::vector<double> prefix_sum_;
    std::vector<double> prefix_carry_;
    std::vector<double> prefix_sq_;
    std::vector<double> prefix_sq_carry_;
    double center_ = 0.0;
    double variance_floor_ = 0.0;
    bool constant_ = false;
};

/// Gaussian MLE summary of one segment: mean, variance with divisor n, and
/// the maximized log-likelihood. `degenerate` marks segments whose variance
/// fell below the floor; their loglik uses the floored variance.
struct SegmentStats {
    std::size_t n = 0;
    double mean = 0.0;
    double variance_mle = 0.0;
    double loglik = 0.0;
    bool degenerate = false;
};

inline double gaussian_max_loglik(std::size_t n, double variance) {
    const double half_n = 0.5 * static_cast<double>(n);
    return -half_n * (std::log(2.0 * std::numbers::pi) + std::log(variance) + 1.0);
}

inline SegmentStats segment_stats(const Series& series, std::size_t lo, std::size_t hi) {
    if (lo >= hi || hi > series.size()) {
        throw std::invalid_argument("segment_stats: empty or out-of-range segment");
    }
    const auto n = hi - lo;
    const double dn = static_cast<double>(n);
    const double s = series.sum_centered(lo, hi);
    const double ssq = series.sum_centered_squares(lo, hi);
    SegmentStats stats;
    stats.n = n;
    stats.mean = series.center() + s / dn;
    stats.variance_mle = std::max(0.0, ssq / dn - (s / dn) * (s / dn));
    stats.degenerate = stats.variance_mle < series.variance_floor();
    const double var = std::max(stats.variance_mle, series.variance_floor());
    stats.loglik = gaussian_max_loglik(n, var);
    return stats;
}

} // namespace stepshift
