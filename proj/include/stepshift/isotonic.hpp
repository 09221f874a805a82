#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace stepshift {

/// Least-squares projection onto non-decreasing sequences (pool adjacent
/// violators, unit weights).
inline std::vector<double> isotonic_non_decreasing(std::span<const double> y) {
    std::vector<double> mean;
    std::vector<std::size_t> count;
    mean.reserve(y.size());
    count.reserve(y.size());
    for (double v : y) {
        mean.push_back(v);
        count.push_back(1);
        while (mean.size() > 1 && mean[mean.size() - 2] > mean.back()) {
            const double m2 = mean.back();
            const double c2 = static_cast<double>(count.back());
            mean.pop_back();
            count.pop_back();
            const double m1 = mean.back();
            const double c1 = static_cast<double>(count.back());
            mean.back() = (m1 * c1 + m2 * c2) / (c1 + c2);
            count.back() += static_cast<std::size_t>(c2);
        }
    }
    std::vector<double> out;
    out.reserve(y.size());
    for (std::size_t b = 0; b < mean.size(); ++b) {
        out.insert(out.end(), count[b], mean[b]);
    }
    return out;
}

inline std::vector<double> isotonic_non_increasing(std::span<const double> y) {
    std::vector<double> negated(y.begin(), y.end());
    for (auto& v : negated) {
        v = -v;
    }
    auto fit = isotonic_non_decreasing(negated);
    for (auto& v : fit) {
        v = -v;
    }
    return fit;
}

/// Smooths a noisy U-shaped curve: non-increasing up to the pivot index and
/// non-decreasing from it, fitted per half. The halves share the pivot
/// element, which takes the lower of the two fits; lowering an endpoint
/// preserves both halves' monotonicity.
inline std::vector<double> smooth_u_shape(std::span<const double> y, std::size_t pivot) {
    if (y.size() <= 1) {
        return {y.begin(), y.end()};
    }
    if (pivot >= y.size()) {
        pivot = y.size() - 1;
    }
    const auto head = isotonic_non_increasing(y.subspan(0, pivot + 1));
    const auto tail = isotonic_non_decreasing(y.subspan(pivot));
    std::vector<double> out(y.size());
    for (std::size_t i = 0; i < pivot; ++i) {
        out[i] = head[i];
    }
    out[pivot] = std::min(head[pivot], tail[0]);
    for (std::size_t i = pivot + 1; i < y.size(); ++i) {
        out[i] = tail[i - pivot];
    }
    return out;
}

} // namespace stepshift
