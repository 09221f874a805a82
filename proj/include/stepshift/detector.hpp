#pragma once

#include <algorithm>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stepshift/calibration.hpp"
#include "stepshift/normalization.hpp"
#include "stepshift/series.hpp"
#include "stepshift/split_scan.hpp"

namespace stepshift {

class MissingThreshold : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Per-test threshold lookup for the segmentation tree.
class ThresholdSource {
public:
    virtual ~ThresholdSource() = default;
    virtual double threshold_for(std::size_t n, int test_index) = 0;
};

/// Always answers with the published thresholds, which are indexed by test
/// number only; sub-segment lengths get the same values their test number
/// would get on a batch of 200.
class PublishedThresholds : public ThresholdSource {
public:
    double threshold_for(std::size_t /*n*/, int test_index) override {
        return published_thresholds().at(200, test_index).threshold;
    }
};

/// Serves calibrated thresholds by (segment length, test index). A missing
/// entry falls back to the published value for that test position, warning
/// once per (length, test); strict mode throws instead, demanding explicit
/// calibration.
class CalibratedThresholds : public ThresholdSource {
public:
    using WarnFn = std::function<void(const std::string&)>;

    explicit CalibratedThresholds(ThresholdTable table, bool strict = false,
                                  WarnFn warn = {})
        : table_(std::move(table)), strict_(strict), warn_(std::move(warn)) {}

    double threshold_for(std::size_t n, int test_index) override {
        if (const auto* entry = table_.find(n, test_index)) {
            return entry->threshold;
        }
        if (strict_) {
            throw MissingThreshold("no calibrated threshold for n=" + std::to_string(n) +
                                   " test_index=" + std::to_string(test_index));
        }
        if (warn_ && warned_.insert({n, test_index}).second) {
            warn_("no calibrated threshold for n=" + std::to_string(n) + " test_index=" +
                  std::to_string(test_index) + "; using the published default");
        }
        return published_thresholds().at(200, test_index).threshold;
    }

private:
    ThresholdTable table_;
    bool strict_;
    WarnFn warn_;
    std::set<std::pair<std::size_t, int>> warned_;
};

struct DetectorOptions {
    /// Shortest segment worth testing; each side of a split keeps at least
    /// two admissible sub-splits.
    std::size_t min_segment_length = 8;
    /// Most tests the whole recursion may run.
    std::size_t budget = 7;
    /// Deepest segment tested, counting the whole batch as depth 0. The
    /// budget binds first when every test signals; the depth cap matters on
    /// sparse trees, where skipped siblings leave budget for a deeper chain.
    std::size_t max_depth = 3;
};

/// One test of the segmentation tree. Indices lo/hi are 0-based and
/// half-open; split_at is the 1-based index of the last observation of the
/// left regime, set only when the test signaled.
struct TestRecord {
    int test_index = 1;
    std::size_t lo = 0;
    std::size_t hi = 0;
    double max_nlrt = std::numeric_limits<double>::quiet_NaN();
    double threshold_used = std::numeric_limits<double>::quiet_NaN();
    std::size_t argmax_m1 = 0;
    std::size_t split_at = 0;
    bool signaled = false;
    bool too_short = false;
};

struct Detection {
    /// 1-based indices of the last observation before each shift, ascending.
    std::vector<std::size_t> change_points;
    std::vector<TestRecord> tests;
};

/// Tests one segment for a single mean shift: scan, normalize, compare the
/// peak against the threshold. Segments shorter than min_length come back as
/// non-signaling records flagged too_short.
inline TestRecord detect_single(const Series& series, std::size_t lo, std::size_t hi,
                                const NormalizationTable& table, double threshold,
                                std::size_t min_length = 8) {
    TestRecord record;
    record.lo = lo;
    record.hi = hi;
    record.threshold_used = threshold;
    if (hi - lo < std::max<std::size_t>(min_length, 4)) {
        record.too_short = true;
        return record;
    }
    const auto split = normalize(split_scan(series, lo, hi), table);
    record.max_nlrt = split.max_nlrt;
    record.argmax_m1 = split.argmax_m1;
    record.signaled = split.max_nlrt > threshold;
    if (record.signaled) {
        record.split_at = lo + split.argmax_m1;
    }
    return record;
}

/// Recursive binary segmentation. Tests run breadth-first and are numbered
/// in the order performed, so the root is 1, its children 2 and 3, and on a
/// full tree the grandchildren get 4 through 7; sparse trees renumber later
/// tests densely, which keeps every index within the budget and the per-test
/// threshold schedule defined. Recursion stops at non-signaling tests,
/// segments shorter than the minimum, the depth limit, or an exhausted test
/// budget; too-short children are never enqueued. A constant batch cannot
/// carry a shift and returns an empty detection outright.
inline Detection segment(const Series& series, NormalizationSource& tables,
                         ThresholdSource& thresholds, DetectorOptions options = {}) {
    if (series.size() < 4) {
        throw std::invalid_argument("segment: batch shorter than 4 observations");
    }
    Detection detection;
    if (series.constant()) {
        return detection;
    }

    struct Pending {
        std::size_t lo;
        std::size_t hi;
        std::size_t depth;
    };
    std::deque<Pending> queue;
    const std::size_t min_length = std::max<std::size_t>(options.min_segment_length, 4);
    if (series.size() >= min_length) {
        queue.push_back({0, series.size(), 0});
    }

    while (!queue.empty() && detection.tests.size() < options.budget) {
        const auto [lo, hi, depth] = queue.front();
        queue.pop_front();
        const int test_index = static_cast<int>(detection.tests.size()) + 1;

        const auto& table = tables.table_for(hi - lo);
        const double threshold = thresholds.threshold_for(hi - lo, test_index);
        auto record = detect_single(series, lo, hi, table, threshold, min_length);
        record.test_index = test_index;
        detection.tests.push_back(record);

        if (!record.signaled) {
            continue;
        }
        detection.change_points.push_back(record.split_at);
        if (depth >= options.max_depth) {
            continue;
        }
        const std::size_t mid = record.split_at;
        if (mid - lo >= min_length) {
            queue.push_back({lo, mid, depth + 1});
        }
        if (hi - mid >= min_length) {
            queue.push_back({mid, hi, depth + 1});
        }
    }

    std::sort(detection.change_points.begin(), detection.change_points.end());
    return detection;
}

} // namespace stepshift
