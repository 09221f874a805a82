#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "stepshift/datagen.hpp"
#include "stepshift/detector.hpp"
#include "stepshift/normalization.hpp"
#include "stepshift/random.hpp"
#include "support/naive_stats.hpp"

using namespace stepshift;

namespace {

std::vector<double> two_regime_batch(std::size_t left, std::size_t right, double shift,
                                     std::uint64_t seed) {
    std::vector<double> values(left + right);
    auto rng = stream_rng(seed, 0);
    fill_standard_normal(values, rng);
    for (std::size_t i = left; i < values.size(); ++i) {
        values[i] += shift;
    }
    return values;
}

} // namespace

TEST_CASE("detect_single finds an obvious midway shift", "[detector]") {
    const auto table = estimate_table(200, 2000, 61);
    const Series series(two_regime_batch(100, 100, 5.0, 62));
    const auto record = detect_single(series, 0, 200, table, 7.0089);
    CHECK(record.signaled);
    CHECK(record.split_at >= 97);
    CHECK(record.split_at <= 103);
    CHECK(record.max_nlrt > 7.0089);
    CHECK(record.threshold_used == 7.0089);
}

TEST_CASE("detect_single handles degenerate segments", "[detector]") {
    const auto table = estimate_table(16, 300, 63);

    SECTION("too-short segments come back flagged, never signaling") {
        const Series series(std::vector<double>{1.0, 9.0, 2.0, 8.0, 3.0, 7.0});
        const auto record = detect_single(series, 0, 6, table, 5.0);
        CHECK(record.too_short);
        CHECK_FALSE(record.signaled);
        CHECK(std::isnan(record.max_nlrt));
    }
    SECTION("constant sub-segment of a varying series carries no signal") {
        std::vector<double> values(20, 4.0);
        values[18] = 9.0;
        const Series series(values);
        const auto record = detect_single(series, 0, 16, table, 5.0);
        CHECK_FALSE(record.signaled);
        CHECK(record.max_nlrt == 0.0);
    }
}

TEST_CASE("segment rejects batches shorter than 4", "[detector]") {
    NormalizationCache tables(1, 100);
    PublishedThresholds thresholds;
    const Series series(std::vector<double>{1.0, 2.0, 3.0});
    CHECK_THROWS_AS(segment(series, tables, thresholds), std::invalid_argument);
}

TEST_CASE("constant batches never signal", "[detector]") {
    NormalizationCache tables(1, 100);
    PublishedThresholds thresholds;
    const Series series(std::vector<double>(50, 2.5));
    const auto detection = segment(series, tables, thresholds);
    CHECK(detection.change_points.empty());
    CHECK(detection.tests.empty());
}

TEST_CASE("segmentation walks the tree breadth-first with positional indices",
          "[detector]") {
    // three strong shifts; every segment level signals
    std::vector<double> values = two_regime_batch(12, 36, 0.0, 64);
    for (std::size_t i = 12; i < 24; ++i) values[i] += 6.0;
    for (std::size_t i = 36; i < 48; ++i) values[i] += 6.0;
    const Series series(values);

    NormalizationCache tables(2, 1000);
    PublishedThresholds thresholds;
    const auto detection = segment(series, tables, thresholds);

    REQUIRE(detection.tests.size() <= 7);
    REQUIRE(detection.change_points.size() <= 7);
    CHECK(detection.tests.front().test_index == 1);

    // tests are numbered densely in the order performed
    int expected_index = 1;
    for (const auto& t : detection.tests) {
        CHECK(t.test_index == expected_index);
        ++expected_index;
        CHECK(t.test_index <= 7);
        CHECK(t.signaled == (t.max_nlrt > t.threshold_used));
        CHECK((t.split_at != 0) == t.signaled);
    }

    REQUIRE(detection.change_points.size() == 3);
    CHECK(std::abs(static_cast<long>(detection.change_points[0]) - 12) <= 2);
    CHECK(std::abs(static_cast<long>(detection.change_points[1]) - 24) <= 2);
    CHECK(std::abs(static_cast<long>(detection.change_points[2]) - 36) <= 2);
    CHECK(std::is_sorted(detection.change_points.begin(), detection.change_points.end()));
}

TEST_CASE("budget and depth limits hold", "[detector]") {
    std::vector<double> values = two_regime_batch(12, 36, 0.0, 65);
    for (std::size_t i = 12; i < 24; ++i) values[i] += 6.0;
    for (std::size_t i = 36; i < 48; ++i) values[i] += 6.0;
    const Series series(values);
    NormalizationCache tables(2, 1000);
    PublishedThresholds thresholds;

    SECTION("budget of one stops after the root") {
        const auto detection = segment(series, tables, thresholds, {.budget = 1});
        CHECK(detection.tests.size() == 1);
        CHECK(detection.change_points.size() <= 1);
    }
    SECTION("depth of zero never tests children") {
        const auto detection = segment(series, tables, thresholds, {.max_depth = 0});
        CHECK(detection.tests.size() == 1);
    }
    SECTION("depth of one tests the root's children but not grandchildren") {
        const auto detection = segment(series, tables, thresholds, {.max_depth = 1});
        CHECK(detection.tests.size() <= 3);
        for (const auto& t : detection.tests) {
            if (t.test_index == 1) continue;
            CHECK((t.lo == 0 || t.hi == series.size()));
        }
    }
    SECTION("minimum segment length prunes children") {
        const auto detection =
            segment(series, tables, thresholds, {.min_segment_length = 30});
        for (const auto& t : detection.tests) {
            CHECK(t.hi - t.lo >= 30);
        }
    }
}

TEST_CASE("threshold sources fall back or refuse", "[detector]") {
    SECTION("published source answers every length by test number") {
        PublishedThresholds source;
        CHECK(source.threshold_for(200, 1) == 7.0089);
        CHECK(source.threshold_for(57, 1) == 7.0089);
        CHECK(source.threshold_for(57, 6) == 8.0292);
    }
    SECTION("calibrated source serves its entries") {
        ThresholdTable table;
        table.set(64, 1, ThresholdEntry{0.03, 6.5, 2000, 1});
        CalibratedThresholds source(table);
        CHECK(source.threshold_for(64, 1) == 6.5);
    }
    SECTION("missing entries fall back with one warning per key") {
        std::vector<std::string> warnings;
        CalibratedThresholds source(ThresholdTable{}, false,
                                    [&](const std::string& w) { warnings.push_back(w); });
        CHECK(source.threshold_for(64, 2) == 7.5745);
        CHECK(source.threshold_for(64, 2) == 7.5745);
        CHECK(source.threshold_for(64, 3) == 7.3684);
        CHECK(warnings.size() == 2);
    }
    SECTION("strict mode throws instead") {
        CalibratedThresholds source(ThresholdTable{}, true);
        CHECK_THROWS_AS(source.threshold_for(64, 1), MissingThreshold);
    }
}

TEST_CASE("change points are invariant under affine maps", "[detector]") {
    const auto design = make_design(120, 2, 0.0, 2.5);
    const auto series = generate(design, 66);
    NormalizationCache tables(3, 1000);
    PublishedThresholds thresholds;
    const auto base = segment(series, tables, thresholds);
    REQUIRE_FALSE(base.change_points.empty());

    std::vector<double> mapped(series.values().begin(), series.values().end());
    for (auto& v : mapped) {
        v = 3.0 * v + 1000.0;
    }
    const auto transformed = segment(Series(mapped), tables, thresholds);
    CHECK(transformed.change_points == base.change_points);
}

TEST_CASE("each signal buys real likelihood gain", "[detector]") {
    const auto design = make_design(120, 2, 0.0, 3.0);
    const auto series = generate(design, 67);
    NormalizationCache tables(3, 1000);
    PublishedThresholds thresholds;
    const auto detection = segment(series, tables, thresholds);
    REQUIRE_FALSE(detection.change_points.empty());

    for (const auto& t : detection.tests) {
        if (!t.signaled) {
            continue;
        }
        // the two-segment likelihood beats the one-segment one by half the
        // statistic, which exceeds half of threshold * expectation
        const auto pooled = segment_stats(series, t.lo, t.hi);
        const auto left = segment_stats(series, t.lo, t.split_at);
        const auto right = segment_stats(series, t.split_at, t.hi);
        const double gain = left.loglik + right.loglik - pooled.loglik;
        const auto& table = tables.table_for(t.hi - t.lo);
        const double m1 = static_cast<double>(t.split_at - t.lo);
        CHECK(gain > 0.0);
        CHECK(2.0 * gain > t.threshold_used * table.at(static_cast<std::size_t>(m1)) -
                               1e-9);
    }
}

TEST_CASE("alternating four-shift batch splits near its true boundaries", "[detector]") {
    const auto design = make_design(200, 4, 1.0, 3.0);
    REQUIRE(design.boundaries == std::vector<std::size_t>{40, 80, 120, 160});
    const auto series = generate(design, 68);

    NormalizationCache tables(4, 1000);
    PublishedThresholds thresholds;
    const auto detection = segment(series, tables, thresholds);

    REQUIRE(detection.change_points.size() == 4);
    const std::size_t expected[4] = {40, 80, 120, 160};
    for (std::size_t r = 0; r < 4; ++r) {
        const auto got = static_cast<long>(detection.change_points[r]);
        const auto want = static_cast<long>(expected[r]);
        INFO("change " << r);
        CHECK(std::abs(got - want) <= 6);
    }
}
