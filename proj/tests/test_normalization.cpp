#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "stepshift/normalization.hpp"
#include "stepshift/random.hpp"
#include "stepshift/series.hpp"
#include "stepshift/split_scan.hpp"

using namespace stepshift;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("stepshift-norm-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST_CASE("estimate_table basics", "[normalization]") {
    SECTION("preconditions") {
        CHECK_THROWS_AS(estimate_table(3, 1000, 1), std::invalid_argument);
        CHECK_THROWS_AS(estimate_table(10, 99, 1), std::invalid_argument);
    }
    SECTION("shortest admissible length yields a single positive entry") {
        const auto table = estimate_table(4, 1000, 7);
        REQUIRE(table.e_lrt.size() == 1);
        CHECK(table.e_lrt[0] > 0.0);
        CHECK(table.segment_length == 4);
        CHECK(table.replications == 1000);
    }
    SECTION("every entry is positive and the ends dominate the middle") {
        const auto table = estimate_table(30, 2000, 7);
        REQUIRE(table.e_lrt.size() == 27);
        for (const double v : table.e_lrt) {
            CHECK(v > 0.0);
        }
        CHECK(table.e_lrt.front() > table.at(15));
        CHECK(table.e_lrt.back() > table.at(15));
    }
}

TEST_CASE("estimate_table is deterministic", "[normalization]") {
    const auto a = estimate_table(12, 500, 99);
    const auto b = estimate_table(12, 500, 99);
    REQUIRE(a.e_lrt.size() == b.e_lrt.size());
    for (std::size_t i = 0; i < a.e_lrt.size(); ++i) {
        CHECK(a.e_lrt[i] == b.e_lrt[i]);
    }
    const auto c = estimate_table(12, 500, 100);
    CHECK(a.e_lrt != c.e_lrt);
}

TEST_CASE("estimate_table is independent of the thread count", "[normalization]") {
    const auto one = estimate_table(12, 500, 5, {.smooth = true, .threads = 1});
    const auto four = estimate_table(12, 500, 5, {.smooth = true, .threads = 4});
    REQUIRE(one.e_lrt.size() == four.e_lrt.size());
    for (std::size_t i = 0; i < one.e_lrt.size(); ++i) {
        CHECK(one.e_lrt[i] == four.e_lrt[i]);
    }
}

TEST_CASE("smoothed tables are monotone toward the middle", "[normalization]") {
    const auto table = estimate_table(30, 300, 3);
    const std::size_t pivot = 30 / 2 - 2;
    for (std::size_t i = 1; i <= pivot; ++i) {
        CHECK(table.e_lrt[i] <= table.e_lrt[i - 1]);
    }
    for (std::size_t i = pivot + 1; i < table.e_lrt.size(); ++i) {
        CHECK(table.e_lrt[i] >= table.e_lrt[i - 1]);
    }
}

TEST_CASE("expectation curve is symmetric within Monte Carlo error", "[normalization]") {
    // Same-replication differences lrt(m1) - lrt(n - m1) have mean zero; test
    // the paired difference directly so correlation between the two split
    // positions is accounted for.
    constexpr std::size_t n = 20;
    constexpr std::size_t reps = 4000;
    constexpr std::uint64_t seed = 11;
    for (const std::size_t m1 : {std::size_t{2}, std::size_t{5}, std::size_t{8}}) {
        const std::size_t mirror = n - m1;
        double sum = 0.0;
        double sum_sq = 0.0;
        std::vector<double> values(n);
        for (std::size_t rep = 0; rep < reps; ++rep) {
            auto rng = stream_rng(seed, rep);
            fill_standard_normal(values, rng);
            const Series series(values);
            const auto split = split_scan(series, 0, n);
            const double d = split.lrt_at(m1) - split.lrt_at(mirror);
            sum += d;
            sum_sq += d * d;
        }
        const double mean = sum / reps;
        const double var = std::max(0.0, sum_sq / reps - mean * mean);
        const double se = std::sqrt(var / reps);
        INFO("m1=" << m1 << " mean diff " << mean << " se " << se);
        CHECK(std::abs(mean) <= 3.0 * se);
    }
}

TEST_CASE("asymmetry shrinks with more replications", "[normalization]") {
    const auto small = estimate_table_detailed(16, 500, 13, {.smooth = false});
    const auto large = estimate_table_detailed(16, 5000, 13, {.smooth = false});
    const auto max_asym = [](const NormalizationTable& t) {
        double worst = 0.0;
        for (std::size_t m1 = 2; m1 <= t.segment_length / 2; ++m1) {
            worst = std::max(worst, std::abs(t.at(m1) - t.at(t.segment_length - m1)));
        }
        return worst;
    };
    CHECK(max_asym(large.table) < max_asym(small.table));
}

TEST_CASE("normalize scales the profile and settles the peak", "[normalization]") {
    NormalizationTable table;
    table.segment_length = 8;
    table.e_lrt = {4.0, 2.0, 1.0, 2.0, 4.0};

    SplitStatistics split;
    split.segment_length = 8;

    SECTION("zero profile stays zero") {
        split.lrt = {0.0, 0.0, 0.0, 0.0, 0.0};
        const auto out = normalize(split, table);
        for (const double v : out.nlrt) {
            CHECK(v == 0.0);
        }
        CHECK(out.max_nlrt == 0.0);
    }
    SECTION("profile equal to the table becomes identically one") {
        split.lrt = table.e_lrt;
        const auto out = normalize(split, table);
        for (const double v : out.nlrt) {
            CHECK(v == 1.0);
        }
        CHECK(out.max_nlrt == 1.0);
        // ties resolve to the smallest m1
        CHECK(out.argmax_m1 == 2);
    }
    SECTION("peak location is the normalized argmax") {
        split.lrt = {1.0, 1.0, 2.5, 1.0, 1.0};
        const auto out = normalize(split, table);
        CHECK(out.argmax_m1 == 4);
        CHECK(out.max_nlrt == 2.5);
    }
    SECTION("length mismatch is rejected") {
        split.segment_length = 10;
        split.lrt = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
        CHECK_THROWS_AS(normalize(split, table), std::invalid_argument);
    }
}

TEST_CASE("normalized profile has unit mean under the null", "[normalization]") {
    constexpr std::size_t n = 12;
    const auto table = estimate_table(n, 5000, 31);
    constexpr std::size_t reps = 10000;
    std::vector<double> mean(n - 3, 0.0);
    std::vector<double> values(n);
    for (std::size_t rep = 0; rep < reps; ++rep) {
        auto rng = stream_rng(32, rep);
        fill_standard_normal(values, rng);
        const Series series(values);
        const auto split = normalize(split_scan(series, 0, n), table);
        for (std::size_t i = 0; i < mean.size(); ++i) {
            mean[i] += split.nlrt[i];
        }
    }
    for (std::size_t i = 0; i < mean.size(); ++i) {
        mean[i] /= static_cast<double>(reps);
        INFO("m1=" << i + 2);
        CHECK(mean[i] == Catch::Approx(1.0).margin(0.1));
    }
}

TEST_CASE("tables round-trip through files bit-exactly", "[normalization]") {
    TempDir dir;
    const auto table = estimate_table(16, 300, 77);
    const auto path = dir.path / "table.tsv";
    save_normalization_table(table, path);
    const auto loaded = load_normalization_table(path);
    CHECK(loaded.segment_length == table.segment_length);
    CHECK(loaded.replications == table.replications);
    CHECK(loaded.seed == table.seed);
    CHECK(loaded.smoothed == table.smoothed);
    REQUIRE(loaded.e_lrt.size() == table.e_lrt.size());
    for (std::size_t i = 0; i < table.e_lrt.size(); ++i) {
        CHECK(loaded.e_lrt[i] == table.e_lrt[i]);
    }
}

TEST_CASE("table files are validated on load", "[normalization]") {
    const auto parse = [](const std::string& text) {
        std::istringstream in(text);
        return parse_normalization_table(in, "test");
    };
    CHECK_THROWS_WITH(parse("bogus\n"), Catch::Matchers::ContainsSubstring("header"));
    CHECK_THROWS_WITH(parse("stepshift-normtable v1\nn=6 reps=100\n"),
                      Catch::Matchers::ContainsSubstring("metadata"));
    CHECK_THROWS_WITH(
        parse("stepshift-normtable v1\nn=6 reps=100 seed=1 smoothed=1\n2\t1.5\n"),
        Catch::Matchers::ContainsSubstring("missing row"));
    CHECK_THROWS_WITH(parse("stepshift-normtable v1\nn=6 reps=100 seed=1 smoothed=1\n"
                            "2\t1.5\n2\t1.5\n3\t1.0\n4\t1.5\n"),
                      Catch::Matchers::ContainsSubstring("duplicate"));
    CHECK_THROWS_WITH(parse("stepshift-normtable v1\nn=6 reps=100 seed=1 smoothed=1\n"
                            "9\t1.5\n"),
                      Catch::Matchers::ContainsSubstring("out of range"));
}

TEST_CASE("cache serves, persists, and rescales short lengths", "[normalization]") {
    TempDir dir;
    NormalizationCache cache(5, 100, {}, dir.path);

    const auto& first = cache.table_for(10);
    const auto& again = cache.table_for(10);
    CHECK(&first == &again);
    CHECK(fs::exists(dir.path / "normtable-n10-r100-s5-sm1.tsv"));

    // lengths below 8 get 10x replications
    const auto& tiny = cache.table_for(6);
    CHECK(tiny.replications == 1000);

    // a second cache over the same directory loads identical bits
    NormalizationCache reload(5, 100, {}, dir.path);
    const auto& loaded = reload.table_for(10);
    REQUIRE(loaded.e_lrt.size() == first.e_lrt.size());
    for (std::size_t i = 0; i < first.e_lrt.size(); ++i) {
        CHECK(loaded.e_lrt[i] == first.e_lrt[i]);
    }

    // memory-only mode works without a directory
    NormalizationCache memory_only(5, 100);
    CHECK(memory_only.table_for(10).e_lrt.size() == 7);
}

TEST_CASE("root table reuse maps positions proportionally", "[normalization]") {
    const auto root = estimate_table(16, 300, 9);
    RootTableSource source(root);

    const auto& same = source.table_for(16);
    for (std::size_t i = 0; i < root.e_lrt.size(); ++i) {
        CHECK(same.e_lrt[i] == root.e_lrt[i]);
    }

    const auto& half = source.table_for(8);
    REQUIRE(half.e_lrt.size() == 5);
    for (std::size_t m1 = 2; m1 <= 6; ++m1) {
        // positions scale by 16/8 = 2
        CHECK(half.at(m1) == root.at(std::min<std::size_t>(2 * m1, 14)));
    }

    // longer-than-root lengths clamp into the root's admissible range
    const auto& longer = source.table_for(40);
    CHECK(longer.e_lrt.size() == 37);
    CHECK(longer.at(2) == root.at(2));
    CHECK(longer.at(38) == root.at(14));
}
