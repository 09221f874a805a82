#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stepshift/detail/parallel.hpp"
#include "stepshift/detail/text_io.hpp"
#include "stepshift/normalization.hpp"
#include "stepshift/random.hpp"

namespace stepshift {

/// Maximum normalized statistic of one in-control batch per replication.
/// Slot-per-replication storage keeps the result independent of how the work
/// is distributed over threads.
inline std::vector<double> simulate_null_maxima(const NormalizationTable& table,
                                                std::size_t replications,
                                                std::uint64_t seed, unsigned threads = 0) {
    const std::size_t n = table.segment_length;
    std::vector<double> maxima(replications);
    detail::for_each_chunk(replications, detail::replication_chunk, threads,
                           [&](std::size_t, std::size_t begin, std::size_t end) {
                               std::vector<double> values(n);
                               for (std::size_t rep = begin; rep < end; ++rep) {
                                   auto rng = stream_rng(seed, rep);
                                   fill_standard_normal(values, rng);
                                   const Series series(values);
                                   const auto split =
                                       normalize(split_scan(series, 0, n), table);
                                   maxima[rep] = split.max_nlrt;
                               }
                           });
    return maxima;
}

/// Empirical (1 - alpha) quantile as the order statistic at rank
/// ceil((1 - alpha) * count), 1-based, without interpolation. The same
/// definition is used everywhere so calibrating and then verifying a
/// false-alarm rate round-trips.
inline double threshold_from_maxima(std::vector<double> maxima, double alpha) {
    if (maxima.empty()) {
        throw std::invalid_argument("threshold_from_maxima: no replications");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("threshold_from_maxima: alpha must lie in (0, 1)");
    }
    std::sort(maxima.begin(), maxima.end());
    const double target = (1.0 - alpha) * static_cast<double>(maxima.size());
    auto rank = static_cast<std::size_t>(std::ceil(target));
    rank = std::clamp<std::size_t>(rank, 1, maxima.size());
    return maxima[rank - 1];
}

struct CalibrationResult {
    double threshold = 0.0;
    /// False when alpha * replications < 10: too few tail observations for a
    /// stable quantile.
    bool reliable = true;
};

/// Simulates in-control batches and returns the threshold whose exceedance
/// probability is alpha. 1000+ replications are needed before the quantile is
/// trustworthy; fewer still compute, but the reliability flag drops once the
/// expected tail count falls under 10.
inline CalibrationResult calibrate_threshold(std::size_t n, double alpha,
                                             const NormalizationTable& table,
                                             std::size_t replications, std::uint64_t seed,
                                             unsigned threads = 0) {
    if (table.segment_length != n) {
        throw std::invalid_argument("calibrate_threshold: table length mismatch");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("calibrate_threshold: alpha must lie in (0, 1)");
    }
    if (replications == 0) {
        throw std::invalid_argument("calibrate_threshold: need replications");
    }
    CalibrationResult result;
    result.threshold =
        threshold_from_maxima(simulate_null_maxima(table, replications, seed, threads), alpha);
    result.reliable = alpha * static_cast<double>(replications) >= 10.0;
    return result;
}

struct ThresholdEntry {
    double alpha = 0.0;
    double threshold = 0.0;
    std::size_t replications = 0;
    std::uint64_t seed = 0;
};

/// Calibrated thresholds keyed by (segment length, test index). The
/// segmentation tree numbers its tests breadth-first, root = 1, so each tree
/// position can carry its own false-alarm level.
class ThresholdTable {
public:
    using Key = std::pair<std::size_t, int>;

    void set(std::size_t n, int test_index, ThresholdEntry entry) {
        entries_[Key{n, test_index}] = entry;
    }

    const ThresholdEntry* find(std::size_t n, int test_index) const {
        const auto it = entries_.find(Key{n, test_index});
        return it == entries_.end() ? nullptr : &it->second;
    }

    const ThresholdEntry& at(std::size_t n, int test_index) const {
        if (const auto* entry = find(n, test_index)) {
            return *entry;
        }
        throw std::out_of_range("no threshold for n=" + std::to_string(n) +
                                " test_index=" + std::to_string(test_index));
    }

    const std::map<Key, ThresholdEntry>& entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }

private:
    std::map<Key, ThresholdEntry> entries_;
};

/// The published thresholds for seven tests on batches of 200, calibrated by
/// their authors with 5000 simulations. Test 1 targets a false-alarm level of
/// 0.03, tests 2-3 of 0.02, tests 4-7 of 0.01.
inline const ThresholdTable& published_thresholds() {
    static const ThresholdTable table = [] {
        constexpr std::size_t n = 200;
        constexpr std::size_t reps = 5000;
        const double alphas[7] = {0.03, 0.02, 0.02, 0.01, 0.01, 0.01, 0.01};
        const double thresholds[7] = {7.0089, 7.5745, 7.3684, 8.3876,
                                      8.1206, 8.0292, 7.9153};
        ThresholdTable t;
        for (int i = 0; i < 7; ++i) {
            t.set(n, i + 1, ThresholdEntry{alphas[i], thresholds[i], reps, 0});
        }
        return t;
    }();
    return table;
}

inline constexpr std::string_view thresholds_header = "stepshift-thresholds v1";

inline std::string encode_threshold_table(const ThresholdTable& table) {
    std::string out;
    out += thresholds_header;
    out += '\n';
    for (const auto& [key, entry] : table.entries()) {
        out += std::to_string(key.first);
        out += '\t';
        out += std::to_string(key.second);
        out += '\t';
        out += detail::format_double(entry.alpha);
        out += '\t';
        out += detail::format_double(entry.threshold);
        out += '\t';
        out += std::to_string(entry.replications);
        out += '\t';
        out += std::to_string(entry.seed);
        out += '\n';
    }
    return out;
}

inline void save_threshold_table(const ThresholdTable& table,
                                 const std::filesystem::path& path) {
    detail::atomic_write(path, encode_threshold_table(table));
}

inline ThresholdTable parse_threshold_table(std::istream& in, const std::string& name) {
    const auto fail = [&](std::size_t line, const std::string& what) -> std::runtime_error {
        return std::runtime_error(name + ":" + std::to_string(line) + ": " + what);
    };
    std::string line;
    if (!std::getline(in, line) || line != thresholds_header) {
        throw fail(1, "expected header '" + std::string(thresholds_header) + "'");
    }
    ThresholdTable table;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const auto tab = line.find('\t', start);
            if (tab == std::string::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, tab - start));
            start = tab + 1;
        }
        if (fields.size() != 6) {
            throw fail(line_no, "expected n, test_index, alpha, threshold, reps, seed");
        }
        try {
            const auto n = static_cast<std::size_t>(detail::parse_u64(fields[0]));
            const auto test_index = static_cast<int>(detail::parse_u64(fields[1]));
            ThresholdEntry entry;
            entry.alpha = detail::parse_double(fields[2]);
            entry.threshold = detail::parse_double(fields[3]);
            entry.replications = static_cast<std::size_t>(detail::parse_u64(fields[4]));
            entry.seed = detail::parse_u64(fields[5]);
            table.set(n, test_index, entry);
        } catch (const std::invalid_argument& e) {
            throw fail(line_no, e.what());
        }
    }
    return table;
}

inline ThresholdTable load_threshold_table(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return parse_threshold_table(in, path.string());
}

} // namespace stepshift
