#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stepshift/detail/parallel.hpp"
#include "stepshift/detail/text_io.hpp"
#include "stepshift/isotonic.hpp"
#include "stepshift/random.hpp"
#include "stepshift/series.hpp"
#include "stepshift/split_scan.hpp"

namespace stepshift {

/// In-control expectation of the split statistic, estimated by simulation.
/// e_lrt[i] is E[lrt] at m1 = i + 2; the curve is largest near the segment
/// ends and flattest around the middle. Dividing an observed lrt profile by
/// this table puts every split position on the same scale.
struct NormalizationTable {
    std::size_t segment_length = 0;
    std::vector<double> e_lrt;
    std::size_t replications = 0;
    std::uint64_t seed = 0;
    bool smoothed = true;

    double at(std::size_t m1) const { return e_lrt.at(m1 - SplitStatistics::min_m1); }
};

struct TableEstimateOptions {
    bool smooth = true;
    unsigned threads = 0;
};

/// estimate_table plus the raw per-m1 means and their Monte Carlo standard
/// errors, for callers that need to reason about estimation noise.
struct TableEstimate {
    NormalizationTable table;
    std::vector<double> raw_mean;
    std::vector<double> std_error;
};

namespace detail {

/// Pivot index of the expectation curve: m1 = floor(n/2), the flat bottom of
/// the U (the curve is symmetric under m1 -> n - m1).
inline std::size_t u_shape_pivot(std::size_t n) {
    return n / 2 - SplitStatistics::min_m1;
}

inline constexpr std::size_t replication_chunk = 64;

} // namespace detail

inline TableEstimate estimate_table_detailed(std::size_t n, std::size_t replications,
                                             std::uint64_t seed,
                                             TableEstimateOptions options = {}) {
    if (n < 4) {
        throw std::invalid_argument("estimate_table: segment length must be at least 4");
    }
    if (replications < 100) {
        throw std::invalid_argument("estimate_table: need at least 100 replications");
    }

    const std::size_t k = n - 3;
    const std::size_t chunk = detail::replication_chunk;
    const std::size_t chunk_count = (replications + chunk - 1) / chunk;
    std::vector<double> sums(chunk_count * k, 0.0);
    std::vector<double> sq_sums(chunk_count * k, 0.0);

    detail::for_each_chunk(replications, chunk, options.threads,
                           [&](std::size_t c, std::size_t begin, std::size_t end) {
                               double* sum = sums.data() + c * k;
                               double* sq = sq_sums.data() + c * k;
                               std::vector<double> values(n);
                               for (std::size_t rep = begin; rep < end; ++rep) {
                                   auto rng = stream_rng(seed, rep);
                                   fill_standard_normal(values, rng);
                                   const Series series(values);
                                   const auto split = split_scan(series, 0, n);
                                   for (std::size_t i = 0; i < k; ++i) {
                                       sum[i] += split.lrt[i];
                                       sq[i] += split.lrt[i] * split.lrt[i];
                                   }
                               }
                           });

    TableEstimate out;
    out.raw_mean.resize(k);
    out.std_error.resize(k);
    const double r = static_cast<double>(replications);
    for (std::size_t i = 0; i < k; ++i) {
        detail::CompensatedSum total;
        detail::CompensatedSum total_sq;
        for (std::size_t c = 0; c < chunk_count; ++c) {
            total.add(sums[c * k + i]);
            total_sq.add(sq_sums[c * k + i]);
        }
        const double mean = total.value() / r;
        const double var = std::max(0.0, total_sq.value() / r - mean * mean);
        out.raw_mean[i] = mean;
        out.std_error[i] = std::sqrt(var / r);
    }

    out.table.segment_length = n;
    out.table.replications = replications;
    out.table.seed = seed;
    out.table.smoothed = options.smooth;
    out.table.e_lrt = options.smooth
                          ? smooth_u_shape(out.raw_mean, detail::u_shape_pivot(n))
                          : out.raw_mean;
    return out;
}

inline NormalizationTable estimate_table(std::size_t n, std::size_t replications,
                                         std::uint64_t seed,
                                         TableEstimateOptions options = {}) {
    return estimate_table_detailed(n, replications, seed, options).table;
}

/// Divides the lrt profile by the expectation table and settles the split
/// decision fields. Ties in the normalized maximum resolve to the smallest
/// m1.
inline SplitStatistics normalize(SplitStatistics split, const NormalizationTable& table) {
    if (table.segment_length != split.segment_length) {
        throw std::invalid_argument(
            "normalize: table length " + std::to_string(table.segment_length) +
            " does not match segment length " + std::to_string(split.segment_length));
    }
    split.nlrt.resize(split.lrt.size());
    std::size_t best = 0;
    for (std::size_t i = 0; i < split.lrt.size(); ++i) {
        split.nlrt[i] = split.lrt[i] / table.e_lrt[i];
        if (split.nlrt[i] > split.nlrt[best]) {
            best = i;
        }
    }
    split.argmax_m1 = best + SplitStatistics::min_m1;
    split.max_nlrt = split.nlrt[best];
    return split;
}

inline constexpr std::string_view normtable_header = "stepshift-normtable v1";

inline std::string encode_normalization_table(const NormalizationTable& table) {
    std::string out;
    out += normtable_header;
    out += '\n';
    out += "n=" + std::to_string(table.segment_length);
    out += " reps=" + std::to_string(table.replications);
    out += " seed=" + std::to_string(table.seed);
    out += " smoothed=";
    out += table.smoothed ? '1' : '0';
    out += '\n';
    for (std::size_t i = 0; i < table.e_lrt.size(); ++i) {
        out += std::to_string(i + SplitStatistics::min_m1);
        out += '\t';
        out += detail::format_double(table.e_lrt[i]);
        out += '\n';
    }
    return out;
}

inline void save_normalization_table(const NormalizationTable& table,
                                     const std::filesystem::path& path) {
    detail::atomic_write(path, encode_normalization_table(table));
}

inline NormalizationTable parse_normalization_table(std::istream& in,
                                                    const std::string& name) {
    const auto fail = [&](std::size_t line, const std::string& what) -> std::runtime_error {
        return std::runtime_error(name + ":" + std::to_string(line) + ": " + what);
    };
    std::string line;
    if (!std::getline(in, line) || line != normtable_header) {
        throw fail(1, "expected header '" + std::string(normtable_header) + "'");
    }
    if (!std::getline(in, line)) {
        throw fail(2, "missing metadata line");
    }
    NormalizationTable table;
    {
        std::istringstream meta(line);
        std::string field;
        bool have_n = false, have_reps = false, have_seed = false, have_smoothed = false;
        while (meta >> field) {
            const auto eq = field.find('=');
            if (eq == std::string::npos) {
                throw fail(2, "malformed metadata field '" + field + "'");
            }
            const auto key = field.substr(0, eq);
            const auto value = field.substr(eq + 1);
            try {
                if (key == "n") {
                    table.segment_length = detail::parse_u64(value);
                    have_n = true;
                } else if (key == "reps") {
                    table.replications = detail::parse_u64(value);
                    have_reps = true;
                } else if (key == "seed") {
                    table.seed = detail::parse_u64(value);
                    have_seed = true;
                } else if (key == "smoothed") {
                    table.smoothed = detail::parse_u64(value) != 0;
                    have_smoothed = true;
                } else {
                    throw fail(2, "unknown metadata key '" + key + "'");
                }
            } catch (const std::invalid_argument& e) {
                throw fail(2, e.what());
            }
        }
        if (!(have_n && have_reps && have_seed && have_smoothed)) {
            throw fail(2, "metadata must define n, reps, seed, smoothed");
        }
    }
    if (table.segment_length < 4) {
        throw fail(2, "segment length must be at least 4");
    }

    table.e_lrt.resize(table.segment_length - 3);
    std::vector<bool> seen(table.e_lrt.size(), false);
    std::size_t line_no = 2;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw fail(line_no, "expected m1<TAB>e_lrt");
        }
        std::size_t m1 = 0;
        double value = 0.0;
        try {
            m1 = detail::parse_u64(line.substr(0, tab));
            value = detail::parse_double(line.substr(tab + 1));
        } catch (const std::invalid_argument& e) {
            throw fail(line_no, e.what());
        }
        if (m1 < SplitStatistics::min_m1 || m1 > table.segment_length - 2) {
            throw fail(line_no, "m1 out of range");
        }
        const auto idx = m1 - SplitStatistics::min_m1;
        if (seen[idx]) {
            throw fail(line_no, "duplicate m1 row");
        }
        seen[idx] = true;
        table.e_lrt[idx] = value;
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
        if (!seen[i]) {
            throw std::runtime_error(name + ": missing row for m1=" +
                                     std::to_string(i + SplitStatistics::min_m1));
        }
    }
    return table;
}

inline NormalizationTable load_normalization_table(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return parse_normalization_table(in, path.string());
}

/// Provider of per-length expectation tables for the segmentation recursion.
class NormalizationSource {
public:
    virtual ~NormalizationSource() = default;
    virtual const NormalizationTable& table_for(std::size_t n) = 0;
};

/// Estimates tables on demand, keyed by segment length, holding them in
/// memory and optionally mirroring them to a cache directory. Lengths below 8
/// admit very few splits, so their tables get 10x the replications to keep
/// relative error comparable. Thread-safe; returned references stay valid for
/// the cache's lifetime.
class NormalizationCache : public NormalizationSource {
public:
    NormalizationCache(std::uint64_t seed, std::size_t replications,
                       TableEstimateOptions options = {},
                       std::filesystem::path cache_dir = {})
        : seed_(seed),
          replications_(replications),
          options_(options),
          cache_dir_(std::move(cache_dir)) {}

    const NormalizationTable& table_for(std::size_t n) override {
        std::lock_guard lock(mutex_);
        if (const auto it = tables_.find(n); it != tables_.end()) {
            return it->second;
        }
        const std::size_t reps = effective_replications(n);
        if (!cache_dir_.empty()) {
            const auto path = file_path(n, reps);
            if (std::filesystem::exists(path)) {
                auto loaded = load_normalization_table(path);
                if (loaded.segment_length == n && loaded.replications == reps &&
                    loaded.seed == seed_ && loaded.smoothed == options_.smooth) {
                    return tables_.emplace(n, std::move(loaded)).first->second;
                }
                // stale or foreign file; fall through and recompute
            }
        }
        auto table = estimate_table(n, reps, seed_, options_);
        if (!cache_dir_.empty()) {
            save_normalization_table(table, file_path(n, reps));
        }
        return tables_.emplace(n, std::move(table)).first->second;
    }

    std::size_t effective_replications(std::size_t n) const {
        return n < 8 ? replications_ * 10 : replications_;
    }

private:
    std::filesystem::path file_path(std::size_t n, std::size_t reps) const {
        std::string name = "normtable-n" + std::to_string(n) + "-r" + std::to_string(reps) +
                           "-s" + std::to_string(seed_) +
                           (options_.smooth ? "-sm1" : "-sm0") + ".tsv";
        return cache_dir_ / name;
    }

    std::uint64_t seed_;
    std::size_t replications_;
    TableEstimateOptions options_;
    std::filesystem::path cache_dir_;
    std::map<std::size_t, NormalizationTable> tables_;
    std::mutex mutex_;
};

/// Reuses one root-length table for every sub-segment length by proportional
/// position mapping: the child's split at m1 borrows the root expectation at
/// round(m1 * n_root / n_child), clamped to the root's admissible range. This
/// trades per-length fidelity for doing no extra simulation, mirroring an
/// analysis that normalizes every test by the same full-batch curve.
class RootTableSource : public NormalizationSource {
public:
    explicit RootTableSource(NormalizationTable root) : root_(std::move(root)) {}

    const NormalizationTable& table_for(std::size_t n) override {
        std::lock_guard lock(mutex_);
        if (n == root_.segment_length) {
            return root_;
        }
        if (const auto it = derived_.find(n); it != derived_.end()) {
            return it->second;
        }
        NormalizationTable table;
        table.segment_length = n;
        table.replications = root_.replications;
        table.seed = root_.seed;
        table.smoothed = root_.smoothed;
        table.e_lrt.resize(n - 3);
        const double scale =
            static_cast<double>(root_.segment_length) / static_cast<double>(n);
        const std::size_t root_max = root_.segment_length - 2;
        for (std::size_t i = 0; i < table.e_lrt.size(); ++i) {
            const double pos = static_cast<double>(i + SplitStatistics::min_m1) * scale;
            auto m1 = static_cast<std::size_t>(std::llround(pos));
            m1 = std::clamp<std::size_t>(m1, SplitStatistics::min_m1, root_max);
            table.e_lrt[i] = root_.at(m1);
        }
        return derived_.emplace(n, std::move(table)).first->second;
    }

    const NormalizationTable& root() const { return root_; }

private:
    NormalizationTable root_;
    std::map<std::size_t, NormalizationTable> derived_;
    std::mutex mutex_;
};

} // namespace stepshift
