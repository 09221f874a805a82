#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stepshift/calibration.hpp"
#include "stepshift/datagen.hpp"
#include "stepshift/detail/parallel.hpp"
#include "stepshift/detail/text_io.hpp"
#include "stepshift/detector.hpp"
#include "stepshift/normalization.hpp"

namespace stepshift {

/// Largest tolerance of the precision coverage curves, P(|estimate - truth| <= k).
inline constexpr std::size_t max_coverage_tolerance = 25;

struct StudyConfig {
    DetectorOptions detector;
    std::size_t norm_replications = 5000;
    std::uint64_t norm_seed = 1;
    bool smooth_tables = true;
    /// Normalize child tests by the root-length table mapped proportionally
    /// instead of estimating a table per child length.
    bool reuse_root_table = false;
    unsigned threads = 0;
    std::filesystem::path cache_dir;
};

struct AccuracyCell {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double std_error = std::numeric_limits<double>::quiet_NaN();
};

/// Replication summary of estimated change locations. Statistics condition
/// on the replications that detected exactly R change points, matched to the
/// true ones in sorted order; matched counts that conditioning.
struct AccuracyReport {
    ShiftDesign design;
    StudyConfig config;
    std::size_t replications = 0;
    std::uint64_t seed = 0;
    std::size_t matched = 0;
    /// Fraction of replications detecting exactly R change points.
    double detection_rate = 0.0;
    /// Fraction of replications detecting more than R change points.
    double false_alarm_rate = 0.0;
    std::vector<AccuracyCell> per_change;
};

/// Coverage curves: coverage[r][k] = P(|estimate_r - truth_r| <= k), over the
/// same exactly-R conditioning as the accuracy report.
struct PrecisionReport {
    ShiftDesign design;
    StudyConfig config;
    std::size_t replications = 0;
    std::uint64_t seed = 0;
    std::size_t matched = 0;
    double detection_rate = 0.0;
    double false_alarm_rate = 0.0;
    std::vector<std::array<double, max_coverage_tolerance + 1>> coverage;
};

namespace detail {

inline std::string design_digest_text(const ShiftDesign& design) {
    std::string text;
    text += "m=" + std::to_string(design.m);
    text += ";R=" + std::to_string(design.R);
    text += ";mu0=" + format_double(design.mu0);
    text += ";delta=" + format_double(design.delta);
    text += ";sigma=" + format_double(design.sigma);
    text += ";boundaries=";
    for (std::size_t i = 0; i < design.boundaries.size(); ++i) {
        if (i > 0) {
            text += ',';
        }
        text += std::to_string(design.boundaries[i]);
    }
    return text;
}

inline std::string study_digest_text(const ShiftDesign& design, const StudyConfig& config,
                                     std::size_t replications, std::uint64_t seed) {
    std::string text = design_digest_text(design);
    text += ";reps=" + std::to_string(replications);
    text += ";seed=" + std::to_string(seed);
    text += ";min_segment=" + std::to_string(config.detector.min_segment_length);
    text += ";budget=" + std::to_string(config.detector.budget);
    text += ";max_depth=" + std::to_string(config.detector.max_depth);
    text += ";norm_reps=" + std::to_string(config.norm_replications);
    text += ";norm_seed=" + std::to_string(config.norm_seed);
    text += ";smoothed=" + std::to_string(config.smooth_tables ? 1 : 0);
    text += ";reuse_root=" + std::to_string(config.reuse_root_table ? 1 : 0);
    text += ";thresholds=published";
    return text;
}

inline std::string hex64(std::uint64_t value) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[value & 0xF];
        value >>= 4;
    }
    return out;
}

} // namespace detail

inline std::string study_config_hash(const ShiftDesign& design, const StudyConfig& config,
                                     std::size_t replications, std::uint64_t seed) {
    return detail::hex64(
        detail::fnv1a(detail::study_digest_text(design, config, replications, seed)));
}

/// Runs the accuracy and precision studies. One runner owns one table cache,
/// so consecutive studies share every expectation table they touch. Tests use
/// the published thresholds, matching the studies those thresholds came from.
class StudyRunner {
public:
    explicit StudyRunner(StudyConfig config)
        : config_(std::move(config)),
          cache_(config_.norm_seed, config_.norm_replications,
                 TableEstimateOptions{config_.smooth_tables, config_.threads},
                 config_.cache_dir) {}

    const StudyConfig& config() const { return config_; }
    NormalizationCache& cache() { return cache_; }

    /// Change points of every replication, indexed by replication.
    std::vector<std::vector<std::size_t>> run_replications(const ShiftDesign& design,
                                                           std::size_t replications,
                                                           std::uint64_t seed) {
        auto& tables = source_for(design.m);
        std::vector<std::vector<std::size_t>> detections(replications);
        detail::for_each_chunk(
            replications, detail::replication_chunk, config_.threads,
            [&](std::size_t, std::size_t begin, std::size_t end) {
                for (std::size_t rep = begin; rep < end; ++rep) {
                    const auto series = generate(design, seed, rep);
                    detections[rep] =
                        segment(series, tables, thresholds_, config_.detector)
                            .change_points;
                }
            });
        return detections;
    }

    AccuracyReport accuracy_study(const ShiftDesign& design, std::size_t replications,
                                  std::uint64_t seed) {
        require_replications(replications);
        const auto detections = run_replications(design, replications, seed);

        AccuracyReport report;
        report.design = design;
        report.config = config_;
        report.replications = replications;
        report.seed = seed;
        fill_rates(report, detections, design.R);
        report.per_change.resize(design.R);
        if (design.R == 0 || report.matched == 0) {
            return report;
        }

        std::vector<detail::CompensatedSum> sums(design.R);
        std::vector<detail::CompensatedSum> sq_sums(design.R);
        for (const auto& points : detections) {
            if (points.size() != design.R) {
                continue;
            }
            for (std::size_t r = 0; r < design.R; ++r) {
                const auto value = static_cast<double>(points[r]);
                sums[r].add(value);
                sq_sums[r].add(value * value);
            }
        }
        const auto matched = static_cast<double>(report.matched);
        for (std::size_t r = 0; r < design.R; ++r) {
            const double mean = sums[r].value() / matched;
            report.per_change[r].mean = mean;
            if (report.matched > 1) {
                const double ss = std::max(0.0, sq_sums[r].value() - matched * mean * mean);
                report.per_change[r].std_error = std::sqrt(ss / (matched - 1.0));
            }
        }
        return report;
    }

    PrecisionReport precision_study(const ShiftDesign& design, std::size_t replications,
                                    std::uint64_t seed) {
        require_replications(replications);
        const auto detections = run_replications(design, replications, seed);

        PrecisionReport report;
        report.design = design;
        report.config = config_;
        report.replications = replications;
        report.seed = seed;
        fill_rates(report, detections, design.R);
        report.coverage.assign(design.R, {});
        if (design.R == 0 || report.matched == 0) {
            return report;
        }

        for (const auto& points : detections) {
            if (points.size() != design.R) {
                continue;
            }
            for (std::size_t r = 0; r < design.R; ++r) {
                const auto truth = static_cast<double>(design.boundaries[r]);
                const auto miss = std::abs(static_cast<double>(points[r]) - truth);
                if (miss <= static_cast<double>(max_coverage_tolerance)) {
                    report.coverage[r][static_cast<std::size_t>(miss)] += 1.0;
                }
            }
        }
        const auto matched = static_cast<double>(report.matched);
        for (auto& curve : report.coverage) {
            double running = 0.0;
            for (auto& cell : curve) {
                running += cell;
                cell = running / matched;
            }
        }
        return report;
    }

private:
    static void require_replications(std::size_t replications) {
        if (replications < 100) {
            throw std::invalid_argument("study: need at least 100 replications");
        }
    }

    template <typename Report>
    static void fill_rates(Report& report,
                           const std::vector<std::vector<std::size_t>>& detections,
                           std::size_t R) {
        std::size_t matched = 0;
        std::size_t over = 0;
        for (const auto& points : detections) {
            matched += points.size() == R;
            over += points.size() > R;
        }
        report.matched = matched;
        const auto total = static_cast<double>(detections.size());
        report.detection_rate = static_cast<double>(matched) / total;
        report.false_alarm_rate = static_cast<double>(over) / total;
    }

    NormalizationSource& source_for(std::size_t root_length) {
        if (!config_.reuse_root_table) {
            return cache_;
        }
        std::lock_guard lock(mutex_);
        auto& slot = root_sources_[root_length];
        if (!slot) {
            slot = std::make_unique<RootTableSource>(cache_.table_for(root_length));
        }
        return *slot;
    }

    StudyConfig config_;
    NormalizationCache cache_;
    PublishedThresholds thresholds_;
    std::map<std::size_t, std::unique_ptr<RootTableSource>> root_sources_;
    std::mutex mutex_;
};

namespace detail {

template <typename Report>
void append_report_metadata(std::string& out, const Report& report,
                            std::string_view kind) {
    out += "# stepshift-";
    out += kind;
    out += " v1\n";
    out += "# design: " + design_digest_text(report.design) + "\n";
    out += "# replications=" + std::to_string(report.replications) +
           " seed=" + std::to_string(report.seed) + "\n";
    const auto& c = report.config;
    out += "# detector: min_segment_length=" +
           std::to_string(c.detector.min_segment_length) +
           " budget=" + std::to_string(c.detector.budget) +
           " max_depth=" + std::to_string(c.detector.max_depth) + "\n";
    out += "# normalization: reps=" + std::to_string(c.norm_replications) +
           " seed=" + std::to_string(c.norm_seed) +
           " smoothed=" + std::to_string(c.smooth_tables ? 1 : 0) +
           " reuse_root_table=" + std::to_string(c.reuse_root_table ? 1 : 0) + "\n";
    out += "# thresholds: published defaults\n";
    out += "# conditioning: statistics cover the " + std::to_string(report.matched) +
           " replications that detected exactly R change points, matched in sorted "
           "order\n";
    out += "# detection_rate=" + format_double(report.detection_rate) +
           " false_alarm_rate=" + format_double(report.false_alarm_rate) + "\n";
    out += "# config_hash=" +
           study_config_hash(report.design, report.config, report.replications,
                             report.seed) +
           "\n";
}

} // namespace detail

inline std::string encode_accuracy_report(const AccuracyReport& report) {
    std::string out;
    detail::append_report_metadata(out, report, "accuracy");
    out += "tau\tmean\tstd_error\n";
    for (std::size_t r = 0; r < report.per_change.size(); ++r) {
        out += std::to_string(report.design.boundaries[r]);
        out += '\t';
        out += detail::format_double(report.per_change[r].mean);
        out += '\t';
        out += detail::format_double(report.per_change[r].std_error);
        out += '\n';
    }
    return out;
}

inline std::string encode_precision_report(const PrecisionReport& report) {
    std::string out;
    detail::append_report_metadata(out, report, "precision");
    out += "k";
    for (const auto boundary : report.design.boundaries) {
        out += "\ttau" + std::to_string(boundary);
    }
    out += '\n';
    for (std::size_t k = 0; k <= max_coverage_tolerance; ++k) {
        out += std::to_string(k);
        for (const auto& curve : report.coverage) {
            out += '\t';
            out += detail::format_double(curve[k]);
        }
        out += '\n';
    }
    return out;
}

inline void save_accuracy_report(const AccuracyReport& report,
                                 const std::filesystem::path& path) {
    detail::atomic_write(path, encode_accuracy_report(report));
}

inline void save_precision_report(const PrecisionReport& report,
                                  const std::filesystem::path& path) {
    detail::atomic_write(path, encode_precision_report(report));
}

} // namespace stepshift
