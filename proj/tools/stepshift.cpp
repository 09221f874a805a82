// Command-line front end: analyze batches for mean shifts, calibrate
// thresholds, generate synthetic batches, run the accuracy/precision
// studies, and dump chart data.
//
// Exit codes: 0 = ran, no change detected; 1 = change(s) detected;
// 2 = usage or data error.

#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stepshift.hpp"

namespace {

namespace fs = std::filesystem;
using namespace stepshift;

constexpr int exit_no_change = 0;
constexpr int exit_change = 1;
constexpr int exit_error = 2;

fs::path default_cache_dir() {
    if (const char* env = std::getenv("STEPSHIFT_CACHE"); env && *env) {
        return env;
    }
    if (const char* xdg = std::getenv("XDG_CACHE_HOME"); xdg && *xdg) {
        return fs::path(xdg) / "stepshift";
    }
    if (const char* home = std::getenv("HOME"); home && *home) {
        return fs::path(home) / ".cache" / "stepshift";
    }
    return fs::path(".stepshift-cache");
}

struct CommonOptions {
    std::uint64_t seed = 1;
    std::uint64_t norm_seed = 1;
    std::size_t norm_reps = 5000;
    unsigned threads = 0;
    std::string cache_dir;
    bool no_smooth = false;
    bool reuse_root_table = false;
    bool strict = false;
    bool no_cache = false;
};

void add_cache_options(CLI::App& cmd, CommonOptions& opt) {
    cmd.add_option("--cache-dir", opt.cache_dir,
                   "cache directory (default: $STEPSHIFT_CACHE, else the user cache "
                   "directory)");
    cmd.add_flag("--no-cache", opt.no_cache, "do not read or write cache files");
    cmd.add_option("--norm-reps", opt.norm_reps,
                   "replications per expectation table (default 5000)")
        ->check(CLI::Range(std::size_t{100}, std::size_t{10000000}));
    cmd.add_option("--norm-seed", opt.norm_seed, "seed for expectation tables");
    cmd.add_flag("--no-smooth", opt.no_smooth,
                 "use raw expectation curves without monotone smoothing");
    cmd.add_option("--threads", opt.threads, "worker threads (0 = all cores)");
}

fs::path resolve_cache_dir(const CommonOptions& opt) {
    if (opt.no_cache) {
        return {};
    }
    return opt.cache_dir.empty() ? default_cache_dir() : fs::path(opt.cache_dir);
}

ThresholdTable load_cached_thresholds(const fs::path& cache_dir) {
    if (cache_dir.empty()) {
        return {};
    }
    const auto path = cache_dir / "thresholds.tsv";
    if (!fs::exists(path)) {
        return {};
    }
    return load_threshold_table(path);
}

void warn(const std::string& message) { std::cerr << "warning: " << message << "\n"; }

std::string format_num(double v) { return detail::format_double(v); }

void write_chart_file(const fs::path& path, const SplitStatistics& split,
                      double threshold, const NormalizationTable& table) {
    std::string out;
    out += "# stepshift-chart v1\n";
    out += "# n=" + std::to_string(split.segment_length) +
           " norm_reps=" + std::to_string(table.replications) +
           " norm_seed=" + std::to_string(table.seed) +
           " smoothed=" + std::to_string(table.smoothed ? 1 : 0) + "\n";
    out += "m1\tlrt\tnlrt\tthreshold\n";
    for (std::size_t i = 0; i < split.lrt.size(); ++i) {
        out += std::to_string(i + SplitStatistics::min_m1);
        out += '\t';
        out += format_num(split.lrt[i]);
        out += '\t';
        out += format_num(split.nlrt[i]);
        out += '\t';
        out += format_num(threshold);
        out += '\n';
    }
    detail::atomic_write(path, out);
}

int run_analyze(const std::string& input, const std::string& chart_path,
                const CommonOptions& opt, const DetectorOptions& detector) {
    auto values = read_series_file(input);
    if (values.size() < 4) {
        throw std::runtime_error(input + ": need at least 4 observations, found " +
                                 std::to_string(values.size()));
    }
    const Series series(std::move(values));

    const auto cache_dir = resolve_cache_dir(opt);
    NormalizationCache tables(opt.norm_seed, opt.norm_reps,
                              TableEstimateOptions{!opt.no_smooth, opt.threads},
                              cache_dir);
    CalibratedThresholds thresholds(load_cached_thresholds(cache_dir), opt.strict, warn);

    std::unique_ptr<RootTableSource> root_source;
    NormalizationSource* source = &tables;
    if (opt.reuse_root_table) {
        root_source = std::make_unique<RootTableSource>(tables.table_for(series.size()));
        source = root_source.get();
    }

    const auto detection = segment(series, *source, thresholds, detector);

    for (const auto& t : detection.tests) {
        std::cout << "test " << t.test_index << " [" << t.lo + 1 << ".." << t.hi << "] ";
        if (t.too_short) {
            std::cout << "skipped: segment too short\n";
            continue;
        }
        std::cout << "max_nlrt=" << format_num(t.max_nlrt)
                  << " threshold=" << format_num(t.threshold_used);
        if (t.signaled) {
            std::cout << " -> shift after observation " << t.split_at;
        } else {
            std::cout << " -> no signal";
        }
        std::cout << "\n";
    }
    if (detection.change_points.empty()) {
        std::cout << "no change detected\n";
    } else {
        std::cout << "change points:";
        for (const auto cp : detection.change_points) {
            std::cout << ' ' << cp;
        }
        std::cout << "\n";
    }

    if (!chart_path.empty()) {
        const auto& table = source->table_for(series.size());
        const auto split = normalize(split_scan(series, 0, series.size()), table);
        const double threshold = thresholds.threshold_for(series.size(), 1);
        write_chart_file(chart_path, split, threshold, table);
    }
    return detection.change_points.empty() ? exit_no_change : exit_change;
}

int run_calibrate(std::size_t n, std::vector<double> alphas, std::size_t reps,
                  const CommonOptions& opt) {
    if (alphas.empty()) {
        alphas = {0.03, 0.02, 0.02, 0.01, 0.01, 0.01, 0.01};
    }
    const auto cache_dir = resolve_cache_dir(opt);

    NormalizationCache tables(opt.norm_seed, opt.norm_reps,
                              TableEstimateOptions{!opt.no_smooth, opt.threads},
                              cache_dir);
    auto thresholds = load_cached_thresholds(cache_dir);

    bool dirty = false;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        const int test_index = static_cast<int>(i) + 1;
        const double alpha = alphas[i];
        if (const auto* entry = thresholds.find(n, test_index);
            entry && entry->alpha == alpha && entry->replications == reps &&
            entry->seed == opt.seed) {
            std::cout << "n=" << n << " test " << test_index << " alpha="
                      << format_num(alpha) << " threshold="
                      << format_num(entry->threshold) << " (cached)\n";
            continue;
        }
        const auto result = calibrate_threshold(n, alpha, tables.table_for(n), reps,
                                                opt.seed, opt.threads);
        if (!result.reliable) {
            warn("alpha*replications < 10; the calibrated quantile is unreliable");
        }
        thresholds.set(n, test_index,
                       ThresholdEntry{alpha, result.threshold, reps, opt.seed});
        dirty = true;
        std::cout << "n=" << n << " test " << test_index << " alpha=" << format_num(alpha)
                  << " threshold=" << format_num(result.threshold) << "\n";
    }
    if (dirty && !cache_dir.empty()) {
        save_threshold_table(thresholds, cache_dir / "thresholds.tsv");
    }
    return exit_no_change;
}

ShiftDesign build_design(std::size_t m, std::size_t R, double mu0, double delta,
                         double sigma, bool random_boundaries, std::size_t min_gap,
                         std::uint64_t seed) {
    if (random_boundaries) {
        return make_random_design(m, R, mu0, delta, sigma, min_gap, seed);
    }
    return make_design(m, R, mu0, delta, sigma);
}

int run_simulate(const ShiftDesign& design, std::uint64_t seed,
                 const std::string& out_path) {
    const auto series = generate(design, seed);
    std::vector<std::string> comments;
    comments.push_back("m=" + std::to_string(design.m) + " R=" + std::to_string(design.R) +
                       " mu0=" + format_num(design.mu0) +
                       " delta=" + format_num(design.delta) +
                       " sigma=" + format_num(design.sigma) +
                       " seed=" + std::to_string(seed));
    std::string boundary_line = "boundaries:";
    for (const auto b : design.boundaries) {
        boundary_line += ' ' + std::to_string(b);
    }
    comments.push_back(boundary_line);
    if (out_path == "-") {
        for (const auto& c : comments) {
            std::cout << "# " << c << "\n";
        }
        for (const double v : series.values()) {
            std::cout << format_num(v) << "\n";
        }
    } else {
        write_series_file(out_path, series.values(), comments);
    }
    return exit_no_change;
}

StudyConfig build_study_config(const CommonOptions& opt, const DetectorOptions& detector) {
    StudyConfig config;
    config.detector = detector;
    config.norm_replications = opt.norm_reps;
    config.norm_seed = opt.norm_seed;
    config.smooth_tables = !opt.no_smooth;
    config.reuse_root_table = opt.reuse_root_table;
    config.threads = opt.threads;
    config.cache_dir = resolve_cache_dir(opt);
    return config;
}

int run_evaluate_accuracy(const ShiftDesign& design, std::size_t reps,
                          const CommonOptions& opt, const DetectorOptions& detector,
                          const std::string& out_path) {
    StudyRunner runner(build_study_config(opt, detector));
    const auto report = runner.accuracy_study(design, reps, opt.seed);
    const auto text = encode_accuracy_report(report);
    if (out_path == "-") {
        std::cout << text;
    } else {
        detail::atomic_write(out_path, text);
        std::cout << "wrote " << out_path << "\n";
    }
    return exit_no_change;
}

int run_evaluate_precision(const ShiftDesign& design, std::size_t reps,
                           const CommonOptions& opt, const DetectorOptions& detector,
                           const std::string& out_path) {
    StudyRunner runner(build_study_config(opt, detector));
    const auto report = runner.precision_study(design, reps, opt.seed);
    const auto text = encode_precision_report(report);
    if (out_path == "-") {
        std::cout << text;
    } else {
        detail::atomic_write(out_path, text);
        std::cout << "wrote " << out_path << "\n";
    }
    return exit_no_change;
}

int run_chart(const std::string& input, const std::string& out_path,
              const CommonOptions& opt) {
    auto values = read_series_file(input);
    if (values.size() < 4) {
        throw std::runtime_error(input + ": need at least 4 observations, found " +
                                 std::to_string(values.size()));
    }
    const Series series(std::move(values));
    const auto cache_dir = resolve_cache_dir(opt);
    NormalizationCache tables(opt.norm_seed, opt.norm_reps,
                              TableEstimateOptions{!opt.no_smooth, opt.threads},
                              cache_dir);
    CalibratedThresholds thresholds(load_cached_thresholds(cache_dir), opt.strict, warn);
    const auto& table = tables.table_for(series.size());
    const auto split = normalize(split_scan(series, 0, series.size()), table);
    write_chart_file(out_path, split, thresholds.threshold_for(series.size(), 1), table);
    std::cout << "wrote " << out_path << "\n";
    return exit_no_change;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Retrospective mean-shift detection for i.i.d. Gaussian batches"};
    app.require_subcommand(1);

    CommonOptions opt;
    DetectorOptions detector;

    std::string input;
    std::string out_path = "-";
    std::string chart_path;
    std::size_t n = 200;
    std::size_t m = 200;
    std::size_t R = 0;
    double mu0 = 0.0;
    double delta = 0.0;
    double sigma = 1.0;
    std::size_t reps = 1000;
    std::vector<double> alphas;
    bool random_boundaries = false;
    std::size_t min_gap = 10;

    const auto add_detector_options = [&](CLI::App& cmd) {
        cmd.add_option("--min-segment", detector.min_segment_length,
                       "shortest testable segment (default 8)")
            ->check(CLI::Range(std::size_t{4}, std::size_t{1000000}));
        cmd.add_option("--budget", detector.budget, "maximum number of tests (default 7)");
        cmd.add_option("--depth", detector.max_depth,
                       "maximum segmentation depth (default 3)");
        cmd.add_flag("--reuse-root-table", opt.reuse_root_table,
                     "reuse the root expectation table for sub-segments");
        cmd.add_flag("--strict", opt.strict,
                     "fail instead of falling back to published thresholds");
    };
    const auto add_design_options = [&](CLI::App& cmd) {
        cmd.add_option("--m", m, "batch length (default 200)");
        cmd.add_option("--R", R, "number of mean shifts (default 0)");
        cmd.add_option("--mu0", mu0, "initial mean (default 0)");
        cmd.add_option("--delta", delta, "shift size (required when R > 0)");
        cmd.add_option("--sigma", sigma, "noise standard deviation (default 1)");
        cmd.add_flag("--random-boundaries", random_boundaries,
                     "draw shift locations uniformly instead of evenly spaced");
        cmd.add_option("--min-gap", min_gap,
                       "minimum regime length with --random-boundaries (default 10)");
    };

    auto* analyze = app.add_subcommand("analyze", "detect mean shifts in a batch file");
    analyze->add_option("input", input, "series file, one observation per line")
        ->required();
    analyze->add_option("--chart", chart_path, "write root-segment chart data here");
    add_detector_options(*analyze);
    add_cache_options(*analyze, opt);

    auto* calibrate = app.add_subcommand(
        "calibrate", "estimate expectation tables and simulate thresholds");
    calibrate->add_option("--n", n, "segment length to calibrate (default 200)")
        ->check(CLI::Range(std::size_t{4}, std::size_t{1000000}));
    calibrate->add_option("--alphas", alphas,
                          "per-test false-alarm levels (default: the published seven)");
    calibrate->add_option("--reps", reps, "threshold simulation replications")
        ->default_val(std::size_t{5000});
    calibrate->add_option("--seed", opt.seed, "threshold simulation seed");
    add_cache_options(*calibrate, opt);

    auto* simulate = app.add_subcommand("simulate", "generate a synthetic batch");
    add_design_options(*simulate);
    simulate->add_option("--seed", opt.seed, "generator seed");
    simulate->add_option("--out", out_path, "output file (default: stdout)");

    auto* evaluate = app.add_subcommand("evaluate", "run replication studies");
    evaluate->require_subcommand(1);
    auto* accuracy = evaluate->add_subcommand(
        "accuracy", "mean and spread of estimated change locations");
    auto* precision = evaluate->add_subcommand(
        "precision", "coverage P(|estimate - truth| <= k) for k = 0..25");
    for (auto* study : {accuracy, precision}) {
        add_design_options(*study);
        study->add_option("--reps", reps, "study replications (default 1000)");
        study->add_option("--seed", opt.seed, "study seed");
        study->add_option("--out", out_path, "output file (default: stdout)");
        add_detector_options(*study);
        add_cache_options(*study, opt);
    }

    auto* chart = app.add_subcommand("chart", "write (m1, lrt, nlrt, threshold) rows");
    chart->add_option("input", input, "series file")->required();
    chart->add_option("--out", out_path, "output file")->required();
    chart->add_flag("--strict", opt.strict,
                    "fail instead of falling back to published thresholds");
    add_cache_options(*chart, opt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_error;
    }

    try {
        if (app.got_subcommand(analyze)) {
            return run_analyze(input, chart_path, opt, detector);
        }
        if (app.got_subcommand(calibrate)) {
            return run_calibrate(n, alphas, reps, opt);
        }
        if (app.got_subcommand(simulate)) {
            return run_simulate(
                build_design(m, R, mu0, delta, sigma, random_boundaries, min_gap, opt.seed),
                opt.seed, out_path);
        }
        if (app.got_subcommand(evaluate)) {
            const auto design =
                build_design(m, R, mu0, delta, sigma, random_boundaries, min_gap, opt.seed);
            if (evaluate->got_subcommand(accuracy)) {
                return run_evaluate_accuracy(design, reps, opt, detector, out_path);
            }
            return run_evaluate_precision(design, reps, opt, detector, out_path);
        }
        if (app.got_subcommand(chart)) {
            return run_chart(input, out_path, opt);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_error;
    }
    return exit_error;
}
