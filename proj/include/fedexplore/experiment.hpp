#pragma once

// Config-driven experiment runner: `key = value` config files, cartesian
// sweeps over N, C, P, X and seeds, and CSV result emission.
//
// Config format: one `key = value` per line, `#` starts a comment, list keys
// (N, C, P, X, seed) take comma-separated values. Unknown keys are rejected;
// absent keys keep their defaults (R=32, E=8, B=32, R_c=4).

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "fedexplore/errors.hpp"
#include "fedexplore/orchestrator.hpp"
#include "fedexplore/parallel.hpp"

namespace fedexplore::exp {

enum class Algorithm { Baseline, Proposed, Both };

inline std::string to_string(Algorithm a) {
    switch (a) {
        case Algorithm::Baseline: return "baseline";
        case Algorithm::Proposed: return "proposed";
        case Algorithm::Both: return "both";
    }
    return "?";
}

inline Algorithm parse_algorithm(const std::string& s) {
    if (s == "baseline") return Algorithm::Baseline;
    if (s == "proposed") return Algorithm::Proposed;
    if (s == "both") return Algorithm::Both;
    throw ValidationError("algorithm must be baseline, proposed or both (got '" + s + "')");
}

struct SweepSpec {
    orch::ExperimentConfig base;
    std::vector<std::size_t> clients{40};
    std::vector<std::size_t> clusters{4};
    std::vector<double> poison_percents{0.0};
    std::vector<double> expel_percents{0.0};
    std::vector<std::uint64_t> seeds{1};
    Algorithm algorithm = Algorithm::Both;

    bool single() const {
        return clients.size() == 1 && clusters.size() == 1 && poison_percents.size() == 1 && expel_percents.size() == 1 &&
               seeds.size() == 1;
    }

    orch::ExperimentConfig config(std::size_t n, std::size_t c, double p, double x, std::uint64_t seed) const {
        orch::ExperimentConfig cfg = base;
        cfg.clients = n;
        cfg.clusters = c;
        cfg.poison_percent = p;
        cfg.expel_percent = x;
        cfg.seed = seed;
        return cfg;
    }

    /// The single configuration of a non-list spec.
    orch::ExperimentConfig single_config() const {
        if (!single()) throw ValidationError("config holds value lists; use `sweep`");
        return config(clients[0], clusters[0], poison_percents[0], expel_percents[0], seeds[0]);
    }

    void validate() const {
        if (clients.empty() || clusters.empty() || poison_percents.empty() || expel_percents.empty() || seeds.empty())
            throw ValidationError("every list key needs at least one value");
        for (std::size_t n : clients)
            for (std::size_t c : clusters)
                if (n < c)
                    throw ValidationError("N >= C violated by N = " + std::to_string(n) + ", C = " + std::to_string(c));
        for (std::size_t n : clients)
            for (std::size_t c : clusters)
                for (double p : poison_percents)
                    for (double x : expel_percents) config(n, c, p, x, seeds[0]).validate();
    }
};

namespace detail {
inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) out.push_back(trim(item));
    return out;
}

template <class T>
T parse_number(const std::string& text, std::size_t line, const std::string& key) {
    T value{};
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last || text.empty())
        throw ParseError("line " + std::to_string(line) + ": '" + text + "' is not a valid value for " + key);
    return value;
}

template <>
inline double parse_number<double>(const std::string& text, std::size_t line, const std::string& key) {
    // std::from_chars for double is not available in every libstdc++ we target.
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || text.empty() || !std::isfinite(v))
        throw ParseError("line " + std::to_string(line) + ": '" + text + "' is not a valid number for " + key);
    return v;
}

template <class T>
std::vector<T> parse_list(const std::string& text, std::size_t line, const std::string& key) {
    std::vector<T> out;
    for (const auto& item : split(text, ',')) out.push_back(parse_number<T>(item, line, key));
    if (out.empty()) throw ParseError("line " + std::to_string(line) + ": " + key + " needs at least one value");
    return out;
}

inline pool::Rational parse_rational(const std::string& text, std::size_t line) {
    const auto slash = text.find('/');
    if (slash == std::string::npos) return {parse_number<std::size_t>(text, line, "scale_factor"), 1};
    return {parse_number<std::size_t>(trim(text.substr(0, slash)), line, "scale_factor"),
            parse_number<std::size_t>(trim(text.substr(slash + 1)), line, "scale_factor")};
}
}  // namespace detail

/// Parses the line-oriented config format. Throws ParseError (with the line
/// number) on malformed input and ValidationError on constraint violations.
inline SweepSpec parse_config(const std::string& text) {
    SweepSpec spec;
    orch::ExperimentConfig& b = spec.base;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const auto hash = raw.find('#');
        const std::string body = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ParseError("line " + std::to_string(line) + ": expected `key = value`");
        const std::string key = detail::trim(body.substr(0, eq));
        const std::string value = detail::trim(body.substr(eq + 1));
        if (key.empty()) throw ParseError("line " + std::to_string(line) + ": missing key");
        if (value.empty()) throw ParseError("line " + std::to_string(line) + ": missing value for " + key);
        if (!seen.insert(key).second) throw ParseError("line " + std::to_string(line) + ": duplicate key " + key);

        using detail::parse_list;
        using detail::parse_number;
        if (key == "N") spec.clients = parse_list<std::size_t>(value, line, key);
        else if (key == "C") spec.clusters = parse_list<std::size_t>(value, line, key);
        else if (key == "P") spec.poison_percents = parse_list<double>(value, line, key);
        else if (key == "X") spec.expel_percents = parse_list<double>(value, line, key);
        else if (key == "seed") spec.seeds = parse_list<std::uint64_t>(value, line, key);
        else if (key == "R") b.rounds = parse_number<std::size_t>(value, line, key);
        else if (key == "E") b.epochs = parse_number<std::size_t>(value, line, key);
        else if (key == "B") b.batch_size = parse_number<std::size_t>(value, line, key);
        else if (key == "R_c") b.rounds_per_cluster = parse_number<std::size_t>(value, line, key);
        else if (key == "lr") b.learning_rate = parse_number<double>(value, line, key);
        else if (key == "epsilon") b.epsilon = parse_number<double>(value, line, key);
        else if (key == "classes") b.class_count = parse_number<std::size_t>(value, line, key);
        else if (key == "samples_per_client") b.samples_per_client = parse_number<std::size_t>(value, line, key);
        else if (key == "image_side") b.image_side = parse_number<std::size_t>(value, line, key);
        else if (key == "noise_sigma") b.noise_sigma = parse_number<double>(value, line, key);
        else if (key == "prototype_contrast") b.prototype_contrast = parse_number<double>(value, line, key);
        else if (key == "holdout_size") b.holdout_size = parse_number<std::size_t>(value, line, key);
        else if (key == "test_size") b.test_size = parse_number<std::size_t>(value, line, key);
        else if (key == "reference_epochs") b.reference_epochs = parse_number<std::size_t>(value, line, key);
        else if (key == "dense_width") b.dense_width = parse_number<std::size_t>(value, line, key);
        else if (key == "scale_factor") b.scale_factor = detail::parse_rational(value, line);
        else if (key == "idx_images") b.idx_images = value;
        else if (key == "idx_labels") b.idx_labels = value;
        else if (key == "algorithm") spec.algorithm = parse_algorithm(value);
        else if (key == "aggregation") {
            if (value == "plain_mean") b.aggregation = fed::Aggregation::PlainMean;
            else if (value == "sample_weighted") b.aggregation = fed::Aggregation::SampleWeighted;
            else throw ParseError("line " + std::to_string(line) + ": aggregation must be plain_mean or sample_weighted");
        } else if (key == "attack") {
            if (value == "fgsm") b.attack = data::Attack::Fgsm;
            else if (value == "label_flip") b.attack = data::Attack::LabelFlip;
            else throw ParseError("line " + std::to_string(line) + ": attack must be fgsm or label_flip");
        } else {
            throw ParseError("line " + std::to_string(line) + ": unknown key " + key);
        }
    }
    spec.validate();
    return spec;
}

inline SweepSpec load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

struct ResultRow {
    std::string run_id;
    std::string algorithm;  // "baseline" or "proposed"
    orch::ExperimentConfig config;
    double final_accuracy = 0.0;
    std::vector<orch::TracePoint> trace;
    std::uint64_t message_count = 0;
    std::uint64_t parameter_volume = 0;
    std::size_t survivors = 0;
    std::vector<detect::ExpulsionRow> expulsions;
    std::set<std::size_t> poisoned_clients;
    std::string error;  // empty on success

    bool ok() const noexcept { return error.empty(); }
};

struct Job {
    std::string run_id;
    Algorithm algorithm;  // Baseline or Proposed
    orch::ExperimentConfig config;
    std::size_t dataset_group = 0;
};

/// Enumerates runs in (seed, N, P, [baseline], C, X) order. A baseline does not
/// depend on C or X, so it runs once per (seed, N, P).
inline std::vector<Job> plan_jobs(const SweepSpec& spec) {
    std::vector<Job> jobs;
    std::size_t group = 0;
    auto next_id = [&jobs] {
        char buf[32];
        std::snprintf(buf, sizeof buf, "run%04zu", jobs.size());
        return std::string(buf);
    };
    for (std::uint64_t seed : spec.seeds)
        for (std::size_t n : spec.clients)
            for (double p : spec.poison_percents) {
                if (spec.algorithm != Algorithm::Proposed) {
                    auto cfg = spec.config(n, 1, p, 0.0, seed);
                    jobs.push_back({next_id(), Algorithm::Baseline, cfg, group});
                }
                if (spec.algorithm != Algorithm::Baseline)
                    for (std::size_t c : spec.clusters)
                        for (double x : spec.expel_percents)
                            jobs.push_back({next_id(), Algorithm::Proposed, spec.config(n, c, p, x, seed), group});
                ++group;
            }
    return jobs;
}

inline ResultRow to_row(const Job& job, const orch::RunResult& r) {
    ResultRow row;
    row.run_id = job.run_id;
    row.algorithm = to_string(job.algorithm);
    row.config = job.config;
    row.final_accuracy = r.final_accuracy;
    row.trace = r.trace;
    row.message_count = r.comm.message_count;
    row.parameter_volume = r.comm.parameter_volume;
    row.survivors = r.survivors;
    row.expulsions = r.expulsions.rows;
    row.poisoned_clients = r.poisoned_clients;
    return row;
}

/// Runs every planned job. Datasets are built once per (seed, N, P) group and
/// shared. Independent runs execute on up to `parallelism` threads; rows come
/// back in run-id order and do not depend on the thread count. A failing run
/// yields a row with `error` set and the sweep continues.
inline std::vector<ResultRow> run_sweep(const SweepSpec& spec, std::size_t parallelism,
                                        const std::function<void(const ResultRow&)>& on_done = {}) {
    spec.validate();
    const auto jobs = plan_jobs(spec);
    std::size_t groups = 0;
    for (const auto& j : jobs) groups = std::max(groups, j.dataset_group + 1);
    std::vector<std::optional<data::FederatedDataset>> datasets(groups);
    std::vector<std::string> dataset_errors(groups);
    std::vector<const Job*> group_head(groups, nullptr);
    for (const auto& j : jobs)
        if (!group_head[j.dataset_group]) group_head[j.dataset_group] = &j;
    parallel_for(groups, parallelism, [&](std::size_t g) {
        try {
            datasets[g] = orch::build_dataset(group_head[g]->config);
        } catch (const std::exception& e) {
            dataset_errors[g] = e.what();
        }
    });

    std::vector<ResultRow> rows(jobs.size());
    std::mutex report;
    parallel_for(jobs.size(), parallelism, [&](std::size_t i) {
        const Job& job = jobs[i];
        ResultRow row;
        try {
            if (!datasets[job.dataset_group]) throw Error(dataset_errors[job.dataset_group]);
            orch::ExperimentConfig cfg = job.config;
            cfg.workers = 1;
            const auto& ds = *datasets[job.dataset_group];
            row = to_row(job, job.algorithm == Algorithm::Baseline ? orch::run_baseline(cfg, ds)
                                                                   : orch::run_proposed(cfg, ds));
        } catch (const std::exception& e) {
            row = ResultRow{};
            row.run_id = job.run_id;
            row.algorithm = to_string(job.algorithm);
            row.config = job.config;
            row.final_accuracy = std::nan("");
            row.error = e.what();
        }
        rows[i] = std::move(row);
        if (on_done) {
            std::lock_guard lock(report);
            on_done(rows[i]);
        }
    });
    std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) { return a.run_id < b.run_id; });
    return rows;
}

// ---------------------------------------------------------------------------
// CSV emission

inline const char* results_header =
    "run_id,algorithm,N,C,R,E,B,R_c,P,X,seed,final_accuracy,message_count,parameter_volume,survivors_M";
inline const char* trace_header = "stage,iteration_or_round,cluster_id,accuracy";
inline const char* expulsion_header = "iteration,tp,fp,tn,fn,total_nodes";

inline std::string format_fixed6(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string results_line(const ResultRow& r) {
    const auto& c = r.config;
    std::ostringstream o;
    o << r.run_id << ',' << r.algorithm << ',' << c.clients << ',' << c.clusters << ',' << c.rounds << ',' << c.epochs
      << ',' << c.batch_size << ',' << c.rounds_per_cluster << ',' << format_number(c.poison_percent) << ','
      << format_number(c.expel_percent) << ',' << c.seed << ',' << format_fixed6(r.final_accuracy) << ','
      << r.message_count << ',' << r.parameter_volume << ',' << r.survivors;
    return o.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
    if (!out) throw IoError("write failed for " + path.string());
}

/// Writes results.csv, runs/<id>_trace.csv and runs/<id>_expulsion.csv.
inline void emit_results(const std::vector<ResultRow>& rows, const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "runs", ec);
    if (ec) throw IoError("cannot create " + (out_dir / "runs").string() + ": " + ec.message());
    std::string results = std::string(results_header) + "\n";
    for (const auto& r : rows) {
        results += results_line(r) + "\n";
        std::string trace = std::string(trace_header) + "\n";
        for (const auto& t : r.trace)
            trace += t.stage + "," + std::to_string(t.step) + "," + std::to_string(t.cluster_id) + "," +
                     format_fixed6(t.accuracy) + "\n";
        write_file(out_dir / "runs" / (r.run_id + "_trace.csv"), trace);
        std::string exp = std::string(expulsion_header) + "\n";
        for (const auto& e : r.expulsions)
            exp += std::to_string(e.iteration) + "," + std::to_string(e.true_positive) + "," +
                   std::to_string(e.false_positive) + "," + std::to_string(e.true_negative) + "," +
                   std::to_string(e.false_negative) + "," + std::to_string(e.total_nodes) + "\n";
        write_file(out_dir / "runs" / (r.run_id + "_expulsion.csv"), exp);
    }
    write_file(out_dir / "results.csv", results);
}

// ---------------------------------------------------------------------------
// CSV reading (round-trip checks and downstream tooling)

inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, const std::string& header) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != header) throw FormatError(path.string() + ": unexpected header");
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(detail::split(line, ','));
    return rows;
}

/// Reads results.csv plus each run's trace and expulsion files.
inline std::vector<ResultRow> read_results(const std::filesystem::path& out_dir) {
    std::vector<ResultRow> rows;
    for (const auto& f : read_csv(out_dir / "results.csv", results_header)) {
        if (f.size() != 15) throw FormatError("results.csv: expected 15 columns");
        ResultRow r;
        r.run_id = f[0];
        r.algorithm = f[1];
        r.config.clients = std::stoull(f[2]);
        r.config.clusters = std::stoull(f[3]);
        r.config.rounds = std::stoull(f[4]);
        r.config.epochs = std::stoull(f[5]);
        r.config.batch_size = std::stoull(f[6]);
        r.config.rounds_per_cluster = std::stoull(f[7]);
        r.config.poison_percent = std::stod(f[8]);
        r.config.expel_percent = std::stod(f[9]);
        r.config.seed = std::stoull(f[10]);
        r.final_accuracy = f[11] == "nan" ? std::nan("") : std::stod(f[11]);
        r.message_count = std::stoull(f[12]);
        r.parameter_volume = std::stoull(f[13]);
        r.survivors = std::stoull(f[14]);
        for (const auto& t : read_csv(out_dir / "runs" / (r.run_id + "_trace.csv"), trace_header))
            r.trace.push_back({t.at(0), std::stoull(t.at(1)), std::stoull(t.at(2)), std::stod(t.at(3))});
        for (const auto& e : read_csv(out_dir / "runs" / (r.run_id + "_expulsion.csv"), expulsion_header))
            r.expulsions.push_back({std::stoull(e.at(0)), std::stoull(e.at(1)), std::stoull(e.at(2)),
                                    std::stoull(e.at(3)), std::stoull(e.at(4)), std::stoull(e.at(5))});
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace fedexplore::exp
