// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fedexplore/experiment.hpp"
#include "support.hpp"

using namespace fedexplore;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    int id;
    bool pass;
    std::string detail;
};

std::vector<Verdict> verdicts;

void report(int id, bool pass, const std::string& detail) {
    verdicts.push_back({id, pass, detail});
    std::printf("criterion %d: %s - %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

/// Desk-scale regime shared by criteria 2 to 5.
orch::ExperimentConfig desk(std::uint64_t seed, double p, double x) {
    orch::ExperimentConfig c;
    c.clients = 40;
    c.clusters = 4;
    c.rounds = 16;
    c.epochs = 3;
    c.batch_size = 8;
    c.rounds_per_cluster = 4;
    c.learning_rate = 0.1;
    c.samples_per_client = 100;
    c.image_side = 14;
    c.class_count = 10;
    c.epsilon = 0.5;
    c.poison_percent = p;
    c.expel_percent = x;
    c.seed = seed;
    return c;
}

// Criterion 10 bookkeeping over every run made here.
std::size_t conservation_checks = 0, conservation_violations = 0;

void check_conservation(const orch::RunResult& r, std::size_t n) {
    for (const auto& s : r.membership) {
        ++conservation_checks;
        if (s.alive + s.expelled != n || !s.disjoint) ++conservation_violations;
    }
    for (const auto& row : r.expulsions.rows) {
        ++conservation_checks;
        if (row.true_positive + row.false_positive + row.true_negative + row.false_negative != row.total_nodes)
            ++conservation_violations;
    }
}

void check_conservation(const std::vector<exp::ResultRow>& rows) {
    for (const auto& r : rows)
        for (const auto& row : r.expulsions) {
            ++conservation_checks;
            if (row.true_positive + row.false_positive + row.true_negative + row.false_negative != row.total_nodes)
                ++conservation_violations;
        }
}

void criterion1() {
    const auto b = orch::epoch_budget(32, 8, 8, 4);
    const std::size_t stage2 = b.epochs_per_round * 4 * 7, stage3 = (32 / 2) * 8;
    const bool ok = b.stage2_epochs == 128 && b.epochs_per_round == 4 && stage2 == 112 && stage2 + stage3 == 240 &&
                    stage2 + stage3 <= 256;
    report(1, ok, fmt("epoch_budget(32,8,8,4) = (%zu, %zu); %zu + %zu = %zu <= 256", b.stage2_epochs,
                      b.epochs_per_round, stage2, stage3, stage2 + stage3));
}

struct SeedRuns {
    orch::RunResult expel, no_expel, baseline_poisoned, clean, baseline_clean;
};

void criteria2to5() {
    std::vector<SeedRuns> runs;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto t0 = std::chrono::steady_clock::now();
        SeedRuns s;
        const auto poisoned_ds = orch::build_dataset(desk(seed, 40, 20));
        s.expel = orch::run_proposed(desk(seed, 40, 20), poisoned_ds);
        s.no_expel = orch::run_proposed(desk(seed, 40, 0), poisoned_ds);
        s.baseline_poisoned = orch::run_baseline(desk(seed, 40, 0), poisoned_ds);
        const auto clean_ds = orch::build_dataset(desk(seed, 0, 0));
        s.clean = orch::run_proposed(desk(seed, 0, 0), clean_ds);
        s.baseline_clean = orch::run_baseline(desk(seed, 0, 0), clean_ds);
        for (const auto* r : {&s.expel, &s.no_expel, &s.baseline_poisoned, &s.clean, &s.baseline_clean})
            check_conservation(*r, 40);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("  seed %llu (%.0fs): P40X20 acc %.3f M=%zu | P40X0 acc %.3f | baseline P40 %.3f | P0 %.3f vs %.3f\n",
                    (unsigned long long)seed, secs, s.expel.final_accuracy, s.expel.survivors, s.no_expel.final_accuracy,
                    s.baseline_poisoned.final_accuracy, s.clean.final_accuracy, s.baseline_clean.final_accuracy);
        std::printf("    expulsions (tp/fp/tn/fn/total):");
        for (const auto& row : s.expel.expulsions.rows)
            std::printf(" [%zu/%zu/%zu/%zu/%zu]", row.true_positive, row.false_positive, row.true_negative,
                        row.false_negative, row.total_nodes);
        std::printf("\n");
        std::fflush(stdout);
        runs.push_back(std::move(s));
    }

    // 2: final false negatives and cumulative recall.
    std::size_t zero_fn = 0;
    bool recall_ok = true;
    std::string per_seed;
    for (const auto& s : runs) {
        std::size_t tp = 0, fn = 0;
        for (const auto& row : s.expel.expulsions.rows) tp += row.true_positive;
        for (std::size_t id : s.expel.survivor_ids) fn += s.expel.poisoned_clients.count(id);
        const double recall = double(tp) / double(s.expel.poisoned_clients.size());
        zero_fn += fn == 0;
        recall_ok = recall_ok && recall >= 0.9;
        per_seed += fmt(" %zu/%zu", tp, s.expel.poisoned_clients.size());
    }
    report(2, zero_fn >= 4 && recall_ok,
           fmt("final FN = 0 in %zu/5 seeds (need >= 4); expelled poisoned per seed:%s (need >= 90%% each)", zero_fn,
               per_seed.c_str()));

    // 3 and 4: mean final accuracy.
    double prop40 = 0, base40 = 0, prop0 = 0, base0 = 0;
    for (const auto& s : runs) {
        prop40 += s.expel.final_accuracy / 5;
        base40 += s.baseline_poisoned.final_accuracy / 5;
        prop0 += s.clean.final_accuracy / 5;
        base0 += s.baseline_clean.final_accuracy / 5;
    }
    report(3, prop40 - base40 >= 0.10,
           fmt("P=40%%: mean proposed %.4f vs baseline %.4f (margin %+.1f pp, need >= +10)", prop40, base40,
               100 * (prop40 - base40)));
    report(4, prop0 >= base0 - 0.01,
           fmt("P=0, X=0: mean proposed %.4f vs baseline %.4f (margin %+.1f pp, need >= -1)", prop0, base0,
               100 * (prop0 - base0)));

    // 5: stage-3 per-round volume and total messages.
    bool volume_ok = true, messages_ok = true;
    std::string detail;
    for (const auto& s : runs) {
        const double per_round = double(s.expel.stage3_parameter_volume) / double(s.expel.stage3_rounds);
        const double base_round = double(s.baseline_poisoned.comm.parameter_volume) / double(desk(1, 40, 0).rounds);
        const double bound = base_round * (double(s.expel.survivors) / 40.0 + 0.05);
        volume_ok = volume_ok && per_round < bound;
        messages_ok = messages_ok && s.expel.comm.message_count < s.no_expel.comm.message_count;
        detail += fmt(" [vol %.0f<%.0f (params %zu vs %zu) msg %llu<%llu]", per_round, bound,
                      s.expel.final_params.size(), s.baseline_poisoned.final_params.size(),
                      (unsigned long long)s.expel.comm.message_count, (unsigned long long)s.no_expel.comm.message_count);
    }
    report(5, volume_ok && messages_ok,
           fmt("stage-3 volume per round below bound: %s; fewer messages with expelling: %s;%s",
               volume_ok ? "yes" : "no", messages_ok ? "yes" : "no", detail.c_str()));
}

void criterion6() {
    Rng rng(606);
    testing::GradientCheck total;
    for (int m = 0; m < 20; ++m) {
        const auto d = testing::tiny_model(rng);
        const auto p = testing::random_params(d, rng);
        for (const auto& c : {testing::check_param_gradients(d, p, rng), testing::check_input_gradients(d, p, rng)}) {
            total.worst = std::max(total.worst, c.worst);
            total.checked += c.checked;
            total.kinks += c.kinks;
        }
    }
    report(6, total.worst <= 1e-3,
           fmt("20 models, %zu coordinates, worst relative error %.2e (limit 1e-3); %zu kink coordinates skipped",
               total.checked, total.worst, total.kinks));
}

void criterion7() {
    Rng rng(707);
    double worst = 0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t rows = std::uniform_int_distribution<std::size_t>(1, 60)(rng);
        const std::size_t k = std::uniform_int_distribution<std::size_t>(2, 12)(rng);
        std::uniform_int_distribution<int> cls(0, int(k) - 1);
        std::vector<int> a(rows), b(rows);
        std::size_t agree = 0;
        for (std::size_t r = 0; r < rows; ++r) {
            a[r] = cls(rng);
            b[r] = std::bernoulli_distribution(0.5)(rng) ? a[r] : cls(rng);
            agree += a[r] == b[r];
        }
        const double cos = detect::cosine_similarity(detect::PredictionMatrix(a, k), detect::PredictionMatrix(b, k));
        worst = std::max(worst, std::abs(cos - double(agree) / double(rows)));
    }
    report(7, worst <= 1e-12, fmt("1000 pairs, max |cosine - agreement| = %.2e", worst));
}

void criterion8() {
    Rng rng(808);
    int mismatches = 0;
    for (int t = 0; t < 100; ++t) {
        const auto ups = testing::random_updates(rng);
        mismatches += fed::aggregate(ups, fed::Aggregation::PlainMean).values != testing::fedavg_oracle(ups, false);
        mismatches += fed::aggregate(ups, fed::Aggregation::SampleWeighted).values != testing::fedavg_oracle(ups, true);
    }
    report(8, mismatches == 0, fmt("100 update sets x 2 modes, %d bitwise mismatches", mismatches));
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) {
            std::ifstream in(e.path(), std::ios::binary);
            std::stringstream ss;
            ss << in.rdbuf();
            files[fs::relative(e.path(), dir).string()] = ss.str();
        }
    return files;
}

void criterion9() {
    const auto spec = exp::parse_config(
        "N = 12\nC = 2, 3\nP = 0, 40\nX = 0, 20\nR = 4\nE = 2\nB = 8\nR_c = 2\nlr = 0.1\n"
        "samples_per_client = 30\nholdout_size = 60\ntest_size = 100\nseed = 3\nalgorithm = both\n");
    const fs::path root = fs::temp_directory_path() / "fedexplore_acceptance";
    fs::remove_all(root);
    const auto serial = exp::run_sweep(spec, 1);
    const auto wide = exp::run_sweep(spec, 8);
    const auto again = exp::run_sweep(spec, 1);
    check_conservation(serial);
    exp::emit_results(serial, root / "p1");
    exp::emit_results(wide, root / "p8");
    exp::emit_results(again, root / "rerun");
    const auto a = snapshot(root / "p1");
    const bool ok = a == snapshot(root / "p8") && a == snapshot(root / "rerun");
    std::size_t failed = 0;
    for (const auto& r : serial) failed += !r.ok();
    fs::remove_all(root);
    report(9, ok && failed == 0,
           fmt("%zu runs, %zu files; parallelism 1 vs 8 and rerun byte-identical: %s; failed runs: %zu", serial.size(),
               a.size(), ok ? "yes" : "no", failed));
}

}  // namespace

int main() {
    try {
        criterion1();
        criterion6();
        criterion7();
        criterion8();
        criterion9();
        criteria2to5();
        report(10, conservation_violations == 0 && conservation_checks > 0,
               fmt("%zu membership/ledger checks, %zu violations", conservation_checks, conservation_violations));
    } catch (const std::exception& e) {
        std::printf("acceptance aborted: %s\n", e.what());
        return 2;
    }
    std::sort(verdicts.begin(), verdicts.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
    std::printf("\nsummary:\n");
    int failures = 0;
    for (const auto& v : verdicts) {
        std::printf("criterion %d: %s\n", v.id, v.pass ? "PASS" : "FAIL");
        failures += !v.pass;
    }
    return failures == 0 ? 0 : 1;
}
