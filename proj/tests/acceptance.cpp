// Acceptance gate for the training engine. Runs ten checks against frozen
// oracles, structural invariants, and a seeded end-to-end experiment, prints
// one pass/fail line per criterion, and exits nonzero if any check fails.
//
// The two training-based checks (7 and 8) fit 25 models at 140 epochs each
// and dominate the runtime; expect roughly ten minutes on one core.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "milbag/bagstore.hpp"
#include "milbag/curriculum.hpp"
#include "milbag/metrics.hpp"
#include "milbag/sampling.hpp"
#include "milbag/trainer.hpp"

namespace fs = std::filesystem;
using namespace milbag;

namespace {

struct CheckResult {
    bool ok = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

bool near(double value, double expected, double tol) {
    return std::abs(value - expected) <= tol;
}

fs::path scratch_root() {
    return fs::temp_directory_path() / "milbag_acceptance";
}

// --- criterion 1: class-distribution entropy reproduces the frozen table ---

CheckResult check_entropy_table() {
    const auto start = Clock::now();
    const std::vector<std::pair<std::vector<double>, double>> table{
        {{1.0, 1.0, 1.0}, 1.5850}, {{1.0, 1.0, 2.0}, 1.5000}, {{1.0, 1.0, 4.0}, 1.2516},
        {{1.0, 2.0, 2.0}, 1.5219}, {{1.0, 2.0, 3.0}, 1.4591}};
    double worst = 0.0;
    for (const auto& [ratio, expected] : table) {
        const double h = dataset_entropy(std::span<const double>(ratio));
        worst = std::max(worst, std::abs(h - expected));
        if (!near(h, expected, 1e-4)) {
            return {false, fmt::format("ratio {}:{}:{} gave {:.6f}, expected {:.4f}", ratio[0],
                                       ratio[1], ratio[2], h, expected)};
        }
    }
    const double elapsed = seconds_since(start);
    if (elapsed >= 1.0) return {false, fmt::format("took {:.2f} s, limit 1 s", elapsed)};
    return {true, fmt::format("5/5 entropies within 1e-4 (worst diff {:.2e}), {:.3f} s", worst,
                              elapsed)};
}

// --- criterion 2: balanced-count projection, exact case plus property ---

CheckResult check_balance_projection() {
    const auto start = Clock::now();

    const std::vector<std::size_t> counts{100, 240, 440};
    const std::vector<double> projected = expected_balanced_counts(counts);
    const std::vector<double> expected{440.0, 510.0, 610.0};
    if (projected != expected) {
        return {false, fmt::format("(100,240,440) gave ({}, {}, {}), expected (440, 510, 610)",
                                   projected[0], projected[1], projected[2])};
    }

    std::mt19937_64 rng(0xACC2);
    for (std::size_t trial = 0; trial < 1000; ++trial) {
        const std::size_t classes = 2 + rng() % 5;
        std::vector<std::size_t> random_counts(classes);
        for (auto& c : random_counts) c = 1 + rng() % 500;

        const std::vector<double> out = expected_balanced_counts(random_counts);
        double sum_in = 0.0, sum_out = 0.0;
        for (std::size_t c : random_counts) sum_in += static_cast<double>(c);
        for (double v : out) sum_out += v;
        if (!near(sum_out, 2.0 * sum_in, 1e-9 * sum_in)) {
            return {false, fmt::format("trial {}: sum {} != twice input sum {}", trial, sum_out,
                                       2.0 * sum_in)};
        }
        const double h_in = dataset_entropy(std::span<const std::size_t>(random_counts));
        const double h_out = dataset_entropy(std::span<const double>(out));
        if (h_out < h_in - 1e-12) {
            return {false, fmt::format("trial {}: entropy fell {:.12f} -> {:.12f}", trial, h_in,
                                       h_out)};
        }
    }

    const double elapsed = seconds_since(start);
    if (elapsed >= 5.0) return {false, fmt::format("took {:.2f} s, limit 5 s", elapsed)};
    return {true, fmt::format("exact triple plus 1000 random vectors (sum doubled, entropy "
                              "non-decreasing), {:.3f} s",
                              elapsed)};
}

// --- criterion 3: analytic gradients against central finite differences ---

CheckResult check_gradient_audit() {
    const auto start = Clock::now();
    double worst = 0.0;
    std::size_t coords = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const GradCheckReport report = gradient_suite(seed);
        if (report.coords_checked == 0) {
            return {false, fmt::format("seed {} checked no coordinates", seed)};
        }
        coords += report.coords_checked;
        worst = std::max(worst, report.max_rel_err);
        if (report.max_rel_err >= 1e-4) {
            return {false, fmt::format("seed {} relative error {:.3e} >= 1e-4", seed,
                                       report.max_rel_err)};
        }
    }
    const double elapsed = seconds_since(start);
    if (elapsed >= 120.0) return {false, fmt::format("took {:.1f} s, limit 120 s", elapsed)};
    return {true, fmt::format("20 seeds, {} coordinates, worst relative error {:.2e}, {:.2f} s",
                              coords, worst, elapsed)};
}

// --- criterion 4: semi-hard invariant on every mined triple of a small run ---

// Re-derives the candidate pools from the hook's dictionary snapshot and
// checks each emitted triple against a direct scan: the positive must come
// from the stable-sorted top-k same-class pool, every non-fallback negative
// must satisfy sim(a,n) <= sim(a,p) and land exactly on the curriculum
// quantile, and the k=0 / k=1 endpoints must pick the extreme admissible
// candidates found by exhaustive enumeration.
CheckResult check_semi_hard_mining() {
    const auto start = Clock::now();
    const fs::path data_dir = scratch_root() / "mining_data";

    SyntheticConfig dcfg;
    dcfg.num_classes = 3;
    dcfg.ratio = {1.0, 1.0, 1.0};
    dcfg.total_bags = 30;
    dcfg.dim = 8;
    dcfg.n_min = 6;
    dcfg.n_max = 10;
    dcfg.salient_fraction = 0.5;
    dcfg.background_scale = 0.6;
    dcfg.patient_scale = 0.3;
    dcfg.seed = 11;
    generate_synthetic(dcfg, data_dir);
    const Dataset dataset = Dataset::load(data_dir);
    const SplitSpec split = stratified_split(dataset.manifest, 5);

    TrainConfig cfg;
    cfg.dims = {.input_dim = 8, .hidden_dim = 16, .attn_dim = 8, .num_classes = 3};
    cfg.sub_bags = 3;
    cfg.epochs = 8;
    cfg.patience = 8;
    cfg.adam.lr = 1e-3;
    cfg.triplet.top_k = 4;
    cfg.triplet.triplets_per_anchor = 3;
    cfg.seed = 3;

    std::size_t sets_seen = 0, triples_checked = 0, non_fallback = 0, fallbacks = 0;
    std::string first_violation;
    auto flag = [&](std::string msg) {
        if (first_violation.empty()) first_violation = std::move(msg);
    };

    TrainHooks hooks;
    hooks.on_triplets = [&](const Matrix& anchor_v, std::size_t anchor_label,
                            const TripletSet& set, const EmbeddingDictionary& dict, double k) {
        ++sets_seen;
        const AffinityIndex idx = affinity(set.anchor_case, anchor_v, anchor_label, dict);

        if (idx.same_class.empty() || idx.other_class.empty()) {
            if (!set.triples.empty()) flag(set.anchor_case + ": triples from a one-sided pool");
            return;
        }

        // Positive pool: same-class entries stable-sorted by descending
        // similarity, truncated to top_k.
        std::vector<std::size_t> order(idx.same_class.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return idx.same_class[a].sim > idx.same_class[b].sim;
        });
        const std::size_t pool = std::min<std::size_t>(cfg.triplet.top_k, order.size());

        for (const Triple& tr : set.triples) {
            ++triples_checked;

            bool pos_in_pool = false;
            for (std::size_t i = 0; i < pool; ++i) {
                const ScoredCase& cand = idx.same_class[order[i]];
                if (cand.case_id == tr.positive_id && cand.sim == tr.pos_sim) {
                    pos_in_pool = true;
                    break;
                }
            }
            if (!pos_in_pool) {
                flag(fmt::format("{}: positive {} not in the top-{} pool", set.anchor_case,
                                 tr.positive_id, pool));
                continue;
            }

            // Admissible negatives in dictionary order, then the same stable
            // descending sort the selector uses.
            std::vector<ScoredCase> admissible;
            double min_sim = idx.other_class.front().sim;
            for (const ScoredCase& cand : idx.other_class) {
                if (cand.sim <= tr.pos_sim) admissible.push_back(cand);
                min_sim = std::min(min_sim, cand.sim);
            }

            if (tr.fallback) {
                ++fallbacks;
                if (!admissible.empty()) {
                    flag(fmt::format("{}: fallback taken with {} admissible negatives",
                                     set.anchor_case, admissible.size()));
                } else if (tr.neg_sim != min_sim) {
                    flag(fmt::format("{}: fallback sim {} is not the minimum {}", set.anchor_case,
                                     tr.neg_sim, min_sim));
                } else if (select_negative(idx, tr.pos_sim, 0.0) ||
                           select_negative(idx, tr.pos_sim, 1.0)) {
                    flag(set.anchor_case + ": selector found a negative the fallback missed");
                }
                continue;
            }

            ++non_fallback;
            if (tr.neg_sim > tr.pos_sim) {
                flag(fmt::format("{}: semi-hard violated, sim(a,n)={} > sim(a,p)={}",
                                 set.anchor_case, tr.neg_sim, tr.pos_sim));
                continue;
            }
            std::stable_sort(admissible.begin(), admissible.end(),
                             [](const ScoredCase& a, const ScoredCase& b) {
                                 return a.sim > b.sim;
                             });
            const double clamped = std::clamp(k, 0.0, 1.0);
            const auto quantile = static_cast<std::size_t>(
                std::llround(clamped * static_cast<double>(admissible.size() - 1)));
            if (tr.negative_id != admissible[quantile].case_id ||
                tr.neg_sim != admissible[quantile].sim) {
                flag(fmt::format("{}: negative {} is not the k={:.3f} quantile pick",
                                 set.anchor_case, tr.negative_id, k));
                continue;
            }

            // Endpoint audit: k=0 must take the largest admissible similarity
            // (minimum gap), k=1 the smallest.
            double max_adm = admissible.front().sim, min_adm = admissible.front().sim;
            for (const ScoredCase& cand : admissible) {
                max_adm = std::max(max_adm, cand.sim);
                min_adm = std::min(min_adm, cand.sim);
            }
            const auto hardest = select_negative(idx, tr.pos_sim, 0.0);
            const auto easiest = select_negative(idx, tr.pos_sim, 1.0);
            if (!hardest || hardest->sim != max_adm) {
                flag(fmt::format("{}: k=0 picked sim {}, exhaustive max is {}", set.anchor_case,
                                 hardest ? hardest->sim : 0.0, max_adm));
            } else if (!easiest || easiest->sim != min_adm) {
                flag(fmt::format("{}: k=1 picked sim {}, exhaustive min is {}", set.anchor_case,
                                 easiest ? easiest->sim : 0.0, min_adm));
            }
        }
    };

    const FitResult result = fit(dataset, split, cfg, &hooks);

    if (!first_violation.empty()) return {false, first_violation};
    if (sets_seen != result.counters.triplet_sets_mined) {
        return {false, fmt::format("hook saw {} sets, counters report {}", sets_seen,
                                   result.counters.triplet_sets_mined)};
    }
    if (non_fallback < 100) {
        return {false, fmt::format("only {} non-fallback triples mined, run too small to attest",
                                   non_fallback)};
    }
    const double elapsed = seconds_since(start);
    if (elapsed >= 60.0) return {false, fmt::format("took {:.1f} s, limit 60 s", elapsed)};
    return {true, fmt::format("{} triples across {} sets ({} fallbacks) all satisfy the "
                              "invariant and endpoint extremes, {:.2f} s",
                              triples_checked, sets_seen, fallbacks, elapsed)};
}

// --- criterion 5: difficulty schedule endpoints and shape ---

CheckResult check_difficulty_schedules() {
    const std::size_t horizon = 100;
    const CurriculumSchedule smooth{ScheduleKind::smooth, horizon};
    const CurriculumSchedule linear{ScheduleKind::linear, horizon};
    const CurriculumSchedule expo{ScheduleKind::exponential, horizon};
    std::mt19937_64 rng(1);

    if (difficulty(0, smooth, rng) != 1.0 || difficulty(0, linear, rng) != 1.0 ||
        difficulty(0, expo, rng) != 1.0) {
        return {false, "k(0) != 1 for a deterministic schedule"};
    }
    if (difficulty(horizon, smooth, rng) != 0.0 || difficulty(horizon, linear, rng) != 0.0) {
        return {false, "k(E) != 0 for smooth or linear"};
    }
    for (std::size_t e = 0; e <= horizon; ++e) {
        const double ks = difficulty(e, smooth, rng);
        const double kl = difficulty(e, linear, rng);
        if (ks < kl) {
            return {false, fmt::format("smooth {} < linear {} at epoch {}", ks, kl, e)};
        }
        const double ke = difficulty(e, expo, rng);
        const double expected =
            std::exp(-static_cast<double>(e) / static_cast<double>(horizon));
        if (!near(ke, expected, 1e-12)) {
            return {false, fmt::format("exponential off by {:.2e} at epoch {}",
                                       std::abs(ke - expected), e)};
        }
    }
    return {true, "endpoints exact, smooth >= linear on the grid, exponential within 1e-12"};
}

// --- criterion 6: stride partition invariants plus the frozen example ---

CheckResult check_partition_invariants() {
    std::mt19937_64 rng(0xACC6);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    for (std::size_t trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng() % 64;
        const std::size_t groups_wanted = 1 + rng() % n;
        std::vector<double> weights(n);
        for (double& w : weights) w = unif(rng);

        const auto groups = partition_by_distribution(weights, groups_wanted);
        if (groups.size() != groups_wanted) {
            return {false, fmt::format("trial {}: {} groups, wanted {}", trial, groups.size(),
                                       groups_wanted)};
        }
        std::vector<bool> seen(n, false);
        std::size_t covered = 0, smallest = n, largest = 0;
        for (const auto& group : groups) {
            smallest = std::min(smallest, group.size());
            largest = std::max(largest, group.size());
            for (std::size_t idx : group) {
                if (idx >= n || seen[idx]) {
                    return {false, fmt::format("trial {}: index {} out of range or repeated",
                                               trial, idx)};
                }
                seen[idx] = true;
                ++covered;
            }
        }
        if (covered != n) {
            return {false, fmt::format("trial {}: covered {} of {} indices", trial, covered, n)};
        }
        if (largest - smallest > 1) {
            return {false, fmt::format("trial {}: group sizes spread {}..{}", trial, smallest,
                                       largest)};
        }
    }

    const std::vector<double> decreasing{0.9, 0.8, 0.7, 0.6, 0.5, 0.4};
    const auto groups = partition_by_distribution(decreasing, 2);
    if (groups[0] != std::vector<std::size_t>{0, 2, 4} ||
        groups[1] != std::vector<std::size_t>{1, 3, 5}) {
        return {false, "decreasing-weight example did not split into {0,2,4}/{1,3,5}"};
    }
    return {true, "1000 random (N,S) partitions disjoint, covering, sizes within 1; example "
                  "split exact"};
}

// --- criteria 7 and 8: the seeded end-to-end experiment ---

// The dataset makes every class share the same background cloud, separates
// classes 1 and 2 only through a mean shift on a salient fraction of rows,
// and gives each bag a shared nuisance offset, so plain cross entropy on the
// scarce minority class confuses the offset with the class signal.
struct Experiment {
    Dataset dataset;
    SplitSpec split;
    TrainConfig base_cfg;
    std::vector<double> full_f1;
    double full_mean = 0.0;
    double slowest_fit = 0.0;

    static constexpr std::uint64_t first_seed = 1;
    static constexpr std::size_t num_seeds = 5;
};

Experiment make_experiment() {
    const fs::path data_dir = scratch_root() / "experiment_data";

    SyntheticConfig dcfg;
    dcfg.num_classes = 3;
    dcfg.ratio = {4.4, 2.4, 1.0};
    dcfg.total_bags = 195;
    dcfg.dim = 32;
    dcfg.n_min = 24;
    dcfg.n_max = 64;
    dcfg.salient_fraction = 0.30;
    dcfg.background_scale = 0.40;
    dcfg.patient_scale = 0.30;
    dcfg.seed = 7;
    generate_synthetic(dcfg, data_dir);

    Experiment exp{.dataset = Dataset::load(data_dir)};
    exp.split = stratified_split(exp.dataset.manifest, 77, 0.30, 0.25);

    TrainConfig& cfg = exp.base_cfg;
    cfg.dims = {.input_dim = 32, .hidden_dim = 64, .attn_dim = 32, .num_classes = 3};
    cfg.sub_bags = 11;
    cfg.epochs = 140;
    cfg.patience = 140;
    cfg.adam.lr = 1.5e-3;
    cfg.weights.embedding = 0.5;
    cfg.triplet.top_k = 8;
    cfg.triplet.triplets_per_anchor = 4;
    cfg.triplet.margin = 0.3;
    cfg.triplet.schedule.kind = ScheduleKind::smooth;
    return exp;
}

double test_macro_f1(Experiment& exp, const TrainConfig& cfg) {
    const auto start = Clock::now();
    const FitResult result = fit(exp.dataset, exp.split, cfg);
    exp.slowest_fit = std::max(exp.slowest_fit, seconds_since(start));
    const ScoreSet scores = evaluate_scores(exp.dataset, exp.split.test, result.t1, result.t2,
                                            cfg.sub_bags, cfg.pooling, EvalHead::t1);
    return 100.0 * macro_f1(confusion(scores)).value;
}

CheckResult check_directional_gain(Experiment& exp) {
    std::vector<double> base_f1;
    for (std::uint64_t s = 0; s < Experiment::num_seeds; ++s) {
        TrainConfig cfg = exp.base_cfg;
        cfg.seed = Experiment::first_seed + s;
        exp.full_f1.push_back(test_macro_f1(exp, cfg));

        cfg.ablation = {.disable_consistency = true, .disable_curriculum = true,
                        .disable_pseudobags = true};
        base_f1.push_back(test_macro_f1(exp, cfg));
    }

    double full_mean = 0.0, base_mean = 0.0;
    std::string per_seed;
    for (std::size_t s = 0; s < Experiment::num_seeds; ++s) {
        full_mean += exp.full_f1[s] / Experiment::num_seeds;
        base_mean += base_f1[s] / Experiment::num_seeds;
        per_seed += fmt::format("{}{:.1f}/{:.1f}", s == 0 ? "" : " ", exp.full_f1[s], base_f1[s]);
    }
    exp.full_mean = full_mean;

    const double gap = full_mean - base_mean;
    const std::string detail = fmt::format(
        "test macro-F1 full vs baseline per seed: {} | means {:.2f} vs {:.2f}, gap {:+.2f} "
        "(need >= 3.00), slowest fit {:.0f} s",
        per_seed, full_mean, base_mean, gap, exp.slowest_fit);
    if (exp.slowest_fit >= 600.0) {
        return {false, detail + " EXCEEDS the 600 s per-run limit"};
    }
    return {gap >= 3.0, detail};
}

CheckResult check_ablation_monotonicity(Experiment& exp) {
    const std::vector<std::pair<std::string, AblationFlags>> arms{
        {"no consistency", {.disable_consistency = true}},
        {"no curriculum", {.disable_curriculum = true}},
        {"no pseudo-bags", {.disable_pseudobags = true}}};

    std::string detail;
    double worst_delta = -1e9;
    for (const auto& [name, flags] : arms) {
        double mean = 0.0;
        for (std::uint64_t s = 0; s < Experiment::num_seeds; ++s) {
            TrainConfig cfg = exp.base_cfg;
            cfg.seed = Experiment::first_seed + s;
            cfg.ablation = flags;
            mean += test_macro_f1(exp, cfg) / Experiment::num_seeds;
        }
        const double delta = mean - exp.full_mean;
        worst_delta = std::max(worst_delta, delta);
        detail += fmt::format("{}{} {:+.2f}", detail.empty() ? "" : ", ", name, delta);
    }
    detail = fmt::format("mean shift from removing one component: {} (largest {:+.2f}, "
                         "limit +1.00)",
                         detail, worst_delta);
    return {worst_delta <= 1.0, detail};
}

// --- criterion 9: byte-identical artifacts for identical config and seed ---

struct ToolRun {
    int code = -1;
    std::string output;
};

ToolRun run_tool(const std::string& args) {
    const std::string cmd = std::string(MILBAG_BIN) + " " + args + " 2>&1";
    ToolRun result;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (pipe == nullptr) return result;
    char buf[4096];
    std::size_t got = 0;
    while ((got = fread(buf, 1, sizeof buf, pipe)) > 0) result.output.append(buf, got);
    const int status = pclose(pipe);
    result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

std::optional<std::string> slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

CheckResult check_run_determinism() {
    const fs::path root = scratch_root() / "determinism";
    const fs::path data = root / "data";

    const ToolRun gen = run_tool("gen --out " + data.string() +
                                 " --ratio 1:1:2 --bags 20 --dim 6 --nmin 5 --nmax 8 --seed 13");
    if (gen.code != 0) return {false, "gen failed: " + gen.output};

    const std::string train_args =
        " --epochs 4 --hidden 8 --attn 4 --subbags 3 --seed 21";
    for (const char* run : {"run_a", "run_b"}) {
        const ToolRun r = run_tool("train --data " + data.string() + " --run " +
                                   (root / run).string() + train_args);
        if (r.code != 0) return {false, std::string("train ") + run + " failed: " + r.output};
    }

    const std::vector<std::string> artifacts{"losses.csv",   "curriculum.csv", "metrics_test.csv",
                                             "checkpoint.milc", "split.json",  "counters.json"};
    for (const std::string& name : artifacts) {
        const auto a = slurp(root / "run_a" / name);
        const auto b = slurp(root / "run_b" / name);
        if (!a || !b) return {false, name + " missing from a run directory"};
        if (*a != *b) return {false, name + " differs between identical runs"};
    }
    return {true, fmt::format("{} artifacts byte-identical across two identical runs",
                              artifacts.size())};
}

// --- criterion 10: metric table against the hand-computed fixture ---

CheckResult check_metric_oracle() {
    ScoreSet fixture;
    const std::vector<std::vector<double>> rows{
        {0.8, 0.1, 0.1},  {0.5, 0.3, 0.2}, {0.2, 0.6, 0.2}, {0.4, 0.4, 0.2},
        {0.1, 0.7, 0.2},  {0.3, 0.4, 0.3}, {0.5, 0.2, 0.3}, {0.1, 0.2, 0.7},
        {0.2, 0.2, 0.6},  {0.1, 0.1, 0.8}, {0.3, 0.3, 0.4}, {0.25, 0.5, 0.25}};
    fixture.labels = {0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2};
    fixture.probs = Matrix(rows.size(), 3);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t c = 0; c < 3; ++c) fixture.probs(i, c) = rows[i][c];
    }

    const MetricTable t = metric_table(fixture);
    if (!t.auc_macro) return {false, "macro AUC missing on the fixture"};
    const std::vector<std::pair<std::string, std::pair<double, double>>> expected{
        {"macro F1", {t.f1_macro, 2.0 / 3.0}}, {"macro AUC", {*t.auc_macro, 143.0 / 192.0}},
        {"accuracy", {t.acc, 2.0 / 3.0}},      {"MCC", {t.mcc, 0.5}},
        {"sensitivity", {t.sens, 2.0 / 3.0}},  {"specificity", {t.spec, 5.0 / 6.0}},
        {"PPV", {t.ppv, 2.0 / 3.0}},           {"NPV", {t.npv, 5.0 / 6.0}}};
    for (const auto& [name, pair] : expected) {
        if (!near(pair.first, pair.second, 1e-12)) {
            return {false, fmt::format("{} = {:.15f}, expected {:.15f}", name, pair.first,
                                       pair.second)};
        }
    }

    // Uninformative scores on balanced labels must land at chance level.
    const std::size_t n = 3000;
    ScoreSet random_scores;
    random_scores.probs = Matrix(n, 3);
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> unif(0.01, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            random_scores.probs(i, c) = unif(rng);
            sum += random_scores.probs(i, c);
        }
        for (std::size_t c = 0; c < 3; ++c) random_scores.probs(i, c) /= sum;
        random_scores.labels.push_back(i % 3);
    }
    const MetricTable chance = metric_table(random_scores);
    if (!chance.auc_macro || !near(*chance.auc_macro, 0.5, 0.05)) {
        return {false, fmt::format("random-score macro AUC {:.4f} outside 0.5 +- 0.05",
                                   chance.auc_macro.value_or(-1.0))};
    }
    if (!near(chance.acc, 1.0 / 3.0, 0.05)) {
        return {false, fmt::format("random-score accuracy {:.4f} outside 1/3 +- 0.05",
                                   chance.acc)};
    }
    return {true, fmt::format("all eight fixture metrics within 1e-12; chance-level AUC {:.3f}, "
                              "accuracy {:.3f} at n=3000",
                              *chance.auc_macro, chance.acc)};
}

bool report(std::size_t number, const std::string& name, const CheckResult& result) {
    fmt::print("criterion {:2}: {}  {} ({})\n", number, result.ok ? "PASS" : "FAIL", name,
               result.detail);
    std::fflush(stdout);
    return result.ok;
}

}  // namespace

int main() {
    std::error_code ec;
    fs::remove_all(scratch_root(), ec);
    fs::create_directories(scratch_root());

    std::size_t passed = 0;
    passed += report(1, "entropy oracle", check_entropy_table());
    passed += report(2, "balance projection", check_balance_projection());
    passed += report(3, "gradient audit", check_gradient_audit());
    passed += report(4, "semi-hard mining", check_semi_hard_mining());
    passed += report(5, "difficulty schedules", check_difficulty_schedules());
    passed += report(6, "partition invariants", check_partition_invariants());

    Experiment exp = make_experiment();
    passed += report(7, "directional end-to-end", check_directional_gain(exp));
    passed += report(8, "ablation monotonicity", check_ablation_monotonicity(exp));

    passed += report(9, "run determinism", check_run_determinism());
    passed += report(10, "metrics oracle", check_metric_oracle());

    fmt::print("acceptance: {}/10 criteria passed\n", passed);
    return passed == 10 ? 0 : 1;
}
