#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fmt/format.h>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "milbag/bagstore.hpp"
#include "milbag/curriculum.hpp"
#include "milbag/errors.hpp"
#include "milbag/metrics.hpp"
#include "milbag/model.hpp"
#include "milbag/sampling.hpp"
#include "milbag/svg.hpp"
#include "milbag/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace milbag;

namespace {

constexpr const char* kToolVersion = "1.0.0";

std::vector<double> parse_ratio(const std::string& raw) {
    std::vector<double> parts;
    std::stringstream ss(raw);
    std::string piece;
    while (std::getline(ss, piece, ':')) {
        try {
            std::size_t used = 0;
            const double v = std::stod(piece, &used);
            if (used != piece.size()) throw std::invalid_argument(piece);
            parts.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError("malformed ratio '" + raw + "' (expected a:b:c with numeric parts)");
        }
    }
    if (parts.size() < 2) {
        throw ConfigError("malformed ratio '" + raw + "' (need at least two parts)");
    }
    return parts;
}

std::vector<double> parse_weights(const std::string& raw) {
    std::vector<double> parts;
    std::stringstream ss(raw);
    std::string piece;
    while (std::getline(ss, piece, ',')) {
        try {
            parts.push_back(std::stod(piece));
        } catch (const std::exception&) {
            throw ConfigError("malformed weights '" + raw + "' (expected w1,w2,wc,ws)");
        }
    }
    if (parts.size() != 4) {
        throw ConfigError("malformed weights '" + raw + "' (expected exactly four parts)");
    }
    return parts;
}

std::uint64_t fnv1a(std::uint64_t hash, const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        hash ^= bytes[i];
        hash *= 1099511628211ULL;
    }
    return hash;
}

std::string dataset_hash(const fs::path& data_dir, const DatasetManifest& manifest) {
    std::uint64_t hash = 14695981039346656037ULL;
    auto fold_file = [&hash](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw FormatError("cannot hash missing file: " + p.string());
        char buf[65536];
        while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
            hash = fnv1a(hash, buf, static_cast<std::size_t>(in.gcount()));
        }
    };
    fold_file(data_dir / "manifest.json");
    for (const auto& rec : manifest.bags) fold_file(data_dir / rec.path);
    return fmt::format("{:016x}", hash);
}

std::string join_args(int argc, char** argv) {
    std::string out;
    for (int i = 0; i < argc; ++i) {
        if (i > 0) out += " ";
        out += argv[i];
    }
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out << text;
}

struct GenOptions {
    std::string out_dir;
    SyntheticConfig cfg;
    std::string ratio = "1:2.4:4.4";
    std::size_t classes = 0;
    bool classes_set = false;
};

int cmd_gen(GenOptions& opt) {
    opt.cfg.ratio = parse_ratio(opt.ratio);
    if (opt.classes_set && opt.classes != opt.cfg.ratio.size()) {
        throw ConfigError(fmt::format("--classes {} disagrees with ratio '{}' ({} parts)",
                                      opt.classes, opt.ratio, opt.cfg.ratio.size()));
    }
    opt.cfg.num_classes = opt.cfg.ratio.size();
    const DatasetManifest manifest = generate_synthetic(opt.cfg, opt.out_dir);
    const auto counts = manifest.class_counts();
    for (std::size_t c = 0; c < counts.size(); ++c) {
        std::cout << manifest.class_names[c] << ": " << counts[c] << "\n";
    }
    std::cout << fmt::format("entropy: {:.4f}\n", dataset_entropy(counts));
    std::cout << "wrote " << manifest.bags.size() << " bags under " << opt.out_dir << "\n";
    return 0;
}

struct TrainOptions {
    std::string data_dir;
    std::string run_dir;
    TrainConfig cfg;
    std::string schedule = "smooth";
    std::string weights = "1,1,1,1";
    std::string pooling = "features";
    std::uint64_t split_seed = 0;
    bool split_seed_set = false;
    double test_frac = 0.2;
    double val_frac = 0.2;
};

int cmd_train(TrainOptions& opt, const std::string& command_line) {
    const auto t_start = std::chrono::steady_clock::now();
    opt.cfg.triplet.schedule.kind = parse_schedule(opt.schedule);
    opt.cfg.triplet.schedule.max_epochs = opt.cfg.epochs;
    const auto w = parse_weights(opt.weights);
    opt.cfg.weights = {w[0], w[1], w[2], w[3]};
    if (opt.pooling == "features") {
        opt.cfg.pooling = SubBagPooling::features;
    } else if (opt.pooling == "logits") {
        opt.cfg.pooling = SubBagPooling::logits;
    } else {
        throw ConfigError("unknown pooling '" + opt.pooling + "' (choose features or logits)");
    }

    const Dataset dataset = Dataset::load(opt.data_dir);
    opt.cfg.dims.input_dim = dataset.manifest.dim;
    opt.cfg.dims.num_classes = dataset.num_classes();
    const std::uint64_t split_seed = opt.split_seed_set ? opt.split_seed : opt.cfg.seed;
    const SplitSpec split =
        stratified_split(dataset.manifest, split_seed, opt.test_frac, opt.val_frac);

    const FitResult result = fit(dataset, split, opt.cfg);
    const auto t_fit = std::chrono::steady_clock::now();

    fs::create_directories(opt.run_dir);
    save_fit_artifacts(opt.run_dir, opt.cfg, result);
    save_split(split, fs::path(opt.run_dir) / "split.json");

    const MetricTable test_metrics =
        evaluate(dataset, split.test, result.t1, result.t2, opt.cfg.sub_bags, opt.cfg.pooling,
                 EvalHead::t1, eval_threads_from_env());
    write_text(fs::path(opt.run_dir) / "metrics_test.csv", metric_csv(test_metrics));
    const auto t_eval = std::chrono::steady_clock::now();

    json manifest;
    manifest["command_line"] = command_line;
    manifest["tool_version"] = kToolVersion;
    manifest["dataset_dir"] = opt.data_dir;
    manifest["dataset_hash"] = dataset_hash(opt.data_dir, dataset.manifest);
    manifest["split_seed"] = split_seed;
    manifest["seed"] = opt.cfg.seed;
    manifest["config"] = json::parse(std::ifstream(fs::path(opt.run_dir) / "config.json"));
    manifest["timings_ms"] = {
        {"fit", std::chrono::duration_cast<std::chrono::milliseconds>(t_fit - t_start).count()},
        {"eval", std::chrono::duration_cast<std::chrono::milliseconds>(t_eval - t_fit).count()}};
    write_text(fs::path(opt.run_dir) / "run_manifest.json", manifest.dump(2) + "\n");

    std::cout << fmt::format("best epoch {} (val macro-F1 {:.4f}), {} epochs run\n",
                             result.best_epoch, result.best_val_f1, result.epochs_run);
    std::cout << metric_csv(test_metrics);
    return 0;
}

struct EvalOptions {
    std::string run_dir;
    std::string data_dir;
    std::string split_name = "test";
    std::string head = "t1";
    std::size_t threads = 0;
};

int cmd_eval(EvalOptions& opt) {
    const TrainConfig cfg = load_train_config(opt.run_dir);
    const Checkpoint ckpt = load_checkpoint(fs::path(opt.run_dir) / "checkpoint.milc");
    const Dataset dataset = Dataset::load(opt.data_dir);
    const SplitSpec split = load_split(fs::path(opt.run_dir) / "split.json");

    const std::vector<std::string>* ids = nullptr;
    if (opt.split_name == "test") ids = &split.test;
    else if (opt.split_name == "val") ids = &split.val;
    else if (opt.split_name == "train") ids = &split.train;
    else throw ConfigError("unknown split '" + opt.split_name + "' (choose train, val, test)");

    EvalHead head;
    if (opt.head == "t1") head = EvalHead::t1;
    else if (opt.head == "t2") head = EvalHead::t2;
    else throw ConfigError("unknown head '" + opt.head + "' (choose t1 or t2)");

    const std::size_t threads = opt.threads > 0 ? opt.threads : eval_threads_from_env();
    const MetricTable metrics = evaluate(dataset, *ids, ckpt.t1, ckpt.t2, ckpt.meta.sub_bags,
                                         cfg.pooling, head, threads);
    const std::string csv = metric_csv(metrics);
    write_text(fs::path(opt.run_dir) / ("metrics_" + opt.split_name + ".csv"), csv);
    std::cout << csv;
    return 0;
}

struct ReportOptions {
    std::string run_dir;
    std::string data_dir;
};

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    if (rows.size() < 2) throw FormatError(path.string() + ": no data rows");
    return rows;
}

int cmd_report(ReportOptions& opt) {
    const fs::path run_dir(opt.run_dir);
    const fs::path report_dir = run_dir / "report";
    fs::create_directories(report_dir);

    // Loss and validation curves from the per-epoch training log.
    const auto loss_rows = read_csv(run_dir / "losses.csv");
    std::vector<double> epochs;
    std::vector<ChartSeries> loss_series = {{"l1", {}}, {"l2", {}},    {"lc1", {}},
                                            {"lc2", {}}, {"ls", {}}, {"total", {}}};
    ChartSeries val_series{"val_macro_f1", {}};
    for (std::size_t r = 1; r < loss_rows.size(); ++r) {
        const auto& row = loss_rows[r];
        epochs.push_back(std::stod(row.at(0)));
        for (std::size_t c = 0; c < loss_series.size(); ++c) {
            loss_series[c].values.push_back(std::stod(row.at(c + 1)));
        }
        val_series.values.push_back(std::stod(row.at(7)));
    }
    write_text(report_dir / "losses.svg",
               line_chart_svg("training losses", "epoch", epochs, loss_series));
    write_text(report_dir / "validation.svg",
               line_chart_svg("validation macro-F1", "epoch", epochs,
                              std::vector<ChartSeries>{val_series}));

    // Realized difficulty schedule.
    const auto sched_rows = read_csv(run_dir / "curriculum.csv");
    std::vector<double> sched_epochs;
    ChartSeries k_series{"k", {}};
    std::string sched_csv = "epoch,k\n";
    for (std::size_t r = 1; r < sched_rows.size(); ++r) {
        sched_epochs.push_back(std::stod(sched_rows[r].at(0)));
        k_series.values.push_back(std::stod(sched_rows[r].at(1)));
        sched_csv += sched_rows[r].at(0) + "," + sched_rows[r].at(1) + "\n";
    }
    write_text(report_dir / "schedule.csv", sched_csv);
    write_text(report_dir / "schedule.svg",
               line_chart_svg("difficulty schedule", "epoch", sched_epochs,
                              std::vector<ChartSeries>{k_series}));

    // Class balance account: observed counts and the projection after
    // cross-class augmentation, with the entropy of both distributions.
    const DatasetManifest manifest = load_manifest(fs::path(opt.data_dir) / "manifest.json");
    const auto counts = manifest.class_counts();
    const auto projected = expected_balanced_counts(counts);
    std::string balance_csv = "class,count,projected_count\n";
    for (std::size_t c = 0; c < counts.size(); ++c) {
        balance_csv += fmt::format("{},{},{:.2f}\n", manifest.class_names[c], counts[c],
                                   projected[c]);
    }
    write_text(report_dir / "balance.csv", balance_csv);
    const std::string entropy_csv =
        fmt::format("distribution,entropy_bits\nobserved,{:.4f}\nprojected,{:.4f}\n",
                    dataset_entropy(counts), dataset_entropy(projected));
    write_text(report_dir / "entropy.csv", entropy_csv);

    std::cout << "report written under " << report_dir.string() << "\n";
    return 0;
}

struct GradcheckOptions {
    std::size_t seeds = 20;
    double h = 5e-4;
    double threshold = 1e-4;
};

int cmd_gradcheck(GradcheckOptions& opt) {
    double worst = 0.0;
    std::size_t coords = 0;
    for (std::uint64_t seed = 1; seed <= opt.seeds; ++seed) {
        const GradCheckReport report = gradient_suite(seed, opt.h);
        worst = std::max(worst, report.max_rel_err);
        coords += report.coords_checked;
        std::cout << fmt::format("seed {:2}: max rel err {:.3e} over {} coordinates\n", seed,
                                 report.max_rel_err, report.coords_checked);
    }
    std::cout << fmt::format("worst: {:.3e} over {} coordinates (threshold {:.1e})\n", worst,
                             coords, opt.threshold);
    if (worst >= opt.threshold) {
        throw NumericError(fmt::format("gradient check failed: {:.3e} >= {:.1e}", worst,
                                       opt.threshold));
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deterministic multiple-instance training over feature bags"};
    app.require_subcommand(1);

    GenOptions gen_opt;
    auto* gen = app.add_subcommand("gen", "generate a synthetic bag dataset");
    gen->add_option("--out", gen_opt.out_dir, "output dataset directory")->required();
    gen->add_option("--ratio", gen_opt.ratio, "class ratio a:b:c (defines class count)");
    auto* classes_opt = gen->add_option("--classes", gen_opt.classes,
                                        "class count (must match the ratio part count)");
    gen->add_option("--bags", gen_opt.cfg.total_bags, "total bag count");
    gen->add_option("--dim", gen_opt.cfg.dim, "feature dimension");
    gen->add_option("--nmin", gen_opt.cfg.n_min, "min instances per bag");
    gen->add_option("--nmax", gen_opt.cfg.n_max, "max instances per bag");
    gen->add_option("--salient", gen_opt.cfg.salient_fraction, "salient instance fraction");
    gen->add_option("--bg-scale", gen_opt.cfg.background_scale, "background noise scale");
    gen->add_option("--patient-scale", gen_opt.cfg.patient_scale,
                    "stddev of the per-bag offset shared by a bag's instances");
    gen->add_option("--seed", gen_opt.cfg.seed, "generator seed");

    TrainOptions train_opt;
    auto* train = app.add_subcommand("train", "train on a generated dataset");
    train->add_option("--data", train_opt.data_dir, "dataset directory")->required();
    train->add_option("--run", train_opt.run_dir, "run output directory")->required();
    train->add_option("--subbags", train_opt.cfg.sub_bags, "sub-bags per bag");
    train->add_option("--schedule", train_opt.schedule, "difficulty schedule "
                                                        "(smooth, linear, exp, random)");
    train->add_option("--margin", train_opt.cfg.triplet.margin, "triplet margin");
    train->add_option("--momentum", train_opt.cfg.triplet.momentum, "dictionary momentum");
    train->add_option("--topk", train_opt.cfg.triplet.top_k, "positive top-K pool");
    train->add_option("--triplets", train_opt.cfg.triplet.triplets_per_anchor,
                      "triplets per anchor");
    train->add_option("--weights", train_opt.weights, "loss weights w1,w2,wc,ws");
    train->add_flag("--no-c1", train_opt.cfg.ablation.disable_consistency,
                    "disable consistency losses");
    train->add_flag("--no-c2", train_opt.cfg.ablation.disable_curriculum,
                    "disable curriculum triplet loss");
    train->add_flag("--no-c3", train_opt.cfg.ablation.disable_pseudobags,
                    "disable pseudo-bag construction");
    train->add_option("--epochs", train_opt.cfg.epochs, "max epochs");
    train->add_option("--patience", train_opt.cfg.patience, "early stopping patience");
    train->add_option("--lr", train_opt.cfg.adam.lr, "learning rate");
    train->add_option("--wd", train_opt.cfg.adam.weight_decay, "weight decay");
    train->add_option("--hidden", train_opt.cfg.dims.hidden_dim, "hidden width");
    train->add_option("--attn", train_opt.cfg.dims.attn_dim, "attention width");
    train->add_option("--pooling", train_opt.pooling, "sub-bag pooling (features or logits)");
    train->add_option("--seed", train_opt.cfg.seed, "training seed");
    auto* split_seed_opt =
        train->add_option("--split-seed", train_opt.split_seed, "split seed (default: --seed)");
    train->add_option("--test-frac", train_opt.test_frac, "test fraction");
    train->add_option("--val-frac", train_opt.val_frac, "validation fraction of the remainder");

    EvalOptions eval_opt;
    auto* eval = app.add_subcommand("eval", "evaluate a finished run");
    eval->add_option("--run", eval_opt.run_dir, "run directory")->required();
    eval->add_option("--data", eval_opt.data_dir, "dataset directory")->required();
    eval->add_option("--split", eval_opt.split_name, "split to score (train, val, test)");
    eval->add_option("--head", eval_opt.head, "inference head (t1 or t2)");
    eval->add_option("--threads", eval_opt.threads, "worker threads (default: env)");

    ReportOptions report_opt;
    auto* report = app.add_subcommand("report", "emit CSV tables and SVG curves for a run");
    report->add_option("--run", report_opt.run_dir, "run directory")->required();
    report->add_option("--data", report_opt.data_dir, "dataset directory")->required();

    GradcheckOptions grad_opt;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference audit of all gradients");
    gradcheck->add_option("--seeds", grad_opt.seeds, "number of seeds");
    gradcheck->add_option("--step", grad_opt.h, "finite-difference step");
    gradcheck->add_option("--threshold", grad_opt.threshold, "max relative error allowed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) {
            gen_opt.classes_set = classes_opt->count() > 0;
            return cmd_gen(gen_opt);
        }
        if (*train) {
            train_opt.split_seed_set = split_seed_opt->count() > 0;
            return cmd_train(train_opt, join_args(argc, argv));
        }
        if (*eval) return cmd_eval(eval_opt);
        if (*report) return cmd_report(report_opt);
        if (*gradcheck) return cmd_gradcheck(grad_opt);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
