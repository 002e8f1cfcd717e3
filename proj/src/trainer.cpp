#include "milbag/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fmt/format.h>
#include <fstream>
#include <numeric>
#include <thread>

#include "json.hpp"

namespace milbag {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
    dims.validate();
    if (sub_bags == 0) throw ConfigError("sub_bags must be at least 1");
    if (epochs == 0) throw ConfigError("epochs must be at least 1");
    if (weights.bag < 0.0 || weights.sub_bag < 0.0 || weights.consistency < 0.0 ||
        weights.embedding < 0.0) {
        throw ConfigError("loss weights must be non-negative");
    }
    if (!(adam.lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (adam.weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
    triplet.validate();
}

namespace {

std::vector<double> one_hot(std::size_t label, std::size_t num_classes) {
    std::vector<double> t(num_classes, 0.0);
    t.at(label) = 1.0;
    return t;
}

Matrix row_matrix(std::span<const double> values, double scale) {
    Matrix m(1, values.size());
    for (std::size_t i = 0; i < values.size(); ++i) m(0, i) = scale * values[i];
    return m;
}

std::vector<Matrix> gather_groups(const Matrix& features,
                                  std::span<const std::vector<std::size_t>> groups) {
    std::vector<Matrix> out;
    out.reserve(groups.size());
    for (const auto& group : groups) {
        Matrix sub(group.size(), features.cols());
        for (std::size_t r = 0; r < group.size(); ++r) {
            for (std::size_t j = 0; j < features.cols(); ++j) {
                sub(r, j) = features(group[r], j);
            }
        }
        out.push_back(std::move(sub));
    }
    return out;
}

Matrix vstack(std::span<const Matrix> parts) {
    std::size_t rows = 0;
    for (const Matrix& p : parts) rows += p.rows();
    Matrix out(rows, parts.front().cols());
    std::size_t r = 0;
    for (const Matrix& p : parts) {
        for (std::size_t i = 0; i < p.rows(); ++i, ++r) {
            for (std::size_t j = 0; j < p.cols(); ++j) out(r, j) = p(i, j);
        }
    }
    return out;
}

double l2_norm(const Matrix& v) {
    double s = 0.0;
    for (double x : v.values()) s += x * x;
    return std::sqrt(s);
}

}  // namespace

double loss_l1(const Matrix& features, std::size_t label, GatedAttentionParams& t1,
               double weight) {
    const BagTrace trace = t1_forward(features, t1);
    const auto ce = cross_entropy(one_hot(label, t1.dims.num_classes), trace.logits.row(0));
    t1_backward(trace, t1, row_matrix(ce.dlogits, weight));
    return ce.loss;
}

double loss_l2(const Matrix& features, std::span<const std::vector<std::size_t>> groups,
               std::size_t label, GatedAttentionParams& t2, SubBagPooling pooling,
               double weight) {
    const SubBagTrace trace = t2_forward(features, groups, t2, pooling);
    const auto ce = cross_entropy(one_hot(label, t2.dims.num_classes), trace.logits.row(0));
    t2_backward(trace, t2, row_matrix(ce.dlogits, weight));
    return ce.loss;
}

double loss_consistency(const Matrix& features, std::span<const std::vector<std::size_t>> groups,
                        const GatedAttentionParams& t1, GatedAttentionParams& t2,
                        SubBagPooling pooling, double weight) {
    const BagTrace target = t1_forward(features, t1);
    const SubBagTrace trace = t2_forward(features, groups, t2, pooling);
    const auto ce = cross_entropy(target.probs, trace.logits.row(0));
    t2_backward(trace, t2, row_matrix(ce.dlogits, weight));
    return ce.loss;
}

double loss_consistency(std::span<const Matrix> sub_bags, const GatedAttentionParams& t1,
                        GatedAttentionParams& t2, SubBagPooling pooling, double weight) {
    const Matrix merged = vstack(sub_bags);
    const BagTrace target = t1_forward(merged, t1);
    const SubBagTrace trace = t2_forward(sub_bags, t2, pooling);
    const auto ce = cross_entropy(target.probs, trace.logits.row(0));
    t2_backward(trace, t2, row_matrix(ce.dlogits, weight));
    return ce.loss;
}

LossRow train_iteration(const FeatureBag& bag, std::size_t num_classes, std::size_t epoch,
                        double k, const TrainConfig& cfg, IterationContext ctx) {
    if (bag.label >= num_classes) {
        throw DomainError(fmt::format("train: case {} label {} out of range {}", bag.case_id,
                                      bag.label, num_classes));
    }
    LossRow row;
    row.epoch = epoch;
    row.case_id = bag.case_id;
    const auto target = one_hot(bag.label, num_classes);
    const LossWeights& w = cfg.weights;

    // Bag head forward; its attention drives the partition below.
    const BagTrace trace1 = t1_forward(bag.features, ctx.t1);
    const auto ce1 = cross_entropy(target, trace1.logits.row(0));
    row.l1 = ce1.loss;

    const std::size_t s_eff = std::min(cfg.sub_bags, bag.num_instances());
    const auto groups = partition_by_distribution(trace1.attention.weights, s_eff);
    ctx.cache.store(bag.case_id, bag.patient_id, bag.label, gather_groups(bag.features, groups));

    // Sub-bag head on the real bag: supervised term plus, unless ablated,
    // the consistency term against the bag head's (constant) prediction.
    const SubBagTrace trace2 = t2_forward(bag.features, groups, ctx.t2, cfg.pooling);
    const auto ce2 = cross_entropy(target, trace2.logits.row(0));
    row.l2 = ce2.loss;
    Matrix d_logits2 = row_matrix(ce2.dlogits, w.sub_bag);
    if (!cfg.ablation.disable_consistency) {
        const auto cec2 = cross_entropy(trace1.probs, trace2.logits.row(0));
        row.lc2 = cec2.loss;
        for (std::size_t c = 0; c < num_classes; ++c) {
            d_logits2(0, c) += w.consistency * cec2.dlogits[c];
        }
        ++ctx.counters.consistency_backwards;
    }
    t2_backward(trace2, ctx.t2, d_logits2);

    // Unlabeled pseudo-bag of another class, constrained by prediction
    // consistency between the two heads.
    if (!cfg.ablation.disable_consistency && !cfg.ablation.disable_pseudobags) {
        const std::size_t other = draw_other_class(num_classes, bag.label, ctx.pseudo_rng);
        auto pseudo = build_pseudo_bag(ctx.cache, other, cfg.sub_bags, ctx.pseudo_rng);
        if (!pseudo) {
            ++ctx.counters.pseudo_skipped_empty;
        } else {
            ++ctx.counters.pseudo_bags_built;
            ctx.counters.repeated_patient_slots += pseudo->repeated_patient_slots;
            const Matrix merged = vstack(pseudo->sub_bags);
            const BagTrace pseudo_target = t1_forward(merged, ctx.t1);
            const SubBagTrace trace2p = t2_forward(pseudo->sub_bags, ctx.t2, cfg.pooling);
            const auto cec1 = cross_entropy(pseudo_target.probs, trace2p.logits.row(0));
            row.lc1 = cec1.loss;
            t2_backward(trace2p, ctx.t2, row_matrix(cec1.dlogits, w.consistency));
            ++ctx.counters.consistency_backwards;
        }
    }

    // Dictionary refresh, then triplet mining once every case has an entry.
    ctx.dict.update(bag.case_id, trace1.attention.pooled, bag.label);
    ++ctx.counters.dict_updates;

    Matrix d_pooled_extra;
    bool have_extra = false;
    if (!cfg.ablation.disable_curriculum && epoch >= 1) {
        const Matrix& v = trace1.attention.pooled;
        if (l2_norm(v) == 0.0) {
            ++ctx.counters.zero_norm_anchors;
        } else {
            const TripletSet set =
                mine_triplets(bag.case_id, v, bag.label, ctx.dict, cfg.triplet, k,
                              ctx.triplet_rng);
            ++ctx.counters.triplet_sets_mined;
            ctx.counters.triples_emitted += set.triples.size();
            ctx.counters.triplet_fallbacks += set.fallback_count;
            ctx.telemetry.fallbacks += set.fallback_count;
            for (const Triple& tr : set.triples) {
                ctx.telemetry.pos_sim_sum += tr.pos_sim;
                ctx.telemetry.neg_sim_sum += tr.neg_sim;
                ++ctx.telemetry.triples;
            }
            if (ctx.hooks != nullptr && ctx.hooks->on_triplets) {
                ctx.hooks->on_triplets(v, bag.label, set, ctx.dict, k);
            }
            const TripletLossResult tl = triplet_loss(v, set, ctx.dict, cfg.triplet.margin);
            row.ls = tl.loss;
            d_pooled_extra = tl.d_anchor;
            for (double& g : d_pooled_extra.values()) g *= w.embedding;
            have_extra = true;
        }
    }

    t1_backward(trace1, ctx.t1, row_matrix(ce1.dlogits, w.bag),
                have_extra ? &d_pooled_extra : nullptr);

    row.total = w.bag * row.l1 + w.sub_bag * row.l2 + w.consistency * (row.lc1 + row.lc2) +
                w.embedding * row.ls;
    if (!std::isfinite(row.total)) {
        throw NumericError(fmt::format(
            "non-finite loss at epoch {} case {}: l1={} l2={} lc1={} lc2={} ls={}", epoch,
            bag.case_id, row.l1, row.l2, row.lc1, row.lc2, row.ls));
    }

    for (ParamTensor* t : ctx.t1.tensors()) adam_step(*t, cfg.adam);
    for (ParamTensor* t : ctx.t2.tensors()) adam_step(*t, cfg.adam);
    return row;
}

FitResult fit(const Dataset& dataset, const SplitSpec& split, const TrainConfig& cfg,
              const TrainHooks* hooks) {
    cfg.validate();
    if (cfg.dims.input_dim != dataset.manifest.dim) {
        throw ConfigError(fmt::format("model input dim {} but dataset dim {}",
                                      cfg.dims.input_dim, dataset.manifest.dim));
    }
    if (cfg.dims.num_classes != dataset.num_classes()) {
        throw ConfigError(fmt::format("model has {} classes but dataset {}",
                                      cfg.dims.num_classes, dataset.num_classes()));
    }
    if (split.train.empty()) throw ConfigError("empty train split");
    if (split.val.empty()) throw ConfigError("empty validation split");
    for (const auto& id : split.train) dataset.bag(id);
    for (const auto& id : split.val) dataset.bag(id);

    std::mt19937_64 init_rng = seeded_rng(cfg.seed, 0);
    std::mt19937_64 data_rng = seeded_rng(cfg.seed, 1);
    std::mt19937_64 pseudo_rng = seeded_rng(cfg.seed, 2);
    std::mt19937_64 triplet_rng = seeded_rng(cfg.seed, 3);
    std::mt19937_64 sched_rng = seeded_rng(cfg.seed, 4);

    FitResult result;
    result.t1 = make_params(cfg.dims, "t1");
    result.t2 = make_params(cfg.dims, "t2");
    init_params(result.t1, init_rng);
    init_params(result.t2, init_rng);

    EmbeddingDictionary dict(cfg.triplet.momentum);
    SubBagCache cache(cfg.dims.num_classes);
    const CurriculumSchedule schedule{cfg.triplet.schedule.kind, cfg.epochs};
    const std::size_t threads = eval_threads_from_env();

    GatedAttentionParams best_t1 = result.t1;
    GatedAttentionParams best_t2 = result.t2;
    double best_f1 = -1.0;
    std::size_t best_epoch = 0;
    std::size_t since_improvement = 0;

    std::vector<std::size_t> order(split.train.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double k = difficulty(epoch, schedule, sched_rng);
        std::shuffle(order.begin(), order.end(), data_rng);

        EpochTelemetry telemetry;
        EpochStats stats;
        stats.epoch = epoch;
        stats.k = k;
        for (std::size_t idx : order) {
            const FeatureBag& bag = dataset.bag(split.train[idx]);
            IterationContext ctx{result.t1, result.t2, dict,
                                 cache,     pseudo_rng, triplet_rng,
                                 result.counters, telemetry, hooks};
            const LossRow row =
                train_iteration(bag, cfg.dims.num_classes, epoch, k, cfg, ctx);
            stats.mean_l1 += row.l1;
            stats.mean_l2 += row.l2;
            stats.mean_lc1 += row.lc1;
            stats.mean_lc2 += row.lc2;
            stats.mean_ls += row.ls;
            stats.mean_total += row.total;
            result.iterations.push_back(row);
        }
        const auto n = static_cast<double>(order.size());
        stats.mean_l1 /= n;
        stats.mean_l2 /= n;
        stats.mean_lc1 /= n;
        stats.mean_lc2 /= n;
        stats.mean_ls /= n;
        stats.mean_total /= n;
        if (telemetry.triples > 0) {
            stats.mean_pos_sim = telemetry.pos_sim_sum / static_cast<double>(telemetry.triples);
            stats.mean_neg_sim = telemetry.neg_sim_sum / static_cast<double>(telemetry.triples);
        }
        stats.fallback_count = telemetry.fallbacks;
        stats.active_triples = telemetry.triples;

        const ScoreSet val_scores =
            evaluate_scores(dataset, split.val, result.t1, result.t2, cfg.sub_bags, cfg.pooling,
                            EvalHead::t1, threads);
        stats.val_macro_f1 = macro_f1(confusion(val_scores)).value;
        result.epochs.push_back(stats);
        result.epochs_run = epoch + 1;

        if (stats.val_macro_f1 > best_f1) {
            best_f1 = stats.val_macro_f1;
            best_epoch = epoch;
            best_t1 = result.t1;
            best_t2 = result.t2;
            since_improvement = 0;
        } else {
            ++since_improvement;
            if (since_improvement > cfg.patience) break;
        }
    }

    result.t1 = std::move(best_t1);
    result.t2 = std::move(best_t2);
    result.best_epoch = best_epoch;
    result.best_val_f1 = best_f1;
    result.meta = CheckpointMeta{cfg.dims, cfg.sub_bags, cfg.seed, best_epoch};
    return result;
}

ScoreSet evaluate_scores(const Dataset& dataset, std::span<const std::string> case_ids,
                         const GatedAttentionParams& t1, const GatedAttentionParams& t2,
                         std::size_t sub_bags, SubBagPooling pooling, EvalHead head,
                         std::size_t threads) {
    if (case_ids.empty()) throw DomainError("evaluate: no cases");
    if (t1.dims.input_dim != dataset.manifest.dim) {
        throw ConfigError(fmt::format("checkpoint input dim {} but dataset dim {}",
                                      t1.dims.input_dim, dataset.manifest.dim));
    }
    ScoreSet scores;
    scores.labels.resize(case_ids.size());
    scores.probs = Matrix(case_ids.size(), t1.dims.num_classes);
    for (std::size_t i = 0; i < case_ids.size(); ++i) {
        scores.labels[i] = dataset.bag(case_ids[i]).label;
    }

    auto score_case = [&](std::size_t i) {
        const FeatureBag& bag = dataset.bag(case_ids[i]);
        std::vector<double> probs;
        if (head == EvalHead::t1) {
            probs = t1_forward(bag.features, t1).probs;
        } else {
            const BagTrace trace1 = t1_forward(bag.features, t1);
            const auto groups = partition_by_distribution(
                trace1.attention.weights, std::min(sub_bags, bag.num_instances()));
            probs = t2_forward(bag.features, groups, t2, pooling).probs;
        }
        for (std::size_t c = 0; c < probs.size(); ++c) scores.probs(i, c) = probs[c];
    };

    const std::size_t workers = std::max<std::size_t>(1, std::min(threads, case_ids.size()));
    if (workers == 1) {
        for (std::size_t i = 0; i < case_ids.size(); ++i) score_case(i);
        return scores;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < case_ids.size(); i += workers) score_case(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (const auto& err : errors) {
        if (err) std::rethrow_exception(err);
    }
    return scores;
}

MetricTable evaluate(const Dataset& dataset, std::span<const std::string> case_ids,
                     const GatedAttentionParams& t1, const GatedAttentionParams& t2,
                     std::size_t sub_bags, SubBagPooling pooling, EvalHead head,
                     std::size_t threads) {
    return metric_table(
        evaluate_scores(dataset, case_ids, t1, t2, sub_bags, pooling, head, threads));
}

GradCheckReport gradient_suite(std::uint64_t seed, double h) {
    const ModelDims dims{8, 12, 6, 3};
    std::mt19937_64 rng = seeded_rng(seed, 77);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t label = static_cast<std::size_t>(seed % dims.num_classes);

    GatedAttentionParams t1 = make_params(dims, "t1");
    GatedAttentionParams t2 = make_params(dims, "t2");
    Matrix features(5, dims.input_dim);
    EmbeddingDictionary dict(0.9);
    ParamTensor anchor("anchor", 1, dims.hidden_dim);
    TripletConfig tcfg;
    tcfg.margin = 2.0;
    TripletSet set;

    // Central differences are only meaningful where the loss is smooth, so
    // draws whose relu pre-activations or hinge terms sit within reach of the
    // step are rejected and redrawn from the same stream.
    auto min_pre_gap = [&features](const GatedAttentionParams& p) {
        const Matrix pre = matmul(features, p.proj_w.value);
        double lo = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < pre.rows(); ++i) {
            for (std::size_t j = 0; j < pre.cols(); ++j) {
                lo = std::min(lo, std::abs(pre(i, j) + p.proj_b.value(0, j)));
            }
        }
        return lo;
    };
    for (int attempt = 0;; ++attempt) {
        if (attempt > 256) {
            throw NumericError("gradient_suite: no differentiable draw found");
        }
        init_params(t1, rng);
        init_params(t2, rng);
        for (double& v : features.values()) v = normal(rng);
        dict = EmbeddingDictionary(0.9);
        for (std::size_t i = 0; i < 8; ++i) {
            Matrix e(1, dims.hidden_dim);
            for (double& v : e.values()) v = normal(rng);
            dict.update("dict_" + std::to_string(i), e, i % dims.num_classes);
        }
        for (double& v : anchor.value.values()) v = normal(rng);

        double max_abs_x = 0.0;
        for (double v : features.values()) max_abs_x = std::max(max_abs_x, std::abs(v));
        const double kink_gap = 6.0 * h * (max_abs_x + 1.0);
        if (min_pre_gap(t1) <= kink_gap || min_pre_gap(t2) <= kink_gap) continue;

        std::mt19937_64 mine_rng = seeded_rng(seed, 78);
        set = mine_triplets("anchor_case", anchor.value, label, dict, tcfg, 0.5, mine_rng);
        if (set.triples.empty()) continue;
        bool hinge_safe = true;
        for (const auto& t : set.triples) {
            if (t.neg_sim - t.pos_sim + tcfg.margin < 0.05) hinge_safe = false;
        }
        double pooled_norm2 = 0.0;
        for (double v : t1_forward(features, t1).attention.pooled.values()) {
            pooled_norm2 += v * v;
        }
        if (hinge_safe && pooled_norm2 > 0.01) break;
    }

    GradCheckReport worst;
    auto merge = [&worst](const GradCheckReport& r) {
        worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
        worst.coords_checked += r.coords_checked;
    };

    // Bag-level cross entropy against every first-head parameter.
    t1.zero_grad();
    loss_l1(features, label, t1);
    merge(finite_diff_check(
        [&] {
            const BagTrace tr = t1_forward(features, t1);
            return cross_entropy(one_hot(label, dims.num_classes), tr.logits.row(0)).loss;
        },
        t1.tensors(), h));

    // Sub-bag cross entropy; the partition is frozen while t2 is perturbed.
    const auto groups =
        partition_by_distribution(t1_forward(features, t1).attention.weights, 2);
    for (SubBagPooling pooling : {SubBagPooling::features, SubBagPooling::logits}) {
        t2.zero_grad();
        loss_l2(features, groups, label, t2, pooling);
        merge(finite_diff_check(
            [&] {
                const SubBagTrace tr = t2_forward(features, groups, t2, pooling);
                return cross_entropy(one_hot(label, dims.num_classes), tr.logits.row(0)).loss;
            },
            t2.tensors(), h));
    }

    // Consistency: the first head's prediction is a constant target.
    t2.zero_grad();
    loss_consistency(features, groups, t1, t2, SubBagPooling::features);
    merge(finite_diff_check(
        [&] {
            const BagTrace target = t1_forward(features, t1);
            const SubBagTrace tr = t2_forward(features, groups, t2, SubBagPooling::features);
            return cross_entropy(target.probs, tr.logits.row(0)).loss;
        },
        t2.tensors(), h));

    // Triplet hinge with respect to the anchor embedding. The margin of 2
    // chosen above keeps every hinge term strictly active (cosine
    // differences live in [-2, 2]), so the loss is smooth here.
    if (!set.triples.empty()) {
        anchor.zero_grad();
        const TripletLossResult tl = triplet_loss(anchor.value, set, dict, tcfg.margin);
        anchor.grad = tl.d_anchor;
        ParamTensor* anchor_ptr = &anchor;
        merge(finite_diff_check(
            [&] { return triplet_loss(anchor.value, set, dict, tcfg.margin).loss; },
            std::span<ParamTensor* const>(&anchor_ptr, 1), h));
    }

    // Combined path: bag loss plus the embedding loss injected at the pooled
    // embedding, differentiated through the whole first head.
    if (!set.triples.empty()) {
        t1.zero_grad();
        const BagTrace tr = t1_forward(features, t1);
        const auto ce = cross_entropy(one_hot(label, dims.num_classes), tr.logits.row(0));
        const TripletLossResult tl =
            triplet_loss(tr.attention.pooled, set, dict, tcfg.margin);
        t1_backward(tr, t1, row_matrix(ce.dlogits, 1.0), &tl.d_anchor);
        merge(finite_diff_check(
            [&] {
                const BagTrace f = t1_forward(features, t1);
                const double l1 =
                    cross_entropy(one_hot(label, dims.num_classes), f.logits.row(0)).loss;
                return l1 + triplet_loss(f.attention.pooled, set, dict, tcfg.margin).loss;
            },
            t1.tensors(), h));
    }
    return worst;
}

std::size_t eval_threads_from_env() {
    const char* raw = std::getenv("MILBAG_EVAL_THREADS");
    if (raw == nullptr) return 1;
    char* end = nullptr;
    const unsigned long v = std::strtoul(raw, &end, 10);
    if (end == raw || *end != '\0' || v == 0) return 1;
    return static_cast<std::size_t>(v);
}

namespace {

json config_to_json(const TrainConfig& cfg) {
    json j;
    j["dims"] = {{"input_dim", cfg.dims.input_dim},
                 {"hidden_dim", cfg.dims.hidden_dim},
                 {"attn_dim", cfg.dims.attn_dim},
                 {"num_classes", cfg.dims.num_classes}};
    j["sub_bags"] = cfg.sub_bags;
    j["epochs"] = cfg.epochs;
    j["patience"] = cfg.patience;
    j["adam"] = {{"lr", cfg.adam.lr},
                 {"weight_decay", cfg.adam.weight_decay},
                 {"beta1", cfg.adam.beta1},
                 {"beta2", cfg.adam.beta2},
                 {"eps", cfg.adam.eps}};
    j["weights"] = {{"bag", cfg.weights.bag},
                    {"sub_bag", cfg.weights.sub_bag},
                    {"consistency", cfg.weights.consistency},
                    {"embedding", cfg.weights.embedding}};
    j["triplet"] = {{"top_k", cfg.triplet.top_k},
                    {"triplets_per_anchor", cfg.triplet.triplets_per_anchor},
                    {"margin", cfg.triplet.margin},
                    {"momentum", cfg.triplet.momentum},
                    {"schedule", schedule_name(cfg.triplet.schedule.kind)}};
    j["pooling"] = cfg.pooling == SubBagPooling::features ? "features" : "logits";
    j["ablation"] = {{"disable_consistency", cfg.ablation.disable_consistency},
                     {"disable_curriculum", cfg.ablation.disable_curriculum},
                     {"disable_pseudobags", cfg.ablation.disable_pseudobags}};
    j["seed"] = cfg.seed;
    return j;
}

}  // namespace

void save_fit_artifacts(const fs::path& run_dir, const TrainConfig& cfg,
                        const FitResult& result) {
    fs::create_directories(run_dir);

    {
        std::ofstream out(run_dir / "config.json", std::ios::trunc);
        if (!out) throw FormatError("cannot write config.json");
        out << config_to_json(cfg).dump(2) << "\n";
    }
    {
        std::ofstream out(run_dir / "losses.csv", std::ios::trunc);
        if (!out) throw FormatError("cannot write losses.csv");
        out << "epoch,l1,l2,lc1,lc2,ls,total,val_macro_f1\n";
        for (const EpochStats& e : result.epochs) {
            out << fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", e.epoch,
                               e.mean_l1, e.mean_l2, e.mean_lc1, e.mean_lc2, e.mean_ls,
                               e.mean_total, e.val_macro_f1);
        }
    }
    {
        std::ofstream out(run_dir / "curriculum.csv", std::ios::trunc);
        if (!out) throw FormatError("cannot write curriculum.csv");
        out << "epoch,k,mean_pos_sim,mean_neg_sim,fallback_count,active_triples\n";
        for (const EpochStats& e : result.epochs) {
            out << fmt::format("{},{:.6f},{:.6f},{:.6f},{},{}\n", e.epoch, e.k, e.mean_pos_sim,
                               e.mean_neg_sim, e.fallback_count, e.active_triples);
        }
    }
    {
        const RunCounters& c = result.counters;
        json j;
        j["consistency_backwards"] = c.consistency_backwards;
        j["pseudo_bags_built"] = c.pseudo_bags_built;
        j["pseudo_skipped_empty"] = c.pseudo_skipped_empty;
        j["repeated_patient_slots"] = c.repeated_patient_slots;
        j["triplet_sets_mined"] = c.triplet_sets_mined;
        j["triples_emitted"] = c.triples_emitted;
        j["triplet_fallbacks"] = c.triplet_fallbacks;
        j["zero_norm_anchors"] = c.zero_norm_anchors;
        j["dict_updates"] = c.dict_updates;
        j["best_epoch"] = result.best_epoch;
        j["best_val_macro_f1"] = result.best_val_f1;
        j["epochs_run"] = result.epochs_run;
        std::ofstream out(run_dir / "counters.json", std::ios::trunc);
        if (!out) throw FormatError("cannot write counters.json");
        out << j.dump(2) << "\n";
    }
    save_checkpoint(result.t1, result.t2, result.meta, run_dir / "checkpoint.milc");
}

TrainConfig load_train_config(const fs::path& run_dir) {
    std::ifstream in(run_dir / "config.json");
    if (!in) throw FormatError("cannot open config.json under " + run_dir.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("config.json: invalid JSON ({})", e.what()));
    }
    TrainConfig cfg;
    try {
        cfg.dims.input_dim = j.at("dims").at("input_dim").get<std::size_t>();
        cfg.dims.hidden_dim = j.at("dims").at("hidden_dim").get<std::size_t>();
        cfg.dims.attn_dim = j.at("dims").at("attn_dim").get<std::size_t>();
        cfg.dims.num_classes = j.at("dims").at("num_classes").get<std::size_t>();
        cfg.sub_bags = j.at("sub_bags").get<std::size_t>();
        cfg.epochs = j.at("epochs").get<std::size_t>();
        cfg.patience = j.at("patience").get<std::size_t>();
        cfg.adam.lr = j.at("adam").at("lr").get<double>();
        cfg.adam.weight_decay = j.at("adam").at("weight_decay").get<double>();
        cfg.adam.beta1 = j.at("adam").at("beta1").get<double>();
        cfg.adam.beta2 = j.at("adam").at("beta2").get<double>();
        cfg.adam.eps = j.at("adam").at("eps").get<double>();
        cfg.weights.bag = j.at("weights").at("bag").get<double>();
        cfg.weights.sub_bag = j.at("weights").at("sub_bag").get<double>();
        cfg.weights.consistency = j.at("weights").at("consistency").get<double>();
        cfg.weights.embedding = j.at("weights").at("embedding").get<double>();
        cfg.triplet.top_k = j.at("triplet").at("top_k").get<std::size_t>();
        cfg.triplet.triplets_per_anchor = j.at("triplet").at("triplets_per_anchor").get<std::size_t>();
        cfg.triplet.margin = j.at("triplet").at("margin").get<double>();
        cfg.triplet.momentum = j.at("triplet").at("momentum").get<double>();
        cfg.triplet.schedule.kind = parse_schedule(j.at("triplet").at("schedule").get<std::string>());
        cfg.pooling = j.at("pooling").get<std::string>() == "logits" ? SubBagPooling::logits
                                                                     : SubBagPooling::features;
        cfg.ablation.disable_consistency = j.at("ablation").at("disable_consistency").get<bool>();
        cfg.ablation.disable_curriculum = j.at("ablation").at("disable_curriculum").get<bool>();
        cfg.ablation.disable_pseudobags = j.at("ablation").at("disable_pseudobags").get<bool>();
        cfg.seed = j.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("config.json: bad field ({})", e.what()));
    }
    cfg.triplet.schedule.max_epochs = cfg.epochs;
    return cfg;
}

}  // namespace milbag
