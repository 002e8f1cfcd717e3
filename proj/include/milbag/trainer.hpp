#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "milbag/bagstore.hpp"
#include "milbag/curriculum.hpp"
#include "milbag/errors.hpp"
#include "milbag/metrics.hpp"
#include "milbag/model.hpp"
#include "milbag/sampling.hpp"

namespace milbag {

struct LossWeights {
    double bag = 1.0;          // w1, bag-level cross entropy
    double sub_bag = 1.0;      // w2, sub-bag head cross entropy
    double consistency = 1.0;  // wc, applied to both consistency terms
    double embedding = 1.0;    // ws, triplet loss on the pooled embedding
};

struct AblationFlags {
    bool disable_consistency = false;  // drops both consistency losses (and pseudo-bag use)
    bool disable_curriculum = false;   // drops triplet mining and the embedding loss
    bool disable_pseudobags = false;   // keeps real-bag consistency only
};

struct TrainConfig {
    ModelDims dims;
    std::size_t sub_bags = 11;
    std::size_t epochs = 100;
    std::size_t patience = 20;
    AdamConfig adam;
    LossWeights weights;
    TripletConfig triplet;
    SubBagPooling pooling = SubBagPooling::features;
    AblationFlags ablation;
    std::uint64_t seed = 0;

    void validate() const;
};

// Standalone loss terms. Each runs its own forward pass, accumulates
// weight * gradient into the parameters, and returns the unweighted loss.

double loss_l1(const Matrix& features, std::size_t label, GatedAttentionParams& t1,
               double weight = 1.0);

double loss_l2(const Matrix& features, std::span<const std::vector<std::size_t>> groups,
               std::size_t label, GatedAttentionParams& t2, SubBagPooling pooling,
               double weight = 1.0);

/// Soft cross entropy between the first head's prediction (held constant)
/// and the sub-bag head's prediction of the same input. Gradients reach the
/// sub-bag head only.
double loss_consistency(const Matrix& features, std::span<const std::vector<std::size_t>> groups,
                        const GatedAttentionParams& t1, GatedAttentionParams& t2,
                        SubBagPooling pooling, double weight = 1.0);

/// Pseudo-bag variant: the first head sees the concatenated instances, the
/// sub-bag head keeps the stored donor boundaries.
double loss_consistency(std::span<const Matrix> sub_bags, const GatedAttentionParams& t1,
                        GatedAttentionParams& t2, SubBagPooling pooling, double weight = 1.0);

struct LossRow {
    std::size_t epoch = 0;
    std::string case_id;
    double l1 = 0.0, l2 = 0.0, lc1 = 0.0, lc2 = 0.0, ls = 0.0;
    double total = 0.0;
};

struct EpochStats {
    std::size_t epoch = 0;
    double mean_l1 = 0.0, mean_l2 = 0.0, mean_lc1 = 0.0, mean_lc2 = 0.0, mean_ls = 0.0;
    double mean_total = 0.0;
    double val_macro_f1 = 0.0;
    double k = 0.0;  // curriculum difficulty used this epoch
    double mean_pos_sim = 0.0;
    double mean_neg_sim = 0.0;
    std::size_t fallback_count = 0;
    std::size_t active_triples = 0;
};

struct RunCounters {
    std::size_t consistency_backwards = 0;
    std::size_t pseudo_bags_built = 0;
    std::size_t pseudo_skipped_empty = 0;
    std::size_t repeated_patient_slots = 0;
    std::size_t triplet_sets_mined = 0;
    std::size_t triples_emitted = 0;
    std::size_t triplet_fallbacks = 0;
    std::size_t zero_norm_anchors = 0;
    std::size_t dict_updates = 0;
};

// Test hook: called after each mined triplet set with the dictionary state
// it was mined against.
using TripletObserver = std::function<void(const Matrix& anchor_v, std::size_t anchor_label,
                                           const TripletSet& set,
                                           const EmbeddingDictionary& dict, double k)>;

struct TrainHooks {
    TripletObserver on_triplets;
};

struct EpochTelemetry {
    double pos_sim_sum = 0.0;
    double neg_sim_sum = 0.0;
    std::size_t triples = 0;
    std::size_t fallbacks = 0;
};

struct IterationContext {
    GatedAttentionParams& t1;
    GatedAttentionParams& t2;
    EmbeddingDictionary& dict;
    SubBagCache& cache;
    std::mt19937_64& pseudo_rng;
    std::mt19937_64& triplet_rng;
    RunCounters& counters;
    EpochTelemetry& telemetry;
    const TrainHooks* hooks = nullptr;
};

/// One optimizer step on one training bag: both heads forward, all enabled
/// loss terms, one Adam step per parameter. `k` is the curriculum difficulty
/// for the current epoch; mining is skipped during epoch 0 while the
/// dictionary fills.
LossRow train_iteration(const FeatureBag& bag, std::size_t num_classes, std::size_t epoch,
                        double k, const TrainConfig& cfg, IterationContext ctx);

struct FitResult {
    GatedAttentionParams t1;  // best-validation weights
    GatedAttentionParams t2;
    CheckpointMeta meta;
    std::vector<LossRow> iterations;
    std::vector<EpochStats> epochs;
    RunCounters counters;
    std::size_t best_epoch = 0;
    double best_val_f1 = 0.0;
    std::size_t epochs_run = 0;
};

FitResult fit(const Dataset& dataset, const SplitSpec& split, const TrainConfig& cfg,
              const TrainHooks* hooks = nullptr);

enum class EvalHead { t1, t2 };

/// Per-case class probabilities for the listed cases. The sub-bag head
/// variant partitions each bag by the first head's attention before scoring.
/// Cases are independent, so `threads` only affects wall time.
ScoreSet evaluate_scores(const Dataset& dataset, std::span<const std::string> case_ids,
                         const GatedAttentionParams& t1, const GatedAttentionParams& t2,
                         std::size_t sub_bags, SubBagPooling pooling, EvalHead head,
                         std::size_t threads = 1);

MetricTable evaluate(const Dataset& dataset, std::span<const std::string> case_ids,
                     const GatedAttentionParams& t1, const GatedAttentionParams& t2,
                     std::size_t sub_bags, SubBagPooling pooling, EvalHead head,
                     std::size_t threads = 1);

/// MILBAG_EVAL_THREADS, or 1 when unset or unparsable.
std::size_t eval_threads_from_env();

/// Central finite-difference audit of every backward pass on one seeded
/// small model: bag loss, sub-bag loss, consistency (sub-bag side),
/// embedding triplet loss, and the combined bag+embedding path. Returns the
/// worst relative error across all checked coordinates. Consistency targets
/// are constants by design, so each term is checked against the parameters
/// it actually trains.
GradCheckReport gradient_suite(std::uint64_t seed, double h = 5e-4);

/// Writes config.json, losses.csv, curriculum.csv, counters.json and
/// checkpoint.milc under run_dir.
void save_fit_artifacts(const std::filesystem::path& run_dir, const TrainConfig& cfg,
                        const FitResult& result);

TrainConfig load_train_config(const std::filesystem::path& run_dir);

}  // namespace milbag
