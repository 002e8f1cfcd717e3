#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "milbag/errors.hpp"
#include "milbag/numerics.hpp"

namespace milbag {

/// True labels plus one probability row per case.
struct ScoreSet {
    std::vector<std::size_t> labels;
    Matrix probs;  // n cases x C classes

    std::size_t num_cases() const { return labels.size(); }
    std::size_t num_classes() const { return probs.cols(); }
    void validate() const;
};

struct ConfusionMatrix {
    std::size_t num_classes = 0;
    std::vector<std::size_t> counts;  // row = true class, col = predicted

    std::size_t& at(std::size_t t, std::size_t p) { return counts[t * num_classes + p]; }
    std::size_t at(std::size_t t, std::size_t p) const { return counts[t * num_classes + p]; }
    std::size_t total() const;
    std::size_t trace() const;
};

/// Argmax predictions; ties resolve to the lower class index.
ConfusionMatrix confusion(const ScoreSet& scores);

struct MacroF1 {
    double value = 0.0;
    std::size_t undefined_classes = 0;  // zero-denominator classes, counted as 0
};
MacroF1 macro_f1(const ConfusionMatrix& cm);

/// One-vs-rest rates macro-averaged over classes. Zero-denominator classes
/// contribute 0 and are tallied per rate.
struct MacroRates {
    double sens = 0.0, spec = 0.0, ppv = 0.0, npv = 0.0;
    std::size_t undefined_sens = 0, undefined_spec = 0, undefined_ppv = 0, undefined_npv = 0;
};
MacroRates macro_ovr_rates(const ConfusionMatrix& cm);

/// Generalized multi-class Matthews correlation (the R_K statistic);
/// 0 when either denominator factor vanishes.
double mcc(const ConfusionMatrix& cm);

/// Rank-statistic ROC AUC with ties contributing 1/2. `positive` marks the
/// cases of the class under test.
double binary_auc(std::span<const double> scores, const std::vector<bool>& positive);

struct MacroAuc {
    std::optional<double> value;  // absent when no class has both sides
    std::size_t skipped_classes = 0;
};
MacroAuc auc_macro_ovr(const ScoreSet& scores);

struct MetricTable {
    double f1_macro = 0.0;
    std::optional<double> auc_macro;
    double acc = 0.0;
    double mcc = 0.0;
    double sens = 0.0, spec = 0.0, ppv = 0.0, npv = 0.0;

    std::size_t undefined_f1 = 0;
    std::size_t undefined_sens = 0, undefined_spec = 0, undefined_ppv = 0, undefined_npv = 0;
    std::size_t auc_skipped_classes = 0;
};

MetricTable metric_table(const ScoreSet& scores);

/// Two CSV lines (header + values), everything x100 at two decimals, "NA"
/// for an absent AUC. Always exactly eight columns.
std::string metric_csv(const MetricTable& t);

}  // namespace milbag
