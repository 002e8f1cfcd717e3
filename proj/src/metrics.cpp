#include "milbag/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

namespace milbag {

void ScoreSet::validate() const {
    if (labels.empty()) throw DomainError("score set: no cases");
    if (probs.rows() != labels.size()) {
        throw DimError(fmt::format("score set: {} labels for {} probability rows", labels.size(),
                                   probs.rows()));
    }
    if (probs.cols() < 2) throw DimError("score set: need at least 2 classes");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= probs.cols()) {
            throw DomainError(fmt::format("score set: label {} out of range {}", labels[i],
                                          probs.cols()));
        }
        double sum = 0.0;
        for (double p : probs.row(i)) {
            if (!(p >= 0.0)) throw DomainError("score set: negative probability");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw DomainError(fmt::format("score set: row {} sums to {}", i, sum));
        }
    }
}

std::size_t ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

std::size_t ConfusionMatrix::trace() const {
    std::size_t t = 0;
    for (std::size_t c = 0; c < num_classes; ++c) t += at(c, c);
    return t;
}

ConfusionMatrix confusion(const ScoreSet& scores) {
    scores.validate();
    const std::size_t c_count = scores.num_classes();
    ConfusionMatrix cm;
    cm.num_classes = c_count;
    cm.counts.assign(c_count * c_count, 0);
    for (std::size_t i = 0; i < scores.num_cases(); ++i) {
        std::size_t pred = 0;
        for (std::size_t c = 1; c < c_count; ++c) {
            if (scores.probs(i, c) > scores.probs(i, pred)) pred = c;
        }
        ++cm.at(scores.labels[i], pred);
    }
    return cm;
}

MacroF1 macro_f1(const ConfusionMatrix& cm) {
    MacroF1 out;
    for (std::size_t c = 0; c < cm.num_classes; ++c) {
        std::size_t tp = cm.at(c, c), fp = 0, fn = 0;
        for (std::size_t o = 0; o < cm.num_classes; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        const std::size_t denom = 2 * tp + fp + fn;
        if (denom == 0) {
            ++out.undefined_classes;
            continue;
        }
        out.value += 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    }
    out.value /= static_cast<double>(cm.num_classes);
    return out;
}

MacroRates macro_ovr_rates(const ConfusionMatrix& cm) {
    MacroRates out;
    for (std::size_t c = 0; c < cm.num_classes; ++c) {
        std::size_t tp = cm.at(c, c), fp = 0, fn = 0, tn = 0;
        for (std::size_t t = 0; t < cm.num_classes; ++t) {
            for (std::size_t p = 0; p < cm.num_classes; ++p) {
                if (t == c && p == c) continue;
                if (t == c) fn += cm.at(t, p);
                else if (p == c) fp += cm.at(t, p);
                else tn += cm.at(t, p);
            }
        }
        auto rate = [](std::size_t num, std::size_t den, double& acc, std::size_t& undef) {
            if (den == 0) ++undef;
            else acc += static_cast<double>(num) / static_cast<double>(den);
        };
        rate(tp, tp + fn, out.sens, out.undefined_sens);
        rate(tn, tn + fp, out.spec, out.undefined_spec);
        rate(tp, tp + fp, out.ppv, out.undefined_ppv);
        rate(tn, tn + fn, out.npv, out.undefined_npv);
    }
    const auto c_count = static_cast<double>(cm.num_classes);
    out.sens /= c_count;
    out.spec /= c_count;
    out.ppv /= c_count;
    out.npv /= c_count;
    return out;
}

double mcc(const ConfusionMatrix& cm) {
    const double s = static_cast<double>(cm.total());
    const double c = static_cast<double>(cm.trace());
    double dot_pt = 0.0, dot_pp = 0.0, dot_tt = 0.0;
    for (std::size_t k = 0; k < cm.num_classes; ++k) {
        double t_k = 0.0, p_k = 0.0;
        for (std::size_t o = 0; o < cm.num_classes; ++o) {
            t_k += static_cast<double>(cm.at(k, o));
            p_k += static_cast<double>(cm.at(o, k));
        }
        dot_pt += p_k * t_k;
        dot_pp += p_k * p_k;
        dot_tt += t_k * t_k;
    }
    const double denom_p = s * s - dot_pp;
    const double denom_t = s * s - dot_tt;
    if (denom_p <= 0.0 || denom_t <= 0.0) return 0.0;
    return (c * s - dot_pt) / std::sqrt(denom_p * denom_t);
}

double binary_auc(std::span<const double> scores, const std::vector<bool>& positive) {
    if (scores.size() != positive.size()) throw DimError("binary_auc: length mismatch");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (bool p : positive) n_pos += p ? 1 : 0;
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DomainError("binary_auc: needs both classes");

    // Midranks: tied scores share the average of their rank range.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double rank_sum_pos = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (positive[k]) rank_sum_pos += rank[k];
    }
    const double np = static_cast<double>(n_pos);
    const double nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

MacroAuc auc_macro_ovr(const ScoreSet& scores) {
    scores.validate();
    MacroAuc out;
    double sum = 0.0;
    std::size_t defined = 0;
    for (std::size_t c = 0; c < scores.num_classes(); ++c) {
        std::vector<double> col(scores.num_cases());
        std::vector<bool> pos(scores.num_cases());
        std::size_t n_pos = 0;
        for (std::size_t i = 0; i < scores.num_cases(); ++i) {
            col[i] = scores.probs(i, c);
            pos[i] = scores.labels[i] == c;
            n_pos += pos[i] ? 1 : 0;
        }
        if (n_pos == 0 || n_pos == scores.num_cases()) {
            ++out.skipped_classes;
            continue;
        }
        sum += binary_auc(col, pos);
        ++defined;
    }
    if (defined > 0) out.value = sum / static_cast<double>(defined);
    return out;
}

MetricTable metric_table(const ScoreSet& scores) {
    const ConfusionMatrix cm = confusion(scores);
    const MacroF1 f1 = macro_f1(cm);
    const MacroRates rates = macro_ovr_rates(cm);
    const MacroAuc auc = auc_macro_ovr(scores);

    MetricTable t;
    t.f1_macro = f1.value;
    t.undefined_f1 = f1.undefined_classes;
    t.auc_macro = auc.value;
    t.auc_skipped_classes = auc.skipped_classes;
    t.acc = static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
    t.mcc = mcc(cm);
    t.sens = rates.sens;
    t.spec = rates.spec;
    t.ppv = rates.ppv;
    t.npv = rates.npv;
    t.undefined_sens = rates.undefined_sens;
    t.undefined_spec = rates.undefined_spec;
    t.undefined_ppv = rates.undefined_ppv;
    t.undefined_npv = rates.undefined_npv;
    return t;
}

std::string metric_csv(const MetricTable& t) {
    auto cell = [](double v) { return fmt::format("{:.2f}", v * 100.0); };
    std::string out = "f1_macro,auc_macro_ovr,acc,mcc,sens,spec,ppv,npv\n";
    out += cell(t.f1_macro) + ",";
    out += (t.auc_macro ? cell(*t.auc_macro) : std::string("NA")) + ",";
    out += cell(t.acc) + "," + cell(t.mcc) + "," + cell(t.sens) + "," + cell(t.spec) + "," +
           cell(t.ppv) + "," + cell(t.npv) + "\n";
    return out;
}

}  // namespace milbag
