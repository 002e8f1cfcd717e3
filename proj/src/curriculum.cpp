#include "milbag/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <optional>

namespace milbag {

EmbeddingDictionary::EmbeddingDictionary(double momentum) : momentum_(momentum) {
    if (momentum < 0.0 || momentum >= 1.0) {
        throw ConfigError("dictionary momentum must be in [0, 1)");
    }
}

void EmbeddingDictionary::update(const std::string& case_id, const Matrix& v, std::size_t label) {
    if (v.rows() != 1 || v.cols() == 0) throw DimError("dict update: embedding must be 1 x h");
    if (!v.all_finite()) throw DomainError("dict update: non-finite embedding for " + case_id);
    auto it = index_.find(case_id);
    if (it == index_.end()) {
        index_[case_id] = entries_.size();
        entries_.push_back({case_id, label, v});
        return;
    }
    Entry& e = entries_[it->second];
    if (e.label != label) {
        throw IntegrityError(fmt::format("dict update: case {} changed label {} -> {}", case_id,
                                         e.label, label));
    }
    if (!e.embedding.same_shape(v)) throw DimError("dict update: embedding width changed");
    for (std::size_t i = 0; i < v.size(); ++i) {
        e.embedding.values()[i] =
            momentum_ * e.embedding.values()[i] + (1.0 - momentum_) * v.values()[i];
    }
}

const EmbeddingDictionary::Entry* EmbeddingDictionary::find(const std::string& case_id) const {
    auto it = index_.find(case_id);
    return it == index_.end() ? nullptr : &entries_[it->second];
}

namespace {

double l2_norm(const Matrix& v) {
    double s = 0.0;
    for (double x : v.values()) s += x * x;
    return std::sqrt(s);
}

double cosine(const Matrix& a, const Matrix& b, double norm_a, double norm_b) {
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a.values()[i] * b.values()[i];
    return std::clamp(dot / (norm_a * norm_b), -1.0, 1.0);
}

}  // namespace

AffinityIndex affinity(const std::string& anchor_case, const Matrix& anchor_v,
                       std::size_t anchor_label, const EmbeddingDictionary& dict) {
    if (dict.empty()) throw DomainError("affinity: empty dictionary");
    const double anchor_norm = l2_norm(anchor_v);
    if (anchor_norm == 0.0) throw DomainError("affinity: zero-norm anchor embedding");

    AffinityIndex index;
    index.anchor_case = anchor_case;
    for (const auto& entry : dict.entries()) {
        if (entry.case_id == anchor_case) continue;
        const double entry_norm = l2_norm(entry.embedding);
        if (entry_norm == 0.0) {
            ++index.skipped_zero_norm;
            continue;
        }
        const double sim = cosine(anchor_v, entry.embedding, anchor_norm, entry_norm);
        if (entry.label == anchor_label) {
            index.same_class.push_back({entry.case_id, sim});
        } else {
            index.other_class.push_back({entry.case_id, sim});
        }
    }
    return index;
}

ScheduleKind parse_schedule(const std::string& name) {
    if (name == "smooth") return ScheduleKind::smooth;
    if (name == "linear") return ScheduleKind::linear;
    if (name == "exp" || name == "exponential") return ScheduleKind::exponential;
    if (name == "random") return ScheduleKind::random;
    throw ConfigError("unknown schedule '" + name + "' (choose smooth, linear, exp, random)");
}

std::string schedule_name(ScheduleKind kind) {
    switch (kind) {
        case ScheduleKind::smooth: return "smooth";
        case ScheduleKind::linear: return "linear";
        case ScheduleKind::exponential: return "exp";
        case ScheduleKind::random: return "random";
    }
    throw ConfigError("unknown schedule kind");
}

double difficulty(std::size_t epoch, const CurriculumSchedule& schedule, std::mt19937_64& rng) {
    if (schedule.max_epochs == 0) throw DomainError("difficulty: max_epochs is zero");
    if (epoch > schedule.max_epochs) {
        throw DomainError(fmt::format("difficulty: epoch {} beyond max {}", epoch,
                                      schedule.max_epochs));
    }
    const double x = static_cast<double>(epoch) / static_cast<double>(schedule.max_epochs);
    double k = 0.0;
    switch (schedule.kind) {
        case ScheduleKind::smooth: k = 1.0 - x * x; break;
        case ScheduleKind::linear: k = 1.0 - x; break;
        case ScheduleKind::exponential: k = std::exp(-x); break;
        case ScheduleKind::random: {
            std::uniform_real_distribution<double> dist(0.0, 1.0);
            k = dist(rng);
            break;
        }
    }
    return std::clamp(k, 0.0, 1.0);
}

void TripletConfig::validate() const {
    if (top_k == 0) throw ConfigError("triplet top_k must be at least 1");
    if (triplets_per_anchor == 0) throw ConfigError("triplets per anchor must be at least 1");
    if (!(margin > 0.0)) throw ConfigError("triplet margin must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
}

PositivePick select_positive(const AffinityIndex& index, std::size_t top_k,
                             std::mt19937_64& rng) {
    if (index.same_class.empty()) {
        throw DomainError("select_positive: no other dictionary entry shares the anchor's class");
    }
    std::vector<std::size_t> order(index.same_class.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return index.same_class[a].sim > index.same_class[b].sim;
    });
    const std::size_t pool = std::min(top_k, order.size());
    std::uniform_int_distribution<std::size_t> pick(0, pool - 1);
    const ScoredCase& chosen = index.same_class[order[pick(rng)]];
    return {chosen.case_id, chosen.sim};
}

std::optional<ScoredCase> select_negative(const AffinityIndex& index, double threshold,
                                          double k) {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < index.other_class.size(); ++i) {
        if (index.other_class[i].sim <= threshold) candidates.push_back(i);
    }
    if (candidates.empty()) return std::nullopt;
    // Ascending gap = descending similarity; index 0 is the hardest.
    std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
        return index.other_class[a].sim > index.other_class[b].sim;
    });
    const double clamped = std::clamp(k, 0.0, 1.0);
    const auto pos = static_cast<std::size_t>(
        std::llround(clamped * static_cast<double>(candidates.size() - 1)));
    return index.other_class[candidates[pos]];
}

TripletSet mine_triplets(const std::string& anchor_case, const Matrix& anchor_v,
                         std::size_t anchor_label, const EmbeddingDictionary& dict,
                         const TripletConfig& cfg, double k, std::mt19937_64& rng) {
    cfg.validate();
    TripletSet set;
    set.anchor_case = anchor_case;
    const AffinityIndex index = affinity(anchor_case, anchor_v, anchor_label, dict);
    set.skipped_zero_norm = index.skipped_zero_norm;
    if (index.same_class.empty()) {
        set.no_same_class = true;
        return set;
    }
    if (index.other_class.empty()) {
        set.no_other_class = true;
        return set;
    }
    for (std::size_t t = 0; t < cfg.triplets_per_anchor; ++t) {
        const PositivePick pos = select_positive(index, cfg.top_k, rng);
        std::optional<ScoredCase> neg = select_negative(index, pos.threshold, k);
        bool fallback = false;
        if (!neg) {
            // Nothing under the threshold: take the least-similar entry.
            neg = *std::min_element(index.other_class.begin(), index.other_class.end(),
                                    [](const ScoredCase& a, const ScoredCase& b) {
                                        return a.sim < b.sim;
                                    });
            fallback = true;
            ++set.fallback_count;
        }
        set.triples.push_back({pos.case_id, neg->case_id, pos.threshold, neg->sim, fallback});
    }
    return set;
}

TripletLossResult triplet_loss(const Matrix& anchor_v, const TripletSet& triplets,
                               const EmbeddingDictionary& dict, double alpha) {
    TripletLossResult out;
    out.d_anchor = Matrix(1, anchor_v.cols());
    if (triplets.triples.empty()) return out;
    const double anchor_norm = l2_norm(anchor_v);
    if (anchor_norm == 0.0) throw DomainError("triplet_loss: zero-norm anchor");

    // d sim(v, D) / dv = D / (|v||D|) - sim * v / |v|^2, with D held constant.
    auto add_sim_grad = [&](const Matrix& d, double d_norm, double sim, double scale) {
        for (std::size_t i = 0; i < anchor_v.cols(); ++i) {
            const double g = d.values()[i] / (anchor_norm * d_norm) -
                             sim * anchor_v.values()[i] / (anchor_norm * anchor_norm);
            out.d_anchor.values()[i] += scale * g;
        }
    };

    for (const Triple& tr : triplets.triples) {
        const auto* pos = dict.find(tr.positive_id);
        const auto* neg = dict.find(tr.negative_id);
        if (pos == nullptr || neg == nullptr) {
            throw DomainError("triplet_loss: triple references a missing dictionary entry");
        }
        const double pos_norm = l2_norm(pos->embedding);
        const double neg_norm = l2_norm(neg->embedding);
        if (pos_norm == 0.0 || neg_norm == 0.0) {
            throw DomainError("triplet_loss: zero-norm dictionary entry");
        }
        const double pos_sim = cosine(anchor_v, pos->embedding, anchor_norm, pos_norm);
        const double neg_sim = cosine(anchor_v, neg->embedding, anchor_norm, neg_norm);
        const double term = neg_sim - pos_sim + alpha;
        if (term > 0.0) {
            out.loss += term;
            add_sim_grad(neg->embedding, neg_norm, neg_sim, 1.0);
            add_sim_grad(pos->embedding, pos_norm, pos_sim, -1.0);
        }
    }
    return out;
}

}  // namespace milbag
