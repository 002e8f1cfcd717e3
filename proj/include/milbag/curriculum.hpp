#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "milbag/errors.hpp"
#include "milbag/numerics.hpp"

namespace milbag {

/// Momentum-averaged pooled embedding per case, in first-insertion order.
/// The dictionary is a slowly moving snapshot of where each case sits in
/// embedding space; triplet mining treats its entries as constants.
class EmbeddingDictionary {
public:
    explicit EmbeddingDictionary(double momentum = 0.9);

    struct Entry {
        std::string case_id;
        std::size_t label = 0;
        Matrix embedding;  // 1 x h
    };

    /// First insertion stores v directly; afterwards D <- m*D + (1-m)*v.
    void update(const std::string& case_id, const Matrix& v, std::size_t label);

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    double momentum() const { return momentum_; }
    std::span<const Entry> entries() const { return entries_; }
    const Entry* find(const std::string& case_id) const;

private:
    double momentum_;
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct ScoredCase {
    std::string case_id;
    double sim = 0.0;
};

/// Cosine similarities between one anchor embedding and every other
/// dictionary entry, split by whether the entry shares the anchor's class.
struct AffinityIndex {
    std::string anchor_case;
    std::vector<ScoredCase> same_class;
    std::vector<ScoredCase> other_class;
    std::size_t skipped_zero_norm = 0;
};

AffinityIndex affinity(const std::string& anchor_case, const Matrix& anchor_v,
                       std::size_t anchor_label, const EmbeddingDictionary& dict);

enum class ScheduleKind { smooth, linear, exponential, random };

ScheduleKind parse_schedule(const std::string& name);
std::string schedule_name(ScheduleKind kind);

struct CurriculumSchedule {
    ScheduleKind kind = ScheduleKind::smooth;
    std::size_t max_epochs = 100;
};

/// Difficulty knob k in [0,1]; 1 selects the easiest negatives, 0 the
/// hardest. Deterministic in the epoch except for the random kind, which
/// draws from the supplied stream.
double difficulty(std::size_t epoch, const CurriculumSchedule& schedule, std::mt19937_64& rng);

struct TripletConfig {
    std::size_t top_k = 8;
    std::size_t triplets_per_anchor = 4;
    double margin = 0.3;
    double momentum = 0.9;
    CurriculumSchedule schedule;

    void validate() const;
};

/// Uniform choice among the top-min(K, pool) same-class entries by
/// similarity. The chosen entry's similarity becomes the threshold below
/// which negatives are admitted.
struct PositivePick {
    std::string case_id;
    double threshold = 0.0;
};
PositivePick select_positive(const AffinityIndex& index, std::size_t top_k, std::mt19937_64& rng);

/// Deterministic quantile over the admissible negatives: entries with
/// similarity <= threshold, sorted by increasing gap (threshold - sim), pick
/// index round(k*(M-1)). k=0 is the hardest admissible negative, k=1 the
/// easiest. Returns nullopt when nothing is admissible.
std::optional<ScoredCase> select_negative(const AffinityIndex& index, double threshold, double k);

struct Triple {
    std::string positive_id;
    std::string negative_id;
    double pos_sim = 0.0;
    double neg_sim = 0.0;
    bool fallback = false;  // negative taken outside the semi-hard window
};

struct TripletSet {
    std::string anchor_case;
    std::vector<Triple> triples;
    std::size_t fallback_count = 0;
    std::size_t skipped_zero_norm = 0;
    bool no_same_class = false;
    bool no_other_class = false;
};

/// Builds up to cfg.triplets_per_anchor triples for one anchor at difficulty
/// k. When the semi-hard window is empty the least-similar other-class entry
/// is used and counted as a fallback; with no other-class entries at all the
/// set comes back empty with the corresponding flag raised.
TripletSet mine_triplets(const std::string& anchor_case, const Matrix& anchor_v,
                         std::size_t anchor_label, const EmbeddingDictionary& dict,
                         const TripletConfig& cfg, double k, std::mt19937_64& rng);

struct TripletLossResult {
    double loss = 0.0;
    Matrix d_anchor;  // 1 x h, zero when every hinge is inactive
};

/// Hinge sum over the triples, max(0, sim(v,neg) - sim(v,pos) + alpha),
/// differentiated with respect to the anchor only.
TripletLossResult triplet_loss(const Matrix& anchor_v, const TripletSet& triplets,
                               const EmbeddingDictionary& dict, double alpha);

}  // namespace milbag
