#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "milbag/errors.hpp"
#include "milbag/numerics.hpp"

namespace milbag {

/// Splits instance indices 0..n-1 into `num_groups` groups by striding over
/// the indices ranked by weight, highest first (ties keep the lower original
/// index first). Group k takes ranked positions k, k+S, k+2S, ... so every
/// group spans the full weight range and sizes differ by at most one.
std::vector<std::vector<std::size_t>> partition_by_distribution(std::span<const double> weights,
                                                                std::size_t num_groups);

/// Projected per-class bag counts after augmentation: each class c gains the
/// mean of the other classes' counts, sum_{d != c} N_d / (C - 1). The total
/// always doubles and the class distribution can only get more uniform.
std::vector<double> expected_balanced_counts(std::span<const std::size_t> counts);

/// Most recent sub-bag partition per case, grouped by class and donor
/// patient. Insertion order is fixed by first store, so draws are
/// reproducible under a seeded RNG.
class SubBagCache {
public:
    explicit SubBagCache(std::size_t num_classes);

    /// Stores (or replaces in place) the partition for one case.
    void store(const std::string& case_id, const std::string& patient_id, std::size_t label,
               std::vector<Matrix> sub_bags);

    std::size_t num_classes() const { return per_class_.size(); }
    std::size_t cases_for(std::size_t label) const;
    std::size_t patients_for(std::size_t label) const;

    struct Entry {
        std::string case_id;
        std::string patient_id;
        std::vector<Matrix> sub_bags;
    };
    std::span<const Entry> entries_for(std::size_t label) const;

private:
    std::vector<std::vector<Entry>> per_class_;
};

/// Unlabeled composite bag assembled from stored sub-bags of one class.
struct PseudoBag {
    std::size_t source_class = 0;
    std::vector<Matrix> sub_bags;
    std::vector<std::string> donor_cases;
    // Slots that had to reuse a donor patient because fewer than
    // `sub_bags.size()` distinct patients were cached for the class.
    std::size_t repeated_patient_slots = 0;
};

/// Draws `num_sub_bags` sub-bags from distinct donor patients of
/// `source_class`, falling back to sampling patients with replacement when
/// too few are cached. Returns nullopt when the class has no cached cases.
std::optional<PseudoBag> build_pseudo_bag(const SubBagCache& cache, std::size_t source_class,
                                          std::size_t num_sub_bags, std::mt19937_64& rng);

/// Uniform draw over classes excluding `exclude`.
std::size_t draw_other_class(std::size_t num_classes, std::size_t exclude, std::mt19937_64& rng);

}  // namespace milbag
