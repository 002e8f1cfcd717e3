#include "milbag/sampling.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <numeric>

namespace milbag {

std::vector<std::vector<std::size_t>> partition_by_distribution(std::span<const double> weights,
                                                                std::size_t num_groups) {
    const std::size_t n = weights.size();
    if (num_groups == 0) throw DomainError("partition: need at least one group");
    if (num_groups > n) {
        throw DomainError(fmt::format("partition: {} groups for {} instances", num_groups, n));
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });

    std::vector<std::vector<std::size_t>> groups(num_groups);
    for (std::size_t rank = 0; rank < n; ++rank) {
        groups[rank % num_groups].push_back(order[rank]);
    }
    return groups;
}

std::vector<double> expected_balanced_counts(std::span<const std::size_t> counts) {
    if (counts.size() < 2) throw DomainError("expected_balanced_counts: need at least 2 classes");
    double total = 0.0;
    for (std::size_t c : counts) total += static_cast<double>(c);
    const double denom = static_cast<double>(counts.size() - 1);
    std::vector<double> out(counts.size());
    for (std::size_t c = 0; c < counts.size(); ++c) {
        const double own = static_cast<double>(counts[c]);
        out[c] = own + (total - own) / denom;
    }
    return out;
}

SubBagCache::SubBagCache(std::size_t num_classes) : per_class_(num_classes) {
    if (num_classes < 2) throw DomainError("SubBagCache: need at least 2 classes");
}

void SubBagCache::store(const std::string& case_id, const std::string& patient_id,
                        std::size_t label, std::vector<Matrix> sub_bags) {
    if (label >= per_class_.size()) {
        throw DomainError(fmt::format("SubBagCache: label {} out of range {}", label,
                                      per_class_.size()));
    }
    if (sub_bags.empty()) throw DomainError("SubBagCache: empty sub-bag list");
    auto& entries = per_class_[label];
    auto it = std::find_if(entries.begin(), entries.end(),
                           [&](const Entry& e) { return e.case_id == case_id; });
    if (it != entries.end()) {
        it->sub_bags = std::move(sub_bags);
        return;
    }
    entries.push_back({case_id, patient_id, std::move(sub_bags)});
}

std::size_t SubBagCache::cases_for(std::size_t label) const {
    return per_class_.at(label).size();
}

std::size_t SubBagCache::patients_for(std::size_t label) const {
    std::vector<std::string> seen;
    for (const Entry& e : per_class_.at(label)) {
        if (std::find(seen.begin(), seen.end(), e.patient_id) == seen.end()) {
            seen.push_back(e.patient_id);
        }
    }
    return seen.size();
}

std::span<const SubBagCache::Entry> SubBagCache::entries_for(std::size_t label) const {
    return per_class_.at(label);
}

std::optional<PseudoBag> build_pseudo_bag(const SubBagCache& cache, std::size_t source_class,
                                          std::size_t num_sub_bags, std::mt19937_64& rng) {
    if (num_sub_bags == 0) throw DomainError("build_pseudo_bag: need at least one sub-bag");
    const auto entries = cache.entries_for(source_class);
    if (entries.empty()) return std::nullopt;

    // Donor patients in first-seen order, each with its cached cases.
    std::vector<std::string> patient_ids;
    std::vector<std::vector<std::size_t>> patient_cases;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto it = std::find(patient_ids.begin(), patient_ids.end(), entries[i].patient_id);
        if (it == patient_ids.end()) {
            patient_ids.push_back(entries[i].patient_id);
            patient_cases.push_back({i});
        } else {
            patient_cases[static_cast<std::size_t>(it - patient_ids.begin())].push_back(i);
        }
    }

    std::vector<std::size_t> chosen_patients;
    std::size_t repeated = 0;
    if (patient_ids.size() >= num_sub_bags) {
        // Partial Fisher-Yates draw of distinct patients.
        std::vector<std::size_t> pool(patient_ids.size());
        std::iota(pool.begin(), pool.end(), 0);
        for (std::size_t k = 0; k < num_sub_bags; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
            std::swap(pool[k], pool[pick(rng)]);
            chosen_patients.push_back(pool[k]);
        }
    } else {
        chosen_patients.resize(patient_ids.size());
        std::iota(chosen_patients.begin(), chosen_patients.end(), 0);
        std::uniform_int_distribution<std::size_t> pick(0, patient_ids.size() - 1);
        while (chosen_patients.size() < num_sub_bags) {
            chosen_patients.push_back(pick(rng));
            ++repeated;
        }
    }

    PseudoBag pb;
    pb.source_class = source_class;
    pb.repeated_patient_slots = repeated;
    for (std::size_t p : chosen_patients) {
        const auto& cases = patient_cases[p];
        std::uniform_int_distribution<std::size_t> case_pick(0, cases.size() - 1);
        const auto& entry = entries[cases[case_pick(rng)]];
        std::uniform_int_distribution<std::size_t> sub_pick(0, entry.sub_bags.size() - 1);
        pb.sub_bags.push_back(entry.sub_bags[sub_pick(rng)]);
        pb.donor_cases.push_back(entry.case_id);
    }
    return pb;
}

std::size_t draw_other_class(std::size_t num_classes, std::size_t exclude, std::mt19937_64& rng) {
    if (num_classes < 2) throw DomainError("draw_other_class: need at least 2 classes");
    if (exclude >= num_classes) {
        throw DomainError(fmt::format("draw_other_class: exclude {} out of range {}", exclude,
                                      num_classes));
    }
    std::uniform_int_distribution<std::size_t> pick(0, num_classes - 2);
    std::size_t c = pick(rng);
    if (c >= exclude) ++c;
    return c;
}

}  // namespace milbag
