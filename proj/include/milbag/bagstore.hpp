#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "milbag/numerics.hpp"

namespace milbag {

/// One case's instance-feature matrix plus identifiers; the unit of weak
/// supervision. Only the bag carries a label, never the instances.
struct FeatureBag {
    std::string case_id;
    std::string patient_id;
    std::size_t label = 0;
    Matrix features;  // N instances x d dims

    std::size_t num_instances() const { return features.rows(); }
};

struct BagRecord {
    std::string case_id;
    std::string patient_id;
    std::size_t label = 0;
    std::string path;  // relative to the manifest directory
    std::size_t n_instances = 0;
};

struct DatasetManifest {
    std::vector<std::string> class_names;
    std::size_t dim = 0;
    std::optional<std::uint64_t> generator_seed;
    std::vector<BagRecord> bags;

    std::size_t num_classes() const { return class_names.size(); }
    std::vector<std::size_t> class_counts() const;
    void validate() const;
};

struct SplitSpec {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
    std::uint64_t seed = 0;
};

struct SyntheticConfig {
    std::size_t num_classes = 3;
    std::vector<double> ratio = {1.0, 2.4, 4.4};
    std::size_t total_bags = 195;
    std::size_t dim = 32;
    std::size_t n_min = 24;  // instances per bag
    std::size_t n_max = 64;
    double salient_fraction = 0.25;
    double background_scale = 1.0;
    double patient_scale = 0.0;  // stddev of a per-bag offset shared by all instances
    std::uint64_t seed = 7;

    void validate() const;
};

/// Bag file format (little-endian): magic "MILB", version u16 = 1,
/// reserved u16 = 0, N u32, d u32, N*d float32 row-major, CRC32(payload) u32.
void write_bag(const FeatureBag& bag, const std::filesystem::path& path);
FeatureBag read_bag(const std::filesystem::path& path);

/// Apportions `total` seats proportionally to `weights` with largest-remainder
/// rounding; remainder ties break toward the lower index.
std::vector<std::size_t> apportion_largest_remainder(std::span<const double> weights,
                                                     std::size_t total);

/// Writes bag files plus manifest.json under out_dir. Class 0 is the "normal"
/// class drawing every instance from the background distribution; classes
/// c >= 1 mix in a class-specific unit-norm mean shift on the salient
/// instances. Fully determined by cfg.seed.
DatasetManifest generate_synthetic(const SyntheticConfig& cfg,
                                   const std::filesystem::path& out_dir);

/// Shannon entropy of the class distribution in bits.
double dataset_entropy(std::span<const std::size_t> class_counts);
double dataset_entropy(std::span<const double> class_weights);

SplitSpec stratified_split(const DatasetManifest& manifest, std::uint64_t seed,
                           double test_frac = 0.2, double val_of_train = 0.2);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

void save_split(const SplitSpec& split, const std::filesystem::path& path);
SplitSpec load_split(const std::filesystem::path& path);

/// Manifest plus all bags resident in memory, indexed by case id.
struct Dataset {
    DatasetManifest manifest;
    std::vector<FeatureBag> bags;

    static Dataset load(const std::filesystem::path& dataset_dir);

    const FeatureBag& bag(const std::string& case_id) const;
    const FeatureBag& bag(std::size_t index) const { return bags[index]; }
    std::size_t num_classes() const { return manifest.num_classes(); }

private:
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace milbag
