#include "milbag/bagstore.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fmt/format.h>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"

namespace milbag {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::size_t> DatasetManifest::class_counts() const {
    std::vector<std::size_t> counts(num_classes(), 0);
    for (const auto& rec : bags) ++counts[rec.label];
    return counts;
}

void DatasetManifest::validate() const {
    if (num_classes() < 2) throw FormatError("manifest: fewer than 2 classes");
    if (dim == 0) throw FormatError("manifest: dim must be positive");
    std::set<std::string> seen;
    for (const auto& rec : bags) {
        if (!seen.insert(rec.case_id).second) {
            throw FormatError("manifest: duplicate case_id " + rec.case_id);
        }
        if (rec.label >= num_classes()) {
            throw FormatError(fmt::format("manifest: case {} has label {} >= {} classes",
                                          rec.case_id, rec.label, num_classes()));
        }
    }
}

void SyntheticConfig::validate() const {
    if (num_classes < 2) throw ConfigError("synthetic: need at least 2 classes");
    if (ratio.size() != num_classes) {
        throw ConfigError(fmt::format("synthetic: ratio has {} entries for {} classes",
                                      ratio.size(), num_classes));
    }
    for (double r : ratio) {
        if (!(r > 0.0)) throw ConfigError("synthetic: ratio entries must be positive");
    }
    if (total_bags == 0) throw ConfigError("synthetic: total_bags must be positive");
    if (dim == 0) throw ConfigError("synthetic: dim must be positive");
    if (n_min < 4) throw ConfigError("synthetic: n_min must be at least 4");
    if (n_max < n_min) throw ConfigError("synthetic: n_max < n_min");
    if (!(salient_fraction > 0.0) || salient_fraction > 1.0) {
        throw ConfigError("synthetic: salient_fraction must be in (0, 1]");
    }
    if (!(background_scale > 0.0)) throw ConfigError("synthetic: background_scale must be positive");
    if (!(patient_scale >= 0.0) || !std::isfinite(patient_scale)) {
        throw ConfigError("synthetic: patient_scale must be finite and non-negative");
    }
}

namespace {

constexpr char kBagMagic[4] = {'M', 'I', 'L', 'B'};
constexpr std::uint16_t kBagVersion = 1;

template <typename T>
void put_le(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get_le(const std::string& buf, std::size_t offset) {
    T v;
    std::memcpy(&v, buf.data() + offset, sizeof(T));
    return v;
}

std::string read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open file: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_bytes(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open file for writing: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed: " + path.string());
}

std::uint32_t payload_crc(const char* data, std::size_t len) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(len));
    return static_cast<std::uint32_t>(crc);
}

}  // namespace

void write_bag(const FeatureBag& bag, const fs::path& path) {
    if (bag.features.rows() == 0 || bag.features.cols() == 0) {
        throw FormatError("write_bag: empty feature matrix for " + bag.case_id);
    }
    if (!bag.features.all_finite()) {
        throw FormatError("write_bag: non-finite feature for " + bag.case_id);
    }
    std::string out;
    out.append(kBagMagic, 4);
    put_le<std::uint16_t>(out, kBagVersion);
    put_le<std::uint16_t>(out, 0);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(bag.features.rows()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(bag.features.cols()));
    const std::size_t payload_offset = out.size();
    for (double v : bag.features.values()) {
        put_le<float>(out, static_cast<float>(v));
    }
    const std::size_t payload_len = out.size() - payload_offset;
    put_le<std::uint32_t>(out, payload_crc(out.data() + payload_offset, payload_len));
    write_file_bytes(path, out);
}

FeatureBag read_bag(const fs::path& path) {
    const std::string buf = read_file_bytes(path);
    if (buf.size() < 16) {
        throw FormatError(fmt::format("{}: truncated header ({} bytes)", path.string(), buf.size()));
    }
    if (std::memcmp(buf.data(), kBagMagic, 4) != 0) {
        throw FormatError(path.string() + ": bad magic at byte offset 0");
    }
    if (get_le<std::uint16_t>(buf, 4) != kBagVersion) {
        throw FormatError(path.string() + ": unsupported version at byte offset 4");
    }
    const auto n = get_le<std::uint32_t>(buf, 8);
    const auto d = get_le<std::uint32_t>(buf, 12);
    if (n == 0 || d == 0) {
        throw FormatError(path.string() + ": zero dimension in header at byte offset 8");
    }
    const std::size_t payload_len = static_cast<std::size_t>(n) * d * sizeof(float);
    const std::size_t expected = 16 + payload_len + sizeof(std::uint32_t);
    if (buf.size() != expected) {
        throw FormatError(fmt::format("{}: header says {} payload bytes but file has {} (expected {} total)",
                                      path.string(), payload_len, buf.size() - 16, expected));
    }
    const std::uint32_t stored_crc = get_le<std::uint32_t>(buf, 16 + payload_len);
    const std::uint32_t actual_crc = payload_crc(buf.data() + 16, payload_len);
    if (stored_crc != actual_crc) {
        throw FormatError(fmt::format("{}: CRC mismatch at byte offset {}", path.string(),
                                      16 + payload_len));
    }
    FeatureBag bag;
    bag.features = Matrix(n, d);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * d; ++i) {
        const std::size_t offset = 16 + i * sizeof(float);
        const float v = get_le<float>(buf, offset);
        if (!std::isfinite(v)) {
            throw FormatError(fmt::format("{}: non-finite value at byte offset {}",
                                          path.string(), offset));
        }
        bag.features.values()[i] = static_cast<double>(v);
    }
    return bag;
}

std::vector<std::size_t> apportion_largest_remainder(std::span<const double> weights,
                                                     std::size_t total) {
    if (weights.empty()) throw DomainError("apportion: empty weights");
    double wsum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw DomainError("apportion: negative weight");
        wsum += w;
    }
    if (wsum <= 0.0) throw DomainError("apportion: weights sum to zero");
    std::vector<std::size_t> counts(weights.size(), 0);
    std::vector<std::pair<double, std::size_t>> remainders;  // (-frac, index) for ties to lower index
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double quota = static_cast<double>(total) * weights[i] / wsum;
        counts[i] = static_cast<std::size_t>(std::floor(quota));
        assigned += counts[i];
        remainders.emplace_back(-(quota - std::floor(quota)), i);
    }
    std::sort(remainders.begin(), remainders.end());
    for (std::size_t j = 0; assigned < total; ++j) {
        ++counts[remainders[j % remainders.size()].second];
        ++assigned;
    }
    return counts;
}

DatasetManifest generate_synthetic(const SyntheticConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir / "bags");

    std::mt19937_64 rng = seeded_rng(cfg.seed, 0x6E5);
    std::normal_distribution<double> normal(0.0, 1.0);

    // Fixed unit-norm mean shift per non-normal class.
    std::vector<std::vector<double>> shifts(cfg.num_classes);
    for (std::size_t c = 1; c < cfg.num_classes; ++c) {
        std::vector<double> shift(cfg.dim);
        double norm2 = 0.0;
        for (double& v : shift) {
            v = normal(rng);
            norm2 += v * v;
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (double& v : shift) v *= inv;
        shifts[c] = std::move(shift);
    }

    const std::vector<std::size_t> counts =
        apportion_largest_remainder(cfg.ratio, cfg.total_bags);

    DatasetManifest manifest;
    manifest.dim = cfg.dim;
    manifest.generator_seed = cfg.seed;
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        manifest.class_names.push_back("class_" + std::to_string(c));
    }

    std::uniform_int_distribution<std::size_t> n_dist(cfg.n_min, cfg.n_max);
    std::size_t case_index = 0;
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        for (std::size_t b = 0; b < counts[c]; ++b, ++case_index) {
            const std::size_t n = n_dist(rng);
            Matrix features(n, cfg.dim);
            for (double& v : features.values()) v = normal(rng) * cfg.background_scale;
            if (cfg.patient_scale > 0.0) {
                // Per-bag offset shared by every instance of the bag.
                std::vector<double> offset(cfg.dim);
                for (double& v : offset) v = normal(rng) * cfg.patient_scale;
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < cfg.dim; ++j) features(i, j) += offset[j];
                }
            }
            if (c >= 1) {
                std::size_t salient = static_cast<std::size_t>(
                    std::ceil(cfg.salient_fraction * static_cast<double>(n)));
                if (cfg.salient_fraction < 1.0) salient = std::min(salient, n - 1);
                for (std::size_t i = 0; i < salient; ++i) {
                    for (std::size_t j = 0; j < cfg.dim; ++j) {
                        features(i, j) += shifts[c][j];
                    }
                }
            }
            // Shuffle instance order so salient rows are not positional.
            std::vector<std::size_t> perm(n);
            std::iota(perm.begin(), perm.end(), 0);
            std::shuffle(perm.begin(), perm.end(), rng);
            Matrix shuffled(n, cfg.dim);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < cfg.dim; ++j) {
                    shuffled(i, j) = features(perm[i], j);
                }
            }

            FeatureBag bag;
            bag.case_id = fmt::format("case_{:04}", case_index);
            bag.patient_id = fmt::format("patient_{:04}", case_index);
            bag.label = c;
            bag.features = std::move(shuffled);

            const std::string rel_path = "bags/" + bag.case_id + ".milb";
            write_bag(bag, out_dir / rel_path);
            manifest.bags.push_back({bag.case_id, bag.patient_id, c, rel_path, n});
        }
    }
    manifest.validate();
    save_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

double dataset_entropy(std::span<const double> class_weights) {
    double total = 0.0;
    for (double w : class_weights) {
        if (w < 0.0) throw DomainError("dataset_entropy: negative weight");
        total += w;
    }
    if (total <= 0.0) throw DomainError("dataset_entropy: all counts are zero");
    double h = 0.0;
    for (double w : class_weights) {
        if (w == 0.0) continue;
        const double p = w / total;
        h -= p * std::log2(p);
    }
    return h;
}

double dataset_entropy(std::span<const std::size_t> class_counts) {
    std::vector<double> weights(class_counts.begin(), class_counts.end());
    return dataset_entropy(std::span<const double>(weights));
}

SplitSpec stratified_split(const DatasetManifest& manifest, std::uint64_t seed,
                           double test_frac, double val_of_train) {
    if (!(test_frac > 0.0) || test_frac >= 1.0 || !(val_of_train > 0.0) || val_of_train >= 1.0) {
        throw ConfigError("stratified_split: fractions must be in (0, 1)");
    }
    const std::size_t c_count = manifest.num_classes();
    std::vector<std::vector<std::string>> per_class(c_count);
    for (const auto& rec : manifest.bags) per_class[rec.label].push_back(rec.case_id);
    for (std::size_t c = 0; c < c_count; ++c) {
        if (per_class[c].size() < 3) {
            throw DomainError(fmt::format("stratified_split: class {} has {} bags (minimum 3)",
                                          manifest.class_names[c], per_class[c].size()));
        }
    }

    std::vector<double> class_sizes;
    std::size_t total = 0;
    for (const auto& v : per_class) {
        class_sizes.push_back(static_cast<double>(v.size()));
        total += v.size();
    }
    const auto test_total =
        static_cast<std::size_t>(std::llround(static_cast<double>(total) * test_frac));
    std::vector<std::size_t> test_counts = apportion_largest_remainder(class_sizes, test_total);

    std::vector<double> remaining(c_count);
    double remaining_total = 0.0;
    for (std::size_t c = 0; c < c_count; ++c) {
        test_counts[c] = std::min(test_counts[c], per_class[c].size());
        remaining[c] = static_cast<double>(per_class[c].size() - test_counts[c]);
        remaining_total += remaining[c];
    }
    const auto val_total = static_cast<std::size_t>(std::llround(remaining_total * val_of_train));
    std::vector<std::size_t> val_counts = apportion_largest_remainder(remaining, val_total);

    // Each class appears in each split when its size allows (>= 3 guaranteed).
    for (std::size_t c = 0; c < c_count; ++c) {
        const std::size_t n = per_class[c].size();
        val_counts[c] = std::min(val_counts[c], n - test_counts[c]);
        auto train_c = [&] { return n - test_counts[c] - val_counts[c]; };
        while (test_counts[c] == 0) {
            if (train_c() > 1) { ++test_counts[c]; }
            else { --val_counts[c]; ++test_counts[c]; }
        }
        while (val_counts[c] == 0) {
            if (train_c() > 1) { ++val_counts[c]; }
            else { --test_counts[c]; ++val_counts[c]; }
        }
        while (train_c() == 0) {
            if (test_counts[c] > 1) { --test_counts[c]; }
            else { --val_counts[c]; }
        }
    }

    std::mt19937_64 rng = seeded_rng(seed, 0x5F117);
    SplitSpec split;
    split.seed = seed;
    for (std::size_t c = 0; c < c_count; ++c) {
        auto ids = per_class[c];
        std::shuffle(ids.begin(), ids.end(), rng);
        std::size_t i = 0;
        for (std::size_t k = 0; k < test_counts[c]; ++k) split.test.push_back(ids[i++]);
        for (std::size_t k = 0; k < val_counts[c]; ++k) split.val.push_back(ids[i++]);
        for (; i < ids.size(); ++i) split.train.push_back(ids[i]);
    }
    return split;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
    json j;
    j["class_names"] = manifest.class_names;
    j["dim"] = manifest.dim;
    if (manifest.generator_seed) {
        j["generator_seed"] = *manifest.generator_seed;
    } else {
        j["generator_seed"] = nullptr;
    }
    j["bags"] = json::array();
    for (const auto& rec : manifest.bags) {
        j["bags"].push_back({{"case_id", rec.case_id},
                             {"patient_id", rec.patient_id},
                             {"label", rec.label},
                             {"path", rec.path},
                             {"n_instances", rec.n_instances}});
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write manifest: " + path.string());
    out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open manifest: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("{}: invalid JSON ({})", path.string(), e.what()));
    }
    DatasetManifest manifest;
    try {
        manifest.class_names = j.at("class_names").get<std::vector<std::string>>();
        manifest.dim = j.at("dim").get<std::size_t>();
        if (!j.at("generator_seed").is_null()) {
            manifest.generator_seed = j.at("generator_seed").get<std::uint64_t>();
        }
        for (const auto& b : j.at("bags")) {
            manifest.bags.push_back({b.at("case_id").get<std::string>(),
                                     b.at("patient_id").get<std::string>(),
                                     b.at("label").get<std::size_t>(),
                                     b.at("path").get<std::string>(),
                                     b.at("n_instances").get<std::size_t>()});
        }
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("{}: bad manifest field ({})", path.string(), e.what()));
    }
    manifest.validate();
    return manifest;
}

void save_split(const SplitSpec& split, const fs::path& path) {
    json j;
    j["train"] = split.train;
    j["val"] = split.val;
    j["test"] = split.test;
    j["seed"] = split.seed;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write split: " + path.string());
    out << j.dump(2) << "\n";
}

SplitSpec load_split(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open split: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("{}: invalid JSON ({})", path.string(), e.what()));
    }
    SplitSpec split;
    try {
        split.train = j.at("train").get<std::vector<std::string>>();
        split.val = j.at("val").get<std::vector<std::string>>();
        split.test = j.at("test").get<std::vector<std::string>>();
        split.seed = j.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("{}: bad split field ({})", path.string(), e.what()));
    }
    return split;
}

Dataset Dataset::load(const fs::path& dataset_dir) {
    Dataset ds;
    ds.manifest = load_manifest(dataset_dir / "manifest.json");
    ds.bags.reserve(ds.manifest.bags.size());
    for (const auto& rec : ds.manifest.bags) {
        FeatureBag bag = read_bag(dataset_dir / rec.path);
        if (bag.features.cols() != ds.manifest.dim) {
            throw FormatError(fmt::format("{}: dim {} disagrees with manifest dim {}",
                                          rec.path, bag.features.cols(), ds.manifest.dim));
        }
        if (bag.features.rows() != rec.n_instances) {
            throw FormatError(fmt::format("{}: {} instances but manifest says {}",
                                          rec.path, bag.features.rows(), rec.n_instances));
        }
        bag.case_id = rec.case_id;
        bag.patient_id = rec.patient_id;
        bag.label = rec.label;
        ds.index_[rec.case_id] = ds.bags.size();
        ds.bags.push_back(std::move(bag));
    }
    return ds;
}

const FeatureBag& Dataset::bag(const std::string& case_id) const {
    auto it = index_.find(case_id);
    if (it == index_.end()) throw DomainError("unknown case_id: " + case_id);
    return bags[it->second];
}

}  // namespace milbag
