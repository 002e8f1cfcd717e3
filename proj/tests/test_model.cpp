#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <utility>

#include "milbag/errors.hpp"
#include "milbag/model.hpp"
#include "milbag/numerics.hpp"

using namespace milbag;
namespace fs = std::filesystem;

namespace {

const ModelDims kSmallDims{5, 7, 4, 3};

Matrix random_features(std::size_t n, std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix m(n, d);
    for (double& v : m.values()) v = normal(rng);
    return m;
}

GatedAttentionParams seeded_params(const ModelDims& dims, std::uint64_t seed,
                                   const std::string& prefix = "head") {
    GatedAttentionParams p = make_params(dims, prefix);
    std::mt19937_64 rng = seeded_rng(seed, 0);
    init_params(p, rng);
    return p;
}

std::vector<double> one_hot(std::size_t label, std::size_t n) {
    std::vector<double> t(n, 0.0);
    t[label] = 1.0;
    return t;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

// Construction and initialization tests

TEST_CASE("parameter tensors take their shapes from the dims") {
    const GatedAttentionParams p = make_params(kSmallDims, "t1");
    CHECK(p.proj_w.value.rows() == 5);
    CHECK(p.proj_w.value.cols() == 7);
    CHECK(p.proj_b.value.cols() == 7);
    CHECK(p.attn_v_w.value.rows() == 7);
    CHECK(p.attn_v_w.value.cols() == 4);
    CHECK(p.attn_u_w.value.rows() == 7);
    CHECK(p.attn_w.value.rows() == 4);
    CHECK(p.attn_w.value.cols() == 1);
    CHECK(p.cls_w.value.rows() == 7);
    CHECK(p.cls_w.value.cols() == 3);
    CHECK(p.cls_b.value.cols() == 3);
    CHECK(p.tensors().size() == 9);
    CHECK(p.proj_w.name == "t1.proj_w");
}

TEST_CASE("initialization is deterministic and bounded per tensor") {
    GatedAttentionParams a = seeded_params(kSmallDims, 42);
    GatedAttentionParams b = seeded_params(kSmallDims, 42);
    GatedAttentionParams c = seeded_params(kSmallDims, 43);

    bool differs = false;
    for (std::size_t t = 0; t < a.tensors().size(); ++t) {
        const auto& av = a.tensors()[t]->value.values();
        const auto& bv = b.tensors()[t]->value.values();
        const auto& cv = c.tensors()[t]->value.values();
        for (std::size_t i = 0; i < av.size(); ++i) {
            CHECK(av[i] == bv[i]);
            if (av[i] != cv[i]) differs = true;
        }
    }
    CHECK(differs);

    const auto& w = a.proj_w.value;
    const double limit = std::sqrt(6.0 / (5.0 + 7.0));
    for (double v : w.values()) {
        CHECK(std::abs(v) <= limit);
    }
}

TEST_CASE("model dims are validated") {
    CHECK_THROWS_AS((ModelDims{0, 4, 4, 3}.validate()), ConfigError);
    CHECK_THROWS_AS((ModelDims{4, 4, 4, 1}.validate()), ConfigError);
}

// Attention head forward tests

TEST_CASE("a single instance takes all the attention") {
    std::mt19937_64 rng = seeded_rng(1, 0);
    const GatedAttentionParams p = seeded_params(kSmallDims, 1);
    const Matrix features = random_features(1, 5, rng);
    const BagTrace trace = t1_forward(features, p);
    REQUIRE(trace.attention.weights.size() == 1);
    CHECK(trace.attention.weights[0] == doctest::Approx(1.0));
}

TEST_CASE("identical instances share attention uniformly") {
    std::mt19937_64 rng = seeded_rng(2, 0);
    const GatedAttentionParams p = seeded_params(kSmallDims, 2);
    const Matrix one = random_features(1, 5, rng);
    Matrix repeated(4, 5);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 5; ++j) repeated(i, j) = one(0, j);
    }
    const BagTrace trace = t1_forward(repeated, p);
    for (double w : trace.attention.weights) CHECK(w == doctest::Approx(0.25));
    const BagTrace single = t1_forward(one, p);
    for (std::size_t j = 0; j < 7; ++j) {
        CHECK(trace.attention.pooled(0, j) ==
              doctest::Approx(single.attention.pooled(0, j)).epsilon(1e-12));
    }
}

TEST_CASE("attention weights always form a distribution") {
    std::mt19937_64 rng = seeded_rng(3, 0);
    for (int trial = 0; trial < 30; ++trial) {
        const GatedAttentionParams p = seeded_params(kSmallDims, 100 + trial);
        const Matrix features = random_features(2 + trial % 7, 5, rng);
        const BagTrace trace = t1_forward(features, p);
        double sum = 0.0;
        for (double w : trace.attention.weights) {
            CHECK(w >= 0.0);
            sum += w;
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
        CHECK(trace.logits.all_finite());
    }
}

TEST_CASE("permuting instances permutes attention and preserves outputs") {
    std::mt19937_64 rng = seeded_rng(4, 0);
    const GatedAttentionParams p = seeded_params(kSmallDims, 4);
    const Matrix features = random_features(6, 5, rng);
    const BagTrace base = t1_forward(features, p);

    std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    Matrix shuffled(6, 5);
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t j = 0; j < 5; ++j) shuffled(i, j) = features(perm[i], j);
    }
    const BagTrace moved = t1_forward(shuffled, p);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(moved.attention.weights[i] ==
              doctest::Approx(base.attention.weights[perm[i]]).epsilon(1e-12));
    }
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(moved.logits(0, c) == doctest::Approx(base.logits(0, c)).epsilon(1e-12));
    }
}

TEST_CASE("forward rejects wrong feature dimensions and empty bags") {
    const GatedAttentionParams p = seeded_params(kSmallDims, 5);
    std::mt19937_64 rng = seeded_rng(5, 0);
    CHECK_THROWS_AS(t1_forward(random_features(3, 4, rng), p), DimError);
    CHECK_THROWS_AS(t1_forward(Matrix(), p), DomainError);
}

// Backward tests

TEST_CASE("zero upstream gradient leaves all parameter gradients zero") {
    std::mt19937_64 rng = seeded_rng(6, 0);
    GatedAttentionParams p = seeded_params(kSmallDims, 6);
    const Matrix features = random_features(4, 5, rng);
    const BagTrace trace = t1_forward(features, p);
    p.zero_grad();
    t1_backward(trace, p, Matrix(1, 3, 0.0));
    for (const ParamTensor* t : std::as_const(p).tensors()) {
        for (double g : t->grad.values()) CHECK(g == 0.0);
    }
}

TEST_CASE("backward calls accumulate linearly") {
    std::mt19937_64 rng = seeded_rng(7, 0);
    GatedAttentionParams p = seeded_params(kSmallDims, 7);
    const Matrix features = random_features(4, 5, rng);
    const BagTrace trace = t1_forward(features, p);
    Matrix d_logits(1, 3);
    d_logits(0, 0) = 0.3;
    d_logits(0, 1) = -0.8;
    d_logits(0, 2) = 0.5;

    p.zero_grad();
    t1_backward(trace, p, d_logits);
    std::vector<std::vector<double>> once;
    for (const ParamTensor* t : std::as_const(p).tensors()) once.push_back(t->grad.values());

    p.zero_grad();
    t1_backward(trace, p, d_logits);
    t1_backward(trace, p, d_logits);
    std::size_t ti = 0;
    for (const ParamTensor* t : std::as_const(p).tensors()) {
        const auto& twice = t->grad.values();
        for (std::size_t i = 0; i < twice.size(); ++i) {
            CHECK(twice[i] == doctest::Approx(2.0 * once[ti][i]).epsilon(1e-12));
        }
        ++ti;
    }
}

TEST_CASE("bag head gradients match finite differences across seeds") {
    const ModelDims dims{8, 6, 5, 3};
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        GatedAttentionParams p = seeded_params(dims, seed);
        std::mt19937_64 rng = seeded_rng(seed, 1);
        const Matrix features = random_features(4, 8, rng);
        const std::size_t label = seed % 3;

        p.zero_grad();
        const BagTrace trace = t1_forward(features, p);
        const auto ce = cross_entropy(one_hot(label, 3), trace.logits.row(0));
        Matrix d_logits(1, 3);
        for (std::size_t c = 0; c < 3; ++c) d_logits(0, c) = ce.dlogits[c];
        t1_backward(trace, p, d_logits);

        const auto report = finite_diff_check(
            [&] {
                const BagTrace t = t1_forward(features, p);
                return cross_entropy(one_hot(label, 3), t.logits.row(0)).loss;
            },
            p.tensors(), 5e-4);
        CHECK(report.max_rel_err < 1e-4);
    }
}

// Sub-bag head tests

TEST_CASE("one group reproduces the bag head computation") {
    std::mt19937_64 rng = seeded_rng(8, 0);
    const GatedAttentionParams p = seeded_params(kSmallDims, 8);
    const Matrix features = random_features(5, 5, rng);
    const std::vector<std::vector<std::size_t>> groups{{0, 1, 2, 3, 4}};

    const BagTrace bag = t1_forward(features, p);
    for (SubBagPooling pooling : {SubBagPooling::features, SubBagPooling::logits}) {
        const SubBagTrace sub = t2_forward(features, groups, p, pooling);
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(sub.logits(0, c) == doctest::Approx(bag.logits(0, c)).epsilon(1e-12));
        }
    }
}

TEST_CASE("duplicated groups average to the single-group logits") {
    std::mt19937_64 rng = seeded_rng(9, 0);
    const GatedAttentionParams p = seeded_params(kSmallDims, 9);
    const Matrix features = random_features(4, 5, rng);
    const std::vector<std::vector<std::size_t>> whole{{0, 1, 2, 3}};
    const std::vector<std::vector<std::size_t>> doubled{{0, 1, 2, 3}, {0, 1, 2, 3}};

    for (SubBagPooling pooling : {SubBagPooling::features, SubBagPooling::logits}) {
        const SubBagTrace a = t2_forward(features, whole, p, pooling);
        const SubBagTrace b = t2_forward(features, doubled, p, pooling);
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(b.logits(0, c) == doctest::Approx(a.logits(0, c)).epsilon(1e-12));
        }
    }
}

TEST_CASE("group order does not change the pooled logits") {
    std::mt19937_64 rng = seeded_rng(10, 0);
    const GatedAttentionParams p = seeded_params(kSmallDims, 10);
    const Matrix features = random_features(6, 5, rng);
    const std::vector<std::vector<std::size_t>> fwd{{0, 2, 4}, {1, 3, 5}};
    const std::vector<std::vector<std::size_t>> rev{{1, 3, 5}, {0, 2, 4}};

    for (SubBagPooling pooling : {SubBagPooling::features, SubBagPooling::logits}) {
        const SubBagTrace a = t2_forward(features, fwd, p, pooling);
        const SubBagTrace b = t2_forward(features, rev, p, pooling);
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(b.logits(0, c) == doctest::Approx(a.logits(0, c)).epsilon(1e-12));
        }
    }
}

TEST_CASE("pooling modes agree because the classifier is affine") {
    std::mt19937_64 rng = seeded_rng(11, 0);
    const GatedAttentionParams p = seeded_params(kSmallDims, 11);
    const Matrix features = random_features(6, 5, rng);
    const std::vector<std::vector<std::size_t>> groups{{0, 3}, {1, 4}, {2, 5}};
    const SubBagTrace a = t2_forward(features, groups, p, SubBagPooling::features);
    const SubBagTrace b = t2_forward(features, groups, p, SubBagPooling::logits);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(a.logits(0, c) == doctest::Approx(b.logits(0, c)).epsilon(1e-12));
    }
}

TEST_CASE("sub-bag forward rejects empty and out-of-range groups") {
    std::mt19937_64 rng = seeded_rng(12, 0);
    const GatedAttentionParams p = seeded_params(kSmallDims, 12);
    const Matrix features = random_features(4, 5, rng);
    const std::vector<std::vector<std::size_t>> empty_group{{0, 1}, {}};
    CHECK_THROWS_AS(t2_forward(features, empty_group, p, SubBagPooling::features), DomainError);
    const std::vector<std::vector<std::size_t>> oob{{0, 9}};
    CHECK_THROWS_AS(t2_forward(features, oob, p, SubBagPooling::features), DomainError);
    CHECK_THROWS_AS(
        t2_forward(std::span<const Matrix>(), p, SubBagPooling::features), DomainError);
}

TEST_CASE("sub-bag gradients match finite differences for both poolings") {
    const ModelDims dims{8, 6, 5, 3};
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        std::mt19937_64 rng = seeded_rng(seed, 2);
        const Matrix features = random_features(6, 8, rng);
        const std::vector<std::vector<std::size_t>> groups{{0, 2, 4}, {1, 3, 5}};
        const std::size_t label = seed % 3;

        for (SubBagPooling pooling : {SubBagPooling::features, SubBagPooling::logits}) {
            GatedAttentionParams p = seeded_params(dims, 50 + seed);
            p.zero_grad();
            const SubBagTrace trace = t2_forward(features, groups, p, pooling);
            const auto ce = cross_entropy(one_hot(label, 3), trace.logits.row(0));
            Matrix d_logits(1, 3);
            for (std::size_t c = 0; c < 3; ++c) d_logits(0, c) = ce.dlogits[c];
            t2_backward(trace, p, d_logits);

            const auto report = finite_diff_check(
                [&] {
                    const SubBagTrace t = t2_forward(features, groups, p, pooling);
                    return cross_entropy(one_hot(label, 3), t.logits.row(0)).loss;
                },
                p.tensors(), 5e-4);
            CHECK(report.max_rel_err < 1e-4);
        }
    }
}

TEST_CASE("single-group backward equals the bag head backward") {
    std::mt19937_64 rng = seeded_rng(13, 0);
    const Matrix features = random_features(5, 5, rng);
    const std::vector<std::vector<std::size_t>> groups{{0, 1, 2, 3, 4}};
    Matrix d_logits(1, 3);
    d_logits(0, 0) = 0.4;
    d_logits(0, 1) = -0.1;
    d_logits(0, 2) = -0.3;

    GatedAttentionParams a = seeded_params(kSmallDims, 14);
    GatedAttentionParams b = seeded_params(kSmallDims, 14);
    a.zero_grad();
    b.zero_grad();
    t1_backward(t1_forward(features, a), a, d_logits);
    t2_backward(t2_forward(features, groups, b, SubBagPooling::features), b, d_logits);

    for (std::size_t t = 0; t < a.tensors().size(); ++t) {
        const auto& ga = a.tensors()[t]->grad.values();
        const auto& gb = b.tensors()[t]->grad.values();
        for (std::size_t i = 0; i < ga.size(); ++i) {
            CHECK(ga[i] == doctest::Approx(gb[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("extra pooled gradient reaches upstream parameters only") {
    std::mt19937_64 rng = seeded_rng(15, 0);
    GatedAttentionParams p = seeded_params(kSmallDims, 15);
    const Matrix features = random_features(4, 5, rng);
    const BagTrace trace = t1_forward(features, p);

    Matrix d_pooled(1, 7);
    for (std::size_t j = 0; j < 7; ++j) d_pooled(0, j) = 0.1 * static_cast<double>(j + 1);
    p.zero_grad();
    t1_backward(trace, p, Matrix(1, 3, 0.0), &d_pooled);

    double cls_grad_norm = 0.0;
    for (double g : p.cls_w.grad.values()) cls_grad_norm += std::abs(g);
    for (double g : p.cls_b.grad.values()) cls_grad_norm += std::abs(g);
    CHECK(cls_grad_norm == 0.0);

    double proj_grad_norm = 0.0;
    for (double g : p.proj_w.grad.values()) proj_grad_norm += std::abs(g);
    CHECK(proj_grad_norm > 0.0);
}

// Checkpoint tests

TEST_CASE("checkpoints restore parameters and optimizer state exactly") {
    const fs::path dir = fs::temp_directory_path() / "milbag_test_ckpt";
    fs::remove_all(dir);
    fs::create_directories(dir);

    GatedAttentionParams t1 = seeded_params(kSmallDims, 16, "t1");
    GatedAttentionParams t2 = seeded_params(kSmallDims, 17, "t2");
    std::mt19937_64 rng = seeded_rng(18, 0);
    std::normal_distribution<double> normal(0.0, 1.0);
    AdamConfig adam;
    for (ParamTensor* t : t1.tensors()) {
        for (double& g : t->grad.values()) g = normal(rng);
        adam_step(*t, adam);
    }

    CheckpointMeta meta;
    meta.dims = kSmallDims;
    meta.sub_bags = 11;
    meta.seed = 123;
    meta.epoch = 4;
    save_checkpoint(t1, t2, meta, dir / "ck.milc");

    const Checkpoint back = load_checkpoint(dir / "ck.milc");
    CHECK(back.meta.sub_bags == 11);
    CHECK(back.meta.seed == 123);
    CHECK(back.meta.epoch == 4);
    CHECK(back.meta.dims.input_dim == kSmallDims.input_dim);

    const auto t1_tensors = std::as_const(t1).tensors();
    const auto back_tensors = std::as_const(back.t1).tensors();
    for (std::size_t t = 0; t < t1_tensors.size(); ++t) {
        CHECK(back_tensors[t]->name == t1_tensors[t]->name);
        CHECK(back_tensors[t]->step_count == t1_tensors[t]->step_count);
        for (std::size_t i = 0; i < t1_tensors[t]->value.size(); ++i) {
            CHECK(back_tensors[t]->value.values()[i] == t1_tensors[t]->value.values()[i]);
            CHECK(back_tensors[t]->m1.values()[i] == t1_tensors[t]->m1.values()[i]);
            CHECK(back_tensors[t]->m2.values()[i] == t1_tensors[t]->m2.values()[i]);
        }
    }

    // Saving the restored state reproduces the file byte for byte.
    save_checkpoint(back.t1, back.t2, back.meta, dir / "ck2.milc");
    CHECK(slurp(dir / "ck.milc") == slurp(dir / "ck2.milc"));
}

TEST_CASE("checkpoint loading rejects corrupted files") {
    const fs::path dir = fs::temp_directory_path() / "milbag_test_ckpt_bad";
    fs::remove_all(dir);
    fs::create_directories(dir);

    GatedAttentionParams t1 = seeded_params(kSmallDims, 19, "t1");
    GatedAttentionParams t2 = seeded_params(kSmallDims, 20, "t2");
    CheckpointMeta meta;
    meta.dims = kSmallDims;
    save_checkpoint(t1, t2, meta, dir / "ck.milc");

    std::string bytes = slurp(dir / "ck.milc");
    std::string bad_magic = bytes;
    bad_magic[0] = 'Z';
    std::ofstream(dir / "bad.milc", std::ios::binary) << bad_magic;
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.milc"), FormatError);

    std::ofstream(dir / "cut.milc", std::ios::binary)
        << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(load_checkpoint(dir / "cut.milc"), FormatError);

    CHECK_THROWS_AS(load_checkpoint(dir / "absent.milc"), FormatError);
}
