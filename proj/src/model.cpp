#include "milbag/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fmt/format.h>
#include <fstream>

namespace milbag {

namespace fs = std::filesystem;

void ModelDims::validate() const {
    if (input_dim == 0 || hidden_dim == 0 || attn_dim == 0) {
        throw ConfigError("model dims must be positive");
    }
    if (num_classes < 2) throw ConfigError("model needs at least 2 classes");
}

std::vector<ParamTensor*> GatedAttentionParams::tensors() {
    return {&proj_w, &proj_b, &attn_v_w, &attn_v_b, &attn_u_w,
            &attn_u_b, &attn_w, &cls_w, &cls_b};
}

std::vector<const ParamTensor*> GatedAttentionParams::tensors() const {
    return {&proj_w, &proj_b, &attn_v_w, &attn_v_b, &attn_u_w,
            &attn_u_b, &attn_w, &cls_w, &cls_b};
}

void GatedAttentionParams::zero_grad() {
    for (ParamTensor* t : tensors()) t->zero_grad();
}

GatedAttentionParams make_params(const ModelDims& dims, const std::string& prefix) {
    dims.validate();
    const auto d = dims.input_dim;
    const auto h = dims.hidden_dim;
    const auto a = dims.attn_dim;
    const auto c = dims.num_classes;
    GatedAttentionParams p;
    p.dims = dims;
    p.proj_w = ParamTensor(prefix + ".proj_w", d, h);
    p.proj_b = ParamTensor(prefix + ".proj_b", 1, h);
    p.attn_v_w = ParamTensor(prefix + ".attn_v_w", h, a);
    p.attn_v_b = ParamTensor(prefix + ".attn_v_b", 1, a);
    p.attn_u_w = ParamTensor(prefix + ".attn_u_w", h, a);
    p.attn_u_b = ParamTensor(prefix + ".attn_u_b", 1, a);
    p.attn_w = ParamTensor(prefix + ".attn_w", a, 1);
    p.cls_w = ParamTensor(prefix + ".cls_w", h, c);
    p.cls_b = ParamTensor(prefix + ".cls_b", 1, c);
    return p;
}

void init_params(GatedAttentionParams& params, std::mt19937_64& rng) {
    for (ParamTensor* t : params.tensors()) {
        const double bound =
            std::sqrt(6.0 / static_cast<double>(t->value.rows() + t->value.cols()));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& v : t->value.values()) v = dist(rng);
    }
}

namespace {

Matrix add_row_bias(Matrix m, const Matrix& bias) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) += bias(0, j);
    }
    return m;
}

void accumulate(Matrix& into, const Matrix& from) {
    for (std::size_t i = 0; i < into.size(); ++i) into.values()[i] += from.values()[i];
}

Matrix col_sums(const Matrix& m) {
    Matrix out(1, m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) out(0, j) += m(i, j);
    }
    return out;
}

Matrix classifier_logits(const Matrix& pooled, const GatedAttentionParams& params) {
    return add_row_bias(matmul(pooled, params.cls_w.value), params.cls_b.value);
}

// Accumulates classifier gradients and returns d(loss)/d(pooled).
Matrix classifier_backward(const Matrix& pooled, const Matrix& d_logits,
                           GatedAttentionParams& params) {
    accumulate(params.cls_w.grad, matmul(transpose(pooled), d_logits));
    accumulate(params.cls_b.grad, d_logits);
    return matmul(d_logits, transpose(params.cls_w.value));
}

}  // namespace

AttentionTrace attention_forward(const Matrix& features, const GatedAttentionParams& params) {
    if (features.rows() == 0) throw DomainError("attention_forward: empty bag");
    if (features.cols() != params.dims.input_dim) {
        throw DimError(fmt::format("attention_forward: features have dim {} but model expects {}",
                                   features.cols(), params.dims.input_dim));
    }
    AttentionTrace t;
    t.input = features;
    t.hidden = add_row_bias(matmul(features, params.proj_w.value), params.proj_b.value);
    for (double& v : t.hidden.values()) v = std::max(v, 0.0);

    t.gate_v = add_row_bias(matmul(t.hidden, params.attn_v_w.value), params.attn_v_b.value);
    for (double& v : t.gate_v.values()) v = std::tanh(v);
    t.gate_u = add_row_bias(matmul(t.hidden, params.attn_u_w.value), params.attn_u_b.value);
    for (double& v : t.gate_u.values()) v = 1.0 / (1.0 + std::exp(-v));

    t.gate = t.gate_v;
    for (std::size_t i = 0; i < t.gate.size(); ++i) {
        t.gate.values()[i] *= t.gate_u.values()[i];
    }

    const std::size_t n = features.rows();
    t.scores.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < params.dims.attn_dim; ++k) {
            s += t.gate(i, k) * params.attn_w.value(k, 0);
        }
        t.scores[i] = s;
    }
    t.weights = softmax(t.scores);

    t.pooled = Matrix(1, params.dims.hidden_dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < params.dims.hidden_dim; ++j) {
            t.pooled(0, j) += t.weights[i] * t.hidden(i, j);
        }
    }
    return t;
}

void attention_backward(const AttentionTrace& t, GatedAttentionParams& params,
                        const Matrix& d_pooled) {
    const std::size_t n = t.hidden.rows();
    const std::size_t h = params.dims.hidden_dim;
    const std::size_t a = params.dims.attn_dim;
    if (d_pooled.rows() != 1 || d_pooled.cols() != h) {
        throw DimError("attention_backward: d_pooled shape mismatch");
    }

    // pooled = sum_i weights_i * hidden_i
    Matrix d_hidden(n, h);
    std::vector<double> d_weights(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < h; ++j) {
            d_hidden(i, j) = t.weights[i] * d_pooled(0, j);
            d_weights[i] += d_pooled(0, j) * t.hidden(i, j);
        }
    }

    // Softmax backward: d_score_i = w_i * (d_weight_i - sum_j w_j d_weight_j).
    double inner = 0.0;
    for (std::size_t i = 0; i < n; ++i) inner += t.weights[i] * d_weights[i];
    std::vector<double> d_scores(n);
    for (std::size_t i = 0; i < n; ++i) d_scores[i] = t.weights[i] * (d_weights[i] - inner);

    // scores = gate . attn_w
    Matrix d_gate(n, a);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < a; ++k) {
            params.attn_w.grad(k, 0) += t.gate(i, k) * d_scores[i];
            d_gate(i, k) = d_scores[i] * params.attn_w.value(k, 0);
        }
    }

    // gate = tanh-branch * sigmoid-branch, then the branch nonlinearities.
    Matrix d_pre_v(n, a);
    Matrix d_pre_u(n, a);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < a; ++k) {
            const double gv = t.gate_v(i, k);
            const double gu = t.gate_u(i, k);
            d_pre_v(i, k) = d_gate(i, k) * gu * (1.0 - gv * gv);
            d_pre_u(i, k) = d_gate(i, k) * gv * gu * (1.0 - gu);
        }
    }
    accumulate(params.attn_v_w.grad, matmul(transpose(t.hidden), d_pre_v));
    accumulate(params.attn_v_b.grad, col_sums(d_pre_v));
    accumulate(params.attn_u_w.grad, matmul(transpose(t.hidden), d_pre_u));
    accumulate(params.attn_u_b.grad, col_sums(d_pre_u));

    accumulate(d_hidden, matmul(d_pre_v, transpose(params.attn_v_w.value)));
    accumulate(d_hidden, matmul(d_pre_u, transpose(params.attn_u_w.value)));

    // relu mask, then the input projection.
    Matrix d_pre_proj = d_hidden;
    for (std::size_t i = 0; i < d_pre_proj.size(); ++i) {
        if (t.hidden.values()[i] <= 0.0) d_pre_proj.values()[i] = 0.0;
    }
    accumulate(params.proj_w.grad, matmul(transpose(t.input), d_pre_proj));
    accumulate(params.proj_b.grad, col_sums(d_pre_proj));
}

BagTrace t1_forward(const Matrix& features, const GatedAttentionParams& params) {
    BagTrace t;
    t.attention = attention_forward(features, params);
    t.logits = classifier_logits(t.attention.pooled, params);
    t.probs = softmax(t.logits.row(0));
    return t;
}

void t1_backward(const BagTrace& trace, GatedAttentionParams& params, const Matrix& d_logits,
                 const Matrix* d_pooled_extra) {
    if (d_logits.rows() != 1 || d_logits.cols() != params.dims.num_classes) {
        throw DimError("t1_backward: d_logits shape mismatch");
    }
    Matrix d_pooled = classifier_backward(trace.attention.pooled, d_logits, params);
    if (d_pooled_extra != nullptr) {
        if (!d_pooled.same_shape(*d_pooled_extra)) {
            throw DimError("t1_backward: d_pooled_extra shape mismatch");
        }
        accumulate(d_pooled, *d_pooled_extra);
    }
    attention_backward(trace.attention, params, d_pooled);
}

SubBagTrace t2_forward(const Matrix& features, std::span<const std::vector<std::size_t>> groups,
                       const GatedAttentionParams& params, SubBagPooling pooling) {
    std::vector<Matrix> group_features;
    group_features.reserve(groups.size());
    for (const auto& group : groups) {
        if (group.empty()) throw DomainError("t2_forward: empty instance group");
        Matrix sub(group.size(), features.cols());
        for (std::size_t r = 0; r < group.size(); ++r) {
            if (group[r] >= features.rows()) {
                throw DomainError(fmt::format("t2_forward: instance index {} out of range {}",
                                              group[r], features.rows()));
            }
            for (std::size_t j = 0; j < features.cols(); ++j) sub(r, j) = features(group[r], j);
        }
        group_features.push_back(std::move(sub));
    }
    return t2_forward(group_features, params, pooling);
}

SubBagTrace t2_forward(std::span<const Matrix> group_features,
                       const GatedAttentionParams& params, SubBagPooling pooling) {
    if (group_features.empty()) throw DomainError("t2_forward: no instance groups");
    SubBagTrace t;
    t.pooling = pooling;
    const double inv = 1.0 / static_cast<double>(group_features.size());
    if (pooling == SubBagPooling::features) {
        t.mean_pooled = Matrix(1, params.dims.hidden_dim);
        for (const Matrix& sub : group_features) {
            t.per_group.push_back(attention_forward(sub, params));
            for (std::size_t j = 0; j < params.dims.hidden_dim; ++j) {
                t.mean_pooled(0, j) += inv * t.per_group.back().pooled(0, j);
            }
        }
        t.logits = classifier_logits(t.mean_pooled, params);
    } else {
        t.logits = Matrix(1, params.dims.num_classes);
        for (const Matrix& sub : group_features) {
            t.per_group.push_back(attention_forward(sub, params));
            t.group_logits.push_back(classifier_logits(t.per_group.back().pooled, params));
            for (std::size_t j = 0; j < params.dims.num_classes; ++j) {
                t.logits(0, j) += inv * t.group_logits.back()(0, j);
            }
        }
    }
    t.probs = softmax(t.logits.row(0));
    return t;
}

void t2_backward(const SubBagTrace& trace, GatedAttentionParams& params, const Matrix& d_logits) {
    if (d_logits.rows() != 1 || d_logits.cols() != params.dims.num_classes) {
        throw DimError("t2_backward: d_logits shape mismatch");
    }
    const double inv = 1.0 / static_cast<double>(trace.per_group.size());
    if (trace.pooling == SubBagPooling::features) {
        Matrix d_mean = classifier_backward(trace.mean_pooled, d_logits, params);
        for (double& v : d_mean.values()) v *= inv;
        for (const AttentionTrace& at : trace.per_group) {
            attention_backward(at, params, d_mean);
        }
    } else {
        Matrix d_group = d_logits;
        for (double& v : d_group.values()) v *= inv;
        for (const AttentionTrace& at : trace.per_group) {
            Matrix d_pooled = classifier_backward(at.pooled, d_group, params);
            attention_backward(at, params, d_pooled);
        }
    }
}

namespace {

constexpr char kCkptMagic[4] = {'M', 'I', 'L', 'C'};
constexpr std::uint16_t kCkptVersion = 1;

void put_bytes(std::ofstream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void put(std::ofstream& out, T v) {
    put_bytes(out, &v, sizeof(T));
}

void put_matrix(std::ofstream& out, const Matrix& m) {
    put_bytes(out, m.data(), m.size() * sizeof(double));
}

template <typename T>
T get(std::ifstream& in, const fs::path& path) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError(path.string() + ": truncated checkpoint");
    return v;
}

void get_matrix(std::ifstream& in, Matrix& m, const fs::path& path) {
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw FormatError(path.string() + ": truncated checkpoint");
}

void put_tensor(std::ofstream& out, const ParamTensor& t) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    put_bytes(out, t.name.data(), t.name.size());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.cols()));
    put<std::uint64_t>(out, t.step_count);
    put_matrix(out, t.value);
    put_matrix(out, t.m1);
    put_matrix(out, t.m2);
}

void get_tensor(std::ifstream& in, ParamTensor& t, const fs::path& path) {
    const auto name_len = get<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw FormatError(path.string() + ": truncated checkpoint");
    if (name != t.name) {
        throw FormatError(fmt::format("{}: tensor '{}' where '{}' expected",
                                      path.string(), name, t.name));
    }
    const auto rows = get<std::uint32_t>(in, path);
    const auto cols = get<std::uint32_t>(in, path);
    if (rows != t.value.rows() || cols != t.value.cols()) {
        throw FormatError(fmt::format("{}: tensor '{}' is {}x{} but header dims imply {}x{}",
                                      path.string(), name, rows, cols, t.value.rows(),
                                      t.value.cols()));
    }
    t.step_count = get<std::uint64_t>(in, path);
    get_matrix(in, t.value, path);
    get_matrix(in, t.m1, path);
    get_matrix(in, t.m2, path);
}

}  // namespace

void save_checkpoint(const GatedAttentionParams& t1, const GatedAttentionParams& t2,
                     const CheckpointMeta& meta, const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write checkpoint: " + path.string());
    put_bytes(out, kCkptMagic, 4);
    put<std::uint16_t>(out, kCkptVersion);
    put<std::uint16_t>(out, 0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.dims.input_dim));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.dims.hidden_dim));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.dims.attn_dim));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.dims.num_classes));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.sub_bags));
    put<std::uint64_t>(out, meta.seed);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.epoch));
    for (const ParamTensor* t : t1.tensors()) put_tensor(out, *t);
    for (const ParamTensor* t : t2.tensors()) put_tensor(out, *t);
    if (!out) throw FormatError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCkptMagic, 4) != 0) {
        throw FormatError(path.string() + ": bad checkpoint magic");
    }
    if (get<std::uint16_t>(in, path) != kCkptVersion) {
        throw FormatError(path.string() + ": unsupported checkpoint version");
    }
    get<std::uint16_t>(in, path);  // reserved

    Checkpoint ckpt;
    ckpt.meta.dims.input_dim = get<std::uint32_t>(in, path);
    ckpt.meta.dims.hidden_dim = get<std::uint32_t>(in, path);
    ckpt.meta.dims.attn_dim = get<std::uint32_t>(in, path);
    ckpt.meta.dims.num_classes = get<std::uint32_t>(in, path);
    ckpt.meta.sub_bags = get<std::uint32_t>(in, path);
    ckpt.meta.seed = get<std::uint64_t>(in, path);
    ckpt.meta.epoch = get<std::uint32_t>(in, path);
    ckpt.meta.dims.validate();

    ckpt.t1 = make_params(ckpt.meta.dims, "t1");
    ckpt.t2 = make_params(ckpt.meta.dims, "t2");
    for (ParamTensor* t : ckpt.t1.tensors()) get_tensor(in, *t, path);
    for (ParamTensor* t : ckpt.t2.tensors()) get_tensor(in, *t, path);
    return ckpt;
}

}  // namespace milbag
