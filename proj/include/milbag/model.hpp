#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "milbag/errors.hpp"
#include "milbag/numerics.hpp"

namespace milbag {

struct ModelDims {
    std::size_t input_dim = 32;
    std::size_t hidden_dim = 64;
    std::size_t attn_dim = 32;
    std::size_t num_classes = 3;

    void validate() const;
};

// One gated-attention head: instance projection, two-branch attention
// (tanh gate times sigmoid gate), attention-weighted pooling, and a
// linear classifier on the pooled embedding.
struct GatedAttentionParams {
    ModelDims dims;
    ParamTensor proj_w, proj_b;
    ParamTensor attn_v_w, attn_v_b;
    ParamTensor attn_u_w, attn_u_b;
    ParamTensor attn_w;
    ParamTensor cls_w, cls_b;

    // Fixed iteration order used by the optimizer and checkpoints.
    std::vector<ParamTensor*> tensors();
    std::vector<const ParamTensor*> tensors() const;
    void zero_grad();
};

GatedAttentionParams make_params(const ModelDims& dims, const std::string& name_prefix);

// Glorot uniform draws for every tensor, in declaration order, from one stream.
void init_params(GatedAttentionParams& params, std::mt19937_64& rng);

// Forward pass intermediates kept for the exact backward pass.
struct AttentionTrace {
    Matrix input;       // N x d
    Matrix hidden;      // N x h, after relu
    Matrix gate_v;      // N x a, tanh branch
    Matrix gate_u;      // N x a, sigmoid branch
    Matrix gate;        // N x a, elementwise product
    std::vector<double> scores;   // N raw attention scores
    std::vector<double> weights;  // N softmax attention weights
    Matrix pooled;      // 1 x h
};

AttentionTrace attention_forward(const Matrix& features, const GatedAttentionParams& params);

// Accumulates parameter gradients for d(loss)/d(pooled) = d_pooled.
void attention_backward(const AttentionTrace& trace, GatedAttentionParams& params,
                        const Matrix& d_pooled);

struct BagTrace {
    AttentionTrace attention;
    Matrix logits;               // 1 x C
    std::vector<double> probs;   // softmax of logits
};

BagTrace t1_forward(const Matrix& features, const GatedAttentionParams& params);

// d_logits is 1 x C; d_pooled_extra, when given, adds a gradient applied
// directly to the pooled embedding (used by the embedding-space loss).
void t1_backward(const BagTrace& trace, GatedAttentionParams& params, const Matrix& d_logits,
                 const Matrix* d_pooled_extra = nullptr);

enum class SubBagPooling { features, logits };

struct SubBagTrace {
    std::vector<AttentionTrace> per_group;
    std::vector<Matrix> group_logits;  // 1 x C each (logits pooling only)
    Matrix mean_pooled;                // 1 x h (features pooling only)
    Matrix logits;                     // 1 x C
    std::vector<double> probs;
    SubBagPooling pooling = SubBagPooling::features;
};

// Runs the head on each instance group independently, then averages either
// the pooled embeddings or the per-group logits.
SubBagTrace t2_forward(const Matrix& features, std::span<const std::vector<std::size_t>> groups,
                       const GatedAttentionParams& params, SubBagPooling pooling);

// Same as t2_forward but over pre-assembled feature matrices, one per group.
SubBagTrace t2_forward(std::span<const Matrix> group_features,
                       const GatedAttentionParams& params, SubBagPooling pooling);

void t2_backward(const SubBagTrace& trace, GatedAttentionParams& params, const Matrix& d_logits);

struct CheckpointMeta {
    ModelDims dims;
    std::size_t sub_bags = 0;
    std::uint64_t seed = 0;
    std::size_t epoch = 0;
};

void save_checkpoint(const GatedAttentionParams& t1, const GatedAttentionParams& t2,
                     const CheckpointMeta& meta, const std::filesystem::path& path);

struct Checkpoint {
    GatedAttentionParams t1;
    GatedAttentionParams t2;
    CheckpointMeta meta;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace milbag
