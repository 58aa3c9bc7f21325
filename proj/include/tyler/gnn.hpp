// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "tyler/autodiff.hpp"
#include "tyler/semantic.hpp"
#include "tyler/subgraph.hpp"

namespace tyler {

struct ModelConfig {
    int hops = 3;
    int layers = 3;
    std::size_t hidden_dim = 32;
    std::size_t bases = 4;
    std::size_t attention_dim = 32;
    /// Relations of the training vocabulary; inverses get ids r + relation_count.
    std::size_t relation_count = 0;
    bool semantic_enabled = true;
    SemanticConfig semantic;
    std::uint64_t seed = 0;

    std::size_t pos_dim() const { return static_cast<std::size_t>(2 * hops + 2); }
    std::size_t input_dim() const { return pos_dim() + semantic.out_dim; }
    std::size_t layer_dim(int l) const { return l == 0 ? input_dim() : hidden_dim; }
    std::size_t jk_dim() const { return static_cast<std::size_t>(layers) * 4 * hidden_dim; }
};

/// Parameter indices for one message-passing layer.
struct LayerParams {
    std::size_t self_loop = 0;      // W0, d_l x d_{l-1}
    std::vector<std::size_t> bases; // V_b, d_l x d_{l-1}
    std::size_t coefficients = 0;   // a_{r,b}, 2R x B
    std::size_t rel_update = 0;     // W_rel, d_l x d_{l-1}
    // W_s split by input block: [h_j | h_i | e_r | e_rt]
    std::size_t att_src = 0;
    std::size_t att_dst = 0;
    std::size_t att_rel = 0;
    std::size_t att_target = 0;
    std::size_t att_bias = 0;       // b_s
    std::size_t att_out = 0;        // W_alpha, 1 x d_att
    std::size_t att_out_bias = 0;   // b_alpha, 1 x 1
};

/// All learnable tensors, including the semantic encoder trained jointly.
class Model {
public:
    /// Glorot-uniform matrices and relation embeddings, zero biases, unit
    /// layer-norm gains; fully determined by config.seed.
    static Model create(const ModelConfig& config);

    const ModelConfig& config() const noexcept { return config_; }
    ad::ParameterSet& params() noexcept { return params_; }
    const ad::ParameterSet& params() const noexcept { return params_; }
    const std::vector<LayerParams>& layers() const noexcept { return layers_; }
    std::size_t relation_embeddings() const noexcept { return rel_emb_; }
    std::size_t output_head() const noexcept { return out_; }
    const std::optional<SemanticEncoder>& semantic() const noexcept { return semantic_; }

    /// Materialized W_r = sum_b a_{r,b} V_b for layer l.
    ad::Matrix relation_weight(std::size_t layer, RelationId r) const;

    void save(const std::filesystem::path& dir) const;
    static Model load(const std::filesystem::path& dir);

private:
    explicit Model(const ModelConfig& config) : config_(config) {}
    void bind_indices();

    ModelConfig config_;
    ad::ParameterSet params_;
    std::vector<LayerParams> layers_;
    std::size_t rel_emb_ = 0;  // d_0 x 2R, column r is e_r^0
    std::size_t out_ = 0;      // W_f, 1 x jk_dim
    std::optional<SemanticEncoder> semantic_;
};

/// Where a subgraph's layer-0 node features come from.
struct NodeFeatures {
    /// Explicit h0 rows (node count x d_0). Takes precedence when set.
    const ad::Matrix* h0 = nullptr;
    /// Store consulted for h_sem when the model has semantics enabled.
    const EmbeddingStore* store = nullptr;
};

/// Builds the h0 node vectors on the tape: positional one-hots plus the
/// semantic embedding (or zeros in structure-only mode).
std::vector<ad::Var> initial_embeddings(ad::Tape& tape, const Model& model,
                                        const EnclosingSubgraph& sg, const NodeFeatures& features);

struct LayerTrace {
    std::vector<ad::Var> nodes;                          // h_i^l
    std::map<RelationId, ad::Var> relations;  // e_r^l for relations touched
    std::vector<ad::Var> attention;                      // per directed message, see message order
};

struct ForwardResult {
    std::vector<LayerTrace> layers;  // index 0 holds h0
    std::vector<ad::Var> pooled;     // per layer 1..L
    ad::Var score;
};

/// Directed messages of a subgraph: every stored edge (h, r, t) yields
/// "h receives from t under r" and "t receives from h under r + R".
struct Message {
    std::uint32_t receiver;
    RelationId rel;
    std::uint32_t sender;
};
std::vector<Message> messages_of(const EnclosingSubgraph& sg, std::size_t relation_count);

/// Edge attention weight sigma(W_alpha ReLU(W_s[h_j ++ h_i ++ e_r ++ e_rt] + b_s) + b_alpha).
ad::Var attention_weight(ad::Tape& tape, const Model& model, std::size_t layer, ad::Var h_sender,
                         ad::Var h_receiver, ad::Var e_rel, ad::Var e_target);

/// One message-passing layer (1-based `layer`).
LayerTrace layer_forward(ad::Tape& tape, const Model& model, std::size_t layer,
                         const EnclosingSubgraph& sg, const LayerTrace& prev, RelationId target_rel);

/// Full forward pass. Throws NumericError on non-finite values.
ForwardResult forward(ad::Tape& tape, const Model& model, const EnclosingSubgraph& sg,
                      std::span<const ad::Var> h0, RelationId target_rel);

/// Score of the subgraph's target triple.
double score(const Model& model, const EnclosingSubgraph& sg, const NodeFeatures& features);

/// Final-layer embedding of the tail anchor (used for PCA export).
Eigen::VectorXd tail_embedding(const Model& model, const EnclosingSubgraph& sg,
                               const NodeFeatures& features);

struct ScoredExample {
    const EnclosingSubgraph* subgraph = nullptr;
    NodeFeatures features;
    double sign = 1.0;
};

/// Gradient of sum_i sign_i * f(example_i) for every parameter. Per-example
/// blocks are reduced in example order, so the result does not depend on
/// `threads`. Throws NumericError naming a tensor with a non-finite gradient.
ad::Gradients gradients(const Model& model, std::span<const ScoredExample> examples,
                        std::size_t threads = 1);

}  // namespace tyler
