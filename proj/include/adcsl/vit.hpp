#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "adcsl/ops.hpp"
#include "adcsl/tape.hpp"
#include "adcsl/tensor.hpp"

namespace adcsl {

struct ViTConfig {
    std::size_t channels = 3;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t patch_size = 8;
    std::size_t embed_dim = 64;
    std::size_t heads = 4;
    std::size_t head_dim_qk = 16;
    std::size_t head_dim_v = 16;
    std::size_t blocks = 4;
    std::size_t classes = 10;
    std::size_t split_point = 2;
    std::size_t ffn_ratio = 4;

    std::size_t patches() const { return (height / patch_size) * (width / patch_size); }
    /// Patch tokens plus CLS.
    std::size_t tokens() const { return patches() + 1; }
    std::size_t patch_features() const { return channels * patch_size * patch_size; }
    /// Features per sample at the split, n * d.
    std::size_t features() const { return tokens() * embed_dim; }

    /// Throws ContractError on any violated invariant (including 1 < split_point < blocks).
    void validate() const;

    bool operator==(const ViTConfig&) const = default;
};

nlohmann::json config_to_json(const ViTConfig& config);
ViTConfig config_from_json(const nlohmann::json& j);

/// A trainable tensor. `var` is the leaf bound on the tape of the current pass.
struct Param {
    std::string name;
    Tensor value;
    Var var;
};

using ParamRefs = std::vector<Param*>;

/// Creates a fresh leaf for every parameter on `tape`.
void bind_parameters(Tape& tape, const ParamRefs& params);
/// Gradients of the bound leaves, in parameter order.
std::vector<Tensor> gradients(const ParamRefs& params);

/// Truncated normal (|x| <= 2 sigma) via rejection.
Tensor truncated_normal(Shape shape, double sigma, std::mt19937_64& rng);

struct PatchEmbedding {
    Param proj;       // [C*p*p x d]
    Param proj_bias;  // [d]
    Param cls;        // [d]
    Param position;   // [n x d]

    ParamRefs parameters();
};

struct TransformerBlock {
    Param ln1_gain, ln1_bias;
    // Head i owns columns [i*d_k, (i+1)*d_k) of w_q/w_k and [i*d_v, (i+1)*d_v) of w_v.
    Param w_q, b_q, w_k, b_k, w_v, b_v;
    Param w_o, b_o;  // [H*d_v x d]
    Param ln2_gain, ln2_bias;
    Param w_ff1, b_ff1, w_ff2, b_ff2;

    ParamRefs parameters();
};

struct ClassifierHead {
    Param norm_gain, norm_bias;
    Param weight, bias;  // [d x classes]

    ParamRefs parameters();
};

struct BlockOutput {
    Var tokens;                  // [B x n' x d]
    std::vector<Var> attention;  // per head, [B x n' x n'] (softmax output)
};

/// [B x C x H x W] -> [B x patches x C*p*p], patches in row-major grid order.
Tensor patchify(const Tensor& images, const ViTConfig& config);

/// Image batch [B x C x H x W] -> tokens [B x n x d] with CLS at index 0.
Var patch_embed(Tape& tape, PatchEmbedding& embed, const Tensor& images, const ViTConfig& config);

/// Pre-norm block; accepts any token count n' >= 1.
BlockOutput block_forward(TransformerBlock& block, const Var& z, const ViTConfig& config);

/// Final norm, CLS row, linear classifier: [B x n' x d] -> [B x classes].
Var classify(ClassifierHead& head, const Var& z);

/// Mean over heads of the CLS row (row 0) of each attention matrix: -> [B x n'].
Tensor cls_scores(const std::vector<Var>& attention);

/// Mean soft-label cross entropy. Rows of `targets` must sum to 1 within 1e-9.
Var soft_cross_entropy(const Var& logits, const Tensor& targets);

Tensor one_hot(const std::vector<std::uint16_t>& labels, std::size_t classes);

struct ClientModel {
    PatchEmbedding embed;
    std::vector<TransformerBlock> blocks;

    ParamRefs parameters();
};

struct ServerModel {
    std::vector<TransformerBlock> blocks;
    ClassifierHead head;

    ParamRefs parameters();
};

struct ClientForward {
    Var activations;    // [B x n x d]
    Tensor cls_scores;  // [B x n]
    std::vector<Var> last_attention;
};

struct ServerForward {
    double loss = 0.0;
    Tensor grad_activations;
    std::vector<Tensor> grad_params;
};

struct SplitModel {
    ViTConfig config;
    ClientModel client;
    ServerModel server;

    /// Seeded initialisation of the full model; both roles can rebuild identical halves.
    static SplitModel initialize(const ViTConfig& config, std::uint64_t seed);

    ParamRefs parameters();
};

/// Runs the client half on `tape` (parameters are bound as leaves there).
ClientForward client_forward(Tape& tape, ClientModel& client, const Tensor& images, const ViTConfig& config);

/// Server half on an activation var living on `tape`: -> logits.
Var server_forward(ServerModel& server, const Var& activations, const ViTConfig& config);

/// One server pass on a fresh tape: loss, gradient w.r.t. the received activations and
/// gradients for every server parameter.
ServerForward server_forward_loss(ServerModel& server, const Tensor& activations, const Tensor& soft_labels,
                                  const ViTConfig& config);

/// Reference path through the whole network on one tape.
Var unsplit_forward(Tape& tape, SplitModel& model, const Tensor& images);

/// Inference-only logits (no gradients kept).
Tensor predict(SplitModel& model, const Tensor& images);

/// Flat little-endian float64 payload behind a length-prefixed JSON header.
void save_checkpoint(SplitModel& model, const std::string& path);
SplitModel load_checkpoint(const std::string& path);

}  // namespace adcsl
