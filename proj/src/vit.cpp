#include "adcsl/vit.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "adcsl/errors.hpp"

namespace adcsl {

static_assert(std::endian::native == std::endian::little, "checkpoint and wire code assume a little-endian host");

namespace {

Param make_param(std::string name, Tensor value) { return Param{std::move(name), std::move(value), Var()}; }

TransformerBlock make_block(const ViTConfig& c, std::mt19937_64& rng) {
    const std::size_t d = c.embed_dim;
    const std::size_t qk = c.heads * c.head_dim_qk;
    const std::size_t v = c.heads * c.head_dim_v;
    const std::size_t hidden = c.ffn_ratio * d;
    constexpr double sigma = 0.02;
    TransformerBlock b;
    b.ln1_gain = make_param("ln1_gain", Tensor::ones({d}));
    b.ln1_bias = make_param("ln1_bias", Tensor::zeros({d}));
    b.w_q = make_param("w_q", truncated_normal({d, qk}, sigma, rng));
    b.b_q = make_param("b_q", Tensor::zeros({qk}));
    b.w_k = make_param("w_k", truncated_normal({d, qk}, sigma, rng));
    b.b_k = make_param("b_k", Tensor::zeros({qk}));
    b.w_v = make_param("w_v", truncated_normal({d, v}, sigma, rng));
    b.b_v = make_param("b_v", Tensor::zeros({v}));
    b.w_o = make_param("w_o", truncated_normal({v, d}, sigma, rng));
    b.b_o = make_param("b_o", Tensor::zeros({d}));
    b.ln2_gain = make_param("ln2_gain", Tensor::ones({d}));
    b.ln2_bias = make_param("ln2_bias", Tensor::zeros({d}));
    b.w_ff1 = make_param("w_ff1", truncated_normal({d, hidden}, sigma, rng));
    b.b_ff1 = make_param("b_ff1", Tensor::zeros({hidden}));
    b.w_ff2 = make_param("w_ff2", truncated_normal({hidden, d}, sigma, rng));
    b.b_ff2 = make_param("b_ff2", Tensor::zeros({d}));
    return b;
}

void append(ParamRefs& out, const ParamRefs& more) { out.insert(out.end(), more.begin(), more.end()); }

}  // namespace

nlohmann::json config_to_json(const ViTConfig& c) {
    return {{"channels", c.channels},     {"height", c.height},           {"width", c.width},
            {"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},     {"heads", c.heads},
            {"head_dim_qk", c.head_dim_qk}, {"head_dim_v", c.head_dim_v}, {"blocks", c.blocks},
            {"classes", c.classes},       {"split_point", c.split_point}, {"ffn_ratio", c.ffn_ratio}};
}

ViTConfig config_from_json(const nlohmann::json& j) {
    ViTConfig c;
    c.channels = j.at("channels");
    c.height = j.at("height");
    c.width = j.at("width");
    c.patch_size = j.at("patch_size");
    c.embed_dim = j.at("embed_dim");
    c.heads = j.at("heads");
    c.head_dim_qk = j.at("head_dim_qk");
    c.head_dim_v = j.at("head_dim_v");
    c.blocks = j.at("blocks");
    c.classes = j.at("classes");
    c.split_point = j.at("split_point");
    c.ffn_ratio = j.at("ffn_ratio");
    return c;
}

void ViTConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ContractError("invalid ViT config: " + what);
    };
    require(channels > 0 && height > 0 && width > 0 && patch_size > 0, "image and patch dims must be positive");
    require(height % patch_size == 0 && width % patch_size == 0, "image dims must be multiples of the patch size");
    require(embed_dim > 0 && heads > 0 && head_dim_qk > 0 && head_dim_v > 0, "model dims must be positive");
    require(embed_dim == heads * head_dim_v, "embed_dim must equal heads * head_dim_v");
    require(classes >= 2, "need at least two classes");
    require(ffn_ratio > 0, "ffn_ratio must be positive");
    require(1 < split_point && split_point < blocks, "split point must satisfy 1 < l < L");
}

void bind_parameters(Tape& tape, const ParamRefs& params) {
    for (Param* p : params) p->var = tape.leaf(p->value);
}

std::vector<Tensor> gradients(const ParamRefs& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const Param* p : params) out.push_back(p->var.grad());
    return out;
}

Tensor truncated_normal(Shape shape, double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) {
        double x;
        do {
            x = normal(rng);
        } while (std::abs(x) > 2.0);
        v = x * sigma;
    }
    return t;
}

ParamRefs PatchEmbedding::parameters() { return {&proj, &proj_bias, &cls, &position}; }

ParamRefs TransformerBlock::parameters() {
    return {&ln1_gain, &ln1_bias, &w_q, &b_q, &w_k, &b_k, &w_v, &b_v,
            &w_o, &b_o, &ln2_gain, &ln2_bias, &w_ff1, &b_ff1, &w_ff2, &b_ff2};
}

ParamRefs ClassifierHead::parameters() { return {&norm_gain, &norm_bias, &weight, &bias}; }

ParamRefs ClientModel::parameters() {
    ParamRefs out = embed.parameters();
    for (auto& b : blocks) append(out, b.parameters());
    return out;
}

ParamRefs ServerModel::parameters() {
    ParamRefs out;
    for (auto& b : blocks) append(out, b.parameters());
    append(out, head.parameters());
    return out;
}

ParamRefs SplitModel::parameters() {
    ParamRefs out = client.parameters();
    append(out, server.parameters());
    return out;
}

SplitModel SplitModel::initialize(const ViTConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    constexpr double sigma = 0.02;
    const std::size_t d = config.embed_dim;
    SplitModel m;
    m.config = config;
    m.client.embed.proj = make_param("embed.proj", truncated_normal({config.patch_features(), d}, sigma, rng));
    m.client.embed.proj_bias = make_param("embed.proj_bias", Tensor::zeros({d}));
    m.client.embed.cls = make_param("embed.cls", truncated_normal({d}, sigma, rng));
    m.client.embed.position = make_param("embed.position", truncated_normal({config.tokens(), d}, sigma, rng));
    for (std::size_t i = 0; i < config.blocks; ++i) {
        auto block = make_block(config, rng);
        for (Param* p : block.parameters()) p->name = "block" + std::to_string(i) + "." + p->name;
        (i < config.split_point ? m.client.blocks : m.server.blocks).push_back(std::move(block));
    }
    auto& h = m.server.head;
    h.norm_gain = make_param("head.norm_gain", Tensor::ones({d}));
    h.norm_bias = make_param("head.norm_bias", Tensor::zeros({d}));
    h.weight = make_param("head.weight", truncated_normal({d, config.classes}, sigma, rng));
    h.bias = make_param("head.bias", Tensor::zeros({config.classes}));
    return m;
}

Tensor patchify(const Tensor& images, const ViTConfig& c) {
    if (images.rank() != 4 || images.dim(1) != c.channels || images.dim(2) != c.height || images.dim(3) != c.width) {
        throw DimensionError("image batch " + shape_string(images.shape()) + " does not match config [Bx" +
                             std::to_string(c.channels) + "x" + std::to_string(c.height) + "x" +
                             std::to_string(c.width) + "]");
    }
    const std::size_t batch = images.dim(0);
    const std::size_t p = c.patch_size;
    const std::size_t grid_w = c.width / p;
    const std::size_t patches = c.patches();
    const std::size_t feat = c.patch_features();
    Tensor out({batch, patches, feat});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t pi = 0; pi < patches; ++pi) {
            const std::size_t gy = pi / grid_w, gx = pi % grid_w;
            double* dst = out.data().data() + (b * patches + pi) * feat;
            std::size_t f = 0;
            for (std::size_t ch = 0; ch < c.channels; ++ch) {
                for (std::size_t y = 0; y < p; ++y) {
                    const double* row = images.data().data() +
                                        ((b * c.channels + ch) * c.height + gy * p + y) * c.width + gx * p;
                    for (std::size_t x = 0; x < p; ++x) dst[f++] = row[x];
                }
            }
        }
    }
    return out;
}

Var patch_embed(Tape& tape, PatchEmbedding& embed, const Tensor& images, const ViTConfig& config) {
    Var patches = tape.constant(patchify(images, config));
    Var tokens = add_bias(matmul(patches, embed.proj.var), embed.proj_bias.var);
    return embedding_add(prepend_row(tokens, embed.cls.var), embed.position.var);
}

BlockOutput block_forward(TransformerBlock& block, const Var& z, const ViTConfig& config) {
    if (z.value().rank() != 3 || z.value().dim(2) != config.embed_dim) {
        throw DimensionError("block_forward expects [B x n x " + std::to_string(config.embed_dim) + "], got " +
                             shape_string(z.shape()));
    }
    const std::size_t dk = config.head_dim_qk, dv = config.head_dim_v;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

    Var h = layernorm(z, block.ln1_gain.var, block.ln1_bias.var);
    Var q = add_bias(matmul(h, block.w_q.var), block.b_q.var);
    Var k = add_bias(matmul(h, block.w_k.var), block.b_k.var);
    Var v = add_bias(matmul(h, block.w_v.var), block.b_v.var);

    BlockOutput out;
    std::vector<Var> head_outputs;
    for (std::size_t i = 0; i < config.heads; ++i) {
        Var qi = slice_last_dim(q, i * dk, dk);
        Var ki = slice_last_dim(k, i * dk, dk);
        Var vi = slice_last_dim(v, i * dv, dv);
        Var attn = softmax_rows(scale(matmul(qi, transpose(ki)), inv_sqrt_dk));
        out.attention.push_back(attn);
        head_outputs.push_back(matmul(attn, vi));
    }
    Var mha = add_bias(matmul(concat_last_dim(head_outputs), block.w_o.var), block.b_o.var);
    Var z1 = add(z, mha);
    Var h2 = layernorm(z1, block.ln2_gain.var, block.ln2_bias.var);
    Var ff = add_bias(matmul(gelu(add_bias(matmul(h2, block.w_ff1.var), block.b_ff1.var)), block.w_ff2.var),
                      block.b_ff2.var);
    out.tokens = add(z1, ff);
    return out;
}

Var classify(ClassifierHead& head, const Var& z) {
    const std::size_t batch = z.value().dim(0), d = z.value().dim(2);
    Var cls = reshape(gather_rows(z, std::vector<std::size_t>{0}), {batch, d});
    Var normed = layernorm(cls, head.norm_gain.var, head.norm_bias.var);
    return add_bias(matmul(normed, head.weight.var), head.bias.var);
}

Tensor cls_scores(const std::vector<Var>& attention) {
    if (attention.empty()) throw ContractError("cls_scores needs at least one attention head");
    const auto& first = attention.front().value();
    const std::size_t batch = first.dim(0), n = first.dim(1);
    Tensor out({batch, n});
    for (const auto& a : attention) {
        const auto& v = a.value();
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t j = 0; j < n; ++j) out[b * n + j] += v[b * n * n + j];
        }
    }
    const double inv = 1.0 / static_cast<double>(attention.size());
    for (auto& x : out.data()) x *= inv;
    return out;
}

Var soft_cross_entropy(const Var& logits, const Tensor& targets) {
    if (targets.shape() != logits.shape()) {
        throw DimensionError("soft_cross_entropy: targets " + shape_string(targets.shape()) + " vs logits " +
                             shape_string(logits.shape()));
    }
    const std::size_t rows = targets.dim(0), classes = targets.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            const double t = targets[r * classes + c];
            if (t < 0.0) throw ContractError("soft label entries must be non-negative");
            s += t;
        }
        if (std::abs(s - 1.0) > 1e-9) throw ContractError("soft label row " + std::to_string(r) + " sums to " + std::to_string(s));
    }
    Var t = logits.tape().constant(targets);
    return scale(sum(mul(log_softmax_rows(logits), t)), -1.0 / static_cast<double>(rows));
}

Tensor one_hot(const std::vector<std::uint16_t>& labels, std::size_t classes) {
    Tensor out({labels.size(), classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes) throw ContractError("label " + std::to_string(labels[i]) + " out of range");
        out[i * classes + labels[i]] = 1.0;
    }
    return out;
}

ClientForward client_forward(Tape& tape, ClientModel& client, const Tensor& images, const ViTConfig& config) {
    if (images.rank() != 4) throw DimensionError("client_forward expects [B x C x H x W]");
    bind_parameters(tape, client.parameters());
    Var z = patch_embed(tape, client.embed, images, config);
    ClientForward out;
    for (auto& block : client.blocks) {
        auto r = block_forward(block, z, config);
        z = r.tokens;
        out.last_attention = std::move(r.attention);
    }
    out.activations = z;
    out.cls_scores = cls_scores(out.last_attention);
    return out;
}

Var server_forward(ServerModel& server, const Var& activations, const ViTConfig& config) {
    bind_parameters(activations.tape(), server.parameters());
    Var z = activations;
    for (auto& block : server.blocks) z = block_forward(block, z, config).tokens;
    return classify(server.head, z);
}

ServerForward server_forward_loss(ServerModel& server, const Tensor& activations, const Tensor& soft_labels,
                                  const ViTConfig& config) {
    Tape tape;
    Var x = tape.leaf(activations);
    Var logits = server_forward(server, x, config);
    Var loss = soft_cross_entropy(logits, soft_labels);
    tape.backward(loss);
    return ServerForward{loss.value().item(), x.grad(), gradients(server.parameters())};
}

Var unsplit_forward(Tape& tape, SplitModel& model, const Tensor& images) {
    auto client = client_forward(tape, model.client, images, model.config);
    return server_forward(model.server, client.activations, model.config);
}

Tensor predict(SplitModel& model, const Tensor& images) {
    Tape tape;
    return unsplit_forward(tape, model, images).value();
}

void save_checkpoint(SplitModel& model, const std::string& path) {
    nlohmann::json header;
    header["format"] = "adcsl-checkpoint";
    header["version"] = 1;
    header["config"] = config_to_json(model.config);
    auto& list = header["tensors"] = nlohmann::json::array();
    for (Param* p : model.parameters()) list.push_back({{"name", p->name}, {"shape", p->value.shape()}});
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (Param* p : model.parameters()) {
        out.write(reinterpret_cast<const char*>(p->value.data().data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

SplitModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len > (1u << 26)) throw std::runtime_error("corrupt checkpoint header: " + path);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    const auto header = nlohmann::json::parse(text);
    if (header.at("format") != "adcsl-checkpoint") throw std::runtime_error("not a checkpoint: " + path);

    SplitModel model = SplitModel::initialize(config_from_json(header.at("config")), 0);
    const auto params = model.parameters();
    const auto& list = header.at("tensors");
    if (list.size() != params.size()) throw std::runtime_error("checkpoint tensor count mismatch: " + path);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (list[i].at("name") != params[i]->name || list[i].at("shape").get<Shape>() != params[i]->value.shape()) {
            throw std::runtime_error("checkpoint tensor " + std::to_string(i) + " does not match the model layout");
        }
        in.read(reinterpret_cast<char*>(params[i]->value.data().data()),
                static_cast<std::streamsize>(params[i]->value.size() * sizeof(double)));
    }
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    return model;
}

}  // namespace adcsl
