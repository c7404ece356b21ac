#include "adcsl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

#include "adcsl/adc.hpp"
#include "adcsl/errors.hpp"

namespace adcsl {

using nlohmann::json;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    // splitmix64 finaliser over the combined words
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// ---- RunConfig ---------------------------------------------------------------

namespace {

json codec_to_json(const CodecConfig& c) {
    return {{"kind", to_string(c.kind)},
            {"topk", c.topk},
            {"noise_scale", c.noise_scale},
            {"bottleneck", c.bottleneck},
            {"superposition", c.superposition},
            {"clusters", c.clusters},
            {"tokens_kept", c.tokens_kept},
            {"strategy", to_string(c.strategy)},
            {"kmeans_max_iters", c.kmeans_max_iters},
            {"seed", c.seed}};
}

CodecConfig codec_from_json(const json& j) {
    CodecConfig c;
    c.kind = codec_kind_from_string(j.at("kind").get<std::string>());
    c.topk = j.at("topk");
    c.noise_scale = j.at("noise_scale");
    c.bottleneck = j.at("bottleneck");
    c.superposition = j.at("superposition");
    c.clusters = j.at("clusters");
    c.tokens_kept = j.at("tokens_kept");
    c.strategy = merge_vector_from_string(j.at("strategy").get<std::string>());
    c.kmeans_max_iters = j.at("kmeans_max_iters");
    c.seed = j.at("seed");
    return c;
}

json data_to_json(const SyntheticSpec& s) {
    return {{"classes", s.classes},
            {"samples_per_class", s.samples_per_class},
            {"marked_patches", s.marked_patches},
            {"signal", s.signal},
            {"noise", s.noise},
            {"test_fraction", s.test_fraction},
            {"val_fraction", s.val_fraction},
            {"seed", s.seed}};
}

SyntheticSpec data_from_json(const json& j) {
    SyntheticSpec s;
    s.classes = j.at("classes");
    s.samples_per_class = j.at("samples_per_class");
    s.marked_patches = j.at("marked_patches");
    s.signal = j.at("signal");
    s.noise = j.at("noise");
    s.test_fraction = j.at("test_fraction");
    s.val_fraction = j.at("val_fraction");
    s.seed = j.at("seed");
    return s;
}

// Rejects keys of `given` that the defaults do not know about, recursively.
void check_keys(const json& given, const json& known, const std::string& where) {
    for (const auto& [key, value] : given.items()) {
        if (!known.contains(key)) throw ContractError("unknown config key '" + where + key + "'");
        if (value.is_object() && known.at(key).is_object()) check_keys(value, known.at(key), where + key + ".");
    }
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

json RunConfig::to_json() const {
    return {{"model", config_to_json(model)},
            {"codec", codec_to_json(codec)},
            {"xi", xi ? json(*xi) : json(nullptr)},
            {"batch_size", batch_size},
            {"budget_epochs", budget_epochs},
            {"seed", seed},
            {"lr", lr},
            {"eval_every", eval_every},
            {"log_every", log_every},
            {"data", data_to_json(data)},
            {"dataset_path", dataset_path},
            {"out_dir", out_dir},
            {"run_name", run_name},
            {"transport", transport},
            {"addr", addr},
            {"wire_dtype", to_string(wire_dtype)}};
}

RunConfig RunConfig::from_json(const json& j) {
    if (!j.is_object()) throw ContractError("run config must be a JSON object");
    json merged = RunConfig{}.to_json();
    check_keys(j, merged, "");
    merged.merge_patch(j);
    // merge_patch drops null members; xi may legitimately be null.
    RunConfig c;
    try {
        c.model = config_from_json(merged.at("model"));
        c.codec = codec_from_json(merged.at("codec"));
        if (merged.contains("xi") && !merged.at("xi").is_null()) c.xi = merged.at("xi").get<double>();
        c.batch_size = merged.at("batch_size");
        c.budget_epochs = merged.at("budget_epochs");
        c.seed = merged.at("seed");
        c.lr = merged.at("lr");
        c.eval_every = merged.at("eval_every");
        c.log_every = merged.at("log_every");
        c.data = data_from_json(merged.at("data"));
        c.dataset_path = merged.at("dataset_path");
        c.out_dir = merged.at("out_dir");
        c.run_name = merged.at("run_name");
        c.transport = merged.at("transport");
        c.addr = merged.at("addr");
        c.wire_dtype = dtype_from_string(merged.at("wire_dtype").get<std::string>());
    } catch (const json::exception& e) {
        throw ContractError(std::string("invalid run config: ") + e.what());
    }
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("cannot parse config " + path + ": " + e.what());
    }
    return from_json(j);
}

ModelDims RunConfig::dims() const {
    return ModelDims{batch_size, model.tokens(), model.embed_dim, model.classes};
}

void RunConfig::resolve() {
    if (dataset_path.empty()) model.classes = data.classes;
    data.channels = model.channels;
    data.height = model.height;
    data.width = model.width;
    data.patch_size = model.patch_size;
    model.validate();
    if (batch_size < 1) throw ContractError("batch size must be positive");
    if (!(budget_epochs >= 0.0) || !std::isfinite(budget_epochs)) throw ContractError("budget epochs must be >= 0");
    if (!(lr > 0.0)) throw ContractError("learning rate must be positive");
    if (transport != "inprocess" && transport != "tcp") {
        throw ContractError("transport must be 'inprocess' or 'tcp', got '" + transport + "'");
    }
    if (transport == "tcp") Address::parse(addr);

    if (xi) {
        const CodecConfig target = CodecConfig::for_ratio(codec.kind, *xi, dims());
        if (codec.topk == 0) codec.topk = target.topk;
        if (codec.bottleneck == 0) codec.bottleneck = target.bottleneck;
        if (codec.superposition == 0) codec.superposition = target.superposition;
        if (codec.clusters == 0) codec.clusters = target.clusters;
        if (codec.tokens_kept == 0) codec.tokens_kept = target.tokens_kept;
    }
    codec.validate(dims());
}

std::string RunConfig::name() const {
    if (!run_name.empty()) return run_name;
    std::string n = to_string(codec.kind);
    if (xi) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "_xi%g", *xi);
        n += buf;
    }
    if (codec.kind == CodecKind::adc) n += "_T" + std::to_string(codec.clusters) + "_k" + std::to_string(codec.tokens_kept);
    return n + "_s" + std::to_string(seed);
}

std::string RunConfig::output_dir() const {
    if (const char* env = std::getenv(kOutputDirEnv); env != nullptr && *env != '\0') return env;
    return out_dir;
}

// ---- shared helpers -------------------------------------------------------------

namespace {

std::vector<double> flat(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor from_packet(const Packet& p, Shape shape) {
    if (shape_size(shape) != p.values.size()) {
        throw ProtocolError(to_string(p.kind) + " payload has " + std::to_string(p.values.size()) + " values, expected " +
                            shape_string(shape));
    }
    return Tensor(std::move(shape), p.values);
}

Shape dims_shape(const Packet& p) {
    Shape s(p.dims.begin(), p.dims.end());
    if (s.empty() || std::any_of(s.begin(), s.end(), [](std::size_t d) { return d == 0; })) {
        throw ProtocolError("packet carries invalid dims");
    }
    return s;
}

BottleNet make_bottlenet(const RunConfig& c) {
    if (c.codec.kind != CodecKind::bottlenet) return BottleNet{};
    std::mt19937_64 rng(mix_seed(c.seed, 2));
    return BottleNet::initialize(c.model.embed_dim, c.codec.bottleneck, rng);
}

std::unique_ptr<C3SLCodec> make_c3sl(const RunConfig& c) {
    if (c.codec.kind != CodecKind::c3sl) return nullptr;
    return std::make_unique<C3SLCodec>(c.codec.superposition, c.model.features(), mix_seed(c.seed ^ c.codec.seed, 3));
}

std::vector<std::uint32_t> argmax_rows(const Tensor& logits) {
    const std::size_t rows = logits.dim(0), cols = logits.dim(1);
    std::vector<std::uint32_t> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = logits.data().data() + r * cols;
        out[r] = static_cast<std::uint32_t>(std::max_element(row, row + cols) - row);
    }
    return out;
}

constexpr std::size_t kEvalChunk = 200;

}  // namespace

double accuracy(const Tensor& logits, const std::vector<std::uint16_t>& labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) throw DimensionError("logits do not match labels");
    const auto pred = argmax_rows(logits);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i];
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double evaluate(SplitModel& model, const Dataset& data, std::span<const std::size_t> indices) {
    if (indices.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < indices.size(); start += kEvalChunk) {
        const auto chunk = indices.subspan(start, std::min(kEvalChunk, indices.size() - start));
        const auto labels = gather_labels(data, chunk);
        const auto pred = argmax_rows(predict(model, gather_images(data, chunk)));
        for (std::size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(indices.size());
}

// ---- client ----------------------------------------------------------------------

ClientSession::ClientSession(RunConfig config, Endpoint& endpoint, double budget_bits)
    : config_(std::move(config)), endpoint_(endpoint), ledger_(budget_bits) {
    config_.resolve();
    cost_ = CostModel{config_.dims(), 32.0};
    model_ = std::move(SplitModel::initialize(config_.model, config_.seed).client);
    bottlenet_ = make_bottlenet(config_);
    c3sl_ = make_c3sl(config_);
    noise_rng_.seed(mix_seed(config_.seed, 4));
    adam_ = Adam(AdamOptions{config_.lr});
}

ParamRefs ClientSession::parameters() {
    ParamRefs out = model_.parameters();
    if (config_.codec.kind == CodecKind::bottlenet) {
        for (Param* p : bottlenet_.encoder_parameters()) out.push_back(p);
    }
    return out;
}

Packet ClientSession::request(const Packet& packet, MessageKind expect) {
    endpoint_.send(packet);
    Packet reply = endpoint_.receive();
    if (reply.kind == MessageKind::error) {
        throw std::runtime_error("server error at iteration " + std::to_string(packet.iteration) + ": " + reply.text);
    }
    if (reply.kind != expect) {
        throw ProtocolError("expected " + to_string(expect) + ", got " + to_string(reply.kind) + " at iteration " +
                            std::to_string(packet.iteration));
    }
    if (reply.iteration != packet.iteration) {
        throw ProtocolError("reply for iteration " + std::to_string(reply.iteration) + " while " +
                            std::to_string(packet.iteration) + " is pending");
    }
    return reply;
}

void ClientSession::handshake() {
    Packet hello;
    hello.kind = MessageKind::hello;
    hello.dtype = config_.wire_dtype;
    hello.codec = config_.codec.kind;
    hello.text = config_.to_json().dump();
    request(hello, MessageKind::ack);
}

void ClientSession::shutdown() {
    Packet bye;
    bye.kind = MessageKind::shutdown;
    bye.iteration = iteration_;
    bye.dtype = config_.wire_dtype;
    request(bye, MessageKind::ack);
}

StepReport ClientSession::train_step(const Tensor& images, const std::vector<std::uint16_t>& labels) {
    const CodecConfig& codec = config_.codec;
    ledger_.admit(cost_.iteration_bits(codec));

    const std::size_t B = config_.batch_size, n = config_.model.tokens(), d = config_.model.embed_dim;
    const std::size_t L = config_.model.classes;
    if (images.rank() != 4 || images.dim(0) != B || labels.size() != B) {
        throw DimensionError("training batch must hold exactly " + std::to_string(B) + " samples");
    }
    const std::uint32_t it = iteration_ + 1;

    Tape tape;
    auto fwd = client_forward(tape, model_, images, config_.model);
    Var sent = fwd.activations;

    Packet p;
    p.kind = MessageKind::activation;
    p.iteration = it;
    p.codec = codec.kind;
    p.dtype = config_.wire_dtype;
    p.dims = {static_cast<std::uint32_t>(B), static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(d)};
    p.hard_labels = labels;

    SparseSelection selection;
    MergePlan plan;
    switch (codec.kind) {
        case CodecKind::base:
            p.values = flat(sent.value());
            break;
        case CodecKind::topk:
        case CodecKind::randtopk: {
            const Tensor z = sent.value().reshaped({B, n * d});
            selection = codec.kind == CodecKind::topk ? topk_encode(z, codec.topk)
                                                      : randtopk_encode(z, codec.topk, codec.noise_scale, noise_rng_);
            p.values = selection.values;
            p.indices = selection.indices;
            break;
        }
        case CodecKind::bottlenet:
            bind_parameters(tape, bottlenet_.encoder_parameters());
            sent = bottlenet_encode(bottlenet_, sent);
            p.values = flat(sent.value());
            p.dims[2] = static_cast<std::uint32_t>(codec.bottleneck);
            break;
        case CodecKind::c3sl: {
            const Tensor slots = c3sl_->encode(sent.value().reshaped({B, n * d}));
            p.values = flat(slots);
            p.dims[0] = static_cast<std::uint32_t>(slots.dim(0));
            break;
        }
        case CodecKind::adc: {
            ADCConfig a = codec.adc();
            a.seed = mix_seed(config_.seed ^ codec.seed, it);
            auto enc = adc_encode(sent.value(), fwd.cls_scores, labels, L, a);
            p.values = flat(enc.features);
            p.soft_labels = flat(enc.soft_labels);
            p.hard_labels.clear();
            p.dims = {static_cast<std::uint32_t>(a.clusters), static_cast<std::uint32_t>(a.tokens_kept),
                      static_cast<std::uint32_t>(d)};
            plan = std::move(enc.plan);
            break;
        }
    }
    p.charged_bits = cost_.feature_bits(p.values.size()) + cost_.index_bits(p.indices.size());
    p.label_bits = codec.kind == CodecKind::adc ? cost_.soft_label_bits(codec.clusters) : cost_.hard_label_bits(B);

    const Packet g = request(p, MessageKind::gradient);

    Tensor grad;
    switch (codec.kind) {
        case CodecKind::base:
            grad = from_packet(g, {B, n, d});
            break;
        case CodecKind::topk:
        case CodecKind::randtopk:
            grad = topk_backward_scatter(g.values, selection, {B, n, d});
            break;
        case CodecKind::bottlenet:
            grad = from_packet(g, {B, n, codec.bottleneck});
            break;
        case CodecKind::c3sl:
            grad = c3sl_->decode(from_packet(g, {c3sl_->slots(B), n * d}), B).reshaped({B, n, d});
            break;
        case CodecKind::adc:
            grad = unmerge_gradient(from_packet(g, {codec.clusters, codec.tokens_kept, d}), plan);
            break;
    }
    tape.backward(sent, grad);
    const ParamRefs params = parameters();
    adam_.step(params, gradients(params));

    ledger_.charge_forward(p.charged_bits, p.label_bits);
    ledger_.charge_backward(g.charged_bits);
    ledger_.complete_iteration();
    iteration_ = it;
    return StepReport{it, g.scalar, p.charged_bits, g.charged_bits, p.label_bits};
}

std::pair<double, double> ClientSession::evaluate(const Dataset& data, std::span<const std::size_t> indices) {
    if (indices.empty()) return {0.0, 0.0};
    std::size_t correct = 0;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < indices.size(); start += kEvalChunk) {
        const auto chunk = indices.subspan(start, std::min(kEvalChunk, indices.size() - start));
        const auto labels = gather_labels(data, chunk);
        Tape tape;
        auto fwd = client_forward(tape, model_, gather_images(data, chunk), config_.model);
        Var z = fwd.activations;
        if (config_.codec.kind == CodecKind::bottlenet) {
            bind_parameters(tape, bottlenet_.encoder_parameters());
            z = bottlenet_encode(bottlenet_, z);
        }
        Packet p;
        p.kind = MessageKind::eval_request;
        p.iteration = iteration_;
        p.codec = config_.codec.kind;
        p.dtype = config_.wire_dtype;
        for (auto s : z.shape()) p.dims.push_back(static_cast<std::uint32_t>(s));
        p.values = flat(z.value());
        p.hard_labels = labels;
        const Packet r = request(p, MessageKind::eval_result);
        if (r.indices.size() != labels.size()) throw ProtocolError("eval reply has the wrong number of predictions");
        for (std::size_t i = 0; i < labels.size(); ++i) correct += r.indices[i] == labels[i];
        loss_sum += r.scalar * static_cast<double>(labels.size());
    }
    const auto total = static_cast<double>(indices.size());
    return {static_cast<double>(correct) / total, loss_sum / total};
}

// ---- server ----------------------------------------------------------------------

ServerSession::ServerSession(RunConfig config) : config_(std::move(config)) {
    config_.resolve();
    cost_ = CostModel{config_.dims(), 32.0};
    model_ = std::move(SplitModel::initialize(config_.model, config_.seed).server);
    bottlenet_ = make_bottlenet(config_);
    c3sl_ = make_c3sl(config_);
    adam_ = Adam(AdamOptions{config_.lr});
}

ParamRefs ServerSession::parameters() {
    ParamRefs out = model_.parameters();
    if (config_.codec.kind == CodecKind::bottlenet) {
        for (Param* p : bottlenet_.decoder_parameters()) out.push_back(p);
    }
    return out;
}

Packet ServerSession::handle(const Packet& packet) {
    switch (packet.kind) {
        case MessageKind::hello:
        case MessageKind::shutdown: {
            Packet ack;
            ack.kind = MessageKind::ack;
            ack.iteration = packet.iteration;
            ack.dtype = packet.dtype;
            return ack;
        }
        case MessageKind::activation: return handle_activation(packet);
        case MessageKind::eval_request: return handle_eval(packet);
        default: throw ProtocolError("server cannot handle " + to_string(packet.kind));
    }
}

Packet ServerSession::handle_activation(const Packet& p) {
    const CodecConfig& codec = config_.codec;
    if (p.codec != codec.kind) throw ProtocolError("codec tag " + to_string(p.codec) + " does not match the session");
    if (p.iteration != last_iteration_ + 1) {
        throw ProtocolError("activation for iteration " + std::to_string(p.iteration) + " after " +
                            std::to_string(last_iteration_));
    }
    const std::size_t n = config_.model.tokens(), d = config_.model.embed_dim, L = config_.model.classes;
    const Shape shape = dims_shape(p);
    if (shape.size() != 3) throw ProtocolError("activation dims must be rank 3");

    Tape tape;
    Var input, acts;
    Tensor targets;
    SparseSelection selection;
    std::size_t batch = shape[0];
    switch (codec.kind) {
        case CodecKind::base:
            input = acts = tape.leaf(from_packet(p, shape));
            break;
        case CodecKind::topk:
        case CodecKind::randtopk: {
            if (p.indices.size() != p.values.size() || p.values.size() % batch != 0) {
                throw ProtocolError("sparse payload is inconsistent");
            }
            selection = SparseSelection{batch, n * d, p.values.size() / batch, p.values, p.indices};
            input = acts = tape.leaf(sparse_decode(selection, {batch, n, d}));
            break;
        }
        case CodecKind::bottlenet:
            input = tape.leaf(from_packet(p, shape));
            bind_parameters(tape, bottlenet_.decoder_parameters());
            acts = bottlenet_decode(bottlenet_, input);
            break;
        case CodecKind::c3sl:
            batch = p.hard_labels.size();
            if (c3sl_->slots(batch) != shape[0]) throw ProtocolError("slot count does not match the label count");
            input = acts = tape.leaf(c3sl_->decode(from_packet(p, {shape[0], n * d}), batch).reshaped({batch, n, d}));
            break;
        case CodecKind::adc:
            input = acts = tape.leaf(from_packet(p, shape));
            break;
    }

    if (codec.kind == CodecKind::adc) {
        if (p.soft_labels.size() != batch * L) throw ProtocolError("soft labels do not match the merged batch");
        targets = Tensor({batch, L}, p.soft_labels);
        // Wire rounding can leave rows a few ulps of float32 away from 1.
        for (std::size_t r = 0; r < batch; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < L; ++c) s += targets[r * L + c];
            if (!(s > 0.0)) throw ProtocolError("soft label row sums to zero");
            for (std::size_t c = 0; c < L; ++c) targets[r * L + c] /= s;
        }
    } else {
        if (p.hard_labels.size() != batch) throw ProtocolError("label count does not match the batch");
        for (auto l : p.hard_labels) {
            if (l >= L) throw ProtocolError("label out of range");
        }
        targets = one_hot(p.hard_labels, L);
    }

    Var logits = server_forward(model_, acts, config_.model);
    Var loss = soft_cross_entropy(logits, targets);
    tape.backward(loss);
    const Tensor grad_in = input.grad();
    const ParamRefs params = parameters();
    adam_.step(params, gradients(params));

    Packet g;
    g.kind = MessageKind::gradient;
    g.iteration = p.iteration;
    g.codec = p.codec;
    g.dtype = p.dtype;
    g.dims = p.dims;
    g.scalar = loss.value().item();
    switch (codec.kind) {
        case CodecKind::topk:
        case CodecKind::randtopk:
            g.values = topk_backward_route(grad_in.reshaped({batch, n * d}), selection);
            break;
        case CodecKind::c3sl:
            g.values = flat(c3sl_->encode_gradient(grad_in.reshaped({batch, n * d})));
            break;
        default:
            g.values = flat(grad_in);
            break;
    }
    g.charged_bits = cost_.feature_bits(g.values.size());
    last_iteration_ = p.iteration;
    return g;
}

Packet ServerSession::handle_eval(const Packet& p) {
    const Shape shape = dims_shape(p);
    Tape tape;
    Var acts = tape.constant(from_packet(p, shape));
    if (config_.codec.kind == CodecKind::bottlenet) {
        bind_parameters(tape, bottlenet_.decoder_parameters());
        acts = bottlenet_decode(bottlenet_, acts);
    }
    Var logits = server_forward(model_, acts, config_.model);
    if (p.hard_labels.size() != shape[0]) throw ProtocolError("eval labels do not match the batch");
    Var loss = soft_cross_entropy(logits, one_hot(p.hard_labels, config_.model.classes));

    Packet r;
    r.kind = MessageKind::eval_result;
    r.iteration = p.iteration;
    r.codec = p.codec;
    r.dtype = p.dtype;
    r.indices = argmax_rows(logits.value());
    r.scalar = loss.value().item();
    return r;
}

void serve_session(ServerSession& session, Endpoint& endpoint) {
    while (true) {
        const Packet request = endpoint.receive();
        Packet reply;
        try {
            reply = session.handle(request);
        } catch (const std::exception& e) {
            Packet err;
            err.kind = MessageKind::error;
            err.iteration = request.iteration;
            err.text = e.what();
            try {
                endpoint.send(err);
            } catch (const std::exception&) {
            }
            throw;
        }
        endpoint.send(reply);
        if (request.kind == MessageKind::shutdown) return;
    }
}

void serve(Endpoint& endpoint) {
    const Packet hello = endpoint.receive();
    std::unique_ptr<ServerSession> session;
    try {
        if (hello.kind != MessageKind::hello) throw ProtocolError("expected hello, got " + to_string(hello.kind));
        session = std::make_unique<ServerSession>(RunConfig::from_json(json::parse(hello.text)));
    } catch (const std::exception& e) {
        Packet err;
        err.kind = MessageKind::error;
        err.text = e.what();
        endpoint.send(err);
        throw;
    }
    endpoint.send(session->handle(hello));
    serve_session(*session, endpoint);
}

// ---- experiment --------------------------------------------------------------------

std::string RunSummary::csv_header() {
    return "name,codec,xi_forward,xi_backward,xi,topk,bottleneck,superposition,clusters,tokens_kept,iterations,"
           "iterations_per_epoch,epoch_equivalents,budget_bits,bits_forward,bits_backward,label_bits,final_train_loss,"
           "test_accuracy,val_accuracy";
}

std::string RunSummary::csv_row() const {
    const double epochs =
        iterations_per_epoch == 0 ? 0.0 : static_cast<double>(iterations) / static_cast<double>(iterations_per_epoch);
    std::string row = name + "," + to_string(codec.kind);
    for (double v : {ratios.forward, ratios.backward, ratios.overall()}) row += "," + format_double(v);
    for (std::size_t v : {codec.topk, codec.bottleneck, codec.superposition, codec.clusters, codec.tokens_kept,
                          iterations, iterations_per_epoch}) {
        row += "," + std::to_string(v);
    }
    for (double v : {epochs, budget_bits, bits_forward, bits_backward, label_bits, final_train_loss, test_accuracy,
                     val_accuracy}) {
        row += "," + format_double(v);
    }
    return row;
}

Dataset load_run_dataset(const RunConfig& config) {
    if (!config.dataset_path.empty()) return load_dataset(config.dataset_path);
    RunConfig c = config;
    c.resolve();
    return generate_synthetic(c.data);
}

RunSummary run_client(const RunConfig& input_config, const Dataset& data, Endpoint& endpoint) {
    RunConfig config = input_config;
    config.model.classes = data.classes;
    config.resolve();
    const Shape& img = data.images.shape();
    if (img[1] != config.model.channels || img[2] != config.model.height || img[3] != config.model.width) {
        throw ContractError("dataset images " + shape_string(img) + " do not match the model input");
    }
    const std::size_t B = config.batch_size;
    const std::size_t per_epoch = data.train.size() / B;
    if (per_epoch == 0) throw ContractError("training split is smaller than one batch");

    const CostModel cost{config.dims(), 32.0};
    const double budget = config.budget_epochs * static_cast<double>(per_epoch) * cost.base_iteration_bits();
    ClientSession session(config, endpoint, budget);
    session.handshake();

    namespace fs = std::filesystem;
    const fs::path dir = config.output_dir();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
    RunSummary summary;
    summary.name = config.name();
    summary.codec = config.codec;
    summary.ratios = compute_ratio(config.codec, config.dims());
    summary.iterations_per_epoch = per_epoch;
    summary.budget_bits = budget;
    summary.jsonl_path = (dir / (summary.name + ".jsonl")).string();
    summary.csv_path = (dir / (summary.name + ".csv")).string();
    std::ofstream jsonl(summary.jsonl_path);
    if (!jsonl) throw std::runtime_error("cannot write metrics: " + summary.jsonl_path);

    auto record = [&](json r) {
        const auto& l = session.ledger();
        r["iteration"] = l.iterations_completed();
        r["epoch_equivalents"] = static_cast<double>(l.iterations_completed()) / static_cast<double>(per_epoch);
        r["cumulative_bits"] = l.spent();
        r["cumulative_forward_bits"] = l.spent_forward();
        r["cumulative_backward_bits"] = l.spent_backward();
        r["cumulative_label_bits"] = l.spent_labels();
        jsonl << r.dump() << '\n';
    };
    // Deployment settings stay out of the metrics so transports produce identical files.
    json experiment = config.to_json();
    for (const char* key : {"transport", "addr", "out_dir"}) experiment.erase(key);
    json header = {{"event", "config"}, {"config", experiment}, {"budget_bits", budget},
                   {"xi_forward", summary.ratios.forward}, {"xi_backward", summary.ratios.backward},
                   {"xi", summary.ratios.overall()}};
    jsonl << header.dump() << '\n';

    const std::size_t log_every = config.log_every == 0 ? per_epoch : config.log_every;
    std::mt19937_64 shuffle_rng(mix_seed(config.seed, 5));
    double window_loss = 0.0, last_loss = 0.0;
    std::size_t window = 0;
    bool exhausted = false;
    while (!exhausted) {
        std::vector<std::size_t> order = data.train;
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t b = 0; b < per_epoch && !exhausted; ++b) {
            const std::span<const std::size_t> idx(order.data() + b * B, B);
            StepReport step;
            try {
                step = session.train_step(gather_images(data, idx), gather_labels(data, idx));
            } catch (const BudgetExhausted&) {
                exhausted = true;
                break;
            }
            window_loss += step.loss;
            ++window;
            if (step.iteration % log_every == 0) {
                last_loss = window_loss / static_cast<double>(window);
                json r = {{"event", "train"}, {"train_loss", last_loss}};
                if (config.eval_every != 0 && step.iteration % config.eval_every == 0) {
                    r["test_accuracy"] = session.evaluate(data, data.test).first;
                }
                record(r);
                window_loss = 0.0;
                window = 0;
            }
        }
    }
    if (window != 0) last_loss = window_loss / static_cast<double>(window);

    const auto [test_acc, test_loss] = session.evaluate(data, data.test);
    const auto val_acc = session.evaluate(data, data.val).first;
    const auto& ledger = session.ledger();
    summary.iterations = ledger.iterations_completed();
    summary.bits_forward = ledger.spent_forward();
    summary.bits_backward = ledger.spent_backward();
    summary.label_bits = ledger.spent_labels();
    summary.final_train_loss = last_loss;
    summary.test_accuracy = test_acc;
    summary.val_accuracy = val_acc;
    record({{"event", "final"},
            {"train_loss", last_loss},
            {"test_loss", test_loss},
            {"test_accuracy", test_acc},
            {"val_accuracy", val_acc}});
    session.shutdown();

    std::ofstream csv(summary.csv_path);
    csv << RunSummary::csv_header() << '\n' << summary.csv_row() << '\n';
    if (!jsonl || !csv) throw std::runtime_error("failed writing metrics under " + dir.string());
    return summary;
}

RunSummary run_experiment(RunConfig config) {
    const Dataset data = load_run_dataset(config);
    return run_experiment(std::move(config), data);
}

RunSummary run_experiment(RunConfig config, const Dataset& data) {
    config.model.classes = data.classes;
    config.resolve();

    std::exception_ptr server_error;
    auto serve_guarded = [&server_error](Endpoint& ep) {
        try {
            serve(ep);
        } catch (...) {
            server_error = std::current_exception();
        }
        ep.close();
    };

    if (config.transport == "inprocess") {
        auto [client_end, server_end] = inprocess_pair();
        std::thread server([&, ep = server_end.get()] { serve_guarded(*ep); });
        try {
            auto summary = run_client(config, data, *client_end);
            server.join();
            return summary;
        } catch (...) {
            client_end->close();
            server.join();
            throw;
        }
    }

    const Address address = Address::parse(config.addr);
    TcpListener listener(address);
    std::thread server([&] {
        try {
            auto ep = listener.accept();
            serve_guarded(*ep);
        } catch (...) {
            server_error = std::current_exception();
        }
    });
    try {
        auto client_end = tcp_connect(Address{address.host, listener.port()}, 2000);
        try {
            auto summary = run_client(config, data, *client_end);
            server.join();
            return summary;
        } catch (...) {
            client_end->close();
            throw;
        }
    } catch (...) {
        listener.close();
        server.join();
        throw;
    }
}

}  // namespace adcsl
