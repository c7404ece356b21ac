#include "adcsl/protocol.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "adcsl/errors.hpp"

namespace adcsl {

static_assert(std::endian::native == std::endian::little, "wire encoding assumes a little-endian host");

std::string to_string(CodecKind kind) {
    switch (kind) {
        case CodecKind::base: return "base";
        case CodecKind::topk: return "topk";
        case CodecKind::randtopk: return "randtopk";
        case CodecKind::bottlenet: return "bottlenet";
        case CodecKind::c3sl: return "c3sl";
        case CodecKind::adc: return "adc";
    }
    return "?";
}

CodecKind codec_kind_from_string(const std::string& s) {
    for (auto k : {CodecKind::base, CodecKind::topk, CodecKind::randtopk, CodecKind::bottlenet, CodecKind::c3sl,
                   CodecKind::adc}) {
        if (to_string(k) == s) return k;
    }
    throw ContractError("unknown codec: " + s);
}

namespace {

std::size_t round_clamped(double x, std::size_t lo, std::size_t hi) {
    const double r = std::nearbyint(x);
    if (!(r >= static_cast<double>(lo))) return lo;
    if (r >= static_cast<double>(hi)) return hi;
    return static_cast<std::size_t>(r);
}

}  // namespace

CodecConfig CodecConfig::for_ratio(CodecKind kind, double xi, const ModelDims& dims) {
    if (!(xi > 0.0 && xi <= 1.0)) throw ContractError("compression ratio must lie in (0, 1]");
    CodecConfig c;
    c.kind = kind;
    const double D = static_cast<double>(dims.features());
    switch (kind) {
        case CodecKind::base:
            break;
        case CodecKind::topk:
        case CodecKind::randtopk: {
            // overall = (k/D) (1 + log2(D) / (2 phi))
            const double overhead = 1.0 + std::log2(D) / (2.0 * 32.0);
            c.topk = round_clamped(xi * D / overhead, 1, dims.features());
            break;
        }
        case CodecKind::bottlenet:
            c.bottleneck = round_clamped(xi * static_cast<double>(dims.dim), 1, dims.dim - 1);
            break;
        case CodecKind::c3sl:
            c.superposition = round_clamped(1.0 / xi, 1, dims.batch);
            break;
        case CodecKind::adc: {
            const auto a = ADCConfig::balanced(xi, dims.batch, dims.tokens);
            c.clusters = a.clusters;
            c.tokens_kept = a.tokens_kept;
            break;
        }
    }
    return c;
}

void CodecConfig::validate(const ModelDims& dims) const {
    auto fail = [&](const std::string& what) { throw ContractError(to_string(kind) + ": " + what); };
    switch (kind) {
        case CodecKind::base:
            break;
        case CodecKind::topk:
        case CodecKind::randtopk:
            if (topk < 1 || topk > dims.features()) fail("needs 1 <= k <= D");
            if (noise_scale < 0.0) fail("noise scale must be non-negative");
            break;
        case CodecKind::bottlenet:
            if (bottleneck < 1 || bottleneck >= dims.dim) fail("needs 1 <= d' < d");
            break;
        case CodecKind::c3sl:
            if (superposition < 1 || superposition > dims.batch) fail("needs 1 <= R <= B");
            break;
        case CodecKind::adc:
            adc().validate(dims.batch, dims.tokens);
            break;
    }
}

ADCConfig CodecConfig::adc() const {
    ADCConfig a;
    a.clusters = clusters;
    a.tokens_kept = tokens_kept;
    a.strategy = strategy;
    a.kmeans_max_iters = kmeans_max_iters;
    a.seed = seed;
    return a;
}

Ratios compute_ratio(const CodecConfig& codec, const ModelDims& dims, double phi) {
    codec.validate(dims);
    const double D = static_cast<double>(dims.features());
    Ratios r;
    switch (codec.kind) {
        case CodecKind::base:
            break;
        case CodecKind::topk:
        case CodecKind::randtopk: {
            const double frac = static_cast<double>(codec.topk) / D;
            r.forward = frac * (1.0 + std::log2(D) / phi);
            r.backward = frac;
            break;
        }
        case CodecKind::bottlenet:
            r.forward = r.backward = static_cast<double>(codec.bottleneck) / static_cast<double>(dims.dim);
            break;
        case CodecKind::c3sl: {
            // 1/R when R divides B; a padded last slot is charged in full
            const std::size_t slots = (dims.batch + codec.superposition - 1) / codec.superposition;
            r.forward = r.backward = static_cast<double>(slots) / static_cast<double>(dims.batch);
            break;
        }
        case CodecKind::adc:
            r.forward = r.backward = codec.adc().ratio(dims.batch, dims.tokens);
            break;
    }
    return r;
}

double CostModel::index_bits(std::size_t count) const {
    return static_cast<double>(count) * std::log2(static_cast<double>(dims.features()));
}

double CostModel::hard_label_bits(std::size_t count) const {
    return static_cast<double>(count) * std::log2(static_cast<double>(dims.classes));
}

double CostModel::base_forward_bits() const { return feature_bits(dims.batch * dims.features()); }

double CostModel::base_forward_bits_with_labels() const {
    return base_forward_bits() + hard_label_bits(dims.batch);
}

double CostModel::base_backward_bits() const { return feature_bits(dims.batch * dims.features()); }

double CostModel::forward_bits(const CodecConfig& codec) const {
    const std::size_t B = dims.batch;
    switch (codec.kind) {
        case CodecKind::base: return base_forward_bits();
        case CodecKind::topk:
        case CodecKind::randtopk: return feature_bits(B * codec.topk) + index_bits(B * codec.topk);
        case CodecKind::bottlenet: return feature_bits(B * dims.tokens * codec.bottleneck);
        case CodecKind::c3sl: {
            const std::size_t slots = (B + codec.superposition - 1) / codec.superposition;
            return feature_bits(slots * dims.features());
        }
        case CodecKind::adc: return feature_bits(codec.clusters * codec.tokens_kept * dims.dim);
    }
    throw ContractError("unknown codec");
}

double CostModel::backward_bits(const CodecConfig& codec) const {
    const std::size_t B = dims.batch;
    switch (codec.kind) {
        case CodecKind::base: return base_backward_bits();
        case CodecKind::topk:
        case CodecKind::randtopk: return feature_bits(B * codec.topk);
        case CodecKind::bottlenet: return feature_bits(B * dims.tokens * codec.bottleneck);
        case CodecKind::c3sl: {
            const std::size_t slots = (B + codec.superposition - 1) / codec.superposition;
            return feature_bits(slots * dims.features());
        }
        case CodecKind::adc: return feature_bits(codec.clusters * codec.tokens_kept * dims.dim);
    }
    throw ContractError("unknown codec");
}

double CostModel::label_bits(const CodecConfig& codec) const {
    return codec.kind == CodecKind::adc ? soft_label_bits(codec.clusters) : hard_label_bits(dims.batch);
}

// ---- budget ------------------------------------------------------------------

namespace {
// Budgets are products of exact integers and a ratio; this absorbs the last-ulp drift
// of repeated additions without admitting a genuinely over-budget iteration.
constexpr double kBudgetSlack = 1e-12;
}  // namespace

BudgetLedger::BudgetLedger(double budget_bits) : budget_(budget_bits) {
    if (!(budget_bits >= 0.0) || !std::isfinite(budget_bits)) throw ContractError("budget must be finite and >= 0");
}

bool BudgetLedger::can_afford(double iteration_bits) const {
    return spent() + iteration_bits <= budget_ * (1.0 + kBudgetSlack);
}

void BudgetLedger::admit(double iteration_bits) const {
    if (!can_afford(iteration_bits)) {
        throw BudgetExhausted("budget exhausted after " + std::to_string(iterations_) + " iterations");
    }
}

void BudgetLedger::charge_forward(double bits, double label_bits) {
    spent_forward_ += bits;
    spent_labels_ += label_bits;
}

void BudgetLedger::charge_backward(double bits) { spent_backward_ += bits; }

// ---- framing -----------------------------------------------------------------

std::string to_string(MessageKind kind) {
    switch (kind) {
        case MessageKind::hello: return "hello";
        case MessageKind::activation: return "activation";
        case MessageKind::gradient: return "gradient";
        case MessageKind::eval_request: return "eval_request";
        case MessageKind::eval_result: return "eval_result";
        case MessageKind::shutdown: return "shutdown";
        case MessageKind::ack: return "ack";
        case MessageKind::error: return "error";
    }
    return "?";
}

std::string to_string(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

DType dtype_from_string(const std::string& s) {
    if (s == "f32") return DType::f32;
    if (s == "f64") return DType::f64;
    throw ContractError("unknown wire dtype: " + s);
}

double wire_round(double value, DType dtype) {
    return dtype == DType::f32 ? static_cast<double>(static_cast<float>(value)) : value;
}

namespace {

class Writer {
public:
    template <typename T>
    void put(T v) {
        const auto at = bytes.size();
        bytes.resize(at + sizeof(T));
        std::memcpy(bytes.data() + at, &v, sizeof(T));
    }

    void put_reals(const std::vector<double>& v, DType dtype) {
        put(static_cast<std::uint32_t>(v.size()));
        for (double x : v) {
            if (dtype == DType::f32) {
                put(static_cast<float>(x));
            } else {
                put(x);
            }
        }
    }

    template <typename T>
    void put_array(const std::vector<T>& v) {
        put(static_cast<std::uint32_t>(v.size()));
        const auto at = bytes.size();
        bytes.resize(at + v.size() * sizeof(T));
        if (!v.empty()) std::memcpy(bytes.data() + at, v.data(), v.size() * sizeof(T));
    }

    std::vector<std::uint8_t> bytes;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::vector<double> get_reals(DType dtype) {
        const auto count = get<std::uint32_t>();
        need(static_cast<std::size_t>(count) * (dtype == DType::f32 ? 4 : 8));
        std::vector<double> v(count);
        for (auto& x : v) x = dtype == DType::f32 ? static_cast<double>(get<float>()) : get<double>();
        return v;
    }

    template <typename T>
    std::vector<T> get_array() {
        const auto count = get<std::uint32_t>();
        need(static_cast<std::size_t>(count) * sizeof(T));
        std::vector<T> v(count);
        if (count != 0) std::memcpy(v.data(), bytes_.data() + pos_, count * sizeof(T));
        pos_ += count * sizeof(T);
        return v;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (remaining() < n) throw ProtocolError("truncated frame");
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t size) {
    return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), data, static_cast<uInt>(size)));
}

}  // namespace

std::vector<std::uint8_t> serialize(const Packet& p) {
    if (p.dims.size() > 255) throw ProtocolError("too many dims for one frame");
    Writer w;
    w.put(std::uint32_t{0});  // length, patched below
    w.put(kProtocolVersion);
    w.put(static_cast<std::uint8_t>(p.kind));
    w.put(p.iteration);
    w.put(static_cast<std::uint8_t>(p.dims.size()));
    for (auto d : p.dims) w.put(d);
    w.put(static_cast<std::uint8_t>(p.codec));
    w.put(static_cast<std::uint8_t>(p.dtype));
    w.put(p.charged_bits);
    w.put(p.label_bits);
    w.put(p.scalar);
    w.put_reals(p.values, p.dtype);
    w.put_array(p.indices);
    w.put_array(p.hard_labels);
    w.put_reals(p.soft_labels, p.dtype);
    w.put_array(std::vector<char>(p.text.begin(), p.text.end()));
    w.put(crc_of(w.bytes.data() + 4, w.bytes.size() - 4));

    const std::size_t length = w.bytes.size() - 4;
    if (length > kMaxFrameBytes) throw ProtocolError("frame exceeds the size limit");
    const auto len32 = static_cast<std::uint32_t>(length);
    std::memcpy(w.bytes.data(), &len32, 4);
    return std::move(w.bytes);
}

Packet deserialize(std::span<const std::uint8_t> frame) {
    if (frame.size() < 4) throw ProtocolError("truncated frame: missing length prefix");
    std::uint32_t length = 0;
    std::memcpy(&length, frame.data(), 4);
    if (frame.size() - 4 < length) {
        throw ProtocolError("truncated frame: have " + std::to_string(frame.size() - 4) + " of " +
                            std::to_string(length) + " bytes");
    }
    if (frame.size() - 4 > length) throw ProtocolError("trailing bytes after frame");
    if (length < 4) throw ProtocolError("truncated frame: missing CRC");

    const std::uint8_t* body = frame.data() + 4;
    std::uint32_t crc = 0;
    std::memcpy(&crc, body + length - 4, 4);

    Reader r(std::span<const std::uint8_t>(body, length - 4));
    const auto version = r.get<std::uint8_t>();
    if (version != kProtocolVersion) {
        throw ProtocolError("protocol version mismatch: got " + std::to_string(version) + ", expected " +
                            std::to_string(kProtocolVersion));
    }
    if (crc_of(body, length - 4) != crc) throw ProtocolError("CRC mismatch");

    Packet p;
    const auto kind = r.get<std::uint8_t>();
    if (kind < 1 || kind > 8) throw ProtocolError("unknown message kind " + std::to_string(kind));
    p.kind = static_cast<MessageKind>(kind);
    p.iteration = r.get<std::uint32_t>();
    p.dims.resize(r.get<std::uint8_t>());
    for (auto& d : p.dims) d = r.get<std::uint32_t>();
    const auto codec = r.get<std::uint8_t>();
    if (codec > 5) throw ProtocolError("unknown codec tag " + std::to_string(codec));
    p.codec = static_cast<CodecKind>(codec);
    const auto dtype = r.get<std::uint8_t>();
    if (dtype != 1 && dtype != 2) throw ProtocolError("unknown dtype tag " + std::to_string(dtype));
    p.dtype = static_cast<DType>(dtype);
    p.charged_bits = r.get<double>();
    p.label_bits = r.get<double>();
    p.scalar = r.get<double>();
    p.values = r.get_reals(p.dtype);
    p.indices = r.get_array<std::uint32_t>();
    p.hard_labels = r.get_array<std::uint16_t>();
    p.soft_labels = r.get_reals(p.dtype);
    const auto text = r.get_array<char>();
    p.text.assign(text.begin(), text.end());
    if (r.remaining() != 0) throw ProtocolError("unexpected bytes before CRC");
    return p;
}

}  // namespace adcsl
