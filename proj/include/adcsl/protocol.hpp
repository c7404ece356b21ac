#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adcsl/adc.hpp"

namespace adcsl {

enum class CodecKind : std::uint8_t { base = 0, topk = 1, randtopk = 2, bottlenet = 3, c3sl = 4, adc = 5 };

std::string to_string(CodecKind kind);
CodecKind codec_kind_from_string(const std::string& s);

/// Shapes the cost model needs: batch, tokens per sample, embedding width, label alphabet.
struct ModelDims {
    std::size_t batch = 0;
    std::size_t tokens = 0;
    std::size_t dim = 0;
    std::size_t classes = 0;

    std::size_t features() const { return tokens * dim; }  // D = n * d
};

struct CodecConfig {
    CodecKind kind = CodecKind::base;
    std::size_t topk = 0;           // kept scalars per sample (Top-K, RandTopK)
    double noise_scale = 0.1;       // RandTopK
    std::size_t bottleneck = 0;     // d' (BottleNet++)
    std::size_t superposition = 0;  // R (C3-SL)
    std::size_t clusters = 0;       // T (ADC)
    std::size_t tokens_kept = 0;    // k (ADC)
    MergeVector strategy = MergeVector::cls_score;
    std::size_t kmeans_max_iters = 20;
    std::uint64_t seed = 0;

    /// Parameters whose closed-form overall ratio is closest to `xi` under the default
    /// rounding of each codec (ADC uses the balanced sqrt rule).
    static CodecConfig for_ratio(CodecKind kind, double xi, const ModelDims& dims);

    void validate(const ModelDims& dims) const;
    ADCConfig adc() const;
};

struct Ratios {
    double forward = 1.0;
    double backward = 1.0;
    double overall() const { return (forward + backward) / 2.0; }
};

/// Closed-form compression ratios of each codec (feature terms only).
Ratios compute_ratio(const CodecConfig& codec, const ModelDims& dims, double bits_per_feature = 32.0);

/// Bit costs. Feature bits and label bits are kept apart: ratios and the budget use
/// feature bits, labels are reported alongside.
struct CostModel {
    ModelDims dims;
    double phi = 32.0;

    double feature_bits(std::size_t count) const { return static_cast<double>(count) * phi; }
    /// Top-K indices at log2(D) bits each.
    double index_bits(std::size_t count) const;
    /// One hard label at log2(L) bits each.
    double hard_label_bits(std::size_t count) const;
    /// Soft label vectors at L * phi bits each.
    double soft_label_bits(std::size_t rows) const { return static_cast<double>(rows * dims.classes) * phi; }

    double base_forward_bits() const;              // B * D * phi
    double base_forward_bits_with_labels() const;  // B * (D * phi + log2 L)
    double base_backward_bits() const;             // B * D * phi
    double base_iteration_bits() const { return base_forward_bits() + base_backward_bits(); }

    /// Per-iteration charges of a codec, derived from its payload sizes.
    double forward_bits(const CodecConfig& codec) const;
    double backward_bits(const CodecConfig& codec) const;
    double label_bits(const CodecConfig& codec) const;
    double iteration_bits(const CodecConfig& codec) const { return forward_bits(codec) + backward_bits(codec); }
};

/// Running totals against a global budget. Admission is checked before an iteration.
class BudgetLedger {
public:
    explicit BudgetLedger(double budget_bits);

    double budget() const { return budget_; }
    double spent_forward() const { return spent_forward_; }
    double spent_backward() const { return spent_backward_; }
    double spent() const { return spent_forward_ + spent_backward_; }
    double spent_labels() const { return spent_labels_; }
    std::size_t iterations_completed() const { return iterations_; }

    bool can_afford(double iteration_bits) const;
    /// Throws BudgetExhausted when the next iteration would overrun the budget.
    void admit(double iteration_bits) const;
    void charge_forward(double bits, double label_bits = 0.0);
    void charge_backward(double bits);
    void complete_iteration() { ++iterations_; }

private:
    double budget_;
    double spent_forward_ = 0.0;
    double spent_backward_ = 0.0;
    double spent_labels_ = 0.0;
    std::size_t iterations_ = 0;
};

// ---- packets and framing -----------------------------------------------------

enum class MessageKind : std::uint8_t {
    hello = 1,
    activation = 2,
    gradient = 3,
    eval_request = 4,
    eval_result = 5,
    shutdown = 6,
    ack = 7,
    error = 8,
};

std::string to_string(MessageKind kind);

/// Numeric width on the wire. Values are widened to f64 on receipt.
enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

std::string to_string(DType dtype);
DType dtype_from_string(const std::string& s);

struct Packet {
    MessageKind kind = MessageKind::ack;
    std::uint32_t iteration = 0;
    std::vector<std::uint32_t> dims;
    CodecKind codec = CodecKind::base;
    DType dtype = DType::f32;
    double charged_bits = 0.0;
    double label_bits = 0.0;
    double scalar = 0.0;
    std::vector<double> values;
    std::vector<std::uint32_t> indices;
    std::vector<std::uint16_t> hard_labels;
    std::vector<double> soft_labels;
    std::string text;

    bool operator==(const Packet&) const = default;
};

inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::uint32_t kMaxFrameBytes = 1u << 30;

/// Frame: u32 LE length of what follows, u8 version, u8 kind, u32 iteration,
/// u8 ndims + u32 per dim, payload, u32 CRC32 of everything between length and CRC.
std::vector<std::uint8_t> serialize(const Packet& packet);

/// Parses one complete frame. Throws ProtocolError on truncation, trailing bytes,
/// version mismatch or CRC failure.
Packet deserialize(std::span<const std::uint8_t> frame);

/// Rounds values the way the wire would (f32 round trip when dtype is f32).
double wire_round(double value, DType dtype);

}  // namespace adcsl
