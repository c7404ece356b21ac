#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "adcsl/tape.hpp"
#include "adcsl/tensor.hpp"
#include "adcsl/vit.hpp"

namespace adcsl {

// ---- Top-K / RandTopK -------------------------------------------------------

/// Per-sample sparse selection over the flattened activation of width D.
struct SparseSelection {
    std::size_t batch = 0;
    std::size_t width = 0;  // D
    std::size_t k = 0;
    std::vector<double> values;          // [B x k], true activations
    std::vector<std::uint32_t> indices;  // [B x k], ascending within each sample
};

/// Keeps the k largest |z| per sample; ties prefer the lower index.
SparseSelection topk_encode(const Tensor& z, std::size_t k);

/// Selection scores |z| + U(0, noise_scale * std(|z|)), std taken per sample.
SparseSelection randtopk_encode(const Tensor& z, std::size_t k, double noise_scale, std::mt19937_64& rng);

/// Scatter into zeros; `shape` must hold B * D entries with leading dimension B.
Tensor sparse_decode(const SparseSelection& s, const Shape& shape);

/// Server side: the dense gradient restricted to the forward indices.
std::vector<double> topk_backward_route(const Tensor& grad, const SparseSelection& forward);

/// Client side: scatters routed gradient values into a dense tensor of `shape`.
Tensor topk_backward_scatter(const std::vector<double>& values, const SparseSelection& forward, const Shape& shape);

// ---- BottleNet++ -------------------------------------------------------------

/// Per-token affine maps d -> d' (client) and d' -> d (server).
struct BottleNet {
    Param enc_weight, enc_bias;  // [d x d'], [d']
    Param dec_weight, dec_bias;  // [d' x d], [d]

    /// Identity when d' == d; otherwise an orthonormal random projection with the
    /// decoder initialised to its transpose.
    static BottleNet initialize(std::size_t dim, std::size_t bottleneck, std::mt19937_64& rng);

    std::size_t dim() const { return enc_weight.value.dim(0); }
    std::size_t bottleneck() const { return enc_weight.value.dim(1); }

    ParamRefs encoder_parameters();
    ParamRefs decoder_parameters();
};

/// The parameters must already be bound on the input's tape.
Var bottlenet_encode(BottleNet& net, const Var& z);
Var bottlenet_decode(BottleNet& net, const Var& code);

// ---- C3-SL -------------------------------------------------------------------

/// Keyed circular-convolution superposition of R samples per slot.
///
/// Slot s carries samples s*R .. s*R+R-1. When R does not divide B the forward pass
/// pads with copies of the last sample and the gradient pass pads with zeros.
class C3SLCodec {
public:
    /// Seeded Gaussian keys, spectrum-normalised to unit modulus.
    C3SLCodec(std::size_t superposition, std::size_t width, std::uint64_t seed);
    /// Keys used as given, shape [R x D].
    explicit C3SLCodec(const Tensor& keys);
    ~C3SLCodec();
    C3SLCodec(C3SLCodec&&) noexcept;
    C3SLCodec& operator=(C3SLCodec&&) noexcept;

    std::size_t superposition() const;
    std::size_t width() const;
    std::size_t slots(std::size_t batch) const;
    /// Time-domain keys [R x D].
    const Tensor& keys() const;

    /// [B x D] -> [ceil(B/R) x D].
    Tensor encode(const Tensor& z) const;
    Tensor encode_gradient(const Tensor& grad) const;
    /// [slots x D] -> [B x D].
    Tensor decode(const Tensor& slots, std::size_t batch) const;

private:
    struct Impl;
    Tensor encode_padded(const Tensor& z, bool repeat_last) const;
    std::unique_ptr<Impl> impl_;
};

}  // namespace adcsl
