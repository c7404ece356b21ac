#include "adcsl/baselines.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>

#include "adcsl/errors.hpp"
#include "adcsl/ops.hpp"

namespace adcsl {

namespace {

std::size_t per_sample_width(const Tensor& z) {
    if (z.rank() < 2) throw DimensionError("expected a batched tensor, got " + shape_string(z.shape()));
    return z.size() / z.dim(0);
}

// Top-k of one sample by `score`, ties to the lower index, returned ascending.
void select_top(const double* score, std::size_t width, std::size_t k, std::vector<std::uint32_t>& order,
                std::uint32_t* out) {
    order.resize(width);
    std::iota(order.begin(), order.end(), 0u);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::uint32_t a, std::uint32_t b) { return score[a] > score[b] || (score[a] == score[b] && a < b); });
    std::copy_n(order.begin(), k, out);
    std::sort(out, out + k);
}

SparseSelection select_by_scores(const Tensor& z, const std::vector<double>& scores, std::size_t k) {
    const std::size_t batch = z.dim(0), width = per_sample_width(z);
    if (k < 1 || k > width) throw ContractError("Top-K needs 1 <= k <= D, got k=" + std::to_string(k));
    SparseSelection s{batch, width, k, std::vector<double>(batch * k), std::vector<std::uint32_t>(batch * k)};
    std::vector<std::uint32_t> order;
    for (std::size_t b = 0; b < batch; ++b) {
        std::uint32_t* idx = s.indices.data() + b * k;
        select_top(scores.data() + b * width, width, k, order, idx);
        for (std::size_t j = 0; j < k; ++j) s.values[b * k + j] = z[b * width + idx[j]];
    }
    return s;
}

void check_matches(const SparseSelection& s, const Shape& shape) {
    if (shape.empty() || shape[0] != s.batch || shape_size(shape) != s.batch * s.width) {
        throw ContractError("shape " + shape_string(shape) + " does not match the Top-K selection");
    }
}

}  // namespace

SparseSelection topk_encode(const Tensor& z, std::size_t k) {
    std::vector<double> scores(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) scores[i] = std::abs(z[i]);
    return select_by_scores(z, scores, k);
}

SparseSelection randtopk_encode(const Tensor& z, std::size_t k, double noise_scale, std::mt19937_64& rng) {
    const std::size_t batch = z.dim(0), width = per_sample_width(z);
    std::vector<double> scores(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) scores[i] = std::abs(z[i]);
    if (noise_scale > 0.0) {
        for (std::size_t b = 0; b < batch; ++b) {
            double* row = scores.data() + b * width;
            const double mean = std::accumulate(row, row + width, 0.0) / static_cast<double>(width);
            double var = 0.0;
            for (std::size_t i = 0; i < width; ++i) var += (row[i] - mean) * (row[i] - mean);
            const double spread = noise_scale * std::sqrt(var / static_cast<double>(width));
            if (spread <= 0.0) continue;
            std::uniform_real_distribution<double> noise(0.0, spread);
            for (std::size_t i = 0; i < width; ++i) row[i] += noise(rng);
        }
    }
    return select_by_scores(z, scores, k);
}

Tensor sparse_decode(const SparseSelection& s, const Shape& shape) {
    return topk_backward_scatter(s.values, s, shape);
}

std::vector<double> topk_backward_route(const Tensor& grad, const SparseSelection& forward) {
    check_matches(forward, grad.shape());
    std::vector<double> out(forward.batch * forward.k);
    for (std::size_t b = 0; b < forward.batch; ++b) {
        for (std::size_t j = 0; j < forward.k; ++j) {
            out[b * forward.k + j] = grad[b * forward.width + forward.indices[b * forward.k + j]];
        }
    }
    return out;
}

Tensor topk_backward_scatter(const std::vector<double>& values, const SparseSelection& forward, const Shape& shape) {
    check_matches(forward, shape);
    if (values.size() != forward.batch * forward.k || forward.indices.size() != values.size()) {
        throw ContractError("routed gradient has " + std::to_string(values.size()) + " values, selection expects " +
                            std::to_string(forward.batch * forward.k));
    }
    Tensor out(shape);
    for (std::size_t b = 0; b < forward.batch; ++b) {
        for (std::size_t j = 0; j < forward.k; ++j) {
            const std::uint32_t i = forward.indices[b * forward.k + j];
            if (i >= forward.width) throw ContractError("Top-K index out of range");
            out[b * forward.width + i] = values[b * forward.k + j];
        }
    }
    return out;
}

// ---- BottleNet++ -------------------------------------------------------------

BottleNet BottleNet::initialize(std::size_t dim, std::size_t bottleneck, std::mt19937_64& rng) {
    if (bottleneck < 1 || bottleneck > dim) {
        throw ContractError("bottleneck width must lie in [1, d], got " + std::to_string(bottleneck));
    }
    Tensor enc({dim, bottleneck});
    if (bottleneck == dim) {
        for (std::size_t i = 0; i < dim; ++i) enc[i * dim + i] = 1.0;
    } else {
        // Gram-Schmidt on Gaussian columns.
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t c = 0; c < bottleneck; ++c) {
            for (std::size_t r = 0; r < dim; ++r) enc[r * bottleneck + c] = normal(rng);
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t p = 0; p < c; ++p) {
                    double proj = 0.0;
                    for (std::size_t r = 0; r < dim; ++r) proj += enc[r * bottleneck + c] * enc[r * bottleneck + p];
                    for (std::size_t r = 0; r < dim; ++r) enc[r * bottleneck + c] -= proj * enc[r * bottleneck + p];
                }
            }
            double norm = 0.0;
            for (std::size_t r = 0; r < dim; ++r) norm += enc[r * bottleneck + c] * enc[r * bottleneck + c];
            norm = std::sqrt(norm);
            for (std::size_t r = 0; r < dim; ++r) enc[r * bottleneck + c] /= norm;
        }
    }
    BottleNet net;
    net.dec_weight = Param{"bottlenet.dec_weight", kernel::transpose(enc), Var()};
    net.enc_weight = Param{"bottlenet.enc_weight", std::move(enc), Var()};
    net.enc_bias = Param{"bottlenet.enc_bias", Tensor({bottleneck}), Var()};
    net.dec_bias = Param{"bottlenet.dec_bias", Tensor({dim}), Var()};
    return net;
}

ParamRefs BottleNet::encoder_parameters() { return {&enc_weight, &enc_bias}; }
ParamRefs BottleNet::decoder_parameters() { return {&dec_weight, &dec_bias}; }

Var bottlenet_encode(BottleNet& net, const Var& z) {
    return add_bias(matmul(z, net.enc_weight.var), net.enc_bias.var);
}

Var bottlenet_decode(BottleNet& net, const Var& code) {
    return add_bias(matmul(code, net.dec_weight.var), net.dec_bias.var);
}

// ---- C3-SL -------------------------------------------------------------------

namespace {
// Plan creation in FFTW is not thread safe; execution on distinct plans is.
std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}
constexpr double kSpectrumFloor = 1e-6;
}  // namespace

struct C3SLCodec::Impl {
    std::size_t R = 0, D = 0, bins = 0;
    Tensor keys;
    std::vector<std::vector<std::complex<double>>> spectra;  // per key, D/2+1 bins
    double* real = nullptr;
    fftw_complex* freq = nullptr;
    fftw_plan forward = nullptr, inverse = nullptr;

    Impl(const Tensor& k) : R(k.dim(0)), D(k.dim(1)), bins(k.dim(1) / 2 + 1), keys(k) {
        real = fftw_alloc_real(D);
        freq = fftw_alloc_complex(bins);
        {
            std::lock_guard<std::mutex> lock(fftw_planner_mutex());
            forward = fftw_plan_dft_r2c_1d(static_cast<int>(D), real, freq, FFTW_ESTIMATE);
            inverse = fftw_plan_dft_c2r_1d(static_cast<int>(D), freq, real, FFTW_ESTIMATE);
        }
        for (std::size_t r = 0; r < R; ++r) spectra.push_back(fft(keys.data().data() + r * D));
    }

    ~Impl() {
        std::lock_guard<std::mutex> lock(fftw_planner_mutex());
        fftw_destroy_plan(forward);
        fftw_destroy_plan(inverse);
        fftw_free(real);
        fftw_free(freq);
    }

    std::vector<std::complex<double>> fft(const double* x) {
        std::copy_n(x, D, real);
        fftw_execute(forward);
        std::vector<std::complex<double>> out(bins);
        for (std::size_t i = 0; i < bins; ++i) out[i] = {freq[i][0], freq[i][1]};
        return out;
    }

    void ifft(const std::vector<std::complex<double>>& spectrum, double* out) {
        for (std::size_t i = 0; i < bins; ++i) {
            freq[i][0] = spectrum[i].real();
            freq[i][1] = spectrum[i].imag();
        }
        fftw_execute(inverse);
        const double inv = 1.0 / static_cast<double>(D);
        for (std::size_t i = 0; i < D; ++i) out[i] = real[i] * inv;
    }
};

namespace {

Tensor unit_spectrum_keys(std::size_t R, std::size_t D, std::uint64_t seed) {
    if (R < 1 || D < 1) throw ContractError("C3-SL needs R >= 1 and D >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor keys({R, D});
    for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = normal(rng);
    return keys;
}

}  // namespace

C3SLCodec::C3SLCodec(const Tensor& keys) {
    if (keys.rank() != 2) throw DimensionError("C3-SL keys must be [R x D]");
    impl_ = std::make_unique<Impl>(keys);
}

C3SLCodec::C3SLCodec(std::size_t superposition, std::size_t width, std::uint64_t seed)
    : C3SLCodec(unit_spectrum_keys(superposition, width, seed)) {
    for (std::size_t r = 0; r < impl_->R; ++r) {
        auto& s = impl_->spectra[r];
        for (auto& bin : s) {
            const double mag = std::abs(bin);
            bin = mag > 0.0 ? bin / mag : std::complex<double>(1.0, 0.0);
        }
        // Real-signal spectra keep real DC and Nyquist bins; unit modulus makes them +-1.
        impl_->ifft(s, impl_->keys.data().data() + r * impl_->D);
    }
}

C3SLCodec::~C3SLCodec() = default;
C3SLCodec::C3SLCodec(C3SLCodec&&) noexcept = default;
C3SLCodec& C3SLCodec::operator=(C3SLCodec&&) noexcept = default;

std::size_t C3SLCodec::superposition() const { return impl_->R; }
std::size_t C3SLCodec::width() const { return impl_->D; }
std::size_t C3SLCodec::slots(std::size_t batch) const { return (batch + impl_->R - 1) / impl_->R; }
const Tensor& C3SLCodec::keys() const { return impl_->keys; }

Tensor C3SLCodec::encode_padded(const Tensor& z, bool repeat_last) const {
    const std::size_t D = impl_->D, R = impl_->R;
    if (z.rank() != 2 || z.dim(1) != D) {
        throw DimensionError("C3-SL expects [B x " + std::to_string(D) + "], got " + shape_string(z.shape()));
    }
    const std::size_t batch = z.dim(0), count = slots(batch);
    Tensor out({count, D});
    for (std::size_t s = 0; s < count; ++s) {
        std::vector<std::complex<double>> acc(impl_->bins);
        for (std::size_t r = 0; r < R; ++r) {
            std::size_t sample = s * R + r;
            if (sample >= batch) {
                if (!repeat_last) continue;
                sample = batch - 1;
            }
            const auto spec = impl_->fft(z.data().data() + sample * D);
            for (std::size_t i = 0; i < impl_->bins; ++i) acc[i] += impl_->spectra[r][i] * spec[i];
        }
        impl_->ifft(acc, out.data().data() + s * D);
    }
    return out;
}

Tensor C3SLCodec::encode(const Tensor& z) const { return encode_padded(z, true); }
Tensor C3SLCodec::encode_gradient(const Tensor& grad) const { return encode_padded(grad, false); }

Tensor C3SLCodec::decode(const Tensor& slot_tensor, std::size_t batch) const {
    const std::size_t D = impl_->D, R = impl_->R;
    if (slot_tensor.rank() != 2 || slot_tensor.dim(1) != D || slot_tensor.dim(0) != slots(batch)) {
        throw DimensionError("C3-SL slots " + shape_string(slot_tensor.shape()) + " do not match batch " +
                             std::to_string(batch));
    }
    Tensor out({batch, D});
    for (std::size_t s = 0; s < slot_tensor.dim(0); ++s) {
        const auto spec = impl_->fft(slot_tensor.data().data() + s * D);
        for (std::size_t r = 0; r < R && s * R + r < batch; ++r) {
            std::vector<std::complex<double>> rec(impl_->bins);
            for (std::size_t i = 0; i < impl_->bins; ++i) {
                const auto key = impl_->spectra[r][i];
                rec[i] = std::conj(key) / std::max(std::norm(key), kSpectrumFloor) * spec[i];
            }
            impl_->ifft(rec, out.data().data() + (s * R + r) * D);
        }
    }
    return out;
}

}  // namespace adcsl
