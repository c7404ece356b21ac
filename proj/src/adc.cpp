#include "adcsl/adc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adcsl/errors.hpp"
#include "adcsl/kmeans.hpp"

namespace adcsl {

std::string to_string(MergeVector v) {
    switch (v) {
        case MergeVector::cls_score: return "cls_score";
        case MergeVector::cls_token: return "cls_token";
        case MergeVector::avg_token: return "avg_token";
    }
    return "?";
}

MergeVector merge_vector_from_string(const std::string& s) {
    if (s == "cls_score") return MergeVector::cls_score;
    if (s == "cls_token") return MergeVector::cls_token;
    if (s == "avg_token") return MergeVector::avg_token;
    throw ContractError("unknown merge vector strategy: " + s);
}

double ADCConfig::ratio(std::size_t batch, std::size_t tokens) const {
    return (static_cast<double>(clusters) / static_cast<double>(batch)) *
           (static_cast<double>(tokens_kept) / static_cast<double>(tokens));
}

void ADCConfig::validate(std::size_t batch, std::size_t tokens) const {
    if (clusters < 1 || clusters > batch) {
        throw ContractError("ADC needs 1 <= T <= B, got T=" + std::to_string(clusters) + " B=" + std::to_string(batch));
    }
    if (tokens_kept < 1 || tokens_kept > tokens) {
        throw ContractError("ADC needs 1 <= k <= n, got k=" + std::to_string(tokens_kept) + " n=" + std::to_string(tokens));
    }
}

ADCConfig ADCConfig::balanced(double xi, std::size_t batch, std::size_t tokens) {
    if (!(xi > 0.0 && xi <= 1.0)) throw ContractError("compression ratio must lie in (0, 1]");
    const double root = std::sqrt(xi);
    ADCConfig c;
    c.clusters = std::clamp<std::size_t>(static_cast<std::size_t>(std::nearbyint(static_cast<double>(batch) * root)), 1, batch);
    c.tokens_kept = std::clamp<std::size_t>(static_cast<std::size_t>(std::nearbyint(static_cast<double>(tokens) * root)), 1, tokens);
    return c;
}

Tensor merge_vector(const Tensor& activations, const Tensor& cls_scores, MergeVector strategy) {
    if (activations.rank() != 3) throw DimensionError("merge_vector expects [B x n x d] activations");
    const std::size_t batch = activations.dim(0), n = activations.dim(1), d = activations.dim(2);
    switch (strategy) {
        case MergeVector::cls_score:
            if (cls_scores.shape() != Shape{batch, n}) throw DimensionError("cls_scores must be [B x n]");
            return cls_scores;
        case MergeVector::cls_token: {
            Tensor out({batch, d});
            for (std::size_t b = 0; b < batch; ++b) {
                std::copy_n(activations.data().data() + b * n * d, d, out.data().data() + b * d);
            }
            return out;
        }
        case MergeVector::avg_token: {
            Tensor out({batch, d});
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t t = 0; t < n; ++t) {
                    const double* row = activations.data().data() + (b * n + t) * d;
                    for (std::size_t c = 0; c < d; ++c) out[b * d + c] += row[c];
                }
                for (std::size_t c = 0; c < d; ++c) out[b * d + c] /= static_cast<double>(n);
            }
            return out;
        }
    }
    throw ContractError("invalid merge vector strategy");
}

MergedBatch merge_batch(const Tensor& activations, const std::vector<std::uint16_t>& labels, std::size_t classes,
                        const MergePlan& plan) {
    if (activations.rank() != 3) throw DimensionError("merge_batch expects [B x n x d] activations");
    const std::size_t batch = activations.dim(0);
    const std::size_t block = activations.size() / batch;
    const std::size_t clusters = plan.clusters();
    if (plan.assignments.size() != batch || labels.size() != batch) {
        throw ContractError("merge plan / labels do not match batch of " + std::to_string(batch));
    }
    std::vector<std::size_t> sizes(clusters, 0);
    for (auto a : plan.assignments) {
        if (a >= clusters) throw ContractError("merge plan assigns a sample to an unknown cluster");
        ++sizes[a];
    }
    for (std::size_t c = 0; c < clusters; ++c) {
        if (sizes[c] == 0) throw ContractError("merge plan has empty cluster " + std::to_string(c));
    }

    Shape shape = activations.shape();
    shape[0] = clusters;
    MergedBatch out{Tensor(shape), Tensor({clusters, classes})};
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t c = plan.assignments[b];
        const double* src = activations.data().data() + b * block;
        double* dst = out.features.data().data() + c * block;
        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        if (labels[b] >= classes) throw ContractError("label out of range");
        out.soft_labels[c * classes + labels[b]] += 1.0;
    }
    for (std::size_t c = 0; c < clusters; ++c) {
        const double size = static_cast<double>(sizes[c]);
        for (std::size_t i = 0; i < block; ++i) out.features[c * block + i] /= size;
        for (std::size_t j = 0; j < classes; ++j) out.soft_labels[c * classes + j] /= size;
    }
    return out;
}

std::vector<std::size_t> top_token_indices(std::span<const double> scores, std::size_t k) {
    const std::size_t n = scores.size();
    if (k < 1 || k > n) throw ContractError("token selection needs 1 <= k <= n");
    std::vector<std::size_t> rest(n - 1);
    std::iota(rest.begin(), rest.end(), std::size_t{1});
    std::stable_sort(rest.begin(), rest.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<std::size_t> keep{0};
    keep.insert(keep.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(k - 1));
    std::sort(keep.begin(), keep.end());
    return keep;
}

TokenSelection select_tokens(const Tensor& merged, const Tensor& centroids, std::size_t k) {
    if (merged.rank() != 3) throw DimensionError("select_tokens expects [T x n x d]");
    const std::size_t clusters = merged.dim(0), n = merged.dim(1), d = merged.dim(2);
    if (centroids.shape() != Shape{clusters, n}) throw DimensionError("centroids must be [T x n]");
    TokenSelection out{Tensor({clusters, k, d}), {}};
    for (std::size_t c = 0; c < clusters; ++c) {
        auto idx = top_token_indices(std::span<const double>(centroids.data().data() + c * n, n), k);
        for (std::size_t j = 0; j < k; ++j) {
            std::copy_n(merged.data().data() + (c * n + idx[j]) * d, d, out.features.data().data() + (c * k + j) * d);
        }
        out.indices.push_back(std::move(idx));
    }
    return out;
}

ADCEncoding adc_encode(const Tensor& activations, const Tensor& cls_scores, const std::vector<std::uint16_t>& labels,
                       std::size_t classes, const ADCConfig& config) {
    if (activations.rank() != 3) throw DimensionError("adc_encode expects [B x n x d] activations");
    const std::size_t batch = activations.dim(0), n = activations.dim(1), d = activations.dim(2);
    config.validate(batch, n);

    const Tensor points = merge_vector(activations, cls_scores, config.strategy);
    const auto clustering = kmeans(points, config.clusters, config.kmeans_max_iters, config.seed);

    MergePlan plan;
    plan.assignments = clustering.assignments;
    plan.batch = batch;
    plan.tokens = n;
    plan.dim = d;
    plan.cluster_sizes.assign(config.clusters, 0);
    for (auto a : plan.assignments) ++plan.cluster_sizes[a];

    // Token importance per cluster is the mean CLS score of its members, whatever vector
    // drove the clustering; with cls_score this equals the K-means centroid.
    plan.centroids = config.strategy == MergeVector::cls_score
                         ? clustering.centroids
                         : merge_batch(cls_scores.reshaped({batch, n, 1}), std::vector<std::uint16_t>(batch, 0), 1, plan)
                               .features.reshaped({config.clusters, n});

    auto merged = merge_batch(activations, labels, classes, plan);
    auto selection = select_tokens(merged.features, plan.centroids, config.tokens_kept);
    plan.selected_tokens = std::move(selection.indices);
    return ADCEncoding{std::move(selection.features), std::move(merged.soft_labels), std::move(plan)};
}

Tensor unmerge_gradient(const Tensor& grad, const MergePlan& plan) {
    const std::size_t clusters = plan.clusters();
    if (grad.rank() != 3 || grad.dim(0) != clusters || grad.dim(2) != plan.dim || plan.selected_tokens.size() != clusters) {
        throw DimensionError("gradient " + shape_string(grad.shape()) + " does not match merge plan");
    }
    const std::size_t k = grad.dim(1), d = plan.dim, n = plan.tokens;
    Tensor out({plan.batch, n, d});
    for (std::size_t b = 0; b < plan.batch; ++b) {
        const std::size_t c = plan.assignments[b];
        const auto& rows = plan.selected_tokens[c];
        if (rows.size() != k) throw DimensionError("gradient token count does not match the selection");
        const double inv = 1.0 / static_cast<double>(plan.cluster_sizes[c]);
        for (std::size_t j = 0; j < k; ++j) {
            const double* src = grad.data().data() + (c * k + j) * d;
            double* dst = out.data().data() + (b * n + rows[j]) * d;
            for (std::size_t i = 0; i < d; ++i) dst[i] = src[i] * inv;
        }
    }
    return out;
}

}  // namespace adcsl
