#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adcsl/tensor.hpp"

namespace adcsl {

/// Which per-sample vector K-means clusters on.
enum class MergeVector { cls_score, cls_token, avg_token };

std::string to_string(MergeVector v);
MergeVector merge_vector_from_string(const std::string& s);

struct ADCConfig {
    std::size_t clusters = 1;     // T
    std::size_t tokens_kept = 1;  // k, CLS included
    MergeVector strategy = MergeVector::cls_score;
    std::size_t kmeans_max_iters = 20;
    std::uint64_t seed = 0;

    /// (T/B) * (k/n).
    double ratio(std::size_t batch, std::size_t tokens) const;
    void validate(std::size_t batch, std::size_t tokens) const;

    /// T = max(1, round(B sqrt(xi))), k = max(1, round(n sqrt(xi))), ties to even.
    static ADCConfig balanced(double xi, std::size_t batch, std::size_t tokens);
};

/// Client-side bookkeeping for one encoded batch. Never transmitted.
struct MergePlan {
    std::vector<std::size_t> assignments;               // cluster of each sample
    Tensor centroids;                                   // [T x n] cluster-mean CLS scores
    std::vector<std::vector<std::size_t>> selected_tokens;  // per cluster, ascending, starts with 0
    std::vector<std::size_t> cluster_sizes;
    std::size_t batch = 0;
    std::size_t tokens = 0;
    std::size_t dim = 0;

    std::size_t clusters() const { return cluster_sizes.size(); }
};

/// [B x n x d] activations plus [B x n] CLS scores -> the vectors K-means sees.
Tensor merge_vector(const Tensor& activations, const Tensor& cls_scores, MergeVector strategy);

struct MergedBatch {
    Tensor features;     // [T x n x d]
    Tensor soft_labels;  // [T x classes]
};

/// Cluster averages of activations and of one-hot labels.
MergedBatch merge_batch(const Tensor& activations, const std::vector<std::uint16_t>& labels, std::size_t classes,
                        const MergePlan& plan);

/// CLS (index 0) plus the k-1 largest remaining scores; ties prefer the lower index.
/// Returned indices are ascending.
std::vector<std::size_t> top_token_indices(std::span<const double> scores, std::size_t k);

struct TokenSelection {
    Tensor features;                                  // [T x k x d]
    std::vector<std::vector<std::size_t>> indices;    // per cluster
};

TokenSelection select_tokens(const Tensor& merged, const Tensor& centroids, std::size_t k);

struct ADCEncoding {
    Tensor features;     // [T x k x d]
    Tensor soft_labels;  // [T x classes]
    MergePlan plan;
};

/// merge_vector -> kmeans -> merge_batch -> select_tokens.
ADCEncoding adc_encode(const Tensor& activations, const Tensor& cls_scores, const std::vector<std::uint16_t>& labels,
                       std::size_t classes, const ADCConfig& config);

/// Adjoint of merge + select: each member of cluster i receives g_i / |cluster i| at the
/// selected token rows and zero elsewhere. [T x k x d] -> [B x n x d].
Tensor unmerge_gradient(const Tensor& grad, const MergePlan& plan);

}  // namespace adcsl
