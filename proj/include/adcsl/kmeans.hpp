#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "adcsl/tensor.hpp"

namespace adcsl {

struct KMeansResult {
    Tensor centroids;                      // [T x m], mean of the members of each cluster
    std::vector<std::size_t> assignments;  // length B, every cluster nonempty
    std::size_t iterations = 0;
    bool converged = false;                // assignment fixpoint reached before max_iters
};

/// Lloyd's algorithm on squared Euclidean distance with greedy k-means++ seeding.
///
/// Assignment ties go to the lowest cluster index. After every assignment step an empty
/// cluster takes over the point farthest from its current centroid (ties: lowest point
/// index, donors must keep at least one member), so no cluster is ever returned empty.
/// Deterministic for a given seed. Throws ContractError when clusters is 0 or exceeds B.
KMeansResult kmeans(const Tensor& points, std::size_t clusters, std::size_t max_iters, std::uint64_t seed);

/// Within-cluster sum of squared distances to the cluster means.
double within_cluster_sse(const Tensor& points, const std::vector<std::size_t>& assignments, std::size_t clusters);

}  // namespace adcsl
