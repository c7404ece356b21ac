#include "adcsl/kmeans.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "adcsl/errors.hpp"

namespace adcsl {

namespace {

double squared_distance(const double* a, const double* b, std::size_t m) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        const double t = a[j] - b[j];
        s += t * t;
    }
    return s;
}

// Samples an index with probability proportional to weights; falls back to the first
// index not yet taken when every weight is zero (all points coincide with a centre).
std::size_t sample_weighted(const std::vector<double>& weights, const std::vector<bool>& taken, std::mt19937_64& rng) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (total <= 0.0) {
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (!taken[i]) return i;
        }
        return 0;
    }
    const double target = std::uniform_real_distribution<double>(0.0, total)(rng);
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] <= 0.0) continue;
        acc += weights[i];
        last_positive = i;
        if (target < acc) return i;
    }
    return last_positive;
}

Tensor seed_centroids(const Tensor& points, std::size_t clusters, std::mt19937_64& rng) {
    const std::size_t count = points.dim(0), m = points.dim(1);
    const double* p = points.data().data();
    Tensor centroids({clusters, m});
    std::vector<bool> taken(count, false);

    std::size_t first = std::uniform_int_distribution<std::size_t>(0, count - 1)(rng);
    taken[first] = true;
    std::copy_n(p + first * m, m, centroids.data().data());

    std::vector<double> closest(count);
    for (std::size_t i = 0; i < count; ++i) closest[i] = squared_distance(p + i * m, p + first * m, m);

    const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(clusters)));
    for (std::size_t c = 1; c < clusters; ++c) {
        std::size_t best = 0;
        double best_potential = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < trials; ++t) {
            const std::size_t cand = sample_weighted(closest, taken, rng);
            double potential = 0.0;
            for (std::size_t i = 0; i < count; ++i) {
                potential += std::min(closest[i], squared_distance(p + i * m, p + cand * m, m));
            }
            if (potential < best_potential) {
                best_potential = potential;
                best = cand;
            }
        }
        taken[best] = true;
        std::copy_n(p + best * m, m, centroids.data().data() + c * m);
        for (std::size_t i = 0; i < count; ++i) {
            closest[i] = std::min(closest[i], squared_distance(p + i * m, p + best * m, m));
        }
    }
    return centroids;
}

Tensor cluster_means(const Tensor& points, const std::vector<std::size_t>& assignments, std::size_t clusters) {
    const std::size_t m = points.dim(1);
    Tensor means({clusters, m});
    std::vector<std::size_t> sizes(clusters, 0);
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        ++sizes[assignments[i]];
        for (std::size_t j = 0; j < m; ++j) means[assignments[i] * m + j] += points[i * m + j];
    }
    for (std::size_t c = 0; c < clusters; ++c) {
        if (sizes[c] == 0) continue;
        for (std::size_t j = 0; j < m; ++j) means[c * m + j] /= static_cast<double>(sizes[c]);
    }
    return means;
}

void repair_empty(const Tensor& points, const Tensor& centroids, std::vector<std::size_t>& assignments,
                  std::size_t clusters) {
    const std::size_t m = points.dim(1);
    std::vector<std::size_t> sizes(clusters, 0);
    for (auto a : assignments) ++sizes[a];
    for (std::size_t c = 0; c < clusters; ++c) {
        if (sizes[c] != 0) continue;
        std::size_t donor = assignments.size();
        double farthest = -1.0;
        for (std::size_t i = 0; i < assignments.size(); ++i) {
            if (sizes[assignments[i]] < 2) continue;
            const double dist = squared_distance(points.data().data() + i * m,
                                                 centroids.data().data() + assignments[i] * m, m);
            if (dist > farthest) {
                farthest = dist;
                donor = i;
            }
        }
        --sizes[assignments[donor]];
        assignments[donor] = c;
        ++sizes[c];
    }
}

}  // namespace

KMeansResult kmeans(const Tensor& points, std::size_t clusters, std::size_t max_iters, std::uint64_t seed) {
    if (points.rank() != 2) throw DimensionError("kmeans expects [B x m] points, got " + shape_string(points.shape()));
    const std::size_t count = points.dim(0), m = points.dim(1);
    if (clusters == 0 || clusters > count) {
        throw ContractError("kmeans needs 1 <= T <= B, got T=" + std::to_string(clusters) + " B=" + std::to_string(count));
    }
    std::mt19937_64 rng(seed);
    KMeansResult result;
    result.centroids = seed_centroids(points, clusters, rng);
    result.assignments.assign(count, clusters);  // sentinel: nothing assigned yet

    const std::size_t iterations = std::max<std::size_t>(max_iters, 1);
    for (std::size_t it = 0; it < iterations; ++it) {
        std::vector<std::size_t> next(count);
        for (std::size_t i = 0; i < count; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < clusters; ++c) {
                const double dist = squared_distance(points.data().data() + i * m,
                                                     result.centroids.data().data() + c * m, m);
                if (dist < best) {
                    best = dist;
                    next[i] = c;
                }
            }
        }
        repair_empty(points, result.centroids, next, clusters);
        const bool changed = next != result.assignments;
        result.assignments = std::move(next);
        result.centroids = cluster_means(points, result.assignments, clusters);
        result.iterations = it + 1;
        if (!changed) {
            result.converged = true;
            break;
        }
    }
    return result;
}

double within_cluster_sse(const Tensor& points, const std::vector<std::size_t>& assignments, std::size_t clusters) {
    const std::size_t m = points.dim(1);
    const Tensor means = cluster_means(points, assignments, clusters);
    double sse = 0.0;
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        sse += squared_distance(points.data().data() + i * m, means.data().data() + assignments[i] * m, m);
    }
    return sse;
}

}  // namespace adcsl
