#include <algorithm>
#include <limits>

#include "tagknn/error.hpp"
#include "tagknn/index.hpp"
#include "tagknn/parallel.hpp"
#include "tagknn/random.hpp"

namespace tagknn {

std::vector<std::uint32_t> assign_nearest(std::span<const float> points, std::size_t dim,
                                          std::span<const float> centroids, std::size_t threads) {
    const std::size_t n = points.size() / dim;
    const std::size_t k = centroids.size() / dim;
    std::vector<std::uint32_t> assignment(n, 0);
    parallel_for(n, threads, [&](std::size_t i) {
        const auto p = points.subspan(i * dim, dim);
        float best = std::numeric_limits<float>::infinity();
        std::uint32_t best_c = 0;
        for (std::size_t c = 0; c < k; ++c) {
            const float d = squared_l2(p, centroids.subspan(c * dim, dim));
            if (d < best) {
                best = d;
                best_c = static_cast<std::uint32_t>(c);
            }
        }
        assignment[i] = best_c;
    });
    return assignment;
}

namespace {

void recompute_means(std::span<const float> points, std::size_t dim, std::span<const std::uint32_t> assignment,
                     std::size_t nlist, std::vector<float>& centroids, std::vector<std::size_t>& counts) {
    std::vector<double> sums(nlist * dim, 0.0);
    counts.assign(nlist, 0);
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        const std::size_t c = assignment[i];
        ++counts[c];
        double* s = sums.data() + c * dim;
        const float* p = points.data() + i * dim;
        for (std::size_t d = 0; d < dim; ++d) s[d] += p[d];
    }
    for (std::size_t c = 0; c < nlist; ++c) {
        if (counts[c] == 0) continue;
        for (std::size_t d = 0; d < dim; ++d)
            centroids[c * dim + d] = static_cast<float>(sums[c * dim + d] / static_cast<double>(counts[c]));
    }
}

// Moves the farthest point of the largest cluster into each empty cluster.
void reseed_empty(std::span<const float> points, std::size_t dim, std::vector<std::uint32_t>& assignment,
                  std::vector<float>& centroids, std::vector<std::size_t>& counts) {
    const std::size_t nlist = counts.size();
    for (std::size_t empty = 0; empty < nlist; ++empty) {
        if (counts[empty] != 0) continue;
        const std::size_t largest = static_cast<std::size_t>(
            std::max_element(counts.begin(), counts.end()) - counts.begin());
        if (counts[largest] < 2) break;
        const auto center = std::span<const float>(centroids.data() + largest * dim, dim);
        float far = -1.0f;
        std::size_t far_i = 0;
        for (std::size_t i = 0; i < assignment.size(); ++i) {
            if (assignment[i] != largest) continue;
            const float d = squared_l2(points.subspan(i * dim, dim), center);
            if (d > far) {
                far = d;
                far_i = i;
            }
        }
        assignment[far_i] = static_cast<std::uint32_t>(empty);
        --counts[largest];
        counts[empty] = 1;
        const float* p = points.data() + far_i * dim;
        float* big = centroids.data() + largest * dim;
        const double remaining = static_cast<double>(counts[largest]);
        for (std::size_t d = 0; d < dim; ++d) {
            big[d] = static_cast<float>((static_cast<double>(big[d]) * (remaining + 1) - p[d]) / remaining);
            centroids[empty * dim + d] = p[d];
        }
    }
}

}  // namespace

KMeansResult kmeans(std::span<const float> points, std::size_t dim, std::size_t nlist, std::size_t iterations,
                    std::uint64_t seed, std::size_t threads) {
    if (dim == 0 || points.size() % dim != 0) throw ValidationError("kmeans: point matrix is not N x E");
    const std::size_t n = points.size() / dim;
    if (nlist < 1 || nlist > n)
        throw ValidationError("kmeans: nlist " + std::to_string(nlist) + " outside [1, " + std::to_string(n) + "]");
    if (iterations < 1) throw ValidationError("kmeans: iterations must be >= 1");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = 0; i < nlist; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(order[i], order[j]);
    }
    KMeansResult result;
    result.centroids.resize(nlist * dim);
    for (std::size_t c = 0; c < nlist; ++c)
        std::copy_n(points.data() + order[c] * dim, dim, result.centroids.data() + c * dim);

    std::vector<std::size_t> counts;
    for (std::size_t it = 0; it < iterations; ++it) {
        auto assignment = assign_nearest(points, dim, result.centroids, threads);
        const bool stable = it > 0 && assignment == result.assignment;
        result.assignment = std::move(assignment);
        result.iterations_run = it + 1;
        if (stable) break;
        recompute_means(points, dim, result.assignment, nlist, result.centroids, counts);
        reseed_empty(points, dim, result.assignment, result.centroids, counts);
    }
    result.assignment = assign_nearest(points, dim, result.centroids, threads);
    return result;
}

}  // namespace tagknn
