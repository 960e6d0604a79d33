#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "forgetlab/tensor.hpp"

namespace forgetlab {

struct KMeansResult {
    std::vector<int> assignment;  // cluster per row
    Tensor centroids;             // [k, d]
    /// Sum of squared distances to the assigned centroid, recorded after the
    /// initial assignment and after every Lloyd iteration.
    std::vector<double> objective;
    std::size_t iterations = 0;
    bool converged = false;
};

/// k-means++ seeding followed by Lloyd iterations until the assignment is
/// stable or `max_iter` is reached. An empty cluster is re-seeded at the
/// point farthest from its current centroid. Ties go to the lower cluster.
KMeansResult kmeans(const Tensor& points, std::size_t k, std::uint64_t seed, std::size_t max_iter = 100);

} // namespace forgetlab
