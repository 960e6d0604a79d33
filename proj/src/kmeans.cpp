#include "forgetlab/kmeans.hpp"

#include <algorithm>
#include <limits>

#include "forgetlab/error.hpp"
#include "forgetlab/random.hpp"

namespace forgetlab {

namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double diff = a[j] - b[j];
        s += diff * diff;
    }
    return s;
}

// Returns the objective for the new assignment.
double assign(const Tensor& pts, const Tensor& cents, std::vector<int>& out) {
    const std::size_t n = pts.dim(0), d = pts.dim(1), k = cents.dim(0);
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (std::size_t c = 0; c < k; ++c) {
            const double dist = sq_dist(pts.ptr() + i * d, cents.ptr() + c * d, d);
            if (dist < best) {
                best = dist;
                arg = static_cast<int>(c);
            }
        }
        out[i] = arg;
        obj += best;
    }
    return obj;
}

} // namespace

KMeansResult kmeans(const Tensor& points, std::size_t k, std::uint64_t seed, std::size_t max_iter) {
    if (points.rank() != 2) throw ShapeError("kmeans: points must be a 2-D matrix, got " + shape_str(points.shape()));
    const std::size_t n = points.dim(0), d = points.dim(1);
    if (k < 1) throw InvalidArgument("kmeans: k must be >= 1");
    if (n < k)
        throw InvalidArgument("kmeans: " + std::to_string(n) + " rows cannot form " + std::to_string(k) + " clusters");

    Rng rng(seed);
    KMeansResult r;
    r.centroids = Tensor({k, d});

    // k-means++ seeding
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    for (std::size_t c = 0; c < k; ++c) {
        std::copy_n(points.ptr() + pick * d, d, r.centroids.ptr() + c * d);
        if (c + 1 == k) break;
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], sq_dist(points.ptr() + i * d, r.centroids.ptr() + c * d, d));
            total += nearest[i];
        }
        if (total > 0.0) {
            double u = std::uniform_real_distribution<double>(0.0, total)(rng);
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                if (u < nearest[i]) {
                    pick = i;
                    break;
                }
                u -= nearest[i];
            }
        } else {
            pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
        }
    }

    r.assignment.assign(n, 0);
    r.objective.push_back(assign(points, r.centroids, r.assignment));

    std::vector<int> next(n);
    std::vector<std::size_t> counts(k);
    while (r.iterations < max_iter) {
        ++r.iterations;
        r.centroids.fill(0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(r.assignment[i]);
            ++counts[c];
            for (std::size_t j = 0; j < d; ++j) r.centroids[c * d + j] += points[i * d + j];
        }
        std::vector<std::size_t> empty;
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                empty.push_back(c);
                continue;
            }
            for (std::size_t j = 0; j < d; ++j) r.centroids[c * d + j] /= static_cast<double>(counts[c]);
        }
        std::vector<bool> taken(n, false);
        for (auto c : empty) {
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (taken[i]) continue;
                const auto own = static_cast<std::size_t>(r.assignment[i]);
                const double dist = sq_dist(points.ptr() + i * d, r.centroids.ptr() + own * d, d);
                if (dist > far_d) {
                    far_d = dist;
                    far = i;
                }
            }
            taken[far] = true;
            std::copy_n(points.ptr() + far * d, d, r.centroids.ptr() + c * d);
        }
        const double obj = assign(points, r.centroids, next);
        r.objective.push_back(obj);
        const bool stable = next == r.assignment;
        r.assignment.swap(next);
        if (stable) {
            r.converged = true;
            break;
        }
    }
    return r;
}

} // namespace forgetlab
