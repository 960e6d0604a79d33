#include "forgetlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "forgetlab/error.hpp"

namespace forgetlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double evaluate(const MultiLossBuilder& f, std::span<const Tensor> points) {
    Graph g;
    std::vector<NodeId> ids;
    ids.reserve(points.size());
    for (const auto& p : points) ids.push_back(g.leaf(p, false));
    return g.value(f(g, ids)).item();
}

} // namespace

double finite_difference_check(const LossBuilder& f, const Tensor& point, double h) {
    if (!(h > 0.0)) throw InvalidArgument("finite_difference_check: step h must be positive");
    MultiLossBuilder wrap = [&f](Graph& g, std::span<const NodeId> ids) { return f(g, ids[0]); };
    return finite_difference_check(wrap, std::span<const Tensor>(&point, 1), h);
}

double finite_difference_check(const MultiLossBuilder& f, std::span<const Tensor> points, double h,
                               GradCheckSampling sampling) {
    if (!(h > 0.0)) throw InvalidArgument("finite_difference_check: step h must be positive");
    std::vector<Tensor> analytic;
    try {
        Graph g;
        std::vector<NodeId> ids;
        for (const auto& p : points) ids.push_back(g.leaf(p, true));
        const NodeId loss = f(g, ids);
        const Gradients grads = g.backward(loss);
        for (auto id : ids) analytic.push_back(grads.of(id));
    } catch (const NumericError&) {
        return kInf;
    }

    std::mt19937_64 rng(sampling.seed);
    std::vector<Tensor> work(points.begin(), points.end());
    double worst = 0.0;
    for (std::size_t t = 0; t < work.size(); ++t) {
        std::vector<std::size_t> coords(work[t].size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (sampling.coords_per_tensor != 0 && sampling.coords_per_tensor < coords.size()) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(sampling.coords_per_tensor);
        }
        for (auto c : coords) {
            const double orig = work[t][c];
            double up = 0.0, down = 0.0;
            try {
                work[t][c] = orig + h;
                up = evaluate(f, work);
                work[t][c] = orig - h;
                down = evaluate(f, work);
            } catch (const NumericError&) {
                return kInf;
            }
            work[t][c] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[t][c];
            if (!std::isfinite(numeric) || !std::isfinite(a)) return kInf;
            worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
        }
    }
    return worst;
}

} // namespace forgetlab
