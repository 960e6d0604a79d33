#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "forgetlab/autodiff.hpp"

namespace forgetlab {

/// Builds a scalar loss on `g` from a leaf holding the point being checked.
using LossBuilder = std::function<NodeId(Graph& g, NodeId point)>;
/// Same, for several leaves at once.
using MultiLossBuilder = std::function<NodeId(Graph& g, std::span<const NodeId> points)>;

/// Compares the autodiff gradient at `point` against central differences.
/// Returns max over coordinates of |analytic - numeric| / max(1, |analytic|),
/// or +inf when any evaluation turns non-finite.
double finite_difference_check(const LossBuilder& f, const Tensor& point, double h = 1e-5);

struct GradCheckSampling {
    /// Coordinates probed per tensor; 0 probes every coordinate.
    std::size_t coords_per_tensor = 0;
    std::uint64_t seed = 0;
};

double finite_difference_check(const MultiLossBuilder& f, std::span<const Tensor> points, double h,
                               GradCheckSampling sampling = {});

} // namespace forgetlab
