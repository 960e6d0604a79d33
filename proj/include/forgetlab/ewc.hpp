#pragma once

// Elastic weight consolidation: diagonal Fisher on a masked-token anchor task
// and the quadratic penalty (lambda / 2) * sum F * (theta - theta*)^2.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "forgetlab/autodiff.hpp"
#include "forgetlab/model.hpp"

namespace forgetlab {

inline constexpr double kDefaultEwcLambda = 675.0;

struct FisherState {
    std::vector<Tensor> fisher; // same shapes as the model parameters
    std::vector<Tensor> anchor; // parameters at estimation time
    double lambda = kDefaultEwcLambda;
    std::string anchor_task;
};

/// Mean of squared per-sample gradients. Each element of `samples` holds one
/// gradient per parameter.
std::vector<Tensor> mean_squared_gradients(std::span<const std::vector<Tensor>> samples);

/// Diagonal empirical Fisher of the masked-token log-likelihood. Sample i
/// uses sequence i mod |anchor|, masks one position drawn from a stream keyed
/// by that index, and predicts the original token through a temporary linear
/// head over the vocabulary. The temporary head is not part of the state.
FisherState estimate_fisher(const Model& model, const TokenBatch& anchor, std::size_t n_samples,
                            double lambda = kDefaultEwcLambda, std::uint64_t seed = 999);

double ewc_penalty(const std::vector<Parameter>& params, const FisherState& fs);
/// lambda * F * (theta - theta*), per parameter.
std::vector<Tensor> ewc_penalty_gradient(const std::vector<Parameter>& params, const FisherState& fs);
/// The same penalty built from graph ops over parameter leaves.
NodeId ewc_penalty_node(Graph& g, std::span<const NodeId> params, const FisherState& fs);

} // namespace forgetlab
