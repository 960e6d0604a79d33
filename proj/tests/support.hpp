#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "forgetlab/autodiff.hpp"
#include "forgetlab/hpo.hpp"
#include "forgetlab/model.hpp"
#include "forgetlab/random.hpp"
#include "forgetlab/shift_lab.hpp"
#include "forgetlab/tensor.hpp"

namespace fltest {

using namespace forgetlab;

Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0);

struct OpCase {
    OpKind kind;
    /// Max relative FD error for one random instance.
    std::function<double(std::uint64_t seed)> check;
};

/// One case per OpKind; every case reduces the op's output against a fixed
/// random weighting so all output coordinates feed the loss.
std::vector<OpCase> op_gradient_cases();

/// FD error of the classification loss w.r.t. every parameter tensor
/// (`coords` random coordinates per tensor) for the given model config.
double model_gradient_error(const ModelConfig& cfg, std::uint64_t seed, std::size_t coords = 3);

/// Adjusted Rand index of two labelings.
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

/// The rank-weighted combination evaluated in 50-digit decimal arithmetic, terms summed in input
/// order: exp(sum w ln r / sum w), w = b^-rank.
std::array<double, kNumChoices> eq1_oracle(const std::vector<Trial>& trials, double b);

/// Random ranked trial set of size n, rates log-uniform in [1e-7, 1e-3].
std::vector<Trial> random_ranked_trials(std::size_t n, Rng& rng);

/// Small pair for protocol and search tests.
TaskPair tiny_pair(std::uint64_t seed, std::size_t size = 120);
ModelConfig tiny_model(std::uint64_t seed = 999);

double rel_err(double a, double b);

} // namespace fltest
