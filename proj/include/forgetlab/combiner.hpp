#pragma once

// Folding search results into one distribution: a rank-weighted geometric
// mean over the trials of one pair, then a plain geometric mean over pairs.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "forgetlab/hpo.hpp"
#include "forgetlab/lr_groups.hpp"

namespace forgetlab {

inline constexpr double kDefaultRankBase = 1.8;

struct CombineParams {
    double b = kDefaultRankBase;
    /// Keep only ranks < top_k; 0 keeps every ranked trial.
    std::size_t top_k = 0;

    void validate() const;
};

/// lr_i = exp( sum_j b^-r_j ln lr_ji / sum_j b^-r_j ) over ranked trials.
/// Unranked trials are ignored; none ranked is an error.
LrDistribution combine_trials(std::span<const Trial> trials, const CombineParams& params = {});

/// Per-choice exp(mean of logs). Independent of input order bit for bit.
LrDistribution combine_pairs(std::span<const LrDistribution> dists);

/// (choice, rate) rows, always 10.
std::vector<std::pair<std::size_t, double>> report_distribution(const LrDistribution& d);

/// Header `choice,rate`, one row per choice, %.16e rates.
void write_distribution_csv(std::ostream& os, const LrDistribution& d);
std::string distribution_csv(const LrDistribution& d);
LrDistribution read_distribution_csv(std::istream& is, const std::string& source = "<stream>");

/// Pairwise (cascade) sum, used for the log-space reductions.
double pairwise_sum(std::span<const double> xs);

} // namespace forgetlab
