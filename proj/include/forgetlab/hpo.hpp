#pragma once

// Hyperband over the 10-dimensional log learning-rate space, with a
// density-ratio proposer filling each bracket.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "forgetlab/lr_groups.hpp"
#include "forgetlab/model.hpp"
#include "forgetlab/protocol.hpp"
#include "forgetlab/random.hpp"
#include "forgetlab/shift_lab.hpp"

namespace forgetlab {

struct SearchSpace {
    double low = 1e-7;
    double high = 1e-3;

    void validate() const;
    bool contains(const LrDistribution& d) const;
};

enum class TrialStatus { Completed, Diverged, Pruned };
std::string_view trial_status_name(TrialStatus s);
TrialStatus parse_trial_status(std::string_view text);

struct Trial {
    std::size_t id = 0;
    LrDistribution rates;
    std::size_t resource = 0; // phase-2 epochs granted
    TrialStatus status = TrialStatus::Completed;
    double p_o = 0.0;
    double p_s = 0.0;
    double reward = 0.0;
    std::optional<std::size_t> rank;
    double wall_time_s = 0.0;

    friend bool operator==(const Trial&, const Trial&) = default;
};

struct Rung {
    std::size_t n_configs;
    std::size_t resource;
    friend bool operator==(const Rung&, const Rung&) = default;
};

struct HyperbandPlan {
    std::size_t max_resource = 27;
    std::size_t eta = 3;
    std::vector<std::vector<Rung>> brackets; // most exploratory first

    /// Sum of n_configs * resource over every rung.
    std::size_t total_resource() const;
    std::size_t total_runs() const;
};

/// Bracket s (s = s_max .. 0) opens with floor((s_max+1)/(s+1)) * eta^s
/// configs at R / eta^s; each later rung keeps floor(n/eta) at eta times
/// the resource.
HyperbandPlan hyperband_plan(std::size_t max_resource, std::size_t eta);

struct ProposerOptions {
    std::size_t n_min = 10;
    double gamma = 0.25;
    std::size_t n_candidates = 24;
    double min_bandwidth = 0.1; // decades
};

/// Log-uniform sampling until `history` holds n_min observations, then the
/// candidate maximizing good/bad kernel density ratio.
LrDistribution propose(const std::vector<Trial>& history, const SearchSpace& space, Rng& rng,
                       const ProposerOptions& opts = {});

class TrialStore {
public:
    void append(Trial t);
    const std::vector<Trial>& trials() const noexcept { return trials_; }
    std::size_t size() const noexcept { return trials_.size(); }
    bool empty() const noexcept { return trials_.empty(); }

    /// Ranks completed trials at `resource` by reward, descending; equal
    /// rewards go to the lower id. Every other trial loses its rank.
    void assign_ranks(std::size_t resource);
    std::vector<Trial> ranked() const;
    /// Highest reward among completed trials (only those at `resource` when
    /// given), lower id on ties.
    const Trial& best(std::optional<std::size_t> resource = std::nullopt) const;

    void write_jsonl(std::ostream& os) const;
    static std::string to_json_line(const Trial& t);
    /// Throws Error naming the offending line.
    static TrialStore read_jsonl(std::istream& is, std::string_view source = "<stream>");

    friend bool operator==(const TrialStore&, const TrialStore&) = default;

private:
    std::vector<Trial> trials_;
};

struct SearchOptions {
    std::uint64_t seed = 999;
    std::size_t workers = 1;
    SearchSpace space;
    ProposerOptions proposer;
    /// Seeded as the first config of the first bracket and of the last
    /// (full-resource) bracket.
    LrDistribution baseline = LrDistribution::flat(kDefaultFlatLr);
    /// Train phase 1 once with base_cfg.phase1_lr (flat baseline if unset)
    /// and reuse it for every trial.
    bool phase2_only = false;
    bool record_wall_time = false;
    /// Called once per finished rung with its trials in id order.
    std::function<void(const std::vector<Trial>&)> on_rung;
};

struct SearchResult {
    TrialStore store;
    std::size_t phase1_epochs = 0; // executed
    std::size_t phase2_epochs = 0;
};

SearchResult run_search(const TaskPair& pair, const HyperbandPlan& plan, const ProtocolConfig& base_cfg,
                        const ModelConfig& model_cfg, const SearchOptions& opts = {});

} // namespace forgetlab
