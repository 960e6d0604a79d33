#pragma once

// Sequential two-task fine-tuning: train on D_o, then on D_s, and score how
// much of D_o survives. reward = p_o + p_s.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "forgetlab/ewc.hpp"
#include "forgetlab/lr_groups.hpp"
#include "forgetlab/model.hpp"
#include "forgetlab/optimizer.hpp"
#include "forgetlab/shift_lab.hpp"

namespace forgetlab {

/// Flat rate used by the large-model baseline.
inline constexpr double kReferenceFlatLr = 2e-5;
/// Its desk-scale counterpart: the toy model trains from scratch, so the
/// baseline sits higher inside the searched range.
inline constexpr double kDefaultFlatLr = 1e-3;

struct ProtocolConfig {
    std::size_t epochs_o = 5;
    std::size_t epochs_s = 5;
    std::size_t batch_size = 16;
    std::uint64_t seed = 999;
    double warmup_fraction = kDefaultWarmupFraction;
    bool ewc_enabled = false;
    double ewc_lambda = kDefaultEwcLambda;
    std::size_t fisher_samples = 64;
    /// Carry Adam moments from phase 1 into phase 2 instead of resetting.
    bool retain_moments = false;
    LrDistribution lr = LrDistribution::flat(kDefaultFlatLr);
    /// When set, phase 1 trains with this distribution instead of `lr`.
    std::optional<LrDistribution> phase1_lr;

    void validate() const;
};

enum class RunStatus { Completed, Diverged };
std::string_view run_status_name(RunStatus s);

struct ProtocolResult {
    RunStatus status = RunStatus::Completed;
    double p_o_before = 0.0;
    double p_o = 0.0;
    double p_s = 0.0;
    double reward = 0.0;
    std::vector<double> loss_o; // mean training loss per epoch
    std::vector<double> loss_s;
    std::string message;

    friend bool operator==(const ProtocolResult&, const ProtocolResult&) = default;
};

/// State after phase 1, reusable for several phase-2 runs.
struct PhaseOneState {
    Model model;
    std::vector<Tensor> head_o;
    AdamState adam;
    double p_o_before = 0.0;
    std::vector<double> loss;
    bool diverged = false;
    std::string message;
};

/// Argmax accuracy with ties broken toward the lower class.
double evaluate(const Model& model, const std::vector<Tensor>& head, const Dataset& d);
double evaluate(const Model& model, const Dataset& d);

/// Trains on `data` for `epochs` with a fresh cosine schedule. Returns the
/// mean loss per epoch; throws NumericError on a non-finite loss.
std::vector<double> train_phase(Model& model, AdamState& adam, const Dataset& data, const LrDistribution& lr,
                                std::size_t epochs, const ProtocolConfig& cfg, std::uint64_t stream,
                                const FisherState* fisher = nullptr);

PhaseOneState run_phase_one(const TaskPair& pair, const ProtocolConfig& cfg, Model model);
ProtocolResult run_phase_two(const TaskPair& pair, const ProtocolConfig& cfg, PhaseOneState state);
ProtocolResult run_sequential(const TaskPair& pair, const ProtocolConfig& cfg, Model model);

} // namespace forgetlab
