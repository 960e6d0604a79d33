#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "forgetlab/lr_groups.hpp"
#include "forgetlab/model.hpp"

namespace forgetlab {

inline constexpr double kDefaultWarmupFraction = 0.1;

/// End of the linear warmup: ceil(fraction * total), kept below total so the
/// cosine segment is never empty.
std::size_t warmup_steps(std::size_t total_steps, double warmup_fraction);

/// Linear ramp from 0 to `peak` over the warmup, then cosine decay to 0 at
/// `total_steps`. Valid for 0 <= step <= total_steps.
double schedule_lr(double peak, std::size_t step, std::size_t total_steps,
                   double warmup_fraction = kDefaultWarmupFraction);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam moments for one parameter list.
class AdamState {
public:
    AdamState() = default;
    explicit AdamState(const std::vector<Parameter>& params, AdamConfig cfg = {});

    /// One update with an explicit learning rate per parameter.
    void update(std::vector<Parameter>& params, std::span<const Tensor> grads, std::span<const double> lrs);

    std::size_t step_count() const noexcept { return t_; }
    const std::vector<Tensor>& first_moment() const noexcept { return m_; }
    const std::vector<Tensor>& second_moment() const noexcept { return v_; }
    const AdamConfig& config() const noexcept { return cfg_; }

private:
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::size_t t_ = 0;
};

/// Per-parameter choice index for a model under a mapping.
std::vector<std::size_t> parameter_choices(const Model& model, const GroupMapping& mapping);

/// Scheduled Adam step where every parameter uses its choice's peak rate.
/// Rates here may be zero, which freezes that choice.
void adam_step(AdamState& state, Model& model, std::span<const Tensor> grads,
               const std::array<double, kNumChoices>& peaks, const GroupMapping& mapping, std::size_t step,
               std::size_t total_steps, double warmup_fraction = kDefaultWarmupFraction);

inline void adam_step(AdamState& state, Model& model, std::span<const Tensor> grads, const LrDistribution& dist,
                      const GroupMapping& mapping, std::size_t step, std::size_t total_steps,
                      double warmup_fraction = kDefaultWarmupFraction) {
    adam_step(state, model, grads, dist.rates(), mapping, step, total_steps, warmup_fraction);
}

} // namespace forgetlab
