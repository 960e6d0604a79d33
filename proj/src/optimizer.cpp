#include "forgetlab/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "forgetlab/error.hpp"

namespace forgetlab {

std::size_t warmup_steps(std::size_t total_steps, double warmup_fraction) {
    if (total_steps < 1) throw InvalidArgument("schedule: total_steps must be >= 1");
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0))
        throw InvalidArgument("schedule: warmup_fraction must lie in (0, 1)");
    const auto w = static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
    return std::min(w, total_steps - 1);
}

double schedule_lr(double peak, std::size_t step, std::size_t total_steps, double warmup_fraction) {
    const std::size_t w = warmup_steps(total_steps, warmup_fraction);
    if (step > total_steps)
        throw InvalidArgument("schedule: step " + std::to_string(step) + " beyond total_steps " +
                              std::to_string(total_steps));
    if (step == total_steps) return 0.0;
    if (step < w) return peak * static_cast<double>(step) / static_cast<double>(w);
    const double progress = static_cast<double>(step - w) / static_cast<double>(total_steps - w);
    return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamState::AdamState(const std::vector<Parameter>& params, AdamConfig cfg) : cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
        m_.emplace_back(p.value.shape());
        v_.emplace_back(p.value.shape());
    }
}

void AdamState::update(std::vector<Parameter>& params, std::span<const Tensor> grads, std::span<const double> lrs) {
    if (params.size() != m_.size()) throw InvalidArgument("adam: state was built for a different parameter list");
    if (grads.size() != params.size() || lrs.size() != params.size())
        throw InvalidArgument("adam: expected " + std::to_string(params.size()) + " gradients and rates");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (grads[i].shape() != params[i].value.shape())
            throw InvalidArgument("adam: missing gradient for parameter '" + params[i].name + "' (group " +
                                  Model::group_of(params[i].name) + ")");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto theta = params[i].value.data();
        auto g = grads[i].data();
        auto m = m_[i].data();
        auto v = v_[i].data();
        const double lr = lrs[i];
        for (std::size_t j = 0; j < theta.size(); ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            theta[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

std::vector<std::size_t> parameter_choices(const Model& model, const GroupMapping& mapping) {
    if (mapping.n_layers() != model.config().n_layers)
        throw InvalidArgument("group mapping covers " + std::to_string(mapping.n_layers()) + " layers, model has " +
                              std::to_string(model.config().n_layers));
    std::vector<std::size_t> out;
    out.reserve(model.params().size());
    for (const auto& p : model.params()) out.push_back(mapping.choice_of_group(Model::group_of(p.name)));
    return out;
}

void adam_step(AdamState& state, Model& model, std::span<const Tensor> grads,
               const std::array<double, kNumChoices>& peaks, const GroupMapping& mapping, std::size_t step,
               std::size_t total_steps, double warmup_fraction) {
    const auto choices = parameter_choices(model, mapping);
    std::array<double, kNumChoices> lr{};
    for (std::size_t c = 0; c < kNumChoices; ++c) {
        if (!(peaks[c] >= 0.0)) throw InvalidArgument("adam_step: negative peak rate for choice " + std::to_string(c));
        lr[c] = schedule_lr(peaks[c], step, total_steps, warmup_fraction);
    }
    std::vector<double> per_param(choices.size());
    for (std::size_t i = 0; i < choices.size(); ++i) per_param[i] = lr[choices[i]];
    state.update(model.params(), grads, per_param);
}

} // namespace forgetlab
