#include "forgetlab/ewc.hpp"

#include <cmath>

#include "forgetlab/error.hpp"
#include "forgetlab/random.hpp"

namespace forgetlab {

namespace {

void check_shapes(const std::vector<Parameter>& params, const FisherState& fs) {
    if (fs.fisher.size() != params.size() || fs.anchor.size() != params.size())
        throw ShapeError("ewc: Fisher state holds " + std::to_string(fs.fisher.size()) + " tensors for " +
                         std::to_string(params.size()) + " parameters");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (fs.fisher[i].shape() != params[i].value.shape() || fs.anchor[i].shape() != params[i].value.shape())
            throw ShapeError("ewc: shape mismatch for '" + params[i].name + "': " + shape_str(params[i].value.shape()) +
                             " vs " + shape_str(fs.fisher[i].shape()));
}

} // namespace

std::vector<Tensor> mean_squared_gradients(std::span<const std::vector<Tensor>> samples) {
    if (samples.empty()) throw InvalidArgument("fisher: no samples");
    std::vector<Tensor> out;
    for (const auto& g : samples.front()) out.emplace_back(g.shape());
    for (const auto& s : samples) {
        if (s.size() != out.size()) throw ShapeError("fisher: samples disagree on parameter count");
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i].shape() != out[i].shape()) throw ShapeError("fisher: sample gradient shape mismatch");
            auto acc = out[i].data();
            for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += s[i][j] * s[i][j];
        }
    }
    const double inv = 1.0 / static_cast<double>(samples.size());
    for (auto& t : out)
        for (auto& v : t.data()) v *= inv;
    return out;
}

FisherState estimate_fisher(const Model& model, const TokenBatch& anchor, std::size_t n_samples, double lambda,
                            std::uint64_t seed) {
    if (anchor.empty()) throw InvalidArgument("estimate_fisher: empty anchor data");
    if (n_samples < 1) throw InvalidArgument("estimate_fisher: n_samples must be >= 1");
    const auto& cfg = model.config();

    Tensor head_w({cfg.d_model, cfg.vocab_size});
    {
        Rng rng(derive_seed(seed, {0x6d6c6dULL}));
        std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)));
        for (auto& v : head_w.data()) v = normal(rng);
    }

    FisherState fs;
    fs.lambda = lambda;
    fs.anchor_task = "masked-token";
    for (const auto& p : model.params()) {
        fs.fisher.emplace_back(p.value.shape());
        fs.anchor.push_back(p.value);
    }
    for (std::size_t i = 0; i < n_samples; ++i) {
        const std::size_t idx = i % anchor.size();
        std::vector<int> seq = anchor[idx];
        if (seq.empty()) throw InvalidArgument("estimate_fisher: anchor sequence " + std::to_string(idx) + " is empty");
        Rng rng(derive_seed(seed, {idx}));
        const auto pos = std::uniform_int_distribution<std::size_t>(0, seq.size() - 1)(rng);
        const int target = seq[pos];
        seq[pos] = kClsToken; // doubles as the mask token away from position 0

        Graph g;
        const auto bound = model.bind(g, true);
        const NodeId hw = g.leaf(head_w, false);
        const TokenBatch batch{seq};
        const NodeId h = g.gather_rows(model.encode(g, bound, batch), {static_cast<int>(pos) + 1});
        const NodeId loss = g.cross_entropy(g.matmul(h, hw), {target});
        const Gradients grads = g.backward(loss);
        // d(log-likelihood) = -d(loss); the square drops the sign.
        for (std::size_t p = 0; p < bound.ids.size(); ++p) {
            const Tensor& gr = grads.of(bound.ids[p]);
            auto acc = fs.fisher[p].data();
            for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += gr[j] * gr[j];
        }
    }
    const double inv = 1.0 / static_cast<double>(n_samples);
    for (auto& t : fs.fisher)
        for (auto& v : t.data()) v *= inv;
    return fs;
}

double ewc_penalty(const std::vector<Parameter>& params, const FisherState& fs) {
    check_shapes(params, fs);
    double s = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto theta = params[i].value.data();
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double d = theta[j] - fs.anchor[i][j];
            s += fs.fisher[i][j] * d * d;
        }
    }
    return 0.5 * fs.lambda * s;
}

std::vector<Tensor> ewc_penalty_gradient(const std::vector<Parameter>& params, const FisherState& fs) {
    check_shapes(params, fs);
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor g(params[i].value.shape());
        const auto theta = params[i].value.data();
        for (std::size_t j = 0; j < theta.size(); ++j) g[j] = fs.lambda * fs.fisher[i][j] * (theta[j] - fs.anchor[i][j]);
        out.push_back(std::move(g));
    }
    return out;
}

NodeId ewc_penalty_node(Graph& g, std::span<const NodeId> params, const FisherState& fs) {
    if (params.size() != fs.fisher.size()) throw ShapeError("ewc: parameter count does not match Fisher state");
    NodeId total = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor neg = fs.anchor[i];
        for (auto& v : neg.data()) v = -v;
        const NodeId diff = g.add(params[i], g.leaf(std::move(neg), false));
        const NodeId term = g.sum(g.mul(g.mul(diff, diff), g.leaf(fs.fisher[i], false)));
        total = i == 0 ? term : g.add(total, term);
    }
    return g.scale(total, 0.5 * fs.lambda);
}

} // namespace forgetlab
